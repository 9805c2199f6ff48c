#ifndef STYLEBLEND_ADAM_HPP
#define STYLEBLEND_ADAM_HPP

#include <stdexcept>
#include <vector>

#include "styleblend/tensor.hpp"

namespace styleblend {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Moment buffers mirror parameter shapes; the step
// counter advances once per step() call; grads are cleared after the update.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg = {}) : cfg_(cfg) {
        slots_.reserve(params.size());
        for (auto& p : params) {
            Slot s;
            s.param = p;
            s.m.assign(p.numel(), 0.0);
            s.v.assign(p.numel(), 0.0);
            slots_.push_back(std::move(s));
        }
    }

    void step() {
        for (auto& s : slots_)
            if (!s.param.has_grad())
                throw std::invalid_argument("adam: parameter has no gradient (run backward first)");
        step_count_++;
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
        for (auto& s : slots_) {
            auto& w = s.param.data();
            const auto& g = s.param.grad();
            for (size_t i = 0; i < w.size(); i++) {
                s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
                s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                double mhat = s.m[i] / bc1;
                double vhat = s.v[i] / bc2;
                w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
            s.param.zero_grad();
        }
    }

    int64_t step_count() const { return step_count_; }
    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

private:
    struct Slot {
        Tensor param;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    AdamConfig cfg_;
    int64_t step_count_ = 0;
};

}  // namespace styleblend

#endif
