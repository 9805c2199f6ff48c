#ifndef STYLEBLEND_SCHEDULE_HPP
#define STYLEBLEND_SCHEDULE_HPP

#include <cmath>
#include <stdexcept>
#include <vector>

namespace styleblend {

// Forward-process coefficients. betas[t-1] is beta_t for t in 1..T;
// alpha_bar(0) == 1 so t = 0 is the clean-image limit.
class NoiseSchedule {
public:
    NoiseSchedule(int T, std::vector<double> betas) : T_(T), betas_(std::move(betas)) {
        if (T_ < 1 || static_cast<int>(betas_.size()) != T_)
            throw std::invalid_argument("noise schedule: need T betas");
        alpha_bars_.resize(static_cast<size_t>(T_) + 1);
        alpha_bars_[0] = 1.0;
        double prev = 0.0;
        for (int t = 1; t <= T_; t++) {
            double beta = betas_[static_cast<size_t>(t - 1)];
            if (beta <= 0.0 || beta >= 1.0) throw std::invalid_argument("noise schedule: beta out of (0,1)");
            if (beta < prev) throw std::invalid_argument("noise schedule: betas must be non-decreasing");
            prev = beta;
            alpha_bars_[static_cast<size_t>(t)] = alpha_bars_[static_cast<size_t>(t - 1)] * (1.0 - beta);
        }
    }

    static NoiseSchedule linear(int T, double beta_start, double beta_end) {
        std::vector<double> betas(static_cast<size_t>(T));
        for (int t = 0; t < T; t++)
            betas[static_cast<size_t>(t)] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1);
        return NoiseSchedule(T, std::move(betas));
    }

    int T() const { return T_; }
    double beta(int t) const {
        check_t(t, 1);
        return betas_[static_cast<size_t>(t - 1)];
    }
    double alpha(int t) const { return 1.0 - beta(t); }
    double alpha_bar(int t) const {
        check_t(t, 0);
        return alpha_bars_[static_cast<size_t>(t)];
    }
    double sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar(t)); }
    double sqrt_one_minus_alpha_bar(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

private:
    void check_t(int t, int lo) const {
        if (t < lo || t > T_)
            throw std::invalid_argument("timestep " + std::to_string(t) + " out of range [" + std::to_string(lo) +
                                        "," + std::to_string(T_) + "]");
    }
    int T_;
    std::vector<double> betas_;
    std::vector<double> alpha_bars_;
};

// Evenly spaced integer timesteps from `hi` down to `lo` inclusive, duplicates
// collapsed (they appear when steps exceed the span).
inline std::vector<int> linear_timesteps(int hi, int lo, int steps) {
    if (steps < 1 || hi < lo) throw std::invalid_argument("linear_timesteps: bad range");
    std::vector<int> ts;
    ts.reserve(static_cast<size_t>(steps));
    for (int i = 0; i < steps; i++) {
        double f = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
        int t = static_cast<int>(std::lround(hi - f * (hi - lo)));
        if (ts.empty() || ts.back() != t) ts.push_back(t);
    }
    return ts;
}

}  // namespace styleblend

#endif
