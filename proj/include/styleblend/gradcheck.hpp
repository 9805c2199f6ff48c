#ifndef STYLEBLEND_GRADCHECK_HPP
#define STYLEBLEND_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "styleblend/adam.hpp"
#include "styleblend/ops.hpp"

namespace styleblend {

struct GradCheckReport {
    std::string name;
    double max_rel_err = 0.0;
    int points = 0;
    bool pass(double tol) const { return max_rel_err <= tol; }
};

// Central finite differences against the analytic gradient of a scalar loss.
// `build` must recompute the loss from the current parameter values. Checks
// `points` random coordinates of each parameter.
inline GradCheckReport gradcheck(const std::string& name, const std::function<Tensor()>& build,
                                 std::vector<Tensor> params, Rng& rng, int points = 5, double h = 1e-5) {
    GradCheckReport rep;
    rep.name = name;

    Tensor loss = build();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) {
        if (!p.has_grad()) throw std::runtime_error("gradcheck(" + name + "): parameter received no gradient");
        analytic.push_back(p.grad());
    }

    for (size_t pi = 0; pi < params.size(); pi++) {
        Tensor& p = params[pi];
        for (int q = 0; q < points; q++) {
            size_t idx = static_cast<size_t>(rng.next_u64() % p.numel());
            double orig = p.data()[idx];
            p.data()[idx] = orig + h;
            double lp = build().item();
            p.data()[idx] = orig - h;
            double lm = build().item();
            p.data()[idx] = orig;
            double numeric = (lp - lm) / (2.0 * h);
            double a = analytic[pi][idx];
            double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-3});
            double rel = std::fabs(a - numeric) / denom;
            rep.max_rel_err = std::max(rep.max_rel_err, rel);
            rep.points++;
        }
    }
    return rep;
}

// The per-op finite-difference suite. Covers every differentiable op in
// ops.hpp at random points; shared by unit tests, the acceptance gate and the
// `gradcheck` CLI command.
inline std::vector<GradCheckReport> run_gradcheck_suite(uint64_t seed, int points = 5) {
    std::vector<GradCheckReport> out;
    Rng rng(seed);

    auto rnd = [&](Shape s) { return Tensor::randn(std::move(s), rng).clone_as_param(); };

    {
        Tensor a = rnd({4, 3}), b = rnd({3, 5});
        out.push_back(gradcheck("matmul", [&] { return mse(matmul(a, b), Tensor::zeros({4, 5})); }, {a, b}, rng, points));
    }
    {
        Tensor a = rnd({4, 3}), b = rnd({5, 3});
        out.push_back(
            gradcheck("matmul_nt", [&] { return mse(matmul_nt(a, b), Tensor::zeros({4, 5})); }, {a, b}, rng, points));
    }
    {
        Tensor x = rnd({5, 6});
        Tensor t = Tensor::randn({5, 6}, rng);
        out.push_back(gradcheck("softmax_rows", [&] { return mse(softmax_rows(x), t); }, {x}, rng, points));
    }
    {
        Tensor x = rnd({3, 6, 5}), k = rnd({4, 3, 3, 3});
        Tensor t = Tensor::randn({4, 6, 5}, rng);
        out.push_back(gradcheck("conv2d", [&] { return mse(conv2d(x, k), t); }, {x, k}, rng, points));
    }
    {
        Tensor x = rnd({4, 5, 3}), ga = rnd({4}), be = rnd({4});
        Tensor t = Tensor::randn({4, 5, 3}, rng);
        out.push_back(
            gradcheck("group_norm", [&] { return mse(group_norm(x, 2, ga, be), t); }, {x, ga, be}, rng, points));
    }
    {
        Tensor x = rnd({4, 6}), ga = rnd({6}), be = rnd({6});
        Tensor t = Tensor::randn({4, 6}, rng);
        out.push_back(
            gradcheck("layer_norm_rows", [&] { return mse(layer_norm_rows(x, ga, be), t); }, {x, ga, be}, rng, points));
    }
    {
        Tensor x = rnd({3, 7});
        Tensor t = Tensor::randn({3, 7}, rng);
        out.push_back(gradcheck("silu", [&] { return mse(silu(x), t); }, {x}, rng, points));
    }
    {
        Tensor x = rnd({3, 7});
        Tensor t = Tensor::randn({3, 7}, rng);
        out.push_back(gradcheck("relu_smoothed", [&] { return mse(silu(relu(x)), t); }, {x}, rng, points));
    }
    {
        Tensor tab = rnd({7, 4}), ovr = rnd({4});
        Tensor t = Tensor::randn({5, 4}, rng);
        std::vector<int> ids = {1, 3, 3, 6, 2};
        std::map<int, Tensor> ov = {{3, ovr}};
        out.push_back(gradcheck("embedding_rows", [&] { return mse(embedding_rows(tab, ids, ov), t); }, {tab, ovr},
                                rng, points));
    }
    {
        Tensor a = rnd({2, 4, 4}), b = rnd({3, 4, 4});
        Tensor t = Tensor::randn({5, 4, 4}, rng);
        out.push_back(gradcheck("concat_ch", [&] { return mse(concat_ch(a, b), t); }, {a, b}, rng, points));
    }
    {
        Tensor x = rnd({3, 4, 4});
        Tensor t = Tensor::randn({3, 2, 2}, rng);
        out.push_back(gradcheck("avg_pool2", [&] { return mse(avg_pool2(x), t); }, {x}, rng, points));
    }
    {
        Tensor x = rnd({3, 2, 2});
        Tensor t = Tensor::randn({3, 4, 4}, rng);
        out.push_back(gradcheck("upsample_nearest2", [&] { return mse(upsample_nearest2(x), t); }, {x}, rng, points));
    }
    {
        Tensor x = rnd({4, 3, 3});
        Tensor t = Tensor::randn({4}, rng);
        out.push_back(gradcheck("spatial_mean", [&] { return mse(spatial_mean(x), t); }, {x}, rng, points));
    }
    {
        Tensor x = rnd({5, 4});
        Tensor t = Tensor::randn({4}, rng);
        out.push_back(gradcheck("rows_mean", [&] { return mse(rows_mean(x), t); }, {x}, rng, points));
    }
    {
        Tensor a = rnd({3, 4}), b = rnd({3, 4});
        Tensor t = Tensor::randn({3, 4}, rng);
        out.push_back(gradcheck("add_mul_scale", [&] { return mse(scale(mul(add(a, b), sub(a, b)), 0.7), t); }, {a, b},
                                rng, points));
    }
    {
        Tensor x = rnd({2, 3, 4}), b = rnd({2});
        Tensor t = Tensor::randn({2, 3, 4}, rng);
        out.push_back(
            gradcheck("add_channel_bias", [&] { return mse(add_channel_bias(x, b), t); }, {x, b}, rng, points));
    }
    {
        Tensor x = rnd({3, 5}), b = rnd({5});
        Tensor t = Tensor::randn({3, 5}, rng);
        out.push_back(gradcheck("add_row_bias", [&] { return mse(add_row_bias(x, b), t); }, {x, b}, rng, points));
    }
    {
        Tensor x = rnd({2, 3, 4});
        Tensor t = Tensor::randn({24}, rng);
        out.push_back(gradcheck("reshape", [&] { return mse(reshape(x, {24}), t); }, {x}, rng, points));
    }
    {
        Tensor x = rnd({6});
        out.push_back(gradcheck("cross_entropy_logits", [&] { return cross_entropy_logits(x, 2); }, {x}, rng, points));
    }
    {
        Tensor a = rnd({3, 4}), b = rnd({3, 4});
        out.push_back(gradcheck("mse", [&] { return mse(a, b); }, {a, b}, rng, points));
    }
    {
        Tensor x = rnd({3, 4});
        out.push_back(gradcheck("sum", [&] { return sum(x); }, {x}, rng, points));
    }
    return out;
}

}  // namespace styleblend

#endif
