#ifndef STYLEBLEND_DIFFUSION_HPP
#define STYLEBLEND_DIFFUSION_HPP

#include <set>
#include <string>
#include <vector>

#include "styleblend/adam.hpp"
#include "styleblend/image.hpp"
#include "styleblend/schedule.hpp"
#include "styleblend/text_encoder.hpp"
#include "styleblend/unet.hpp"

namespace styleblend {

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps. t = 0 is the identity limit.
inline Tensor add_noise(const NoiseSchedule& sched, const Tensor& z0, int t, const Tensor& eps) {
    check_same_shape(z0, eps, "add_noise");
    double a = sched.sqrt_alpha_bar(t);  // range-checks t
    double b = sched.sqrt_one_minus_alpha_bar(t);
    return add(scale(z0, a), scale(eps, b));
}

// One conditioning setup for the sampler / loss: which adapters are live and
// how the prompt is embedded.
struct BranchSpec {
    const LoRASet* unet_adapters = nullptr;
    const LoRASet* text_adapters = nullptr;
    PromptTokens tokens;
    std::map<int, Tensor> overrides;
};

struct BatchItem {
    Tensor image;  // [3,h,w] in [-1,1]
    PromptTokens tokens;
    std::map<int, Tensor> overrides;
};

// Mean over the batch of ||eps - eps_hat||^2 / n, with t ~ U[1,T] and
// eps ~ N(0,I) drawn per item from `rng`. Gradients reach exactly the
// parameters the caller marked trainable; `trainable` declares that subset.
inline Tensor diffusion_loss(const ModelWeights& w, const NoiseSchedule& sched, const std::vector<BatchItem>& batch,
                             const LoRASet* unet_adapters, const LoRASet* text_adapters,
                             const std::vector<Tensor>& trainable, Rng& rng) {
    if (trainable.empty()) throw std::invalid_argument("diffusion_loss: trainable subset is empty");
    for (const auto& t : trainable)
        if (!t.requires_grad())
            throw std::invalid_argument("diffusion_loss: declared trainable tensor is frozen");
    if (batch.empty()) throw std::invalid_argument("diffusion_loss: empty batch");

    Tensor total;
    for (const auto& item : batch) {
        int t = rng.uniform_int(1, sched.T());
        Tensor eps = Tensor::randn(item.image.shape(), rng);
        Tensor z_t = add_noise(sched, item.image, t, eps);
        Tensor text = encode_text(w, item.tokens, text_adapters, item.overrides);
        Tensor pred = unet_forward(w, z_t, t, text, unet_adapters);
        Tensor li = mse(pred, eps);
        total = total.defined() ? add(total, li) : li;
    }
    return scale(total, 1.0 / static_cast<double>(batch.size()));
}

// Measurement-only variant: same draw protocol, no gradients, no trainable
// declaration. Used to compare losses before/after training at fixed seeds.
inline double diffusion_loss_eval(const ModelWeights& w, const NoiseSchedule& sched,
                                  const std::vector<BatchItem>& batch, const LoRASet* unet_adapters,
                                  const LoRASet* text_adapters, Rng& rng) {
    NoGradGuard ng;
    double total = 0.0;
    for (const auto& item : batch) {
        int t = rng.uniform_int(1, sched.T());
        Tensor eps = Tensor::randn(item.image.shape(), rng);
        Tensor z_t = add_noise(sched, item.image, t, eps);
        Tensor text = encode_text(w, item.tokens, text_adapters, item.overrides);
        Tensor pred = unet_forward(w, z_t, t, text, unet_adapters);
        total += mse(pred, eps).item();
    }
    return total / static_cast<double>(batch.size());
}

struct SampleOptions {
    int steps = 20;
    double eta = 0.0;
    double guidance_scale = 0.0;
    bool clip_denoised = true;  // clamp the x0 estimate to [-1,1] each step
};

// Deterministic DDIM trajectory from (z_start at t_start) down to t = 0.
// With eta = 0 the result is a pure function of its arguments.
inline Tensor ddim_trajectory(const ModelWeights& w, const NoiseSchedule& sched, const BranchSpec& spec,
                              Tensor z, int t_start, const SampleOptions& opts, Rng& rng, FeatureTap* tap = nullptr) {
    if (opts.steps > sched.T())
        throw std::invalid_argument("ddim: steps " + std::to_string(opts.steps) + " exceed schedule T " +
                                    std::to_string(sched.T()));
    NoGradGuard ng;
    Tensor text = encode_text(w, spec.tokens, spec.text_adapters, spec.overrides);
    Tensor text_uncond;
    if (opts.guidance_scale > 0.0) text_uncond = encode_text(w, vocab().prompt_empty(), spec.text_adapters, {});

    std::vector<int> ts = linear_timesteps(t_start, 1, opts.steps);
    for (size_t i = 0; i < ts.size(); i++) {
        int t = ts[i];
        int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        Tensor eps = unet_forward(w, z, t, text, spec.unet_adapters, tap);
        if (opts.guidance_scale > 0.0) {
            Tensor eps_u = unet_forward(w, z, t, text_uncond, spec.unet_adapters, tap);
            eps = add(eps_u, scale(sub(eps, eps_u), opts.guidance_scale));
        }
        double abar_t = sched.alpha_bar(t);
        double abar_p = sched.alpha_bar(t_prev);
        Tensor x0 = scale(sub(z, scale(eps, std::sqrt(1.0 - abar_t))), 1.0 / std::sqrt(abar_t));
        if (opts.clip_denoised) {
            Tensor clipped = Tensor::zeros(x0.shape());
            for (size_t i = 0; i < x0.numel(); i++)
                clipped.data()[i] = std::clamp(x0.data()[i], -1.0, 1.0);
            // keep eps consistent with the clipped estimate so the update stays on-manifold
            eps = scale(sub(z, scale(clipped, std::sqrt(abar_t))), 1.0 / std::sqrt(1.0 - abar_t));
            x0 = clipped;
        }
        double sigma = 0.0;
        if (opts.eta > 0.0 && t_prev > 0)
            sigma = opts.eta * std::sqrt((1.0 - abar_p) / (1.0 - abar_t)) * std::sqrt(1.0 - abar_t / abar_p);
        double dir_coef = std::sqrt(std::max(0.0, 1.0 - abar_p - sigma * sigma));
        z = add(scale(x0, std::sqrt(abar_p)), scale(eps, dir_coef));
        if (sigma > 0.0) z = add(z, scale(Tensor::randn(z.shape(), rng), sigma));
    }
    return z;
}

// Full generation from pure noise. The initial latent comes from the
// seed-derived stream unless `init_noise` supplies one (the dual-branch
// engine shares a single draw across branches that way).
inline Tensor ddim_sample_latent(const ModelWeights& w, const NoiseSchedule& sched, const BranchSpec& spec,
                                 const SampleOptions& opts, uint64_t seed, FeatureTap* tap = nullptr,
                                 Tensor init_noise = {}) {
    Rng rng(derive_seed(seed, "sample"));
    Tensor z = init_noise.defined()
                   ? init_noise
                   : Tensor::randn({3, w.cfg.image_size, w.cfg.image_size}, rng);
    return ddim_trajectory(w, sched, spec, z, sched.T(), opts, rng, tap);
}

inline Image ddim_sample(const ModelWeights& w, const NoiseSchedule& sched, const BranchSpec& spec,
                         const SampleOptions& opts, uint64_t seed) {
    return tensor_to_image(ddim_sample_latent(w, sched, spec, opts, seed));
}

// ---------------------------------------------------------------------------
// base-model pretraining
// ---------------------------------------------------------------------------

struct PretrainItem {
    Tensor image;
    std::string class_name;
};

struct PretrainResult {
    ModelWeights weights;
    std::vector<double> losses;
};

// Exponential moving average over a parameter set; the averaged weights are
// what sampling uses after pretraining. The decay ramps up as (1+n)/(10+n)
// so the average never keeps a large stake in the untrained initialization.
class EmaTracker {
public:
    EmaTracker(const std::vector<Tensor>& params, double decay) : target_decay_(decay) {
        for (const auto& p : params) shadow_.push_back(p.data());
    }
    void update(const std::vector<Tensor>& params) {
        n_++;
        double d = std::min(target_decay_, (1.0 + n_) / (10.0 + n_));
        for (size_t i = 0; i < params.size(); i++) {
            const auto& v = params[i].data();
            auto& s = shadow_[i];
            for (size_t j = 0; j < v.size(); j++) s[j] = d * s[j] + (1.0 - d) * v[j];
        }
    }
    void copy_to(std::vector<Tensor>& params) const {
        for (size_t i = 0; i < params.size(); i++) params[i].data() = shadow_[i];
    }

private:
    double target_decay_;
    double n_ = 0;
    std::vector<std::vector<double>> shadow_;
};

// Pretraining-only objective: the same eps-MSE per sample, reweighted toward
// high noise levels (capped x0-space weighting). A small model trained
// unweighted learns the pure-noise-end conditional mean far too slowly to
// sample from; the weighting front-loads exactly that. Style learning does
// not use this: it runs on the plain uniform unweighted loss.
inline Tensor pretrain_loss(const ModelWeights& w, const NoiseSchedule& sched, const std::vector<BatchItem>& batch,
                            const std::vector<Tensor>& trainable, Rng& rng, double weight_cap = 20.0) {
    if (trainable.empty()) throw std::invalid_argument("pretrain_loss: trainable subset is empty");
    Tensor total;
    double wsum = 0.0;
    for (const auto& item : batch) {
        int t = rng.uniform_int(1, sched.T());
        double abar = sched.alpha_bar(t);
        double wt = std::clamp((1.0 - abar) / abar, 1.0, weight_cap);
        Tensor eps = Tensor::randn(item.image.shape(), rng);
        Tensor z_t = add_noise(sched, item.image, t, eps);
        Tensor text = encode_text(w, item.tokens, nullptr, item.overrides);
        Tensor pred = unet_forward(w, z_t, t, text, nullptr);
        Tensor li = scale(mse(pred, eps), wt);
        total = total.defined() ? add(total, li) : li;
        wsum += wt;
    }
    return scale(total, 1.0 / wsum);
}

// Trains the stand-in for a pretrained text-to-image model on the synthetic
// corpus. Prompts mix the bare class template with the 'artistic' style
// template so the template words and the embedding that seats e_T are all
// trained. Linear warmup + cosine decay on the learning rate; the returned
// weights are the EMA unless ema_decay is 0.
inline PretrainResult pretrain_base(const std::vector<PretrainItem>& items, const Config& cfg, uint64_t seed) {
    {
        std::set<std::string> classes;
        for (const auto& it : items) classes.insert(it.class_name);
        if (classes.size() < 2) throw ValidationError("pretrain: corpus must contain at least 2 classes");
    }
    PretrainResult res;
    res.weights = ModelWeights::init(cfg.model, seed);
    NoiseSchedule sched = NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end);

    res.weights.set_trainable(true);
    std::vector<Tensor> trainable = res.weights.all_params();
    Adam opt(trainable, {.lr = cfg.pretrain_lr});
    EmaTracker ema(trainable, cfg.pretrain_ema_decay);
    Rng rng_data(derive_seed(seed, "pretrain-data"));
    Rng rng_noise(derive_seed(seed, "pretrain-noise"));

    for (int step = 0; step < cfg.pretrain_steps; step++) {
        double warm = cfg.pretrain_warmup > 0 ? std::min(1.0, (step + 1.0) / cfg.pretrain_warmup) : 1.0;
        double progress = cfg.pretrain_steps > 1 ? static_cast<double>(step) / (cfg.pretrain_steps - 1) : 1.0;
        double cosine = 0.1 + 0.45 * (1.0 + std::cos(3.14159265358979323846 * progress));
        opt.set_lr(cfg.pretrain_lr * warm * cosine);

        std::vector<BatchItem> batch;
        for (int b = 0; b < cfg.pretrain_batch; b++) {
            const PretrainItem& it = items[static_cast<size_t>(rng_data.uniform_int(0, static_cast<int>(items.size()) - 1))];
            bool styled = rng_data.uniform() < cfg.styled_prompt_fraction;
            batch.push_back({it.image,
                             styled ? vocab().prompt_artistic(it.class_name) : vocab().prompt_bare(it.class_name),
                             {}});
        }
        Tensor loss = pretrain_loss(res.weights, sched, batch, trainable, rng_noise);
        backward(loss);
        opt.step();
        if (cfg.pretrain_ema_decay > 0.0) ema.update(trainable);
        res.losses.push_back(loss.item());
    }
    if (cfg.pretrain_ema_decay > 0.0 && cfg.pretrain_steps > 0) ema.copy_to(trainable);
    return res;
}

}  // namespace styleblend

#endif
