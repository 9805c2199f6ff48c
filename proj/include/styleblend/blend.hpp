#ifndef STYLEBLEND_BLEND_HPP
#define STYLEBLEND_BLEND_HPP

#include <condition_variable>
#include <exception>
#include <mutex>
#include <thread>

#include "styleblend/style_learning.hpp"

namespace styleblend {

enum class InjectMode { none, full, q_only, kv_only };

inline InjectMode inject_mode_from_string(const std::string& s) {
    if (s == "none") return InjectMode::none;
    if (s == "full" || s == "blend") return InjectMode::full;
    if (s == "q_only" || s == "q-only") return InjectMode::q_only;
    if (s == "kv_only" || s == "kv-only") return InjectMode::kv_only;
    throw ValidationError("unknown injection mode '" + s + "'");
}

struct BlendConfig {
    InjectMode mode = InjectMode::full;
    int steps = 20;
    // injection active for denoising step indices in [from, to)
    int inject_from = 0;
    int inject_to = 1 << 30;
    bool shared_init_noise = true;
};

struct BlendResult {
    Image tsb;  // the primary output
    Image csb;
};

namespace blend_detail {

constexpr int kCsb = 0;
constexpr int kTsb = 1;

// Two-branch barrier at each self-attention site: both branches post their
// raw Q/K/V, wait for the peer, read, then the slot recycles. Exchanged
// tensors are plain values, so results do not depend on thread scheduling.
class Rendezvous {
public:
    explicit Rendezvous(InjectMode mode) : mode_(mode) {}

    void exchange(int branch, Tensor& q, Tensor& k, Tensor& v) {
        Tensor peer_q, peer_k, peer_v;
        {
            std::unique_lock<std::mutex> lock(m_);
            if (error_) std::rethrow_exception(error_);
            long my_gen = gen_;
            q_[branch] = q;
            k_[branch] = k;
            v_[branch] = v;
            posted_++;
            if (posted_ == 2)
                cv_.notify_all();
            else
                cv_.wait(lock, [&] { return (posted_ == 2 && gen_ == my_gen) || error_ != nullptr; });
            if (error_) std::rethrow_exception(error_);
            int peer = 1 - branch;
            peer_q = q_[peer];
            peer_k = k_[peer];
            peer_v = v_[peer];
            consumed_++;
            if (consumed_ == 2) {
                posted_ = 0;
                consumed_ = 0;
                for (int i = 0; i < 2; i++) q_[i] = k_[i] = v_[i] = Tensor();
                gen_++;
                cv_.notify_all();
            } else {
                cv_.wait(lock, [&] { return gen_ != my_gen || error_ != nullptr; });
                if (error_) std::rethrow_exception(error_);
            }
        }
        // the swap itself: Q flows composition -> texture, K/V texture -> composition
        switch (mode_) {
            case InjectMode::full:
                if (branch == kTsb) q = peer_q;
                if (branch == kCsb) {
                    k = peer_k;
                    v = peer_v;
                }
                break;
            case InjectMode::q_only:
                if (branch == kTsb) q = peer_q;
                break;
            case InjectMode::kv_only:
                if (branch == kCsb) {
                    k = peer_k;
                    v = peer_v;
                }
                break;
            case InjectMode::none: break;
        }
    }

    void poison(std::exception_ptr e) {
        std::lock_guard<std::mutex> lock(m_);
        if (!error_) error_ = e;
        cv_.notify_all();
    }

private:
    InjectMode mode_;
    std::mutex m_;
    std::condition_variable cv_;
    Tensor q_[2], k_[2], v_[2];
    int posted_ = 0;
    int consumed_ = 0;
    long gen_ = 0;
    std::exception_ptr error_;
};

// Per-branch tap; counts site callbacks to know the current denoising step.
class BranchTap : public FeatureTap {
public:
    BranchTap(Rendezvous& rv, int branch, std::vector<std::string> sites, int inject_from, int inject_to)
        : rv_(rv), branch_(branch), sites_(std::move(sites)), from_(inject_from), to_(inject_to) {}

    std::vector<std::string> targets() const override { return sites_; }

    void at_site(const std::string& site, Tensor& q, Tensor& k, Tensor& v) override {
        (void)site;
        int step = calls_ / static_cast<int>(sites_.size());
        calls_++;
        // both branches compute the same step index, so they agree on whether
        // to rendezvous; skipping must be symmetric or the barrier would hang
        if (step < from_ || step >= to_) return;
        rv_.exchange(branch_, q, k, v);
    }

private:
    Rendezvous& rv_;
    int branch_;
    std::vector<std::string> sites_;
    int from_, to_;
    int calls_ = 0;
};

}  // namespace blend_detail

// Lockstep dual-branch sampling over explicit branch specs (the test surface;
// bundle-driven callers use blend_sample below). Both branches start from the
// same initial latent when `shared_init_noise` is set; guidance-free, eta 0.
inline std::pair<Tensor, Tensor> blend_sample_latents(const ModelWeights& w, const NoiseSchedule& sched,
                                                      const BranchSpec& csb, const BranchSpec& tsb,
                                                      const BlendConfig& bc, uint64_t seed) {
    SampleOptions opts{.steps = bc.steps, .eta = 0.0, .guidance_scale = 0.0};
    const int n = w.cfg.image_size;

    Tensor init_csb, init_tsb;
    if (bc.shared_init_noise) {
        Rng rng(derive_seed(seed, "sample"));  // same stream a single-branch run draws from
        init_csb = init_tsb = Tensor::randn({3, n, n}, rng);
    } else {
        Rng rc(derive_seed(derive_seed(seed, "csb"), "sample"));
        Rng rt(derive_seed(derive_seed(seed, "tsb"), "sample"));
        init_csb = Tensor::randn({3, n, n}, rc);
        init_tsb = Tensor::randn({3, n, n}, rt);
    }

    if (bc.mode == InjectMode::none) {
        // no cross-branch dependency; run the branches back to back
        Tensor zc = ddim_sample_latent(w, sched, csb, opts, seed, nullptr, init_csb);
        Tensor zt = ddim_sample_latent(w, sched, tsb, opts, seed, nullptr, init_tsb);
        return {zc, zt};
    }

    blend_detail::Rendezvous rv(bc.mode);
    auto sites = w.self_attention_sites();
    Tensor out[2];
    std::exception_ptr errs[2];

    auto run_branch = [&](int branch, const BranchSpec& spec, Tensor init) {
        try {
            blend_detail::BranchTap tap(rv, branch, sites, bc.inject_from, bc.inject_to);
            out[branch] = ddim_sample_latent(w, sched, spec, opts, seed, &tap, std::move(init));
        } catch (...) {
            errs[branch] = std::current_exception();
            rv.poison(errs[branch]);
        }
    };

    std::thread t_csb(run_branch, blend_detail::kCsb, std::cref(csb), init_csb);
    std::thread t_tsb(run_branch, blend_detail::kTsb, std::cref(tsb), init_tsb);
    t_csb.join();
    t_tsb.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
    return {out[blend_detail::kCsb], out[blend_detail::kTsb]};
}

inline BranchSpec csb_spec(const StyleBundle& bundle, const std::string& cls) {
    BranchSpec s;
    s.tokens = vocab().prompt_composition(cls);
    if (bundle.has_composition) {
        s.text_adapters = &bundle.composition_adapters;
        s.overrides = {{vocab().composition_token(), bundle.composition_embedding}};
    }
    return s;
}

inline BranchSpec tsb_spec(const StyleBundle& bundle, const std::string& cls) {
    BranchSpec s;
    s.tokens = vocab().prompt_texture(cls);
    if (bundle.has_texture) {
        s.unet_adapters = &bundle.texture_adapters;
        s.overrides = {{vocab().texture_token(), bundle.texture_embedding}};
    }
    return s;
}

inline void require_bundle_match(const ModelWeights& w, const StyleBundle& bundle) {
    if (bundle.base_model_hash != 0 && bundle.base_model_hash != w.hash())
        throw ValidationError("bundle was trained against a different base model (hash mismatch)");
}

// The full dual-branch synthesis: composition branch and texture branch
// advance in lockstep exchanging self-attention features; the texture branch
// image is the primary output.
inline BlendResult blend_sample(const ModelWeights& w, const NoiseSchedule& sched, const StyleBundle& bundle,
                                const std::string& cls, const BlendConfig& bc, uint64_t seed) {
    require_bundle_match(w, bundle);
    auto [zc, zt] = blend_sample_latents(w, sched, csb_spec(bundle, cls), tsb_spec(bundle, cls), bc, seed);
    return {tensor_to_image(zt), tensor_to_image(zc)};
}

enum class Branch { CSB, TSB };

// Single branch, no injection.
inline Image branch_sample(const ModelWeights& w, const NoiseSchedule& sched, const StyleBundle& bundle, Branch which,
                           const std::string& cls, int steps, uint64_t seed) {
    require_bundle_match(w, bundle);
    BranchSpec spec = which == Branch::CSB ? csb_spec(bundle, cls) : tsb_spec(bundle, cls);
    SampleOptions opts{.steps = steps, .eta = 0.0, .guidance_scale = 0.0};
    return tensor_to_image(ddim_sample_latent(w, sched, spec, opts, seed));
}

// Ablation runs: q_only keeps the texture branch output, kv_only keeps the
// composition branch output (the branch receiving the injection).
inline Image ablation_sample(const ModelWeights& w, const NoiseSchedule& sched, const StyleBundle& bundle,
                             const std::string& cls, InjectMode mode, int steps, uint64_t seed) {
    BlendConfig bc;
    bc.mode = mode;
    bc.steps = steps;
    BlendResult r = blend_sample(w, sched, bundle, cls, bc, seed);
    return mode == InjectMode::kv_only ? r.csb : r.tsb;
}

}  // namespace styleblend

#endif
