#ifndef STYLEBLEND_EVAL_HPP
#define STYLEBLEND_EVAL_HPP

#include <cstdio>

#include "styleblend/blend.hpp"
#include "styleblend/metrics.hpp"

namespace styleblend {

struct EvalRow {
    std::string mode;
    double style_score = 0.0;
    double align_score = 0.0;
};

struct EvalTable {
    std::vector<EvalRow> rows;
    int n_per_class = 0;
    uint64_t seed = 0;

    const EvalRow& row(const std::string& mode) const {
        for (const auto& r : rows)
            if (r.mode == mode) return r;
        throw ValidationError("evaluation table has no mode '" + mode + "'");
    }

    std::string to_csv() const {
        std::string out = "mode,style_score,align_score\n";
        char buf[128];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f\n", r.mode.c_str(), r.style_score, r.align_score);
            out += buf;
        }
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json rows_j = nlohmann::json::array();
        for (const auto& r : rows)
            rows_j.push_back({{"mode", r.mode}, {"style_score", r.style_score}, {"align_score", r.align_score}});
        return {{"rows", rows_j}, {"n_per_class", n_per_class}, {"seed", seed}};
    }
};

inline const std::vector<std::string>& eval_modes() {
    static const std::vector<std::string> modes = {"base", "csb", "tsb", "blend", "q_only", "kv_only"};
    return modes;
}

// One generated image for (mode, class, index); eval and the acceptance suite
// share this sampling path.
inline Image eval_sample(const ModelWeights& w, const NoiseSchedule& sched, const StyleBundle& bundle,
                         const std::string& mode, const std::string& cls, int steps, uint64_t seed) {
    if (mode == "base") {
        BranchSpec spec{nullptr, nullptr, vocab().prompt_bare(cls), {}};
        SampleOptions opts{.steps = steps, .eta = 0.0, .guidance_scale = 0.0};
        return tensor_to_image(ddim_sample_latent(w, sched, spec, opts, seed));
    }
    if (mode == "csb") return branch_sample(w, sched, bundle, Branch::CSB, cls, steps, seed);
    if (mode == "tsb") return branch_sample(w, sched, bundle, Branch::TSB, cls, steps, seed);
    if (mode == "blend") return ablation_sample(w, sched, bundle, cls, InjectMode::full, steps, seed);
    if (mode == "q_only") return ablation_sample(w, sched, bundle, cls, InjectMode::q_only, steps, seed);
    if (mode == "kv_only") return ablation_sample(w, sched, bundle, cls, InjectMode::kv_only, steps, seed);
    throw ValidationError("unknown evaluation mode '" + mode + "'");
}

// Mean StyleScore (max over references) and mean AlignScore per mode:
// n_per_class samples for every class, seeds derived per (mode, class, index).
inline EvalTable run_evaluation(const ModelWeights& w, const NoiseSchedule& sched, const StyleBundle& bundle,
                                const ReferenceSet& refs, const ClassProbe& probe,
                                const std::vector<std::string>& classes, int n_per_class, int steps, uint64_t seed) {
    if (!probe.validated()) throw ValidationError("run_evaluation: probe has not passed its validation gate");
    require_bundle_match(w, bundle);
    EvalTable table;
    table.n_per_class = n_per_class;
    table.seed = seed;
    for (const auto& mode : eval_modes()) {
        double style_sum = 0.0, align_sum = 0.0;
        int n = 0;
        for (const auto& cls : classes)
            for (int i = 0; i < n_per_class; i++) {
                uint64_t s = derive_seed(seed, mode + "/" + cls + "/" + std::to_string(i));
                Image img = eval_sample(w, sched, bundle, mode, cls, steps, s);
                style_sum += style_score(img, refs.images);
                align_sum += probe.align_score(img, cls);
                n++;
            }
        table.rows.push_back({mode, style_sum / n, align_sum / n});
    }
    return table;
}

}  // namespace styleblend

#endif
