#ifndef STYLEBLEND_CLI_HPP
#define STYLEBLEND_CLI_HPP

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "styleblend/eval.hpp"
#include "styleblend/gradcheck.hpp"

namespace styleblend {

namespace cli_detail {

inline std::filesystem::path resolve_out(const std::string& out) {
    std::filesystem::path p(out);
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("STYLEBLEND_OUT")) return std::filesystem::path(root) / p;
    return p;
}

inline Config load_config(const std::string& path) {
    if (path.empty()) {
        Config c;
        c.validate();
        return c;
    }
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error: " + std::string(e.what()));
    }
    return config_from_json(j);
}

inline ReferenceSet refs_from_manifest(const CorpusManifest& m, const std::string& style, int k, uint64_t seed) {
    return make_reference_set(m, style, k, seed);
}

// tiny deterministic scatter plot, StyleScore on x, AlignScore on y
inline Image render_scatter(const EvalTable& table) {
    const int N = 256;
    Image im;
    im.width = im.height = N;
    im.rgb.assign(static_cast<size_t>(N) * N * 3, 245);
    auto put = [&](int x, int y, int r, int g, int b) {
        if (x < 0 || y < 0 || x >= N || y >= N) return;
        size_t o = (static_cast<size_t>(y) * N + x) * 3;
        im.rgb[o] = static_cast<uint8_t>(r);
        im.rgb[o + 1] = static_cast<uint8_t>(g);
        im.rgb[o + 2] = static_cast<uint8_t>(b);
    };
    for (int i = 0; i < N; i++) {
        put(i, N - 1, 60, 60, 60);
        put(0, i, 60, 60, 60);
    }
    static const int colors[6][3] = {{120, 120, 120}, {60, 120, 220}, {220, 140, 40},
                                     {200, 40, 120},  {40, 170, 90},  {150, 80, 200}};
    for (size_t r = 0; r < table.rows.size(); r++) {
        const auto& row = table.rows[r];
        int x = static_cast<int>((row.style_score + 1.0) / 2.0 * (N - 1));
        int y = static_cast<int>((1.0 - row.align_score) * (N - 1));
        const int* c = colors[r % 6];
        for (int dy = -3; dy <= 3; dy++)
            for (int dx = -3; dx <= 3; dx++) put(x + dx, y + dy, c[0], c[1], c[2]);
    }
    return im;
}

}  // namespace cli_detail

// The whole command surface; tools/styleblend.cpp forwards here, and the
// determinism tests drive it in-process.
inline int cli_main(std::vector<std::string> args) {
    using namespace cli_detail;
    CLI::App app{"desk-scale text-to-image diffusion with two-part style learning and dual-branch blending"};
    app.require_subcommand(1);

    std::string config_path, out, base_path, bundle_path, corpus_dir, data_dir, style_name = "voltage";
    std::string mode = "blend", cls = "circle";
    uint64_t seed = 1;
    int k = 3, count = 1;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "config JSON file (defaults when omitted)");
        cmd->add_option("--seed", seed, "master seed");
    };

    // corpus build
    CLI::App* corpus = app.add_subcommand("corpus", "synthetic corpus commands");
    CLI::App* corpus_build = corpus->add_subcommand("build", "render the synthetic styles corpus");
    add_common(corpus_build);
    corpus_build->add_option("--out", out, "corpus output directory")->required();

    // pretrain
    CLI::App* pretrain = app.add_subcommand("pretrain", "train the base text-to-image model on the corpus");
    add_common(pretrain);
    pretrain->add_option("--corpus", corpus_dir, "corpus directory (with manifest.json)")->required();
    pretrain->add_option("--out", out, "checkpoint output path")->required();

    // style subcommands
    CLI::App* style = app.add_subcommand("style", "style learning commands");
    CLI::App* learn_tex = style->add_subcommand("learn-texture", "learn the texture component (embedding + denoiser adapters)");
    add_common(learn_tex);
    learn_tex->add_option("--base", base_path, "base model checkpoint")->required();
    learn_tex->add_option("--corpus", corpus_dir, "corpus directory")->required();
    learn_tex->add_option("--style", style_name, "style name of the references");
    learn_tex->add_option("--k", k, "number of references (1 or 3)");
    learn_tex->add_option("--out", out, "bundle output path (merged if it exists)")->required();

    CLI::App* sdedit = style->add_subcommand("sdedit-data", "generate the edit-based composition training set");
    add_common(sdedit);
    sdedit->add_option("--base", base_path, "base model checkpoint")->required();
    sdedit->add_option("--corpus", corpus_dir, "corpus directory")->required();
    sdedit->add_option("--style", style_name, "style name of the references");
    sdedit->add_option("--k", k, "number of references (1 or 3)");
    sdedit->add_option("--out", out, "dataset output directory")->required();

    CLI::App* learn_comp = style->add_subcommand("learn-composition", "learn the composition component (text-encoder adapters)");
    add_common(learn_comp);
    learn_comp->add_option("--base", base_path, "base model checkpoint")->required();
    learn_comp->add_option("--data", data_dir, "edit dataset directory (from sdedit-data)")->required();
    learn_comp->add_option("--out", out, "bundle output path (merged if it exists)")->required();

    // synth
    CLI::App* synth = app.add_subcommand("synth", "sample images from a learned style");
    add_common(synth);
    synth->add_option("--base", base_path, "base model checkpoint")->required();
    synth->add_option("--bundle", bundle_path, "style bundle")->required();
    synth->add_option("--mode", mode, "blend | csb | tsb | q-only | kv-only");
    synth->add_option("--class", cls, "class prompt");
    synth->add_option("--count", count, "images to sample");
    synth->add_option("--out", out, "output directory")->required();

    // eval
    CLI::App* eval_cmd = app.add_subcommand("eval", "score table across modes (style similarity x text alignment)");
    add_common(eval_cmd);
    eval_cmd->add_option("--base", base_path, "base model checkpoint")->required();
    eval_cmd->add_option("--bundle", bundle_path, "style bundle")->required();
    eval_cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();
    eval_cmd->add_option("--style", style_name, "style the bundle was trained on");
    eval_cmd->add_option("--k", k, "number of references (1 or 3)");
    eval_cmd->add_option("--out", out, "output directory")->required();

    // gradcheck
    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
    add_common(gc);

    try {
        std::vector<const char*> argv;
        std::string prog = "styleblend";
        argv.push_back(prog.c_str());
        for (const auto& a : args) argv.push_back(a.c_str());
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 3;  // malformed invocation = config error
    }

    try {
        if (corpus_build->parsed()) {
            Config cfg = load_config(config_path);
            auto dir = resolve_out(out);
            build_corpus(cfg, dir.string(), seed);
            std::cout << "corpus written to " << dir.string() << "\n";
            return 0;
        }
        if (pretrain->parsed()) {
            Config cfg = load_config(config_path);
            CorpusManifest m = load_manifest(corpus_dir);
            std::vector<PretrainItem> items;
            for (const auto& it : m.items)
                if (it.split == "train" && it.style != cfg.heldout_style)
                    items.push_back({image_to_tensor(load_item(m, it)), it.class_name});
            PretrainResult res = pretrain_base(items, cfg, seed);
            auto path = resolve_out(out);
            if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
            save_checkpoint(res.weights, path.string());
            // loss curve beside the checkpoint
            std::ofstream losses(path.string() + ".losses.csv");
            losses << "step,loss\n";
            char buf[64];
            for (size_t i = 0; i < res.losses.size(); i++) {
                std::snprintf(buf, sizeof(buf), "%zu,%.6f\n", i, res.losses[i]);
                losses << buf;
            }
            std::cout << "checkpoint written to " << path.string() << " (hash " << res.weights.hash() << ")\n";
            return 0;
        }
        if (learn_tex->parsed()) {
            Config cfg = load_config(config_path);
            ModelWeights w = load_checkpoint(base_path);
            NoiseSchedule sched = NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end);
            CorpusManifest m = load_manifest(corpus_dir);
            ReferenceSet refs = refs_from_manifest(m, style_name, k, seed);
            auto path = resolve_out(out);
            StyleBundle bundle;
            if (std::filesystem::exists(path)) {
                bool mismatch = false;
                bundle = load_bundle(path.string(), w.hash(), &mismatch);
                if (mismatch) std::cout << "warning: existing bundle was trained against a different base model\n";
            }
            learn_texture(w, sched, refs, cfg, seed, bundle);
            if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
            save_bundle(bundle, path.string());
            std::cout << "texture component written to " << path.string() << "\n";
            return 0;
        }
        if (sdedit->parsed()) {
            Config cfg = load_config(config_path);
            ModelWeights w = load_checkpoint(base_path);
            NoiseSchedule sched = NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end);
            CorpusManifest m = load_manifest(corpus_dir);
            ReferenceSet refs = refs_from_manifest(m, style_name, k, seed);
            SDEditDataset ds = generate_sdedit_dataset(w, sched, refs, cfg, seed);
            auto dir = resolve_out(out);
            save_sdedit_dataset(ds, dir.string());
            std::cout << ds.items.size() << " edited images written to " << dir.string() << "\n";
            return 0;
        }
        if (learn_comp->parsed()) {
            Config cfg = load_config(config_path);
            ModelWeights w = load_checkpoint(base_path);
            NoiseSchedule sched = NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end);
            SDEditDataset ds = load_sdedit_dataset(data_dir);
            auto path = resolve_out(out);
            StyleBundle bundle;
            if (std::filesystem::exists(path)) {
                bool mismatch = false;
                bundle = load_bundle(path.string(), w.hash(), &mismatch);
                if (mismatch) std::cout << "warning: existing bundle was trained against a different base model\n";
            }
            learn_composition(w, sched, ds, cfg, seed, bundle);
            if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
            save_bundle(bundle, path.string());
            std::cout << "composition component written to " << path.string() << "\n";
            return 0;
        }
        if (synth->parsed()) {
            Config cfg = load_config(config_path);
            ModelWeights w = load_checkpoint(base_path);
            NoiseSchedule sched = NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end);
            bool mismatch = false;
            StyleBundle bundle = load_bundle(bundle_path, w.hash(), &mismatch);
            if (mismatch) std::cout << "warning: bundle was trained against a different base model\n";
            auto dir = resolve_out(out);
            std::filesystem::create_directories(dir);
            std::string mode_tag = mode;
            for (auto& c : mode_tag)
                if (c == '-') c = '_';
            for (int i = 0; i < count; i++) {
                uint64_t s = derive_seed(seed, mode_tag + "/" + cls + "/" + std::to_string(i));
                Image img = eval_sample(w, sched, bundle, mode_tag, cls, cfg.sample_steps, s);
                save_png(img, (dir / (mode_tag + "_" + cls + "_" + std::to_string(i) + ".png")).string());
            }
            std::cout << count << " image(s) written to " << dir.string() << "\n";
            return 0;
        }
        if (eval_cmd->parsed()) {
            Config cfg = load_config(config_path);
            ModelWeights w = load_checkpoint(base_path);
            NoiseSchedule sched = NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end);
            bool mismatch = false;
            StyleBundle bundle = load_bundle(bundle_path, w.hash(), &mismatch);
            if (mismatch) std::cout << "warning: bundle was trained against a different base model\n";
            CorpusManifest m = load_manifest(corpus_dir);
            ReferenceSet refs = refs_from_manifest(m, style_name, k, seed);
            ClassProbe probe = ClassProbe::init(m.classes, seed);
            double acc = probe.train(m, cfg.probe_epochs, cfg.probe_lr, seed);
            if (!probe.validated())
                throw ValidationError("probe failed its validation gate (held-out accuracy " + std::to_string(acc) +
                                      " < 0.9)");
            EvalTable table =
                run_evaluation(w, sched, bundle, refs, probe, m.classes, cfg.eval_per_class, cfg.sample_steps, seed);
            auto dir = resolve_out(out);
            std::filesystem::create_directories(dir);
            std::ofstream csv(dir / "eval.csv");
            csv << table.to_csv();
            std::ofstream js(dir / "eval.json");
            js << table.to_json().dump(2) << "\n";
            save_png(render_scatter(table), (dir / "eval_scatter.png").string());
            std::cout << table.to_csv();
            return 0;
        }
        if (gc->parsed()) {
            auto reports = run_gradcheck_suite(seed == 1 ? 0xC0FFEE : seed, 5);
            bool ok = true;
            for (const auto& r : reports) {
                bool pass = r.pass(1e-4);
                ok = ok && pass;
                std::printf("%-20s max rel err %.3e  %s\n", r.name.c_str(), r.max_rel_err, pass ? "ok" : "FAIL");
            }
            return ok ? 0 : 2;
        }
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace styleblend

#endif
