#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <styleblend/blend.hpp>

using namespace styleblend;

namespace {

Config tiny_config() {
    Config cfg;
    cfg.model.base_width = 8;
    cfg.model.time_dim = 16;
    cfg.model.text_dim = 32;
    cfg.model.groups = 4;
    cfg.timesteps = 60;
    return cfg;
}

ModelWeights randomized_weights(const Config& cfg, uint64_t seed) {
    ModelWeights w = ModelWeights::init(cfg.model, seed);
    Rng rng(derive_seed(seed, "randomize"));
    for (const auto& name : w.names()) {
        Tensor& t = w.at(name);
        if (name.size() > 6 && name.substr(name.size() - 6) == ".gamma") continue;
        bool all_zero = true;
        for (double v : t.data())
            if (v != 0.0) all_zero = false;
        if (all_zero)
            for (auto& v : t.data()) v = 0.2 * rng.normal();
    }
    return w;
}

// adapters with non-zero B so they actually act
LoRASet active_lora(const std::vector<std::pair<std::string, std::pair<int, int>>>& targets, uint64_t seed) {
    Rng rng(seed);
    LoRASet set = make_lora_set(targets, 4, rng);
    for (auto& [addr, a] : set)
        for (auto& v : a.B.data()) v = 0.1 * rng.normal();
    return set;
}

StyleBundle fake_bundle(const ModelWeights& w, uint64_t seed) {
    StyleBundle b;
    Rng rng(seed);
    b.texture_embedding = Tensor::randn({w.cfg.text_dim}, rng, 0.3);
    b.texture_adapters = active_lora(w.unet_attention_projections(), derive_seed(seed, "t"));
    b.composition_embedding = Tensor::randn({w.cfg.text_dim}, rng, 0.3);
    b.composition_adapters = active_lora(w.text_attention_projections(), derive_seed(seed, "c"));
    b.has_texture = b.has_composition = true;
    b.base_model_hash = w.hash();
    b.config_snapshot = config_to_json(tiny_config());
    return b;
}

}  // namespace

TEST_CASE("identity-swap invariance: identical branches, full injection == single-branch sampling") {
    Config cfg = tiny_config();
    ModelWeights w = randomized_weights(cfg, 71);
    NoiseSchedule sched = NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end);

    Rng ar(72);
    LoRASet adapters = active_lora(w.unet_attention_projections(), 73);
    BranchSpec spec{&adapters, nullptr, vocab().prompt_bare("triangle"), {}};

    for (uint64_t seed : {100, 101}) {
        SampleOptions opts{.steps = 8, .eta = 0.0, .guidance_scale = 0.0};
        Tensor solo = ddim_sample_latent(w, sched, spec, opts, seed);
        BlendConfig bc;
        bc.mode = InjectMode::full;
        bc.steps = 8;
        auto [csb, tsb] = blend_sample_latents(w, sched, spec, spec, bc, seed);
        CHECK(tsb.data() == solo.data());
        CHECK(csb.data() == solo.data());
    }
}

TEST_CASE("mode none reduces to independent single-branch runs, bit-exact") {
    Config cfg = tiny_config();
    ModelWeights w = randomized_weights(cfg, 81);
    NoiseSchedule sched = NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end);
    StyleBundle b = fake_bundle(w, 82);

    BlendConfig bc;
    bc.mode = InjectMode::none;
    bc.steps = 8;
    auto [zc, zt] = blend_sample_latents(w, sched, csb_spec(b, "cross"), tsb_spec(b, "cross"), bc, 500);

    SampleOptions opts{.steps = 8, .eta = 0.0, .guidance_scale = 0.0};
    Tensor solo_t = ddim_sample_latent(w, sched, tsb_spec(b, "cross"), opts, 500);
    Tensor solo_c = ddim_sample_latent(w, sched, csb_spec(b, "cross"), opts, 500);
    CHECK(zt.data() == solo_t.data());
    CHECK(zc.data() == solo_c.data());
}

TEST_CASE("injection modes are distinguishable and deterministic; shapes preserved") {
    Config cfg = tiny_config();
    ModelWeights w = randomized_weights(cfg, 91);
    NoiseSchedule sched = NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end);
    StyleBundle b = fake_bundle(w, 92);

    auto run = [&](InjectMode mode, uint64_t seed) {
        BlendConfig bc;
        bc.mode = mode;
        bc.steps = 6;
        return blend_sample_latents(w, sched, csb_spec(b, "ring"), tsb_spec(b, "ring"), bc, seed);
    };

    auto [c_full, t_full] = run(InjectMode::full, 7);
    auto [c_q, t_q] = run(InjectMode::q_only, 7);
    auto [c_kv, t_kv] = run(InjectMode::kv_only, 7);
    auto [c_none, t_none] = run(InjectMode::none, 7);

    CHECK(t_full.shape() == t_none.shape());
    CHECK(t_q.data() != t_full.data());     // q_only differs from full
    CHECK(t_kv.data() == t_none.data());    // kv_only leaves the texture branch untouched
    CHECK(c_kv.data() != c_none.data());    // ...but changes the composition branch
    CHECK(t_q.data() != t_none.data());

    // deterministic per seed, across all modes
    for (InjectMode m : {InjectMode::full, InjectMode::q_only, InjectMode::kv_only, InjectMode::none}) {
        auto [c1, t1] = run(m, 11);
        auto [c2, t2] = run(m, 11);
        CHECK(t1.data() == t2.data());
        CHECK(c1.data() == c2.data());
    }
}

TEST_CASE("cross-branch influence is live: perturbing composition adapters moves the texture output") {
    Config cfg = tiny_config();
    ModelWeights w = randomized_weights(cfg, 95);
    NoiseSchedule sched = NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end);
    StyleBundle b = fake_bundle(w, 96);

    BlendConfig bc;
    bc.mode = InjectMode::full;
    bc.steps = 6;
    auto [c1, t1] = blend_sample_latents(w, sched, csb_spec(b, "square"), tsb_spec(b, "square"), bc, 3);

    StyleBundle b2 = b;
    b2.composition_adapters = b.composition_adapters;  // deep-ish copy below
    LoRASet perturbed;
    for (const auto& [addr, a] : b.composition_adapters) {
        LoRAAdapter c = a;
        c.A = a.A.detach();
        c.B = a.B.detach();
        perturbed.emplace(addr, std::move(c));
    }
    perturbed.begin()->second.B.data()[0] += 0.4;
    b2.composition_adapters = std::move(perturbed);
    auto [c2, t2] = blend_sample_latents(w, sched, csb_spec(b2, "square"), tsb_spec(b2, "square"), bc, 3);

    CHECK(t1.value_hash() != t2.value_hash());
}

TEST_CASE("injection is pre-softmax: overridden scores still form a distribution") {
    Config cfg = tiny_config();
    ModelWeights w = randomized_weights(cfg, 97);
    Rng rng(98);
    int c2 = 4 * cfg.model.base_width;
    Tensor x = Tensor::randn({c2, 8, 8}, rng);

    DirectiveTap tap;
    tap.directives["unet.mid.sattn"].export_qkv = true;
    tap.directives["unet.mid.sattn"].override_q = Tensor::randn({64, c2}, rng);
    tap.directives["unet.mid.sattn"].override_k = Tensor::randn({64, c2}, rng);
    tap.directives["unet.mid.sattn"].override_v = Tensor::randn({64, c2}, rng);
    NoGradGuard ng;
    Tensor y = unet_detail::self_attention(w, "unet.mid.sattn", x, nullptr, &tap, cfg.model.groups);
    CHECK(y.shape() == x.shape());
    for (double v : y.data()) CHECK(std::isfinite(v));

    Tensor scores = softmax_rows(scale(
        matmul_nt(*tap.directives["unet.mid.sattn"].override_q, *tap.directives["unet.mid.sattn"].override_k),
        1.0 / std::sqrt(static_cast<double>(c2))));
    for (int i = 0; i < 64; i++) {
        double s = 0;
        for (int j = 0; j < 64; j++) s += scores.data()[static_cast<size_t>(i) * 64 + j];
        CHECK(std::fabs(s - 1.0) <= 1e-9);
    }
}

TEST_CASE("bundle io: byte-stable round trip, tamper detection, provenance warning, hash gate") {
    Config cfg = tiny_config();
    ModelWeights w = randomized_weights(cfg, 111);
    NoiseSchedule sched = NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end);
    StyleBundle b = fake_bundle(w, 112);

    auto dir = std::filesystem::temp_directory_path() / "styleblend_bundle_test";
    std::filesystem::create_directories(dir);
    auto path = (dir / "style.bundle").string();

    save_bundle(b, path);
    StyleBundle b2 = load_bundle(path);
    auto path2 = (dir / "style2.bundle").string();
    save_bundle(b2, path2);
    CHECK(read_file(path) == read_file(path2));  // save -> load -> save is byte-identical

    CHECK(b2.base_model_hash == b.base_model_hash);
    CHECK(b2.reference_hashes == b.reference_hashes);
    CHECK(b2.texture_embedding.data() == b.texture_embedding.data());
    CHECK(b2.composition_adapters.size() == b.composition_adapters.size());

    // tampered payload fails the checksum
    auto bytes = read_file(path);
    bytes[bytes.size() / 3] ^= 0x40;
    write_file(path2, bytes);
    CHECK_THROWS(load_bundle(path2));

    // provenance warning on base-model mismatch
    bool mismatch = false;
    load_bundle(path, b.base_model_hash, &mismatch);
    CHECK_FALSE(mismatch);
    load_bundle(path, b.base_model_hash + 1, &mismatch);
    CHECK(mismatch);

    // blend rejects a bundle trained against different weights
    ModelWeights other = randomized_weights(cfg, 999);
    BlendConfig bc;
    bc.steps = 2;
    CHECK_THROWS_AS(blend_sample(other, sched, b, "circle", bc, 1), ValidationError);

    std::filesystem::remove_all(dir);
}

TEST_CASE("branch and ablation samplers are deterministic and routed to the right branch") {
    Config cfg = tiny_config();
    ModelWeights w = randomized_weights(cfg, 121);
    NoiseSchedule sched = NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end);
    StyleBundle b = fake_bundle(w, 122);

    Image tsb1 = branch_sample(w, sched, b, Branch::TSB, "star", 6, 9);
    Image tsb2 = branch_sample(w, sched, b, Branch::TSB, "star", 6, 9);
    CHECK(tsb1.rgb == tsb2.rgb);
    Image csb = branch_sample(w, sched, b, Branch::CSB, "star", 6, 9);
    CHECK(csb.rgb != tsb1.rgb);

    // kv_only output comes from the branch receiving the injection (CSB)
    BlendConfig bc;
    bc.mode = InjectMode::kv_only;
    bc.steps = 6;
    BlendResult r = blend_sample(w, sched, b, "star", bc, 9);
    Image abl = ablation_sample(w, sched, b, "star", InjectMode::kv_only, 6, 9);
    CHECK(abl.rgb == r.csb.rgb);
    Image ablq = ablation_sample(w, sched, b, "star", InjectMode::q_only, 6, 9);
    BlendConfig bq;
    bq.mode = InjectMode::q_only;
    bq.steps = 6;
    CHECK(ablq.rgb == blend_sample(w, sched, b, "star", bq, 9).tsb.rgb);
}
