#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <styleblend/blend.hpp>
#include <styleblend/eval.hpp>

using namespace styleblend;
namespace fs = std::filesystem;

namespace {

// Small model + short schedule, briefly pretrained so the style procedures
// act on something non-degenerate. Built once per process.
struct Fixture {
    Config cfg;
    ModelWeights weights;
    NoiseSchedule sched;
    ReferenceSet refs;

    Fixture() : sched(1, {0.5}) {
        cfg.model.base_width = 8;
        cfg.model.time_dim = 16;
        cfg.model.text_dim = 32;
        cfg.model.groups = 4;
        cfg.timesteps = 60;
        cfg.style_batch = 2;
        cfg.sample_steps = 8;
        sched = NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end);

        const auto& holdout = default_styles().back();
        refs.style = holdout.name;
        for (const auto& cls : {"circle", "square", "star"}) {
            refs.images.push_back(render(holdout, cls, derive_seed(1000, cls)));
            refs.classes.push_back(cls);
        }

        std::vector<PretrainItem> items;
        for (const auto& style : default_styles()) {
            if (style.name == holdout.name) continue;
            for (const auto& cls : corpus_classes())
                for (int i = 0; i < 2; i++)
                    items.push_back({image_to_tensor(render(style, cls, derive_seed(2000, style.name + cls) + i)),
                                     cls});
        }
        Config pre = cfg;
        pre.pretrain_steps = 80;
        pre.pretrain_batch = 4;
        weights = pretrain_base(items, pre, 77).weights;
        weights.set_trainable(false);
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

// mean loss over a frozen set of (t, eps) draws
double fixed_seed_loss(const ModelWeights& w, const NoiseSchedule& sched, const ReferenceSet& refs,
                       const std::vector<PromptTokens>& prompts, const std::map<int, Tensor>& overrides,
                       const LoRASet* unet_lora, const LoRASet* text_lora, int n_seeds = 64) {
    double total = 0.0;
    for (int s = 0; s < n_seeds; s++) {
        Rng rng(derive_seed(0xF00D, s));
        std::vector<BatchItem> batch;
        for (size_t i = 0; i < refs.images.size(); i++)
            batch.push_back({image_to_tensor(refs.images[i]), prompts[i], overrides});
        total += diffusion_loss_eval(w, sched, batch, unet_lora, text_lora, rng);
    }
    return total / n_seeds;
}

std::vector<PromptTokens> texture_prompts_for(const ReferenceSet& refs) {
    std::vector<PromptTokens> prompts;
    for (const auto& cls : refs.classes) prompts.push_back(vocab().prompt_texture(cls));
    return prompts;
}

}  // namespace

TEST_CASE("lora adapter: rank cap, effective delta formula") {
    Rng rng(3);
    LoRAAdapter a = LoRAAdapter::init("x", 8, 6, 16, rng);
    CHECK(a.rank == 6);  // capped by layer width
    CHECK(a.alpha == doctest::Approx(6.0));

    // delta = (alpha/r) * B * A applied to x W^T
    LoRAAdapter b = LoRAAdapter::init("text.block0.attn.q", 4, 4, 2, rng);
    for (auto& v : b.B.data()) v = rng.normal();
    Tensor W = Tensor::randn({4, 4}, rng);
    Tensor x = Tensor::randn({3, 4}, rng);
    LoRASet set;
    set.emplace(b.target, b);
    Tensor got = project(x, W, &set, b.target);
    // manual: x W^T + (alpha/r) x A^T B^T
    Tensor expect = add(matmul_nt(x, W), scale(matmul_nt(matmul_nt(x, b.A), b.B), b.alpha / b.rank));
    for (size_t i = 0; i < got.numel(); i++) CHECK(got.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
}

TEST_CASE("texture embedding: zero steps returns the 'artistic' row; training leaves the base untouched") {
    Fixture& f = fixture();
    Config cfg = f.cfg;
    cfg.texture_embed_steps = 0;
    ModelWeights& w = f.weights;

    Tensor e0 = train_texture_embedding(w, f.sched, f.refs, cfg, 5);
    int artistic = vocab().style_seed_token();
    const auto& table = w.at("text.token_table").data();
    for (int j = 0; j < w.cfg.text_dim; j++)
        CHECK(e0.data()[static_cast<size_t>(j)] == table[static_cast<size_t>(artistic * w.cfg.text_dim + j)]);

    uint64_t before = w.hash();
    cfg.texture_embed_steps = 30;
    Tensor e1 = train_texture_embedding(w, f.sched, f.refs, cfg, 5);
    CHECK(w.hash() == before);  // isolation: base weights bit-identical
    CHECK(e1.data() != e0.data());
}

TEST_CASE("texture embedding training reduces the fixed-seed reference loss") {
    Fixture& f = fixture();
    Config cfg = f.cfg;
    cfg.texture_embed_steps = 120;
    Tensor e_t = train_texture_embedding(f.weights, f.sched, f.refs, cfg, 5);

    auto prompts = texture_prompts_for(f.refs);
    int tid = vocab().texture_token();
    Tensor e_init = train_texture_embedding(f.weights, f.sched, f.refs, [&] {
        Config c = cfg;
        c.texture_embed_steps = 0;
        return c;
    }(), 5);
    double loss_init = fixed_seed_loss(f.weights, f.sched, f.refs, prompts, {{tid, e_init}}, nullptr, nullptr);
    double loss_trained = fixed_seed_loss(f.weights, f.sched, f.refs, prompts, {{tid, e_t}}, nullptr, nullptr);
    INFO("init ", loss_init, " trained ", loss_trained);
    CHECK(loss_trained <= loss_init);
}

TEST_CASE("texture learning rejects prompts without the style token") {
    Fixture& f = fixture();
    Config cfg = f.cfg;
    cfg.texture_embed_steps = 1;
    std::vector<PromptTokens> bad;
    for (const auto& cls : f.refs.classes) bad.push_back(vocab().prompt_bare(cls));
    CHECK_THROWS_AS(train_texture_embedding(f.weights, f.sched, f.refs, cfg, 5, bad), ValidationError);
    CHECK_THROWS_AS(train_texture_lora(f.weights, f.sched, f.refs, Tensor::zeros({32}), cfg, 5, bad),
                    ValidationError);
}

TEST_CASE("texture adapters: zero-step training is an exact no-op; training helps on fixed seeds") {
    Fixture& f = fixture();
    Config cfg = f.cfg;
    cfg.texture_embed_steps = 60;
    cfg.texture_lora_steps = 0;
    Tensor e_t = train_texture_embedding(f.weights, f.sched, f.refs, cfg, 5);
    LoRASet fresh = train_texture_lora(f.weights, f.sched, f.refs, e_t, cfg, 5);
    for (const auto& [addr, a] : fresh)
        for (double v : a.B.data()) CHECK(v == 0.0);

    uint64_t before = f.weights.hash();
    cfg.texture_lora_steps = 60;
    LoRASet trained = train_texture_lora(f.weights, f.sched, f.refs, e_t, cfg, 5);
    CHECK(f.weights.hash() == before);

    auto prompts = texture_prompts_for(f.refs);
    int tid = vocab().texture_token();
    double without = fixed_seed_loss(f.weights, f.sched, f.refs, prompts, {{tid, e_t}}, nullptr, nullptr);
    double with = fixed_seed_loss(f.weights, f.sched, f.refs, prompts, {{tid, e_t}}, &trained, nullptr);
    INFO("e_T only ", without, " with adapters ", with);
    CHECK(with <= without);
}

TEST_CASE("sdedit dataset: size contract, provenance, determinism, strength validation") {
    Fixture& f = fixture();
    Config cfg = f.cfg;
    cfg.sdedit_per_ref = 2;
    cfg.sample_steps = 6;

    // the reference hyperparameter default is 10 edits per reference
    CHECK(Config{}.sdedit_per_ref == 10);

    SDEditDataset ds = generate_sdedit_dataset(f.weights, f.sched, f.refs, cfg, 9);
    CHECK(ds.items.size() == f.refs.images.size() * 2);
    CHECK(ds.ref_hashes == f.refs.hashes());
    for (const auto& it : ds.items) {
        CHECK(it.ref_index >= 0);
        CHECK(it.ref_index < static_cast<int>(f.refs.images.size()));
        CHECK(it.class_name == f.refs.classes[static_cast<size_t>(it.ref_index)]);
    }

    SDEditDataset ds2 = generate_sdedit_dataset(f.weights, f.sched, f.refs, cfg, 9);
    for (size_t i = 0; i < ds.items.size(); i++) CHECK(ds.items[i].image.rgb == ds2.items[i].image.rgb);

    Config bad = cfg;
    bad.sdedit_strength = 0.0;
    CHECK_THROWS_AS(generate_sdedit_dataset(f.weights, f.sched, f.refs, bad, 9), ValidationError);
    bad.sdedit_strength = 1.0;
    CHECK_THROWS_AS(generate_sdedit_dataset(f.weights, f.sched, f.refs, bad, 9), ValidationError);

    // strength -> 0+ collapses to t = 1: outputs approximately equal the sources
    Config tinystrength = cfg;
    tinystrength.sdedit_strength = 1e-4;  // ceil(1e-4 * T) = 1
    SDEditDataset near_id = generate_sdedit_dataset(f.weights, f.sched, f.refs, tinystrength, 9);
    for (const auto& it : near_id.items) {
        const Image& src = f.refs.images[static_cast<size_t>(it.ref_index)];
        double mad = 0.0;
        for (size_t i = 0; i < src.rgb.size(); i++)
            mad += std::fabs(it.image.rgb[i] / 127.5 - src.rgb[i] / 127.5);
        mad /= static_cast<double>(src.rgb.size());
        CHECK(mad <= 0.05);
    }

    // disk round trip
    auto dir = fs::temp_directory_path() / "styleblend_sdedit_test";
    fs::remove_all(dir);
    save_sdedit_dataset(ds, dir.string());
    SDEditDataset back = load_sdedit_dataset(dir.string());
    CHECK(back.items.size() == ds.items.size());
    CHECK(back.ref_hashes == ds.ref_hashes);
    CHECK(back.strength == ds.strength);
    for (size_t i = 0; i < ds.items.size(); i++) {
        CHECK(back.items[i].image.rgb == ds.items[i].image.rgb);
        CHECK(back.items[i].class_name == ds.items[i].class_name);
    }
    fs::remove_all(dir);
}

TEST_CASE("composition training: e_C frozen, denoiser untouched, fixed-seed loss improves, empty rejected") {
    Fixture& f = fixture();
    Config cfg = f.cfg;
    cfg.sdedit_per_ref = 2;
    cfg.sample_steps = 6;
    cfg.composition_steps = 60;
    SDEditDataset ds = generate_sdedit_dataset(f.weights, f.sched, f.refs, cfg, 9);

    Tensor e_c = init_composition_embedding(f.weights);
    std::vector<double> e_c_before = e_c.data();
    uint64_t w_before = f.weights.hash();

    LoRASet theta_c = train_composition_lora(f.weights, f.sched, ds, e_c, cfg, 11);
    CHECK(e_c.data() == e_c_before);      // frozen contract, bit-identical
    CHECK(f.weights.hash() == w_before);  // denoiser and text encoder untouched
    for (const auto& [addr, a] : theta_c) CHECK(f.weights.is_text_projection(addr));

    // fixed-seed loss on the edit set improves with the adapters
    int cid = vocab().composition_token();
    ReferenceSet as_refs;
    for (const auto& it : ds.items) {
        as_refs.images.push_back(it.image);
        as_refs.classes.push_back(it.class_name);
    }
    std::vector<PromptTokens> prompts;
    for (const auto& cls : as_refs.classes) prompts.push_back(vocab().prompt_composition(cls));
    double without = fixed_seed_loss(f.weights, f.sched, as_refs, prompts, {{cid, e_c}}, nullptr, nullptr, 32);
    double with = fixed_seed_loss(f.weights, f.sched, as_refs, prompts, {{cid, e_c}}, nullptr, &theta_c, 32);
    INFO("without ", without, " with ", with);
    CHECK(with <= without);

    SDEditDataset empty;
    CHECK_THROWS_AS(train_composition_lora(f.weights, f.sched, empty, e_c, cfg, 11), ValidationError);
}

TEST_CASE("parameter isolation across both trainings, verified by hashing every named tensor") {
    Fixture& f = fixture();
    Config cfg = f.cfg;
    cfg.texture_embed_steps = 25;
    cfg.texture_lora_steps = 25;
    cfg.composition_steps = 20;
    cfg.sdedit_per_ref = 2;
    cfg.sample_steps = 6;

    auto before = f.weights.per_tensor_hashes();
    StyleBundle bundle;
    learn_texture(f.weights, f.sched, f.refs, cfg, 21, bundle);
    SDEditDataset ds = generate_sdedit_dataset(f.weights, f.sched, f.refs, cfg, 21);
    learn_composition(f.weights, f.sched, ds, cfg, 21, bundle);
    auto after = f.weights.per_tensor_hashes();
    CHECK(before == after);

    // adapters live on the right side of the model
    for (const auto& [addr, a] : bundle.texture_adapters) CHECK(f.weights.is_unet_projection(addr));
    for (const auto& [addr, a] : bundle.composition_adapters) CHECK(f.weights.is_text_projection(addr));
}

TEST_CASE("training order commutes: texture-then-composition == composition-then-texture, byte-identical bundles") {
    Fixture& f = fixture();
    Config cfg = f.cfg;
    cfg.texture_embed_steps = 20;
    cfg.texture_lora_steps = 20;
    cfg.composition_steps = 15;
    cfg.sdedit_per_ref = 2;
    cfg.sample_steps = 6;
    uint64_t seed = 31;

    StyleBundle ab, ba;
    {
        learn_texture(f.weights, f.sched, f.refs, cfg, seed, ab);
        SDEditDataset ds = generate_sdedit_dataset(f.weights, f.sched, f.refs, cfg, seed);
        learn_composition(f.weights, f.sched, ds, cfg, seed, ab);
    }
    {
        SDEditDataset ds = generate_sdedit_dataset(f.weights, f.sched, f.refs, cfg, seed);
        learn_composition(f.weights, f.sched, ds, cfg, seed, ba);
        learn_texture(f.weights, f.sched, f.refs, cfg, seed, ba);
    }
    CHECK(serialize_bundle(ab) == serialize_bundle(ba));
}
