#ifndef STYLEBLEND_STYLE_LEARNING_HPP
#define STYLEBLEND_STYLE_LEARNING_HPP

#include <optional>
#include <string>
#include <vector>

#include "styleblend/dataset.hpp"
#include "styleblend/diffusion.hpp"

namespace styleblend {

// The learned artifacts of one style. Texture: the "<T>" embedding plus
// denoiser attention adapters. Composition: text-encoder attention adapters
// plus a fixed "<C>" embedding that is seated at a rare token's row and never
// trained.
struct StyleBundle {
    Tensor texture_embedding;      // e_T [text_dim]
    LoRASet texture_adapters;      // on denoiser attention projections
    LoRASet composition_adapters;  // on text-encoder attention projections
    Tensor composition_embedding;  // e_C [text_dim], frozen at init
    bool has_texture = false;
    bool has_composition = false;

    uint64_t base_model_hash = 0;
    std::vector<uint64_t> reference_hashes;
    nlohmann::json config_snapshot;
};

namespace style_detail {

inline std::vector<BatchItem> make_ref_batch(const ReferenceSet& refs, const std::vector<PromptTokens>& prompts,
                                             const std::map<int, Tensor>& overrides, int batch, Rng& rng) {
    std::vector<BatchItem> out;
    for (int b = 0; b < batch; b++) {
        int i = rng.uniform_int(0, static_cast<int>(refs.images.size()) - 1);
        out.push_back({image_to_tensor(refs.images[static_cast<size_t>(i)]), prompts[static_cast<size_t>(i)], overrides});
    }
    return out;
}

inline std::vector<PromptTokens> texture_prompts(const ReferenceSet& refs,
                                                 const std::optional<std::vector<PromptTokens>>& custom) {
    std::vector<PromptTokens> prompts;
    if (custom) {
        prompts = *custom;
        if (prompts.size() != refs.images.size())
            throw ValidationError("style learning: need one prompt per reference");
    } else {
        for (const auto& cls : refs.classes) prompts.push_back(vocab().prompt_texture(cls));
    }
    for (const auto& p : prompts)
        if (!vocab().contains(p, vocab().texture_token()))
            throw ValidationError("texture learning: prompt lacks the \"<T>\" token: " + p.text);
    return prompts;
}

}  // namespace style_detail

// Textual inversion for the style's texture identifier: optimizes only the
// "<T>" embedding, initialized from the 'artistic' row; the base model is
// untouched.
inline Tensor train_texture_embedding(ModelWeights& w, const NoiseSchedule& sched, const ReferenceSet& refs,
                                      const Config& cfg, uint64_t seed,
                                      std::optional<std::vector<PromptTokens>> custom_prompts = {}) {
    if (refs.images.empty()) throw ValidationError("texture learning: no reference images");
    auto prompts = style_detail::texture_prompts(refs, custom_prompts);

    w.set_trainable(false);
    int artistic = vocab().style_seed_token();
    const Tensor& table = w.at("text.token_table");
    int d = w.cfg.text_dim;
    std::vector<double> row(table.data().begin() + static_cast<long>(artistic) * d,
                            table.data().begin() + static_cast<long>(artistic + 1) * d);
    Tensor e_t = Tensor::param({d}, std::move(row));

    Adam opt({e_t}, {.lr = cfg.lr_embedding});
    Rng rng(derive_seed(seed, "texture-embed"));
    std::map<int, Tensor> overrides = {{vocab().texture_token(), e_t}};
    for (int step = 0; step < cfg.texture_embed_steps; step++) {
        auto batch = style_detail::make_ref_batch(refs, prompts, overrides, cfg.style_batch, rng);
        Tensor loss = diffusion_loss(w, sched, batch, nullptr, nullptr, {e_t}, rng);
        backward(loss);
        opt.step();
    }
    e_t.set_requires_grad(false);
    return e_t;
}

// Denoiser adapters for fine texture detail, trained with e_T frozen.
inline LoRASet train_texture_lora(ModelWeights& w, const NoiseSchedule& sched, const ReferenceSet& refs,
                                  const Tensor& e_t, const Config& cfg, uint64_t seed,
                                  std::optional<std::vector<PromptTokens>> custom_prompts = {}) {
    if (refs.images.empty()) throw ValidationError("texture learning: no reference images");
    auto prompts = style_detail::texture_prompts(refs, custom_prompts);
    auto targets = w.unet_attention_projections();
    if (targets.empty()) throw ValidationError("texture learning: empty adapter target set");

    w.set_trainable(false);
    Tensor e_frozen = e_t.detach();
    Rng init_rng(derive_seed(seed, "texture-lora-init"));
    LoRASet adapters = make_lora_set(targets, cfg.lora_rank, init_rng);
    std::vector<Tensor> params = lora_params(adapters);

    Adam opt(params, {.lr = cfg.lr_lora});
    Rng rng(derive_seed(seed, "texture-lora"));
    std::map<int, Tensor> overrides = {{vocab().texture_token(), e_frozen}};
    for (int step = 0; step < cfg.texture_lora_steps; step++) {
        auto batch = style_detail::make_ref_batch(refs, prompts, overrides, cfg.style_batch, rng);
        Tensor loss = diffusion_loss(w, sched, batch, &adapters, nullptr, params, rng);
        backward(loss);
        opt.step();
    }
    set_lora_trainable(adapters, false);
    return adapters;
}

// ---------------------------------------------------------------------------
// composition: edit-generated dataset + text-encoder adapters
// ---------------------------------------------------------------------------

struct SDEditItem {
    Image image;
    std::string class_name;
    int ref_index = 0;
    uint64_t seed = 0;
};

struct SDEditDataset {
    std::vector<SDEditItem> items;
    double strength = 0.0;
    int per_ref = 0;
    std::vector<uint64_t> ref_hashes;  // provenance of the references behind the edits
};

// Corrupts each reference to t = ceil(strength * T) and denoises it back
// under its bare class prompt with the base model only. The outputs keep the
// reference's structure and layout while the texture reverts toward the base
// model's styles.
inline SDEditDataset generate_sdedit_dataset(ModelWeights& w, const NoiseSchedule& sched, const ReferenceSet& refs,
                                             const Config& cfg, uint64_t seed) {
    if (cfg.sdedit_strength <= 0.0 || cfg.sdedit_strength >= 1.0)
        throw ValidationError("sdedit: strength must lie in (0,1), got " + std::to_string(cfg.sdedit_strength));
    if (refs.images.empty()) throw ValidationError("sdedit: no reference images");
    w.set_trainable(false);

    SDEditDataset ds;
    ds.strength = cfg.sdedit_strength;
    ds.per_ref = cfg.sdedit_per_ref;
    ds.ref_hashes = refs.hashes();
    int t0 = static_cast<int>(std::ceil(cfg.sdedit_strength * sched.T()));
    SampleOptions opts{.steps = cfg.sample_steps, .eta = cfg.ddim_eta, .guidance_scale = 0.0};

    for (size_t i = 0; i < refs.images.size(); i++) {
        Tensor z0 = image_to_tensor(refs.images[i]);
        BranchSpec spec{nullptr, nullptr, vocab().prompt_bare(refs.classes[i]), {}};
        for (int j = 0; j < cfg.sdedit_per_ref; j++) {
            uint64_t item_seed = derive_seed(seed, "sdedit/" + std::to_string(i) + "/" + std::to_string(j));
            Rng rng(item_seed);
            NoGradGuard ng;
            Tensor z = add_noise(sched, z0, t0, Tensor::randn(z0.shape(), rng));
            Tensor out = ddim_trajectory(w, sched, spec, z, t0, opts, rng);
            ds.items.push_back({tensor_to_image(out), refs.classes[i], static_cast<int>(i), item_seed});
        }
    }
    return ds;
}

inline void save_sdedit_dataset(const SDEditDataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json items = nlohmann::json::array();
    for (size_t i = 0; i < ds.items.size(); i++) {
        const SDEditItem& it = ds.items[i];
        std::string rel = "edit_" + std::to_string(i) + ".png";
        save_png(it.image, (fs::path(dir) / rel).string());
        items.push_back({{"path", rel}, {"class", it.class_name}, {"ref_index", it.ref_index}, {"seed", it.seed}});
    }
    nlohmann::json j = {{"strength", ds.strength}, {"per_ref", ds.per_ref}, {"ref_hashes", ds.ref_hashes},
                        {"items", items}};
    std::ofstream f(fs::path(dir) / "sdedit.json");
    if (!f) throw std::runtime_error("cannot write sdedit manifest under " + dir);
    f << j.dump(2) << "\n";
}

inline SDEditDataset load_sdedit_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream f(fs::path(dir) / "sdedit.json");
    if (!f) throw std::runtime_error("no sdedit.json under " + dir);
    nlohmann::json j;
    f >> j;
    SDEditDataset ds;
    ds.strength = j.at("strength");
    ds.per_ref = j.at("per_ref");
    ds.ref_hashes = j.at("ref_hashes").get<std::vector<uint64_t>>();
    for (const auto& ij : j.at("items"))
        ds.items.push_back({load_png((fs::path(dir) / ij.at("path").get<std::string>()).string()), ij.at("class"),
                            ij.at("ref_index"), ij.at("seed")});
    return ds;
}

// e_C sits at the rare token's embedding and is never optimized.
inline Tensor init_composition_embedding(const ModelWeights& w) {
    int rare = vocab().rare_token();
    const Tensor& table = w.at("text.token_table");
    int d = w.cfg.text_dim;
    std::vector<double> row(table.data().begin() + static_cast<long>(rare) * d,
                            table.data().begin() + static_cast<long>(rare + 1) * d);
    return Tensor::from_data({d}, std::move(row));
}

// Text-encoder adapters for composition, trained only on the edit-generated
// dataset; the denoiser is never touched.
inline LoRASet train_composition_lora(ModelWeights& w, const NoiseSchedule& sched, const SDEditDataset& ds,
                                      const Tensor& e_c, const Config& cfg, uint64_t seed) {
    if (ds.items.empty()) throw ValidationError("composition learning: dataset is empty");
    auto targets = w.text_attention_projections();
    if (targets.empty()) throw ValidationError("composition learning: empty adapter target set");

    w.set_trainable(false);
    Tensor e_frozen = e_c.detach();  // frozen-but-present in every prompt
    Rng init_rng(derive_seed(seed, "composition-lora-init"));
    LoRASet adapters = make_lora_set(targets, cfg.lora_rank, init_rng);
    std::vector<Tensor> params = lora_params(adapters);

    Adam opt(params, {.lr = cfg.lr_lora});
    Rng rng(derive_seed(seed, "composition-lora"));
    std::map<int, Tensor> overrides = {{vocab().composition_token(), e_frozen}};
    for (int step = 0; step < cfg.composition_steps; step++) {
        std::vector<BatchItem> batch;
        for (int b = 0; b < cfg.style_batch; b++) {
            const SDEditItem& it = ds.items[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(ds.items.size()) - 1))];
            batch.push_back({image_to_tensor(it.image), vocab().prompt_composition(it.class_name), overrides});
        }
        Tensor loss = diffusion_loss(w, sched, batch, nullptr, &adapters, params, rng);
        backward(loss);
        opt.step();
    }
    set_lora_trainable(adapters, false);
    return adapters;
}

// Full texture phase: embedding first, then adapters against the frozen
// embedding.
inline void learn_texture(ModelWeights& w, const NoiseSchedule& sched, const ReferenceSet& refs, const Config& cfg,
                          uint64_t seed, StyleBundle& bundle) {
    bundle.texture_embedding = train_texture_embedding(w, sched, refs, cfg, seed);
    bundle.texture_adapters = train_texture_lora(w, sched, refs, bundle.texture_embedding, cfg, seed);
    bundle.has_texture = true;
    bundle.base_model_hash = w.hash();
    bundle.reference_hashes = refs.hashes();
    bundle.config_snapshot = config_to_json(cfg);
}

inline void learn_composition(ModelWeights& w, const NoiseSchedule& sched, const SDEditDataset& ds, const Config& cfg,
                              uint64_t seed, StyleBundle& bundle) {
    bundle.composition_embedding = init_composition_embedding(w);
    bundle.composition_adapters = train_composition_lora(w, sched, ds, bundle.composition_embedding, cfg, seed);
    bundle.has_composition = true;
    bundle.base_model_hash = w.hash();
    bundle.reference_hashes = ds.ref_hashes;
    bundle.config_snapshot = config_to_json(cfg);
}

// ---------------------------------------------------------------------------
// bundle file: same chunked-record convention as checkpoints plus a JSON
// header (config snapshot, base-model hash, reference hashes, adapter
// metadata), closed by a checksum.
// ---------------------------------------------------------------------------

namespace bundle_io {
constexpr char kMagic[] = "STYLEBLEND-BUNDLE";
constexpr uint32_t kVersion = 1;

inline nlohmann::json lora_meta(const LoRASet& set) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [addr, a] : set) j[addr] = {{"rank", a.rank}, {"alpha", a.alpha}};
    return j;
}
}  // namespace bundle_io

inline std::vector<uint8_t> serialize_bundle(const StyleBundle& b) {
    std::vector<uint8_t> out(bundle_io::kMagic, bundle_io::kMagic + sizeof(bundle_io::kMagic) - 1);
    ckpt::put_u32(out, bundle_io::kVersion);
    nlohmann::json hdr = {{"base_model_hash", b.base_model_hash},
                          {"reference_hashes", b.reference_hashes},
                          {"config", b.config_snapshot},
                          {"has_texture", b.has_texture},
                          {"has_composition", b.has_composition},
                          {"texture_adapters", bundle_io::lora_meta(b.texture_adapters)},
                          {"composition_adapters", bundle_io::lora_meta(b.composition_adapters)}};
    std::string hs = hdr.dump();
    ckpt::put_u64(out, hs.size());
    out.insert(out.end(), hs.begin(), hs.end());

    std::vector<std::pair<std::string, const Tensor*>> records;
    if (b.has_texture) {
        records.push_back({"texture.e_T", &b.texture_embedding});
        for (const auto& [addr, a] : b.texture_adapters) {
            records.push_back({"texture." + addr + ".A", &a.A});
            records.push_back({"texture." + addr + ".B", &a.B});
        }
    }
    if (b.has_composition) {
        records.push_back({"composition.e_C", &b.composition_embedding});
        for (const auto& [addr, a] : b.composition_adapters) {
            records.push_back({"composition." + addr + ".A", &a.A});
            records.push_back({"composition." + addr + ".B", &a.B});
        }
    }
    ckpt::put_u32(out, static_cast<uint32_t>(records.size()));
    for (const auto& [name, t] : records) ckpt::put_record(out, name, *t);
    ckpt::put_u64(out, fnv1a64(out.data(), out.size()));
    return out;
}

inline StyleBundle deserialize_bundle(const std::vector<uint8_t>& bytes) {
    size_t magic_len = sizeof(bundle_io::kMagic) - 1;
    if (bytes.size() < magic_len + 12 || std::memcmp(bytes.data(), bundle_io::kMagic, magic_len) != 0)
        throw std::runtime_error("bundle: bad magic (not a style bundle file)");
    uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    if (stored != fnv1a64(bytes.data(), bytes.size() - 8))
        throw std::runtime_error("bundle: checksum mismatch (file corrupt or tampered)");
    size_t p = magic_len;
    uint32_t version = ckpt::get_u32(bytes, p);
    if (version != bundle_io::kVersion) throw std::runtime_error("bundle: unsupported version " + std::to_string(version));
    uint64_t hl = ckpt::get_u64(bytes, p);
    nlohmann::json hdr = nlohmann::json::parse(std::string(bytes.begin() + static_cast<long>(p),
                                                           bytes.begin() + static_cast<long>(p + hl)));
    p += hl;

    StyleBundle b;
    b.base_model_hash = hdr.at("base_model_hash");
    b.reference_hashes = hdr.at("reference_hashes").get<std::vector<uint64_t>>();
    b.config_snapshot = hdr.at("config");
    b.has_texture = hdr.at("has_texture");
    b.has_composition = hdr.at("has_composition");

    std::map<std::string, Tensor> recs;
    uint32_t count = ckpt::get_u32(bytes, p);
    for (uint32_t i = 0; i < count; i++) {
        auto [name, t] = ckpt::get_record(bytes, p);
        recs.emplace(name, std::move(t));
    }
    auto take = [&](const std::string& name) {
        auto it = recs.find(name);
        if (it == recs.end()) throw std::runtime_error("bundle: missing record " + name);
        return it->second;
    };
    auto load_set = [&](const nlohmann::json& meta, const std::string& prefix) {
        LoRASet set;
        for (auto it = meta.begin(); it != meta.end(); ++it) {
            LoRAAdapter a;
            a.target = it.key();
            a.rank = it.value().at("rank");
            a.alpha = it.value().at("alpha");
            a.A = take(prefix + it.key() + ".A");
            a.B = take(prefix + it.key() + ".B");
            set.emplace(a.target, std::move(a));
        }
        return set;
    };
    if (b.has_texture) {
        b.texture_embedding = take("texture.e_T");
        b.texture_adapters = load_set(hdr.at("texture_adapters"), "texture.");
    }
    if (b.has_composition) {
        b.composition_embedding = take("composition.e_C");
        b.composition_adapters = load_set(hdr.at("composition_adapters"), "composition.");
    }
    return b;
}

inline void save_bundle(const StyleBundle& b, const std::string& path) {
    auto bytes = serialize_bundle(b);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Returns the bundle plus a provenance warning when `expected_base_hash` is
// supplied and does not match what the bundle was trained against.
inline StyleBundle load_bundle(const std::string& path, uint64_t expected_base_hash = 0,
                               bool* hash_mismatch = nullptr) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::vector<uint8_t> bytes(static_cast<size_t>(f.tellg()));
    f.seekg(0);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    StyleBundle b = deserialize_bundle(bytes);
    if (hash_mismatch) *hash_mismatch = expected_base_hash != 0 && b.base_model_hash != expected_base_hash;
    return b;
}

}  // namespace styleblend

#endif
