#ifndef STYLEBLEND_MODEL_HPP
#define STYLEBLEND_MODEL_HPP

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "styleblend/config.hpp"
#include "styleblend/lora.hpp"
#include "styleblend/tensor.hpp"
#include "styleblend/vocab.hpp"

namespace styleblend {

// Full parameter set of the denoiser U-Net + toy text encoder, addressed by
// dotted path. Addresses are stable; adapter targeting and feature taps key
// off them.
class ModelWeights {
public:
    ModelConfig cfg;

    static ModelWeights init(const ModelConfig& cfg, uint64_t seed) {
        ModelWeights w;
        w.cfg = cfg;
        Rng rng(derive_seed(seed, "model-init"));
        const int c0 = cfg.base_width, c1 = 2 * cfg.base_width, c2 = 4 * cfg.base_width;
        const int td = cfg.time_dim, xd = cfg.text_dim;
        const Vocabulary& vc = vocab();

        auto conv = [&](const std::string& name, int co, int ci, bool zero) {
            double std_dev = std::sqrt(2.0 / (ci * 9.0));
            w.add(name + ".k", zero ? Tensor::zeros({co, ci, 3, 3}) : Tensor::randn({co, ci, 3, 3}, rng, std_dev));
            w.add(name + ".b", Tensor::zeros({co}));
        };
        auto lin = [&](const std::string& name, int dout, int din, bool zero, bool bias = true) {
            double std_dev = std::sqrt(1.0 / din);
            w.add(name + ".w", zero ? Tensor::zeros({dout, din}) : Tensor::randn({dout, din}, rng, std_dev));
            if (bias) w.add(name + ".b", Tensor::zeros({dout}));
        };
        auto norm = [&](const std::string& name, int c) {
            w.add(name + ".gamma", Tensor::full({c}, 1.0));
            w.add(name + ".beta", Tensor::zeros({c}));
        };
        auto resblock = [&](const std::string& name, int ci, int co) {
            norm(name + ".gn1", ci);
            conv(name + ".conv1", co, ci, false);
            lin(name + ".time", co, td, false);
            norm(name + ".gn2", co);
            conv(name + ".conv2", co, co, true);  // zero-init: block starts as its skip path
            if (ci != co) conv(name + ".skip", co, ci, false);
        };
        auto attention = [&](const std::string& name, int c, int kv_dim, bool zero_out) {
            norm(name + ".gn", c);
            lin(name + ".q", c, c, false, false);
            lin(name + ".k", c, kv_dim, false, false);
            lin(name + ".v", c, kv_dim, false, false);
            if (zero_out) {
                lin(name + ".out", c, c, true);  // zero-init: attention starts as identity residual
            } else {
                // small random out so gradients reach q/k/v from step one;
                // zero init starves the conditioning path for a long time
                w.add(name + ".out.w", Tensor::randn({c, c}, rng, 0.04));
                w.add(name + ".out.b", Tensor::zeros({c}));
            }
        };

        // timestep embedding MLP, plus a pooled-text projection added into the
        // same pathway (per-block scale/shift is how class identity reaches
        // every resolution; cross-attention carries the spatial detail)
        lin("unet.time_mlp.fc1", td, td, false);
        lin("unet.time_mlp.fc2", td, td, false);
        lin("unet.text_pool", td, xd, false);

        // encoder 32 -> 16 -> 8
        conv("unet.conv_in", c0, 3, false);
        resblock("unet.enc0", c0, c0);
        resblock("unet.enc1", c0, c1);
        resblock("unet.enc2", c1, c2);
        // middle at 8x8, with the first of two self-attention sites
        resblock("unet.mid.res", c2, c2);
        attention("unet.mid.sattn", c2, c2, true);
        attention("unet.mid.cattn", c2, xd, false);
        // decoder 8 -> 16 -> 32, second self-attention site at 16x16
        resblock("unet.dec2", c2, c2);
        resblock("unet.dec1", c2 + c1, c1);
        attention("unet.dec1.sattn", c1, c1, true);
        attention("unet.dec1.cattn", c1, xd, false);
        resblock("unet.dec0", c1 + c0, c0);
        norm("unet.out.gn", c0);
        conv("unet.out.conv", 3, c0, true);

        // text encoder: token + position tables, transformer blocks, final norm
        w.add("text.token_table", Tensor::randn({vc.size(), xd}, rng, 0.05));
        w.add("text.pos_table", Tensor::randn({Vocabulary::kMaxLen, xd}, rng, 0.05));
        for (int b = 0; b < cfg.text_blocks; b++) {
            std::string p = "text.block" + std::to_string(b);
            norm(p + ".ln1", xd);
            lin(p + ".attn.q", xd, xd, false, false);
            lin(p + ".attn.k", xd, xd, false, false);
            lin(p + ".attn.v", xd, xd, false, false);
            lin(p + ".attn.out", xd, xd, true);
            norm(p + ".ln2", xd);
            lin(p + ".mlp.fc1", 2 * xd, xd, false);
            lin(p + ".mlp.fc2", xd, 2 * xd, false);
        }
        norm("text.ln_f", xd);
        return w;
    }

    Tensor& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::invalid_argument("no parameter at address '" + name + "'");
        return it->second;
    }
    const Tensor& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::invalid_argument("no parameter at address '" + name + "'");
        return it->second;
    }
    bool has(const std::string& name) const { return params_.count(name) != 0; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(params_.size());
        for (const auto& [k, v] : params_) out.push_back(k);
        return out;
    }

    std::vector<Tensor> all_params() {
        std::vector<Tensor> out;
        out.reserve(params_.size());
        for (auto& [k, v] : params_) out.push_back(v);
        return out;
    }

    void set_trainable(bool trainable) {
        for (auto& [k, v] : params_) v.set_requires_grad(trainable);
    }

    // Self-attention sites in evaluation order; the addresses feature taps use.
    std::vector<std::string> self_attention_sites() const { return {"unet.mid.sattn", "unet.dec1.sattn"}; }

    // Attention projections in the denoiser (texture-adapter targets).
    std::vector<std::pair<std::string, std::pair<int, int>>> unet_attention_projections() const {
        std::vector<std::pair<std::string, std::pair<int, int>>> out;
        for (const std::string blk : {"unet.mid.sattn", "unet.mid.cattn", "unet.dec1.sattn", "unet.dec1.cattn"})
            for (const std::string p : {"q", "k", "v", "out"}) {
                const Tensor& W = at(blk + "." + p + ".w");
                out.push_back({blk + "." + p, {W.dim(1), W.dim(0)}});
            }
        return out;
    }

    // Attention projections in the text encoder (composition-adapter targets).
    std::vector<std::pair<std::string, std::pair<int, int>>> text_attention_projections() const {
        std::vector<std::pair<std::string, std::pair<int, int>>> out;
        for (int b = 0; b < cfg.text_blocks; b++)
            for (const std::string p : {"q", "k", "v", "out"}) {
                std::string addr = "text.block" + std::to_string(b) + ".attn." + p;
                const Tensor& W = at(addr + ".w");
                out.push_back({addr, {W.dim(1), W.dim(0)}});
            }
        return out;
    }

    bool is_unet_projection(const std::string& addr) const {
        for (const auto& [a, d] : unet_attention_projections())
            if (a == addr) return true;
        return false;
    }
    bool is_text_projection(const std::string& addr) const {
        for (const auto& [a, d] : text_attention_projections())
            if (a == addr) return true;
        return false;
    }

    // Order-independent content hash over (name, shape, values).
    uint64_t hash() const {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& [name, t] : params_) {
            h = fnv1a64(name, h);
            for (int d : t.shape()) h = fnv1a64(&d, sizeof(d), h);
            h = fnv1a64(t.data().data(), t.data().size() * sizeof(double), h);
        }
        return h;
    }

    std::map<std::string, uint64_t> per_tensor_hashes() const {
        std::map<std::string, uint64_t> out;
        for (const auto& [name, t] : params_) out[name] = t.value_hash();
        return out;
    }

    const std::map<std::string, Tensor>& raw_params() const { return params_; }
    void add(const std::string& name, Tensor t) {
        t.set_requires_grad(true);
        params_.emplace(name, std::move(t));
    }

private:
    std::map<std::string, Tensor> params_;
};

// ---------------------------------------------------------------------------
// checkpoint file: magic, version, config json, then (address, shape, f64 LE
// data) records, closed by a content checksum. Round-trips bit-exactly.
// ---------------------------------------------------------------------------

namespace ckpt {

constexpr char kMagic[] = "STYLEBLEND-CKPT";
constexpr uint32_t kVersion = 1;

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; i++) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; i++) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
inline uint32_t get_u32(const std::vector<uint8_t>& b, size_t& p) {
    if (p + 4 > b.size()) throw std::runtime_error("checkpoint: truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; i++) v |= static_cast<uint32_t>(b[p++]) << (8 * i);
    return v;
}
inline uint64_t get_u64(const std::vector<uint8_t>& b, size_t& p) {
    if (p + 8 > b.size()) throw std::runtime_error("checkpoint: truncated");
    uint64_t v = 0;
    for (int i = 0; i < 8; i++) v |= static_cast<uint64_t>(b[p++]) << (8 * i);
    return v;
}

inline void put_record(std::vector<uint8_t>& out, const std::string& name, const Tensor& t) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<uint32_t>(t.shape().size()));
    for (int d : t.shape()) put_u64(out, static_cast<uint64_t>(d));
    const auto& v = t.data();
    size_t off = out.size();
    out.resize(off + v.size() * sizeof(double));
    std::memcpy(out.data() + off, v.data(), v.size() * sizeof(double));
}

inline std::pair<std::string, Tensor> get_record(const std::vector<uint8_t>& b, size_t& p) {
    uint32_t nl = get_u32(b, p);
    if (p + nl > b.size()) throw std::runtime_error("checkpoint: truncated name");
    std::string name(b.begin() + static_cast<long>(p), b.begin() + static_cast<long>(p + nl));
    p += nl;
    uint32_t nd = get_u32(b, p);
    Shape shape;
    for (uint32_t i = 0; i < nd; i++) shape.push_back(static_cast<int>(get_u64(b, p)));
    size_t n = shape_numel(shape);
    if (p + n * sizeof(double) > b.size()) throw std::runtime_error("checkpoint: truncated data");
    std::vector<double> data(n);
    std::memcpy(data.data(), b.data() + p, n * sizeof(double));
    p += n * sizeof(double);
    return {name, Tensor::from_data(std::move(shape), std::move(data))};
}

}  // namespace ckpt

inline std::vector<uint8_t> serialize_checkpoint(const ModelWeights& w) {
    std::vector<uint8_t> out(ckpt::kMagic, ckpt::kMagic + sizeof(ckpt::kMagic) - 1);
    ckpt::put_u32(out, ckpt::kVersion);
    nlohmann::json hdr = {{"image_size", w.cfg.image_size}, {"base_width", w.cfg.base_width},
                          {"time_dim", w.cfg.time_dim},     {"text_dim", w.cfg.text_dim},
                          {"text_blocks", w.cfg.text_blocks}, {"groups", w.cfg.groups}};
    std::string hs = hdr.dump();
    ckpt::put_u64(out, hs.size());
    out.insert(out.end(), hs.begin(), hs.end());
    ckpt::put_u32(out, static_cast<uint32_t>(w.raw_params().size()));
    for (const auto& [name, t] : w.raw_params()) ckpt::put_record(out, name, t);
    ckpt::put_u64(out, fnv1a64(out.data(), out.size()));
    return out;
}

inline ModelWeights deserialize_checkpoint(const std::vector<uint8_t>& bytes) {
    size_t magic_len = sizeof(ckpt::kMagic) - 1;
    if (bytes.size() < magic_len + 12 || std::memcmp(bytes.data(), ckpt::kMagic, magic_len) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    if (bytes.size() < 8) throw std::runtime_error("checkpoint: truncated");
    uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    if (stored != fnv1a64(bytes.data(), bytes.size() - 8))
        throw std::runtime_error("checkpoint: checksum mismatch (file corrupt)");
    size_t p = magic_len;
    uint32_t version = ckpt::get_u32(bytes, p);
    if (version != ckpt::kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    uint64_t hl = ckpt::get_u64(bytes, p);
    nlohmann::json hdr = nlohmann::json::parse(std::string(bytes.begin() + static_cast<long>(p),
                                                           bytes.begin() + static_cast<long>(p + hl)));
    p += hl;
    ModelWeights w;
    w.cfg.image_size = hdr.at("image_size");
    w.cfg.base_width = hdr.at("base_width");
    w.cfg.time_dim = hdr.at("time_dim");
    w.cfg.text_dim = hdr.at("text_dim");
    w.cfg.text_blocks = hdr.at("text_blocks");
    w.cfg.groups = hdr.at("groups");
    uint32_t count = ckpt::get_u32(bytes, p);
    for (uint32_t i = 0; i < count; i++) {
        auto [name, t] = ckpt::get_record(bytes, p);
        w.add(name, std::move(t));
    }
    return w;
}

inline void save_checkpoint(const ModelWeights& w, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    auto bytes = serialize_checkpoint(w);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline ModelWeights load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::vector<uint8_t> bytes(static_cast<size_t>(f.tellg()));
    f.seekg(0);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    return deserialize_checkpoint(bytes);
}

}  // namespace styleblend

#endif
