#ifndef STYLEBLEND_UNET_HPP
#define STYLEBLEND_UNET_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "styleblend/model.hpp"
#include "styleblend/ops.hpp"

namespace styleblend {

// Hook into the raw Q/K/V of each self-attention site, before attention is
// computed. A tap may record the features, replace them, or both; replacement
// tensors must match the site's native [s,d] shapes.
class FeatureTap {
public:
    virtual ~FeatureTap() = default;
    virtual std::vector<std::string> targets() const = 0;
    virtual void at_site(const std::string& site, Tensor& q, Tensor& k, Tensor& v) = 0;
};

// Declarative tap: per-site export and/or override directives. Used by tests
// and by single-branch feature probes.
class DirectiveTap : public FeatureTap {
public:
    struct Directive {
        bool export_qkv = false;
        std::optional<Tensor> override_q, override_k, override_v;
    };
    struct Captured {
        Tensor q, k, v;
    };

    std::map<std::string, Directive> directives;
    std::map<std::string, Captured> captured;

    std::vector<std::string> targets() const override {
        std::vector<std::string> out;
        for (const auto& [site, d] : directives) out.push_back(site);
        return out;
    }

    void at_site(const std::string& site, Tensor& q, Tensor& k, Tensor& v) override {
        auto it = directives.find(site);
        if (it == directives.end()) return;
        const Directive& d = it->second;
        if (d.export_qkv) captured[site] = {q, k, v};
        auto swap_in = [&](const std::optional<Tensor>& o, Tensor& dst, const char* which) {
            if (!o) return;
            if (o->shape() != dst.shape())
                throw std::invalid_argument("feature tap: override " + std::string(which) + " at " + site +
                                            " has shape " + shape_str(o->shape()) + ", site needs " +
                                            shape_str(dst.shape()));
            dst = *o;
        };
        swap_in(d.override_q, q, "q");
        swap_in(d.override_k, k, "k");
        swap_in(d.override_v, v, "v");
    }
};

inline Tensor time_embedding(int t, int dim) {
    // sinusoidal, [cos | sin] halves
    int half = dim / 2;
    Tensor e = Tensor::zeros({dim});
    auto& v = e.data();
    double log_base = std::log(10000.0) / half;
    for (int i = 0; i < half; i++) {
        double freq = std::exp(-i * log_base);
        v[static_cast<size_t>(i)] = std::cos(t * freq);
        v[static_cast<size_t>(i + half)] = std::sin(t * freq);
    }
    return e;
}

namespace unet_detail {

inline Tensor resblock(const ModelWeights& w, const std::string& p, const Tensor& x, const Tensor& temb, int groups) {
    Tensor h = silu(group_norm(x, groups, w.at(p + ".gn1.gamma"), w.at(p + ".gn1.beta")));
    h = add_channel_bias(conv2d(h, w.at(p + ".conv1.k")), w.at(p + ".conv1.b"));
    Tensor tv = reshape(linear(reshape(silu(temb), {1, temb.dim(0)}), w.at(p + ".time.w"), w.at(p + ".time.b")),
                        {h.dim(0)});
    h = add_channel_bias(h, tv);
    h = silu(group_norm(h, groups, w.at(p + ".gn2.gamma"), w.at(p + ".gn2.beta")));
    h = add_channel_bias(conv2d(h, w.at(p + ".conv2.k")), w.at(p + ".conv2.b"));
    Tensor skip = x;
    if (w.has(p + ".skip.k")) skip = add_channel_bias(conv2d(x, w.at(p + ".skip.k")), w.at(p + ".skip.b"));
    return add(skip, h);
}

inline Tensor self_attention(const ModelWeights& w, const std::string& p, const Tensor& x, const LoRASet* lora,
                             FeatureTap* tap, int groups) {
    int c = x.dim(0), h = x.dim(1), wd = x.dim(2);
    Tensor n = group_norm(x, groups, w.at(p + ".gn.gamma"), w.at(p + ".gn.beta"));
    Tensor tokens = transpose(reshape(n, {c, h * wd}));  // [s, c]
    Tensor q = project(tokens, w.at(p + ".q.w"), lora, p + ".q");
    Tensor k = project(tokens, w.at(p + ".k.w"), lora, p + ".k");
    Tensor v = project(tokens, w.at(p + ".v.w"), lora, p + ".v");
    if (tap) tap->at_site(p, q, k, v);
    double att_scale = 1.0 / std::sqrt(static_cast<double>(c));
    Tensor attn = matmul(softmax_rows(scale(matmul_nt(q, k), att_scale)), v);
    Tensor out = add_row_bias(project(attn, w.at(p + ".out.w"), lora, p + ".out"), w.at(p + ".out.b"));
    return add(x, reshape(transpose(out), {c, h, wd}));
}

inline Tensor cross_attention(const ModelWeights& w, const std::string& p, const Tensor& x, const Tensor& text,
                              const LoRASet* lora, int groups) {
    int c = x.dim(0), h = x.dim(1), wd = x.dim(2);
    Tensor n = group_norm(x, groups, w.at(p + ".gn.gamma"), w.at(p + ".gn.beta"));
    Tensor tokens = transpose(reshape(n, {c, h * wd}));
    Tensor q = project(tokens, w.at(p + ".q.w"), lora, p + ".q");
    Tensor k = project(text, w.at(p + ".k.w"), lora, p + ".k");
    Tensor v = project(text, w.at(p + ".v.w"), lora, p + ".v");
    double att_scale = 1.0 / std::sqrt(static_cast<double>(c));
    Tensor attn = matmul(softmax_rows(scale(matmul_nt(q, k), att_scale)), v);
    Tensor out = add_row_bias(project(attn, w.at(p + ".out.w"), lora, p + ".out"), w.at(p + ".out.b"));
    return add(x, reshape(transpose(out), {c, h, wd}));
}

}  // namespace unet_detail

// Noise prediction for one latent. Adapters must target denoiser attention
// projections; tap targets must name existing self-attention sites.
inline Tensor unet_forward(const ModelWeights& w, const Tensor& z, int t, const Tensor& text_emb,
                           const LoRASet* adapters = nullptr, FeatureTap* tap = nullptr) {
    if (z.ndim() != 3 || z.dim(0) != 3 || z.dim(1) != w.cfg.image_size || z.dim(2) != w.cfg.image_size)
        throw std::invalid_argument("unet_forward: latent must be [3," + std::to_string(w.cfg.image_size) + "," +
                                    std::to_string(w.cfg.image_size) + "], got " + shape_str(z.shape()));
    if (adapters)
        for (const auto& [addr, a] : *adapters)
            if (!w.is_unet_projection(addr))
                throw std::invalid_argument("unet_forward: adapter targets unknown layer '" + addr + "'");
    if (tap) {
        auto sites = w.self_attention_sites();
        for (const auto& target : tap->targets())
            if (std::find(sites.begin(), sites.end(), target) == sites.end())
                throw std::invalid_argument("unet_forward: tap targets unknown block '" + target + "'");
    }
    using namespace unet_detail;
    const int g = w.cfg.groups;

    Tensor temb = linear(reshape(time_embedding(t, w.cfg.time_dim), {1, w.cfg.time_dim}), w.at("unet.time_mlp.fc1.w"),
                         w.at("unet.time_mlp.fc1.b"));
    temb = linear(silu(temb), w.at("unet.time_mlp.fc2.w"), w.at("unet.time_mlp.fc2.b"));
    Tensor pooled = linear(reshape(rows_mean(text_emb), {1, w.cfg.text_dim}), w.at("unet.text_pool.w"),
                           w.at("unet.text_pool.b"));
    temb = reshape(add(temb, pooled), {w.cfg.time_dim});

    Tensor h0 = add_channel_bias(conv2d(z, w.at("unet.conv_in.k")), w.at("unet.conv_in.b"));
    Tensor s0 = resblock(w, "unet.enc0", h0, temb, g);
    Tensor s1 = resblock(w, "unet.enc1", avg_pool2(s0), temb, g);
    Tensor m = resblock(w, "unet.enc2", avg_pool2(s1), temb, g);

    m = resblock(w, "unet.mid.res", m, temb, g);
    m = self_attention(w, "unet.mid.sattn", m, adapters, tap, g);
    m = cross_attention(w, "unet.mid.cattn", m, text_emb, adapters, g);

    m = resblock(w, "unet.dec2", m, temb, g);
    Tensor u1 = resblock(w, "unet.dec1", concat_ch(upsample_nearest2(m), s1), temb, g);
    u1 = self_attention(w, "unet.dec1.sattn", u1, adapters, tap, g);
    u1 = cross_attention(w, "unet.dec1.cattn", u1, text_emb, adapters, g);

    Tensor u0 = resblock(w, "unet.dec0", concat_ch(upsample_nearest2(u1), s0), temb, g);
    Tensor out = silu(group_norm(u0, g, w.at("unet.out.gn.gamma"), w.at("unet.out.gn.beta")));
    return add_channel_bias(conv2d(out, w.at("unet.out.conv.k")), w.at("unet.out.conv.b"));
}

}  // namespace styleblend

#endif
