#ifndef STYLEBLEND_TEXT_ENCODER_HPP
#define STYLEBLEND_TEXT_ENCODER_HPP

#include <map>

#include "styleblend/model.hpp"
#include "styleblend/ops.hpp"

namespace styleblend {

// Toy text encoder: token + position embeddings, pre-norm transformer blocks,
// final layer norm. Composition-style adapters target the attention
// projections here. `overrides` substitutes learned vectors for specific
// token ids (how e_T / e_C enter the prompt without touching the table).
inline Tensor encode_text(const ModelWeights& w, const PromptTokens& tokens, const LoRASet* adapters = nullptr,
                          const std::map<int, Tensor>& overrides = {}) {
    if (static_cast<int>(tokens.ids.size()) != Vocabulary::kMaxLen)
        throw std::invalid_argument("encode_text: prompt must be padded to " + std::to_string(Vocabulary::kMaxLen));
    if (adapters)
        for (const auto& [addr, a] : *adapters)
            if (!w.is_text_projection(addr))
                throw std::invalid_argument("encode_text: adapter targets unknown layer '" + addr + "'");

    Tensor x = add(embedding_rows(w.at("text.token_table"), tokens.ids, overrides), w.at("text.pos_table"));
    const int d = w.cfg.text_dim;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(d));

    for (int b = 0; b < w.cfg.text_blocks; b++) {
        std::string p = "text.block" + std::to_string(b);
        Tensor h = layer_norm_rows(x, w.at(p + ".ln1.gamma"), w.at(p + ".ln1.beta"));
        Tensor q = project(h, w.at(p + ".attn.q.w"), adapters, p + ".attn.q");
        Tensor k = project(h, w.at(p + ".attn.k.w"), adapters, p + ".attn.k");
        Tensor v = project(h, w.at(p + ".attn.v.w"), adapters, p + ".attn.v");
        Tensor attn = matmul(softmax_rows(scale(matmul_nt(q, k), att_scale)), v);
        Tensor out = add_row_bias(project(attn, w.at(p + ".attn.out.w"), adapters, p + ".attn.out"),
                                  w.at(p + ".attn.out.b"));
        x = add(x, out);
        Tensor h2 = layer_norm_rows(x, w.at(p + ".ln2.gamma"), w.at(p + ".ln2.beta"));
        Tensor m = linear(silu(linear(h2, w.at(p + ".mlp.fc1.w"), w.at(p + ".mlp.fc1.b"))), w.at(p + ".mlp.fc2.w"),
                          w.at(p + ".mlp.fc2.b"));
        x = add(x, m);
    }
    return layer_norm_rows(x, w.at("text.ln_f.gamma"), w.at("text.ln_f.beta"));
}

}  // namespace styleblend

#endif
