#ifndef STYLEBLEND_METRICS_HPP
#define STYLEBLEND_METRICS_HPP

#include <algorithm>
#include <string>
#include <vector>

#include "styleblend/adam.hpp"
#include "styleblend/dataset.hpp"
#include "styleblend/image.hpp"
#include "styleblend/ops.hpp"

namespace styleblend {

// ---------------------------------------------------------------------------
// Gram style similarity: fixed random-weight 3-layer conv features, per-layer
// Gram matrices, cosine similarity of the concatenated flattened Grams.
// Stands in for a heavyweight learned style descriptor; its separation power
// is validated on the corpus before it judges anything.
// ---------------------------------------------------------------------------

namespace gram_detail {

struct Extractor {
    Tensor w1, w2, w3;
};

inline const Extractor& extractor() {
    static const Extractor e = [] {
        Rng rng(0x57A7E57ULL);  // fixed: the descriptor is part of the metric's definition
        Extractor x;
        x.w1 = Tensor::randn({8, 3, 3, 3}, rng, std::sqrt(2.0 / (3 * 9.0)));
        x.w2 = Tensor::randn({16, 8, 3, 3}, rng, std::sqrt(2.0 / (8 * 9.0)));
        x.w3 = Tensor::randn({16, 16, 3, 3}, rng, std::sqrt(2.0 / (16 * 9.0)));
        return x;
    }();
    return e;
}

inline void append_gram(const Tensor& f, std::vector<double>& out) {
    int c = f.dim(0), hw = f.dim(1) * f.dim(2);
    const double* v = f.data().data();
    for (int i = 0; i < c; i++)
        for (int j = 0; j <= i; j++) {
            double acc = 0.0;
            const double* a = v + static_cast<size_t>(i) * hw;
            const double* b = v + static_cast<size_t>(j) * hw;
            for (int p = 0; p < hw; p++) acc += a[p] * b[p];
            out.push_back(acc / hw);
        }
}

}  // namespace gram_detail

inline std::vector<double> gram_descriptor(const Image& im) {
    NoGradGuard ng;
    const auto& e = gram_detail::extractor();
    Tensor x = image_to_tensor(im);
    Tensor f1 = relu(conv2d(x, e.w1));
    Tensor f2 = relu(conv2d(avg_pool2(f1), e.w2));
    Tensor f3 = relu(conv2d(avg_pool2(f2), e.w3));
    std::vector<double> d;
    gram_detail::append_gram(f1, d);
    gram_detail::append_gram(f2, d);
    gram_detail::append_gram(f3, d);
    return d;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); i++) {
        num += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    double den = std::sqrt(na) * std::sqrt(nb);
    return den > 0.0 ? num / den : 0.0;
}

// StyleScore in [-1, 1]; symmetric; score(x, x) = 1.
inline double gram_style_similarity(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height)
        throw ValidationError("gram_style_similarity: image sizes differ");
    return cosine(gram_descriptor(a), gram_descriptor(b));
}

// Max over references, the aggregation used for multi-reference style sets.
inline double style_score(const Image& img, const std::vector<Image>& refs) {
    if (refs.empty()) throw ValidationError("style_score: no reference images");
    auto d = gram_descriptor(img);
    double best = -1.0;
    for (const auto& r : refs) best = std::max(best, cosine(d, gram_descriptor(r)));
    return best;
}

// Validates the metric's premise on real renders: same-style pairs must beat
// cross-style pairs on at least `need` of the sampled triples.
inline double gram_separation_rate(const CorpusManifest& m, int triples, uint64_t seed) {
    Rng rng(derive_seed(seed, "gram-triples"));
    std::vector<const CorpusItem*> val;
    for (const auto& it : m.items)
        if (it.split == "val") val.push_back(&it);
    int ok = 0;
    for (int i = 0; i < triples; i++) {
        const CorpusItem* a = val[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(val.size()) - 1))];
        const CorpusItem* b = nullptr;
        const CorpusItem* c = nullptr;
        // b: same style, different class; c: different style
        while (!b) {
            const CorpusItem* cand = val[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(val.size()) - 1))];
            if (cand->style == a->style && cand->class_name != a->class_name) b = cand;
        }
        while (!c) {
            const CorpusItem* cand = val[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(val.size()) - 1))];
            if (cand->style != a->style) c = cand;
        }
        double same = gram_style_similarity(load_item(m, *a), load_item(m, *b));
        double cross = gram_style_similarity(load_item(m, *a), load_item(m, *c));
        if (same > cross) ok++;
    }
    return static_cast<double>(ok) / triples;
}

// ---------------------------------------------------------------------------
// Class probe: small conv classifier trained on real corpus images. Its
// class probability for the prompted class is the text-alignment stand-in.
// The probe refuses to score anything until it has passed its own held-out
// validation gate.
// ---------------------------------------------------------------------------

class ClassProbe {
public:
    static constexpr int kC1 = 12, kC2 = 24, kC3 = 24;
    std::vector<std::string> classes;

    static ClassProbe init(const std::vector<std::string>& classes, uint64_t seed) {
        ClassProbe p;
        p.classes = classes;
        Rng rng(derive_seed(seed, "probe-init"));
        int C = static_cast<int>(classes.size());
        p.w1_ = Tensor::randn({kC1, 3, 3, 3}, rng, std::sqrt(2.0 / 27.0)).clone_as_param();
        p.b1_ = Tensor::zeros({kC1});
        p.b1_.set_requires_grad(true);
        p.w2_ = Tensor::randn({kC2, kC1, 3, 3}, rng, std::sqrt(2.0 / (9.0 * kC1))).clone_as_param();
        p.b2_ = Tensor::zeros({kC2});
        p.b2_.set_requires_grad(true);
        p.w3_ = Tensor::randn({kC3, kC2, 3, 3}, rng, std::sqrt(2.0 / (9.0 * kC2))).clone_as_param();
        p.b3_ = Tensor::zeros({kC3});
        p.b3_.set_requires_grad(true);
        // classification head keeps the 8x8 spatial map: the silhouette is the signal
        p.fc_w_ = Tensor::randn({C, kC3 * 64}, rng, std::sqrt(1.0 / (kC3 * 64.0))).clone_as_param();
        p.fc_b_ = Tensor::zeros({C});
        p.fc_b_.set_requires_grad(true);
        return p;
    }

    int class_index(const std::string& cls) const {
        auto it = std::find(classes.begin(), classes.end(), cls);
        if (it == classes.end()) throw ValidationError("probe knows no class '" + cls + "'");
        return static_cast<int>(it - classes.begin());
    }

    Tensor logits(const Tensor& img) const {
        Tensor h = silu(add_channel_bias(conv2d(img, w1_), b1_));
        h = silu(add_channel_bias(conv2d(avg_pool2(h), w2_), b2_));
        h = silu(add_channel_bias(conv2d(avg_pool2(h), w3_), b3_));
        return reshape(linear(reshape(h, {1, kC3 * 64}), fc_w_, fc_b_), {static_cast<int>(classes.size())});
    }

    // +/- 2px translation with edge replication; keeps the probe from keying
    // on exact shape positions.
    static Tensor shifted(const Tensor& x, int dx, int dy) {
        int h = x.dim(1), w = x.dim(2);
        Tensor out = Tensor::zeros(x.shape());
        const auto& src = x.data();
        auto& dst = out.data();
        for (int c = 0; c < 3; c++)
            for (int y = 0; y < h; y++)
                for (int xx = 0; xx < w; xx++) {
                    int sy = std::clamp(y - dy, 0, h - 1), sx = std::clamp(xx - dx, 0, w - 1);
                    dst[(static_cast<size_t>(c) * h + y) * w + xx] = src[(static_cast<size_t>(c) * h + sy) * w + sx];
                }
        return out;
    }

    // Supervised training on the train split (noise + small-shift
    // augmentation), then the validation gate on the val split. Returns
    // held-out accuracy.
    double train(const CorpusManifest& m, int epochs, double lr, uint64_t seed) {
        std::vector<std::pair<Tensor, int>> train_set, val_set;
        for (const auto& it : m.items) {
            Tensor x = image_to_tensor(load_item(m, it));
            (it.split == "train" ? train_set : val_set).push_back({x, class_index(it.class_name)});
        }
        if (train_set.empty() || val_set.empty()) throw ValidationError("probe: corpus lacks train or val items");

        std::vector<Tensor> params = {w1_, b1_, w2_, b2_, w3_, b3_, fc_w_, fc_b_};
        Adam opt(params, {.lr = lr});
        Rng rng(derive_seed(seed, "probe-train"));
        std::vector<size_t> order(train_set.size());
        for (size_t i = 0; i < order.size(); i++) order[i] = i;

        const int batch = 8;
        for (int e = 0; e < epochs; e++) {
            // seeded Fisher-Yates shuffle
            for (size_t i = order.size() - 1; i > 0; i--)
                std::swap(order[i], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i)))]);
            for (size_t at = 0; at < order.size();) {
                Tensor loss;
                int nb = 0;
                for (; nb < batch && at < order.size(); nb++, at++) {
                    auto& [x, y] = train_set[order[at]];
                    Tensor moved = shifted(x, rng.uniform_int(-2, 2), rng.uniform_int(-2, 2));
                    Tensor noisy = add(moved, Tensor::randn(x.shape(), rng, 0.06));
                    Tensor li = cross_entropy_logits(logits(noisy), y);
                    loss = loss.defined() ? add(loss, li) : li;
                }
                // calibration sample: pure noise carries a uniform target, so
                // the probe stays uncertain off-distribution
                {
                    Tensor junk = Tensor::zeros({3, 32, 32});
                    for (auto& v : junk.data()) v = rng.uniform() * 2.0 - 1.0;
                    Tensor jl = logits(junk);
                    Tensor ce;
                    int C = static_cast<int>(classes.size());
                    for (int k = 0; k < C; k++) {
                        Tensor t = cross_entropy_logits(jl, k);
                        ce = ce.defined() ? add(ce, t) : t;
                    }
                    loss = add(loss, scale(ce, 0.5 / C));
                    nb++;
                }
                backward(scale(loss, 1.0 / nb));
                opt.step();
            }
        }

        int hits = 0;
        {
            NoGradGuard ng;
            for (auto& [x, y] : val_set)
                if (predict_index(x) == y) hits++;
        }
        val_accuracy_ = static_cast<double>(hits) / static_cast<double>(val_set.size());
        validated_ = val_accuracy_ >= 0.9;
        return val_accuracy_;
    }

    bool validated() const { return validated_; }
    double val_accuracy() const { return val_accuracy_; }

    std::vector<double> probabilities(const Image& img) const {
        require_validated();
        NoGradGuard ng;
        return softmax_vec(logits(image_to_tensor(img)).data());
    }

    double align_score(const Image& img, const std::string& cls) const {
        return probabilities(img)[static_cast<size_t>(class_index(cls))];
    }

    std::string predict(const Image& img) const {
        require_validated();
        NoGradGuard ng;
        return classes[static_cast<size_t>(predict_index(image_to_tensor(img)))];
    }

private:
    int predict_index(const Tensor& img) const {
        Tensor out = logits(img);
        const auto& l = out.data();
        return static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
    }
    void require_validated() const {
        if (!validated_)
            throw ValidationError("probe used before passing its validation gate (held-out accuracy >= 0.9)");
    }

    Tensor w1_, b1_, w2_, b2_, w3_, b3_, fc_w_, fc_b_;
    bool validated_ = false;
    double val_accuracy_ = 0.0;
};

}  // namespace styleblend

#endif
