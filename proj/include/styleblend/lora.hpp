#ifndef STYLEBLEND_LORA_HPP
#define STYLEBLEND_LORA_HPP

#include <map>
#include <string>
#include <vector>

#include "styleblend/ops.hpp"
#include "styleblend/rng.hpp"

namespace styleblend {

// Low-rank delta on one named linear projection: the effective weight becomes
// W + (alpha/r) * B * A. B starts at zero, so a fresh adapter is an exact
// no-op on the projection output.
struct LoRAAdapter {
    std::string target;  // projection address, e.g. "unet.mid.sattn.q"
    int rank = 0;
    double alpha = 0.0;
    Tensor A;  // [r, d_in]
    Tensor B;  // [d_out, r]

    static LoRAAdapter init(std::string target, int d_in, int d_out, int rank, Rng& rng) {
        int r = std::min(rank, std::min(d_in, d_out));  // capped by layer width
        LoRAAdapter a;
        a.target = std::move(target);
        a.rank = r;
        a.alpha = static_cast<double>(r);  // scale-1 effective delta
        a.A = Tensor::randn({r, d_in}, rng, 1.0 / std::sqrt(static_cast<double>(d_in))).clone_as_param();
        a.B = Tensor::zeros({d_out, r});
        a.B.set_requires_grad(true);
        return a;
    }

    uint64_t hash() const {
        uint64_t h = fnv1a64(target);
        h = fnv1a64(A.data().data(), A.data().size() * sizeof(double), h);
        h = fnv1a64(B.data().data(), B.data().size() * sizeof(double), h);
        return h;
    }
};

using LoRASet = std::map<std::string, LoRAAdapter>;

inline LoRASet make_lora_set(const std::vector<std::pair<std::string, std::pair<int, int>>>& targets, int rank,
                             Rng& rng) {
    LoRASet set;
    for (const auto& [addr, dims] : targets) set.emplace(addr, LoRAAdapter::init(addr, dims.first, dims.second, rank, rng));
    return set;
}

// x @ W^T with the adapter's low-rank delta added when one targets this address.
inline Tensor project(const Tensor& x, const Tensor& W, const LoRASet* set, const std::string& addr) {
    Tensor y = matmul_nt(x, W);
    if (set) {
        auto it = set->find(addr);
        if (it != set->end()) {
            const LoRAAdapter& a = it->second;
            y = add(y, scale(matmul_nt(matmul_nt(x, a.A), a.B), a.alpha / a.rank));
        }
    }
    return y;
}

inline std::vector<Tensor> lora_params(LoRASet& set) {
    std::vector<Tensor> out;
    for (auto& [addr, a] : set) {
        out.push_back(a.A);
        out.push_back(a.B);
    }
    return out;
}

inline void set_lora_trainable(LoRASet& set, bool trainable) {
    for (auto& [addr, a] : set) {
        a.A.set_requires_grad(trainable);
        a.B.set_requires_grad(trainable);
    }
}

inline uint64_t lora_set_hash(const LoRASet& set) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [addr, a] : set) h ^= a.hash() * 0x100000001b3ULL;
    return h;
}

}  // namespace styleblend

#endif
