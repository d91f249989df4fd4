#ifndef ECOPRUNE_COMPACT_HPP
#define ECOPRUNE_COMPACT_HPP

#include <functional>
#include <string>
#include <vector>

#include "denoiser.hpp"
#include "gates.hpp"
#include "tensor.hpp"

namespace ecoprune {

// Excise pruned heads and FFN neurons so the model is physically smaller.
// External input/output dimensions are unchanged; a fully masked MHA or FFN
// degrades to the residual path and is reported through the warning hook.
inline DenoiserModel compact_model(
    const DenoiserModel& m, const BinaryMask& mask,
    const std::function<void(const std::string&)>& warn = {}) {
    DenoiserModel out;
    out.cfg = m.cfg;
    out.cond_embed = m.cond_embed;
    out.time_w = m.time_w;
    out.time_b = m.time_b;
    std::size_t d = static_cast<std::size_t>(m.cfg.d_model);
    std::size_t dh = static_cast<std::size_t>(m.cfg.d_head());

    for (std::size_t b = 0; b < m.blocks.size(); ++b) {
        const BlockParams& blk = m.blocks[b];
        std::string p = "block" + std::to_string(b);
        const auto& head_bits = mask.find(p + ".heads").bits;
        const auto& ffn_bits = mask.find(p + ".ffn").bits;
        if (head_bits.size() != blk.n_heads() || ffn_bits.size() != blk.d_ff())
            throw shape_error("compact_model: mask groups do not align with " + p);

        BlockParams nb;
        nb.ln1_g = blk.ln1_g;
        nb.ln1_b = blk.ln1_b;
        nb.ln2_g = blk.ln2_g;
        nb.ln2_b = blk.ln2_b;
        nb.b2 = blk.b2;

        // keep surviving heads and the matching row bands of wo
        std::vector<std::size_t> kept_heads;
        for (std::size_t h = 0; h < head_bits.size(); ++h)
            if (head_bits[h]) kept_heads.push_back(h);
        for (std::size_t h : kept_heads) nb.heads.push_back(blk.heads[h]);
        nb.wo = Tensor::zeros({kept_heads.size() * dh, d});
        for (std::size_t i = 0; i < kept_heads.size(); ++i)
            for (std::size_t r = 0; r < dh; ++r)
                for (std::size_t c = 0; c < d; ++c)
                    nb.wo.data[(i * dh + r) * d + c] =
                        blk.wo.data[(kept_heads[i] * dh + r) * d + c];

        // keep surviving FFN neurons: columns of w1, entries of b1, rows of w2
        std::vector<std::size_t> kept_ffn;
        for (std::size_t j = 0; j < ffn_bits.size(); ++j)
            if (ffn_bits[j]) kept_ffn.push_back(j);
        std::size_t dff_old = blk.d_ff();
        nb.w1 = Tensor::zeros({d, kept_ffn.size()});
        nb.b1 = Tensor::zeros({kept_ffn.size()});
        nb.w2 = Tensor::zeros({kept_ffn.size(), d});
        for (std::size_t jj = 0; jj < kept_ffn.size(); ++jj) {
            std::size_t j = kept_ffn[jj];
            for (std::size_t r = 0; r < d; ++r)
                nb.w1.data[r * kept_ffn.size() + jj] = blk.w1.data[r * dff_old + j];
            nb.b1.data[jj] = blk.b1.data[j];
            for (std::size_t c = 0; c < d; ++c)
                nb.w2.data[jj * d + c] = blk.w2.data[j * d + c];
        }

        if (kept_heads.empty() && warn)
            warn(p + ": all heads pruned, MHA reduces to the residual path");
        if (kept_ffn.empty() && warn)
            warn(p + ": all FFN neurons pruned, FFN reduces to its bias");
        out.blocks.push_back(std::move(nb));
    }
    return out;
}

// exact count of stored floats across weights, biases and embeddings
inline long long count_params(const DenoiserModel& m) {
    long long n = 0;
    for_each_tensor(m, [&](const std::string&, const Tensor& t) {
        n += static_cast<long long>(t.numel());
    });
    return n;
}

// 2 flops per multiply-accumulate; softmax and GELU at 5 flops per element
inline long long estimate_flops(const DenoiserModel& m, int T) {
    if (T < 1) throw domain_error("estimate_flops: T must be >= 1");
    long long L = m.cfg.seq_len, d = m.cfg.d_model, dh = m.cfg.d_head();
    long long per_forward = 0;
    per_forward += 2 * L * d * d + 2 * L * d;  // time embedding projection + input adds
    for (const auto& blk : m.blocks) {
        long long h = static_cast<long long>(blk.n_heads());
        long long dff = static_cast<long long>(blk.d_ff());
        per_forward += h * (3 * 2 * L * d * dh)      // Q,K,V projections
                       + h * (2 * L * L * dh)        // scores
                       + h * (5 * L * L)             // softmax
                       + h * (2 * L * L * dh)        // attn · V
                       + 2 * L * (h * dh) * d;       // output projection
        per_forward += 2 * L * d * dff               // w1
                       + 5 * L * dff                 // GELU
                       + 2 * L * dff * d;            // w2
    }
    return per_forward * T;
}

}  // namespace ecoprune

#endif
