#ifndef ECOPRUNE_DENOISER_HPP
#define ECOPRUNE_DENOISER_HPP

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gates.hpp"
#include "ops.hpp"
#include "rng.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace ecoprune {

struct DenoiserConfig {
    int d_model = 16;
    int n_heads = 4;
    int d_ff = 32;
    int n_blocks = 3;
    int seq_len = 4;
    int n_conditions = 8;
    int T = 8;

    int d_head() const { return d_model / n_heads; }

    void validate() const {
        if (d_model < 1 || n_heads < 1 || d_ff < 0 || n_blocks < 1 || seq_len < 1 ||
            n_conditions < 1 || T < 1)
            throw domain_error("denoiser config: dims must be positive");
        if (d_model % n_heads != 0)
            throw domain_error("denoiser config: d_model not divisible by n_heads");
    }
};

struct HeadParams {
    Tensor wq, wk, wv;  // d_model × d_head
};

struct BlockParams {
    std::vector<HeadParams> heads;
    Tensor wo;              // (h·d_head) × d_model
    Tensor w1, b1, w2, b2;  // d_model×d_ff, d_ff, d_ff×d_model, d_model
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;

    std::size_t n_heads() const { return heads.size(); }
    std::size_t d_ff() const { return w1.rank() == 2 ? w1.shape[1] : 0; }
};

// ε_θ(z_t, t, y): pre-layer-norm transformer blocks over an L×d_model latent,
// with additive sinusoidal time and categorical condition embeddings.
struct DenoiserModel {
    DenoiserConfig cfg;
    std::vector<BlockParams> blocks;
    Tensor cond_embed;       // n_conditions × d_model
    Tensor time_w, time_b;   // d_model × d_model, d_model

    static DenoiserModel init(const DenoiserConfig& cfg, Rng& rng) {
        cfg.validate();
        DenoiserModel m;
        m.cfg = cfg;
        std::size_t d = cfg.d_model, dh = cfg.d_head(), dff = cfg.d_ff;
        auto gauss = [&](std::vector<std::size_t> shape, double scale) {
            Tensor t = rng.normal_tensor(std::move(shape));
            for (double& v : t.data) v *= scale;
            return t;
        };
        double si = 1.0 / std::sqrt(static_cast<double>(d));
        for (int b = 0; b < cfg.n_blocks; ++b) {
            BlockParams blk;
            for (int h = 0; h < cfg.n_heads; ++h)
                blk.heads.push_back({gauss({d, dh}, si), gauss({d, dh}, si), gauss({d, dh}, si)});
            blk.wo = gauss({static_cast<std::size_t>(cfg.n_heads) * dh, d}, si);
            blk.w1 = gauss({d, dff}, si);
            blk.b1 = Tensor::zeros({dff});
            blk.w2 = gauss({dff, d}, 1.0 / std::sqrt(static_cast<double>(dff)));
            blk.b2 = Tensor::zeros({d});
            blk.ln1_g = Tensor::full({d}, 1.0);
            blk.ln1_b = Tensor::zeros({d});
            blk.ln2_g = Tensor::full({d}, 1.0);
            blk.ln2_b = Tensor::zeros({d});
            m.blocks.push_back(std::move(blk));
        }
        m.cond_embed = gauss({static_cast<std::size_t>(cfg.n_conditions), d}, 0.5);
        m.time_w = gauss({d, d}, si);
        m.time_b = Tensor::zeros({d});
        return m;
    }
};

// visit every stored tensor with a stable name
template <typename ModelT, typename Fn>
void for_each_tensor(ModelT& m, Fn fn) {
    for (std::size_t b = 0; b < m.blocks.size(); ++b) {
        auto& blk = m.blocks[b];
        std::string p = "block" + std::to_string(b) + ".";
        for (std::size_t h = 0; h < blk.heads.size(); ++h) {
            std::string hp = p + "head" + std::to_string(h) + ".";
            fn(hp + "wq", blk.heads[h].wq);
            fn(hp + "wk", blk.heads[h].wk);
            fn(hp + "wv", blk.heads[h].wv);
        }
        fn(p + "wo", blk.wo);
        fn(p + "w1", blk.w1);
        fn(p + "b1", blk.b1);
        fn(p + "w2", blk.w2);
        fn(p + "b2", blk.b2);
        fn(p + "ln1_g", blk.ln1_g);
        fn(p + "ln1_b", blk.ln1_b);
        fn(p + "ln2_g", blk.ln2_g);
        fn(p + "ln2_b", blk.ln2_b);
    }
    fn("cond_embed", m.cond_embed);
    fn("time_w", m.time_w);
    fn("time_b", m.time_b);
}

// ---- tape-side mirrors -----------------------------------------------------

struct HeadVars {
    Var wq, wk, wv;
};
struct BlockVars {
    std::vector<HeadVars> heads;
    Var wo, w1, b1, w2, b2, ln1_g, ln1_b, ln2_g, ln2_b;
};
struct ModelVars {
    const DenoiserModel* model = nullptr;
    std::vector<BlockVars> blocks;
    Var cond_embed, time_w, time_b;
};

inline ModelVars make_model_vars(Tape& t, const DenoiserModel& m, bool trainable) {
    ModelVars mv;
    mv.model = &m;
    for (const auto& blk : m.blocks) {
        BlockVars bv;
        for (const auto& h : blk.heads)
            bv.heads.push_back({t.leaf(h.wq, trainable), t.leaf(h.wk, trainable),
                                t.leaf(h.wv, trainable)});
        bv.wo = t.leaf(blk.wo, trainable);
        bv.w1 = t.leaf(blk.w1, trainable);
        bv.b1 = t.leaf(blk.b1, trainable);
        bv.w2 = t.leaf(blk.w2, trainable);
        bv.b2 = t.leaf(blk.b2, trainable);
        bv.ln1_g = t.leaf(blk.ln1_g, trainable);
        bv.ln1_b = t.leaf(blk.ln1_b, trainable);
        bv.ln2_g = t.leaf(blk.ln2_g, trainable);
        bv.ln2_b = t.leaf(blk.ln2_b, trainable);
        mv.blocks.push_back(std::move(bv));
    }
    mv.cond_embed = t.leaf(m.cond_embed, trainable);
    mv.time_w = t.leaf(m.time_w, trainable);
    mv.time_b = t.leaf(m.time_b, trainable);
    return mv;
}

// per-block gate vectors living on the tape
struct GateVars {
    std::vector<Var> head_gates;  // rank-1, length = heads in block
    std::vector<Var> ffn_gates;   // rank-1, length = d_ff of block
};

// plain gate values for graph-free forwards
struct GateValues {
    std::vector<std::vector<double>> head_gates;
    std::vector<std::vector<double>> ffn_gates;

    static GateValues ones(const DenoiserModel& m) {
        GateValues g;
        for (const auto& blk : m.blocks) {
            g.head_gates.push_back(std::vector<double>(blk.n_heads(), 1.0));
            g.ffn_gates.push_back(std::vector<double>(blk.d_ff(), 1.0));
        }
        return g;
    }

    static GateValues from_mask(const DenoiserModel& m, const BinaryMask& mask) {
        GateValues g;
        for (std::size_t b = 0; b < m.blocks.size(); ++b) {
            std::string p = "block" + std::to_string(b);
            const auto& hb = mask.find(p + ".heads").bits;
            const auto& fb = mask.find(p + ".ffn").bits;
            g.head_gates.push_back(std::vector<double>(hb.begin(), hb.end()));
            g.ffn_gates.push_back(std::vector<double>(fb.begin(), fb.end()));
        }
        return g;
    }

    static GateValues from_lambda_expected(const DenoiserModel& m, const GateParams& gp,
                                           const GateConfig& cfg) {
        GateValues g;
        for (std::size_t b = 0; b < m.blocks.size(); ++b) {
            std::string p = "block" + std::to_string(b);
            for (const auto& grp : gp.groups) {
                if (grp.name != p + ".heads" && grp.name != p + ".ffn") continue;
                std::vector<double> vals;
                for (double l : grp.lambda.data) vals.push_back(expected_gate(l, cfg));
                if (grp.name == p + ".heads")
                    g.head_gates.push_back(std::move(vals));
                else
                    g.ffn_gates.push_back(std::move(vals));
            }
        }
        return g;
    }
};

// one lambda group per (block, unit kind); initial value 5 keeps gates open
inline GateParams make_gate_params(const DenoiserModel& m, double init = 5.0) {
    GateParams gp;
    for (std::size_t b = 0; b < m.blocks.size(); ++b) {
        std::string p = "block" + std::to_string(b);
        gp.groups.push_back({p + ".heads", Tensor::full({m.blocks[b].n_heads()}, init)});
        gp.groups.push_back({p + ".ffn", Tensor::full({m.blocks[b].d_ff()}, init)});
    }
    return gp;
}

inline GateVars make_constant_gates(Tape& t, const GateValues& g) {
    GateVars gv;
    for (const auto& hv : g.head_gates) gv.head_gates.push_back(t.leaf(Tensor::vec(hv)));
    for (const auto& fv : g.ffn_gates) gv.ffn_gates.push_back(t.leaf(Tensor::vec(fv)));
    return gv;
}

// ---- forward ---------------------------------------------------------------

// transpose as a primitive-composition helper
inline Var transpose(Tape& t, Var a) {
    const Tensor& av = t.value(a);
    if (av.rank() != 2) throw shape_error("transpose: rank != 2, " + av.shape_str());
    Tensor out = transpose_val(av);
    int ai = a.id;
    return t.node(std::move(out), t.needs_grad(a),
                  [ai](Tape& tp, const Tensor& cot) {
                      tp.accumulate(ai, transpose_val(cot));
                  });
}

inline Var attention_head(Tape& t, Var x, const HeadVars& h) {
    std::size_t dk = t.value(h.wq).shape[1];
    Var q = matmul(x, h.wq);
    Var k = matmul(x, h.wk);
    Var v = matmul(x, h.wv);
    Var scores = scalar_mul(matmul(q, transpose(t, k)), 1.0 / std::sqrt(double(dk)));
    return matmul(softmax_rows(scores), v);
}

inline Var mha_masked(Tape& t, Var x, const BlockVars& blk, Var head_gates) {
    std::size_t h = blk.heads.size();
    if (t.value(head_gates).numel() != h)
        throw shape_error("mha_masked: gate count != head count");
    if (h == 0) return t.leaf(Tensor::zeros(t.value(x).shape));
    std::vector<Var> parts;
    for (std::size_t i = 0; i < h; ++i)
        parts.push_back(mul_scalar_var(attention_head(t, x, blk.heads[i]),
                                       element(head_gates, i)));
    return matmul(concat_cols(parts), blk.wo);
}

inline Var ffn_masked(Tape& t, Var x, const BlockVars& blk, Var ffn_gates) {
    std::size_t dff = t.value(blk.w1).rank() == 2 ? t.value(blk.w1).shape[1] : 0;
    if (t.value(ffn_gates).numel() != dff)
        throw shape_error("ffn_masked: gate count != d_ff");
    if (dff == 0) {
        Var zero = t.leaf(Tensor::zeros(t.value(x).shape));
        return add_rows(zero, blk.b2);
    }
    Var hidden = gelu(add_rows(matmul(x, blk.w1), blk.b1));
    return add_rows(matmul(mul_rows(hidden, ffn_gates), blk.w2), blk.b2);
}

inline Tensor time_embedding_raw(int t, int d) {
    Tensor e = Tensor::zeros({static_cast<std::size_t>(d)});
    for (int i = 0; i < d / 2; ++i) {
        double freq = std::pow(10000.0, -2.0 * i / d);
        e.data[2 * i] = std::sin(t * freq);
        e.data[2 * i + 1] = std::cos(t * freq);
    }
    return e;
}

inline Var denoiser_forward(Tape& t, const ModelVars& mv, Var z, int step, int y,
                            const GateVars& gates) {
    const DenoiserConfig& cfg = mv.model->cfg;
    if (step < 1 || step > cfg.T) throw domain_error("denoiser_forward: t out of range");
    if (y < 0 || y >= cfg.n_conditions)
        throw domain_error("denoiser_forward: condition id out of range");
    Var traw = t.leaf(Tensor({1, static_cast<std::size_t>(cfg.d_model)},
                             time_embedding_raw(step, cfg.d_model).data));
    Var temb = reshape(add_rows(matmul(traw, mv.time_w), mv.time_b),
                       {static_cast<std::size_t>(cfg.d_model)});
    Var cemb = embed_row(mv.cond_embed, static_cast<std::size_t>(y));
    Var x = add_rows(add_rows(z, temb), cemb);
    for (std::size_t b = 0; b < mv.blocks.size(); ++b) {
        const BlockVars& blk = mv.blocks[b];
        Var attn = mha_masked(t, layer_norm(x, blk.ln1_g, blk.ln1_b), blk, gates.head_gates[b]);
        x = add(x, attn);
        Var ffn = ffn_masked(t, layer_norm(x, blk.ln2_g, blk.ln2_b), blk, gates.ffn_gates[b]);
        x = add(x, ffn);
    }
    return x;
}

// graph-free convenience wrapper
inline Tensor denoiser_apply(const DenoiserModel& m, const Tensor& z, int step, int y,
                             const GateValues& gates) {
    Tape tape;
    ModelVars mv = make_model_vars(tape, m, false);
    GateVars gv = make_constant_gates(tape, gates);
    Var out = denoiser_forward(tape, mv, tape.leaf(z), step, y, gv);
    return tape.value(out);
}

}  // namespace ecoprune

#endif
