#ifndef ECOPRUNE_DIFFUSION_HPP
#define ECOPRUNE_DIFFUSION_HPP

#include <cmath>
#include <utility>
#include <vector>

#include "adam.hpp"
#include "denoiser.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace ecoprune {

// α_t, ᾱ_t, σ_t over T steps; linear beta 1e-4 → 0.02, σ_t = √β_t with the
// final step noiseless.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta, alpha, alpha_bar, sigma;

    static NoiseSchedule linear(int T) {
        if (T < 1) throw domain_error("noise schedule: T must be >= 1");
        NoiseSchedule s;
        s.T = T;
        double lo = 1e-4, hi = 0.02;
        double prod = 1.0;
        for (int t = 1; t <= T; ++t) {
            double b = T == 1 ? lo : lo + (hi - lo) * (t - 1) / double(T - 1);
            s.beta.push_back(b);
            s.alpha.push_back(1.0 - b);
            prod *= 1.0 - b;
            s.alpha_bar.push_back(prod);
            s.sigma.push_back(t == 1 ? 0.0 : std::sqrt(b));
        }
        return s;
    }

    void check_t(int t) const {
        if (t < 1 || t > T) throw domain_error("schedule: step t out of [1,T]");
    }
};

enum class SamplerMode { deterministic, stochastic_shared };

// z_t = √ᾱ_t z_0 + √(1-ᾱ_t) ε
inline Tensor forward_diffuse(const NoiseSchedule& s, const Tensor& z0, int t,
                              const Tensor& eps) {
    s.check_t(t);
    check_same_shape("forward_diffuse", z0, eps);
    double a = std::sqrt(s.alpha_bar[t - 1]);
    double b = std::sqrt(1.0 - s.alpha_bar[t - 1]);
    Tensor out = a * z0;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += b * eps.data[i];
    return out;
}

// one reverse step on the tape: z_{t-1} from z_t and the model prediction
inline Var denoise_step(Tape& tape, const NoiseSchedule& s, Var z_t, int t, int y,
                        const ModelVars& mv, const GateVars& gates,
                        const Tensor* eta = nullptr) {
    s.check_t(t);
    double a = s.alpha[t - 1];
    double coef = (1.0 - a) / std::sqrt(1.0 - s.alpha_bar[t - 1]);
    Var pred = denoiser_forward(tape, mv, z_t, t, y, gates);
    Var out = scalar_mul(sub(z_t, scalar_mul(pred, coef)), 1.0 / std::sqrt(a));
    if (s.sigma[t - 1] != 0.0 && eta != nullptr)
        out = add_constant(out, s.sigma[t - 1] * (*eta));
    return out;
}

// shared noise stream: η_t is a pure function of (seed, t)
inline Tensor eta_for_step(std::uint64_t seed, int t, std::size_t L, std::size_t d) {
    Rng r = Rng(seed).derive(0x657461ULL, static_cast<std::uint64_t>(t));
    return r.normal_tensor({L, d});
}

struct SamplerOpts {
    SamplerMode mode = SamplerMode::deterministic;
    std::uint64_t seed = 0;
};

// full trajectory F: iterate the reverse step from t=T down to 1
inline Tensor full_sample(const NoiseSchedule& s, const DenoiserModel& m, Tensor z_T,
                          int y, const GateValues& gates, SamplerOpts opts = {}) {
    Tensor z = std::move(z_T);
    std::size_t L = z.shape[0], d = z.shape[1];
    for (int t = s.T; t >= 1; --t) {
        Tape tape;
        ModelVars mv = make_model_vars(tape, m, false);
        GateVars gv = make_constant_gates(tape, gates);
        Tensor eta;
        const Tensor* eta_p = nullptr;
        if (opts.mode == SamplerMode::stochastic_shared && s.sigma[t - 1] != 0.0) {
            eta = eta_for_step(opts.seed, t, L, d);
            eta_p = &eta;
        }
        Var out = denoise_step(tape, s, tape.leaf(z), t, y, mv, gv, eta_p);
        z = tape.value(out);
    }
    return z;
}

// ---- base pretraining ------------------------------------------------------

// class-conditional Gaussian token sequences; content is arbitrary, the
// pruner only needs a non-degenerate trained model
struct SyntheticDataset {
    std::vector<Tensor> class_means;  // one L×d mean per condition
    double scale = 0.5;

    static SyntheticDataset make(const DenoiserConfig& cfg, std::uint64_t seed,
                                 double scale = 0.5) {
        SyntheticDataset ds;
        ds.scale = scale;
        Rng r = Rng(seed).derive(0xda7aULL);
        for (int k = 0; k < cfg.n_conditions; ++k)
            ds.class_means.push_back(r.normal_tensor(
                {static_cast<std::size_t>(cfg.seq_len), static_cast<std::size_t>(cfg.d_model)}));
        return ds;
    }

    std::pair<Tensor, int> sample(Rng& rng) const {
        int y = static_cast<int>(rng.index(class_means.size()));
        Tensor z0 = class_means[y];
        for (double& v : z0.data) v += scale * rng.normal();
        return {std::move(z0), y};
    }
};

// one optimizer step of the latent noise prediction loss, gates fixed to 1
inline double base_train_step(DenoiserModel& m, Adam& opt, const NoiseSchedule& s,
                              const std::vector<std::pair<Tensor, int>>& batch, Rng& rng) {
    if (batch.empty()) throw contract_error("base_train_step: empty batch");
    Tape tape;
    ModelVars mv = make_model_vars(tape, m, true);
    GateVars gv = make_constant_gates(tape, GateValues::ones(m));
    Var loss{};
    for (const auto& [z0, y] : batch) {
        int t = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(s.T)));
        Tensor eps = rng.normal_tensor(z0.shape);
        Tensor z_t = forward_diffuse(s, z0, t, eps);
        Var pred = denoiser_forward(tape, mv, tape.leaf(z_t), t, y, gv);
        Var diff = sub(pred, tape.leaf(eps));
        Var sq = sum_all(mul(diff, diff));
        loss = loss.valid() ? add(loss, sq) : sq;
    }
    loss = scalar_mul(loss, 1.0 / static_cast<double>(batch.size()));
    double loss_val = tape.value(loss).item();
    tape.backward(loss);

    // model tensors and their leaf vars enumerate in the same order
    opt.begin_step();
    std::vector<std::pair<std::string, Tensor*>> params;
    for_each_tensor(m, [&](const std::string& n, Tensor& t) { params.push_back({n, &t}); });
    std::vector<Var> vars;
    ModelVars& mvr = mv;
    for (auto& blk : mvr.blocks) {
        for (auto& h : blk.heads) {
            vars.push_back(h.wq);
            vars.push_back(h.wk);
            vars.push_back(h.wv);
        }
        vars.push_back(blk.wo);
        vars.push_back(blk.w1);
        vars.push_back(blk.b1);
        vars.push_back(blk.w2);
        vars.push_back(blk.b2);
        vars.push_back(blk.ln1_g);
        vars.push_back(blk.ln1_b);
        vars.push_back(blk.ln2_g);
        vars.push_back(blk.ln2_b);
    }
    vars.push_back(mvr.cond_embed);
    vars.push_back(mvr.time_w);
    vars.push_back(mvr.time_b);
    for (std::size_t i = 0; i < params.size(); ++i)
        opt.update(params[i].first, *params[i].second, tape.grad(vars[i]));
    return loss_val;
}

// pretrain on the synthetic dataset
inline std::vector<double> train_base_model(DenoiserModel& m, const NoiseSchedule& s,
                                            const SyntheticDataset& ds, int steps,
                                            int batch_size, double lr, std::uint64_t seed) {
    Adam opt(lr);
    Rng rng = Rng(seed).derive(0xba5eULL);
    std::vector<double> losses;
    for (int step = 0; step < steps; ++step) {
        std::vector<std::pair<Tensor, int>> batch;
        for (int b = 0; b < batch_size; ++b) batch.push_back(ds.sample(rng));
        losses.push_back(base_train_step(m, opt, s, batch, rng));
    }
    return losses;
}

}  // namespace ecoprune

#endif
