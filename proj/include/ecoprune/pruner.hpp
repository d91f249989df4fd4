#ifndef ECOPRUNE_PRUNER_HPP
#define ECOPRUNE_PRUNER_HPP

#include <chrono>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "adam.hpp"
#include "denoiser.hpp"
#include "diffusion.hpp"
#include "gates.hpp"
#include "grad_check.hpp"
#include "ops.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace ecoprune {

struct divergence_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Engine { naive, checkpointed };

struct PruneConfig {
    double beta_reg = 0.5;
    double lr_attn = 0.15;
    double lr_ffn = 0.15;
    int steps = 400;
    int batch_size = 4;
    double weight_decay = 1e-2;
    Engine engine = Engine::checkpointed;
    int T_train = 8;
};

// one trajectory of the paired loss: shared z_T, target from the unmasked
// model, and (optionally) the shared per-step noise
struct PruneItem {
    Tensor z_T;
    int y = 0;
    Tensor z0_target;
    std::vector<Tensor> eta;  // index t-1; empty tensor = no noise at that step
};

// detached per-step latents kept by the checkpointed engine
struct CheckpointStore {
    std::vector<Tensor> latents;

    long long bytes() const {
        long long n = 0;
        for (const auto& t : latents) n += static_cast<long long>(t.numel()) * 8;
        return n;
    }
};

struct EngineResult {
    GateParams grads;  // same group layout as lambda, holding dL/dλ
    double le = 0.0;
    double reg = 0.0;
    double total = 0.0;
    long long peak_floats = 0;
};

namespace detail {

inline GateParams zero_like(const GateParams& gp) {
    GateParams z;
    for (const auto& g : gp.groups) z.groups.push_back({g.name, Tensor::zeros(g.lambda.shape)});
    return z;
}

// group layout -> per-block GateVars, matching make_gate_params ordering
inline GateVars gates_from_lambda(Tape& tape, const DenoiserModel& m,
                                  const std::vector<Var>& lambda_leaves,
                                  const GateParams& gp,
                                  const std::vector<std::vector<double>>& noise_shifts,
                                  const GateConfig& cfg) {
    GateVars gv;
    for (std::size_t b = 0; b < m.blocks.size(); ++b) {
        std::string p = "block" + std::to_string(b);
        for (std::size_t gi = 0; gi < gp.groups.size(); ++gi) {
            if (gp.groups[gi].name == p + ".heads")
                gv.head_gates.push_back(
                    gate_vector(tape, lambda_leaves[gi], noise_shifts[gi], cfg));
            else if (gp.groups[gi].name == p + ".ffn")
                gv.ffn_gates.push_back(
                    gate_vector(tape, lambda_leaves[gi], noise_shifts[gi], cfg));
        }
    }
    return gv;
}

inline std::vector<double> gate_values_for_group(const GateGroup& g,
                                                 const std::vector<double>& shift,
                                                 const GateConfig& cfg) {
    std::vector<double> out(g.lambda.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double s = sigmoid_scalar((shift[i] + g.lambda.data[i]) / cfg.alpha_temp);
        out[i] = std::min(1.0, std::max(0.0, s * (cfg.zeta - cfg.gamma) + cfg.gamma));
    }
    return out;
}

inline GateValues gate_values_from_lambda(const DenoiserModel& m, const GateParams& gp,
                                          const std::vector<std::vector<double>>& shifts,
                                          const GateConfig& cfg) {
    GateValues g;
    for (std::size_t b = 0; b < m.blocks.size(); ++b) {
        std::string p = "block" + std::to_string(b);
        for (std::size_t gi = 0; gi < gp.groups.size(); ++gi) {
            if (gp.groups[gi].name == p + ".heads")
                g.head_gates.push_back(gate_values_for_group(gp.groups[gi], shifts[gi], cfg));
            else if (gp.groups[gi].name == p + ".ffn")
                g.ffn_gates.push_back(gate_values_for_group(gp.groups[gi], shifts[gi], cfg));
        }
    }
    return g;
}

}  // namespace detail

// graph-free trajectory with explicit per-step noise
inline Tensor rollout(const DenoiserModel& m, const NoiseSchedule& s, Tensor z_T, int y,
                      const GateValues& gates, const std::vector<Tensor>& eta) {
    Tensor z = std::move(z_T);
    for (int t = s.T; t >= 1; --t) {
        Tape tape;
        ModelVars mv = make_model_vars(tape, m, false);
        GateVars gv = make_constant_gates(tape, gates);
        const Tensor* eta_p = nullptr;
        if (static_cast<int>(eta.size()) >= t && !eta[t - 1].data.empty()) eta_p = &eta[t - 1];
        Var out = denoise_step(tape, s, tape.leaf(z), t, y, mv, gv, eta_p);
        z = tape.value(out);
    }
    return z;
}

// L = Σ_items ||F(z_T,y) - F_mask(z_T,y)||_2 + beta ||λ||_1, one realized
// mask shared across every step of every trajectory
inline double end_to_end_loss(const DenoiserModel& m, const NoiseSchedule& s,
                              const GateParams& lambda, const GateConfig& gcfg,
                              const std::vector<std::vector<double>>& noise_shifts,
                              const std::vector<PruneItem>& items, double beta_reg) {
    GateValues gv = detail::gate_values_from_lambda(m, lambda, noise_shifts, gcfg);
    double le = 0.0;
    for (const auto& item : items) {
        Tensor z0 = rollout(m, s, item.z_T, item.y, gv, item.eta);
        le += frob_norm(z0 - item.z0_target);
    }
    return le + beta_reg * l1_regularizer(lambda);
}

// Oracle engine: the whole T-step trajectory and loss live on one tape.
inline EngineResult naive_backprop(const DenoiserModel& m, const NoiseSchedule& s,
                                   const GateParams& lambda, const GateConfig& gcfg,
                                   const std::vector<std::vector<double>>& noise_shifts,
                                   const std::vector<PruneItem>& items, double beta_reg) {
    MemoryStats::reset_peak();
    long long peak_base = MemoryStats::live().load();
    EngineResult res;
    Tape tape;
    ModelVars mv = make_model_vars(tape, m, false);
    std::vector<Var> lambda_leaves;
    for (const auto& g : lambda.groups) lambda_leaves.push_back(tape.leaf(g.lambda, true));
    GateVars gates = detail::gates_from_lambda(tape, m, lambda_leaves, lambda, noise_shifts, gcfg);

    Var le{};
    for (const auto& item : items) {
        Var z = tape.leaf(item.z_T);
        for (int t = s.T; t >= 1; --t) {
            const Tensor* eta_p = nullptr;
            if (static_cast<int>(item.eta.size()) >= t && !item.eta[t - 1].data.empty())
                eta_p = &item.eta[t - 1];
            z = denoise_step(tape, s, z, t, item.y, mv, gates, eta_p);
        }
        Var norm = l2_norm(sub(z, tape.leaf(item.z0_target)));
        le = le.valid() ? add(le, norm) : norm;
    }
    std::vector<Var> lam_for_reg;
    for (Var v : lambda_leaves) lam_for_reg.push_back(v);
    Var reg = scalar_mul(l1_norm(concat_cols(lam_for_reg)), beta_reg);
    Var loss = add(le, reg);

    res.le = tape.value(le).item();
    res.reg = tape.value(reg).item();
    res.total = tape.value(loss).item();
    tape.backward(loss);
    res.grads = detail::zero_like(lambda);
    for (std::size_t gi = 0; gi < lambda.groups.size(); ++gi)
        res.grads.groups[gi].lambda = tape.grad(lambda_leaves[gi]);
    res.peak_floats = MemoryStats::peak().load() - peak_base;
    return res;
}

// Checkpointed engine: forward stores only the per-step latents, backward
// replays one step at a time and chains the cotangent.
inline EngineResult checkpointed_backprop(const DenoiserModel& m, const NoiseSchedule& s,
                                          const GateParams& lambda, const GateConfig& gcfg,
                                          const std::vector<std::vector<double>>& noise_shifts,
                                          const std::vector<PruneItem>& items,
                                          double beta_reg) {
    MemoryStats::reset_peak();
    long long peak_base = MemoryStats::live().load();
    EngineResult res;
    res.grads = detail::zero_like(lambda);
    GateValues gv_const = detail::gate_values_from_lambda(m, lambda, noise_shifts, gcfg);

    for (const auto& item : items) {
        // phase 1: values only
        CheckpointStore store;
        store.latents.resize(static_cast<std::size_t>(s.T) + 1);
        store.latents[s.T] = item.z_T;
        for (int t = s.T; t >= 1; --t) {
            Tape tape;
            ModelVars mv = make_model_vars(tape, m, false);
            GateVars gates = make_constant_gates(tape, gv_const);
            const Tensor* eta_p = nullptr;
            if (static_cast<int>(item.eta.size()) >= t && !item.eta[t - 1].data.empty())
                eta_p = &item.eta[t - 1];
            Var out = denoise_step(tape, s, tape.leaf(store.latents[t]), t, item.y, mv,
                                   gates, eta_p);
            store.latents[t - 1] = tape.value(out);
        }

        // loss head and its cotangent
        Tensor diff = store.latents[0] - item.z0_target;
        double norm = frob_norm(diff);
        res.le += norm;
        Tensor cot = norm == 0.0 ? Tensor::zeros(diff.shape) : (1.0 / norm) * diff;

        // phase 2: replay each step on a throwaway tape
        for (int t = 1; t <= s.T; ++t) {
            if (store.latents[t].data.empty())
                throw contract_error("checkpointed_backprop: missing checkpoint");
            Tape tape;
            ModelVars mv = make_model_vars(tape, m, false);
            std::vector<Var> lambda_leaves;
            for (const auto& g : lambda.groups)
                lambda_leaves.push_back(tape.leaf(g.lambda, true));
            GateVars gates =
                detail::gates_from_lambda(tape, m, lambda_leaves, lambda, noise_shifts, gcfg);
            Var z_in = tape.leaf(store.latents[t], true);
            const Tensor* eta_p = nullptr;
            if (static_cast<int>(item.eta.size()) >= t && !item.eta[t - 1].data.empty())
                eta_p = &item.eta[t - 1];
            Var out = denoise_step(tape, s, z_in, t, item.y, mv, gates, eta_p);
            Var head = sum_all(mul(reshape(out, {cot.numel()}),
                                   reshape(tape.leaf(cot), {cot.numel()})));
            tape.backward(head);
            for (std::size_t gi = 0; gi < lambda.groups.size(); ++gi) {
                Tensor g = tape.grad(lambda_leaves[gi]);
                for (std::size_t i = 0; i < g.numel(); ++i)
                    res.grads.groups[gi].lambda.data[i] += g.data[i];
            }
            cot = tape.grad(z_in);
        }
    }

    // regularizer handled analytically
    res.reg = beta_reg * l1_regularizer(lambda);
    for (std::size_t gi = 0; gi < lambda.groups.size(); ++gi) {
        const Tensor& lv = lambda.groups[gi].lambda;
        for (std::size_t i = 0; i < lv.numel(); ++i) {
            double v = lv.data[i];
            res.grads.groups[gi].lambda.data[i] +=
                beta_reg * (v > 0.0 ? 1.0 : v < 0.0 ? -1.0 : 0.0);
        }
    }
    res.total = res.le + res.reg;
    res.peak_floats = MemoryStats::peak().load() - peak_base;
    return res;
}

struct PruneReportRow {
    int step = 0;
    double le = 0, reg = 0, total = 0;
    double gate_mean = 0, frac_saturated = 0;
    long long peak_floats = 0;
    double wall_ms = 0;
};

struct LearnResult {
    GateParams lambda;
    std::vector<PruneReportRow> report;
};

// Alg.-style mask learning loop: model weights frozen, Adam on λ with the
// per-group learning rates, fresh gate noise per optimization step.
inline LearnResult learn_mask(const DenoiserModel& m, const NoiseSchedule& s,
                              const std::vector<int>& conditions, const PruneConfig& cfg,
                              const GateConfig& gcfg, std::uint64_t seed,
                              SamplerMode mode = SamplerMode::deterministic) {
    if (conditions.empty()) throw contract_error("learn_mask: no conditions");
    gcfg.validate();
    LearnResult out;
    out.lambda = make_gate_params(m);
    Adam opt(0.0, cfg.weight_decay);
    GateValues ones = GateValues::ones(m);
    std::size_t L = static_cast<std::size_t>(m.cfg.seq_len);
    std::size_t d = static_cast<std::size_t>(m.cfg.d_model);

    double initial_total = -1.0;
    int high_streak = 0;
    Rng base_rng = Rng(seed).derive(0x6d61736bULL);

    for (int step = 0; step < cfg.steps; ++step) {
        auto t0 = std::chrono::steady_clock::now();
        Rng rng = base_rng.derive(static_cast<std::uint64_t>(step));

        std::vector<std::vector<double>> shifts = draw_noise_shifts(out.lambda, gcfg, rng);
        std::vector<PruneItem> items;
        for (int b = 0; b < cfg.batch_size; ++b) {
            PruneItem item;
            item.y = conditions[rng.index(conditions.size())];
            item.z_T = rng.normal_tensor({L, d});
            if (mode == SamplerMode::stochastic_shared) {
                item.eta.resize(static_cast<std::size_t>(s.T));
                for (int t = 1; t <= s.T; ++t)
                    if (s.sigma[t - 1] != 0.0) item.eta[t - 1] = rng.normal_tensor({L, d});
            }
            item.z0_target = rollout(m, s, item.z_T, item.y, ones, item.eta);
            items.push_back(std::move(item));
        }

        EngineResult er =
            cfg.engine == Engine::naive
                ? naive_backprop(m, s, out.lambda, gcfg, shifts, items, cfg.beta_reg)
                : checkpointed_backprop(m, s, out.lambda, gcfg, shifts, items, cfg.beta_reg);

        opt.begin_step();
        for (std::size_t gi = 0; gi < out.lambda.groups.size(); ++gi) {
            GateGroup& grp = out.lambda.groups[gi];
            bool is_head = grp.name.ends_with(".heads");
            double lr = is_head ? cfg.lr_attn : cfg.lr_ffn;
            opt.update(grp.name, grp.lambda, er.grads.groups[gi].lambda, lr);
        }

        // divergence guard
        if (initial_total < 0.0) initial_total = er.total;
        high_streak = er.total > 10.0 * initial_total ? high_streak + 1 : 0;
        if (high_streak >= 20)
            throw divergence_error("learn_mask: loss exceeded 10x initial for 20 steps");

        PruneReportRow row;
        row.step = step;
        row.le = er.le;
        row.reg = er.reg;
        row.total = er.total;
        std::size_t n = 0, sat = 0;
        double mean = 0.0;
        for (const auto& g : out.lambda.groups)
            for (double l : g.lambda.data) {
                double eg = expected_gate(l, gcfg);
                mean += eg;
                sat += (eg == 0.0 || eg == 1.0);
                ++n;
            }
        row.gate_mean = n ? mean / n : 0.0;
        row.frac_saturated = n ? static_cast<double>(sat) / n : 0.0;
        row.peak_floats = er.peak_floats;
        row.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
        out.report.push_back(row);
    }
    return out;
}

}  // namespace ecoprune

#endif
