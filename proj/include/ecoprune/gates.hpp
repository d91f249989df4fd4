#ifndef ECOPRUNE_GATES_HPP
#define ECOPRUNE_GATES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "ops.hpp"
#include "rng.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace ecoprune {

// Constants of the stretched/clamped logistic-noise gate distribution.
struct GateConfig {
    double alpha_temp = 1.0;   // temperature
    double zeta = 1.1;         // upper stretch
    double gamma = -0.1;       // lower stretch
    double delta = 0.5;        // noise steepness
    double beta_stretch = 0.83;  // exponent constant inside the complexity loss

    void validate() const {
        if (!(zeta > 1.0)) throw domain_error("gate config: zeta must exceed 1");
        if (!(gamma < 0.0)) throw domain_error("gate config: gamma must be negative");
        if (!(delta > 0.0)) throw domain_error("gate config: delta must be positive");
        if (!(alpha_temp > 0.0)) throw domain_error("gate config: alpha must be positive");
    }
};

// One named group of continuous mask control variables (per block: the head
// gates or the FFN neuron gates).
struct GateGroup {
    std::string name;
    Tensor lambda;  // rank-1
};

struct GateParams {
    std::vector<GateGroup> groups;

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& g : groups) n += g.lambda.numel();
        return n;
    }

    std::vector<double> flat() const {
        std::vector<double> out;
        for (const auto& g : groups)
            out.insert(out.end(), g.lambda.data.begin(), g.lambda.data.end());
        return out;
    }
};

// additive shift contributed by the uniform noise draw
inline double gate_noise_shift(double u, const GateConfig& cfg) {
    return std::log(u + cfg.delta) - std::log(1.0 - u + cfg.delta);
}

inline double sample_gate(double lambda, double u, const GateConfig& cfg) {
    double s = sigmoid_scalar((gate_noise_shift(u, cfg) + lambda) / cfg.alpha_temp);
    double stretched = s * (cfg.zeta - cfg.gamma) + cfg.gamma;
    return std::min(1.0, std::max(0.0, stretched));
}

// noise-free path (u = 0.5); used for evaluation and gradient checks
inline double expected_gate(double lambda, const GateConfig& cfg) {
    return sample_gate(lambda, 0.5, cfg);
}

// Differentiable gate vector on a tape. noise_shift carries the per-unit
// precomputed log-ratio terms; they are constants w.r.t. lambda, so one
// mask realization stays fixed across a whole trajectory.
inline Var gate_vector(Tape& t, Var lambda_leaf, const std::vector<double>& noise_shift,
                       const GateConfig& cfg) {
    const Tensor& lv = t.value(lambda_leaf);
    if (lv.numel() != noise_shift.size())
        throw shape_error("gate_vector: noise_shift length != lambda length");
    Tensor shift = Tensor::vec(noise_shift);
    Var pre = scalar_mul(add_constant(lambda_leaf, shift), 1.0 / cfg.alpha_temp);
    Var stretched = affine(sigmoid(pre), cfg.zeta - cfg.gamma, cfg.gamma);
    return clamp01(stretched);
}

// Expected-gates complexity loss; defined only for strictly positive lambda.
inline double l0_loss(const GateParams& gp, const GateConfig& cfg) {
    double shift = -cfg.beta_stretch * std::log(-cfg.gamma / cfg.zeta);
    double total = 0.0;
    for (const auto& g : gp.groups) {
        for (double l : g.lambda.data) {
            if (l <= 0.0)
                throw domain_error("l0_loss: lambda <= 0 in group " + g.name);
            total += sigmoid_scalar(std::log(l) + shift);
        }
    }
    return total;
}

inline double l1_regularizer(const GateParams& gp) {
    double total = 0.0;
    for (const auto& g : gp.groups)
        for (double l : g.lambda.data) total += std::fabs(l);
    return total;
}

enum class ThresholdMode { global, local };

struct BinaryMask {
    struct Group {
        std::string name;
        std::vector<std::uint8_t> bits;
    };
    std::vector<Group> groups;
    double achieved_sparsity = 0.0;

    const Group& find(const std::string& name) const {
        for (const auto& g : groups)
            if (g.name == name) return g;
        throw contract_error("mask: no group named " + name);
    }
};

// Discretize lambda to bits at a target sparsity. The pruned count per pool
// is exactly floor(n * target); ties rank by stable unit index, lower index
// pruned first.
inline BinaryMask threshold_mask(const GateParams& gp, double target_sparsity,
                                 ThresholdMode mode) {
    if (!(target_sparsity >= 0.0 && target_sparsity < 1.0))
        throw domain_error("threshold_mask: target sparsity outside [0,1)");
    BinaryMask mask;
    for (const auto& g : gp.groups)
        mask.groups.push_back({g.name, std::vector<std::uint8_t>(g.lambda.numel(), 1)});

    auto prune_pool = [&](const std::vector<std::pair<double, std::pair<std::size_t, std::size_t>>>& pool) {
        // pool entries: (lambda, (group index, unit index))
        auto sorted = pool;
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        std::size_t k = static_cast<std::size_t>(
            std::floor(static_cast<double>(pool.size()) * target_sparsity));
        for (std::size_t i = 0; i < k; ++i) {
            auto [gi, ui] = sorted[i].second;
            mask.groups[gi].bits[ui] = 0;
        }
    };

    if (mode == ThresholdMode::global) {
        std::vector<std::pair<double, std::pair<std::size_t, std::size_t>>> pool;
        for (std::size_t gi = 0; gi < gp.groups.size(); ++gi)
            for (std::size_t ui = 0; ui < gp.groups[gi].lambda.numel(); ++ui)
                pool.push_back({gp.groups[gi].lambda.data[ui], {gi, ui}});
        prune_pool(pool);
    } else {
        for (std::size_t gi = 0; gi < gp.groups.size(); ++gi) {
            std::vector<std::pair<double, std::pair<std::size_t, std::size_t>>> pool;
            for (std::size_t ui = 0; ui < gp.groups[gi].lambda.numel(); ++ui)
                pool.push_back({gp.groups[gi].lambda.data[ui], {gi, ui}});
            prune_pool(pool);
        }
    }

    std::size_t zeros = 0, n = 0;
    for (const auto& g : mask.groups) {
        n += g.bits.size();
        for (auto b : g.bits) zeros += (b == 0);
    }
    mask.achieved_sparsity = n ? static_cast<double>(zeros) / static_cast<double>(n) : 0.0;
    return mask;
}

// fresh uniform draws for every gate, one realization per optimization step
inline std::vector<std::vector<double>> draw_noise_shifts(const GateParams& gp,
                                                          const GateConfig& cfg, Rng& rng) {
    std::vector<std::vector<double>> shifts;
    for (const auto& g : gp.groups) {
        std::vector<double> s(g.lambda.numel());
        for (double& v : s) v = gate_noise_shift(rng.uniform(), cfg);
        shifts.push_back(std::move(s));
    }
    return shifts;
}

inline std::vector<std::vector<double>> zero_noise_shifts(const GateParams& gp,
                                                          const GateConfig& cfg) {
    std::vector<std::vector<double>> shifts;
    for (const auto& g : gp.groups)
        shifts.push_back(std::vector<double>(g.lambda.numel(), gate_noise_shift(0.5, cfg)));
    return shifts;
}

}  // namespace ecoprune

#endif
