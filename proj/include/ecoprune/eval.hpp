#ifndef ECOPRUNE_EVAL_HPP
#define ECOPRUNE_EVAL_HPP

#include <cmath>
#include <vector>

#include "compact.hpp"
#include "denoiser.hpp"
#include "diffusion.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace ecoprune {

struct EvalRow {
    int condition = 0;
    double latent_mse = 0.0;
    double moment_distance = 0.0;
    long long params_base = 0, params_other = 0;
    long long flops_base = 0, flops_other = 0;
};

namespace detail {
// mean vector and covariance over flattened samples
struct Moments {
    std::vector<double> mu;
    std::vector<double> cov;  // D×D row-major
};

inline Moments moments_of(const std::vector<Tensor>& samples) {
    std::size_t n = samples.size(), D = samples[0].numel();
    Moments mo;
    mo.mu.assign(D, 0.0);
    mo.cov.assign(D * D, 0.0);
    for (const auto& s : samples)
        for (std::size_t i = 0; i < D; ++i) mo.mu[i] += s.data[i];
    for (double& v : mo.mu) v /= n;
    for (const auto& s : samples)
        for (std::size_t i = 0; i < D; ++i) {
            double di = s.data[i] - mo.mu[i];
            for (std::size_t j = 0; j < D; ++j)
                mo.cov[i * D + j] += di * (s.data[j] - mo.mu[j]);
        }
    for (double& v : mo.cov) v /= n;
    return mo;
}
}  // namespace detail

// Paired-trajectory comparison: each sample shares z_T between the two
// models, deterministic sampler, so differences are a pure function of the
// pruning. Surrogate metrics replace the image-space scores.
inline std::vector<EvalRow> eval_run(const DenoiserModel& base, const DenoiserModel& other,
                                     const GateValues& base_gates,
                                     const GateValues& other_gates, const NoiseSchedule& s,
                                     int n_samples, const std::vector<int>& conditions,
                                     std::uint64_t seed) {
    long long pb = count_params(base), po = count_params(other);
    long long fb = estimate_flops(base, s.T), fo = estimate_flops(other, s.T);
    std::vector<EvalRow> rows;
    for (int y : conditions) {
        if (y < 0 || y >= base.cfg.n_conditions)
            throw domain_error("eval_run: condition id out of range");
        std::vector<Tensor> zb(n_samples), zo(n_samples);
        std::vector<double> sq(n_samples);
        parallel_for(static_cast<std::size_t>(n_samples), [&](std::size_t i) {
            Rng r = Rng(seed).derive(static_cast<std::uint64_t>(y), i);
            Tensor z_T = r.normal_tensor({static_cast<std::size_t>(base.cfg.seq_len),
                                          static_cast<std::size_t>(base.cfg.d_model)});
            zb[i] = full_sample(s, base, z_T, y, base_gates);
            zo[i] = full_sample(s, other, z_T, y, other_gates);
            double acc = 0.0;
            for (std::size_t k = 0; k < zb[i].numel(); ++k) {
                double d = zb[i].data[k] - zo[i].data[k];
                acc += d * d;
            }
            sq[i] = acc / static_cast<double>(zb[i].numel());
        });
        EvalRow row;
        row.condition = y;
        for (double v : sq) row.latent_mse += v;
        row.latent_mse /= n_samples;
        auto mb = detail::moments_of(zb);
        auto mo = detail::moments_of(zo);
        double dmu = 0.0, dcov = 0.0;
        for (std::size_t i = 0; i < mb.mu.size(); ++i) {
            double d = mb.mu[i] - mo.mu[i];
            dmu += d * d;
        }
        for (std::size_t i = 0; i < mb.cov.size(); ++i) {
            double d = mb.cov[i] - mo.cov[i];
            dcov += d * d;
        }
        row.moment_distance = std::sqrt(dmu) + std::sqrt(dcov);
        row.params_base = pb;
        row.params_other = po;
        row.flops_base = fb;
        row.flops_other = fo;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace ecoprune

#endif
