#ifndef ECOPRUNE_GRAD_CHECK_HPP
#define ECOPRUNE_GRAD_CHECK_HPP

#include <functional>
#include <vector>

#include "ops.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace ecoprune {

// Central-difference gradient of a scalar function; the independent oracle
// every backward rule is checked against.
inline Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                         const Tensor& x, double h = 1e-6) {
    Tensor g = Tensor::zeros(x.shape);
    Tensor xp = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double orig = xp.data[i];
        xp.data[i] = orig + h;
        double fp = f(xp);
        xp.data[i] = orig - h;
        double fm = f(xp);
        xp.data[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw numeric_error("finite_difference_gradient: non-finite evaluation");
        g.data[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// Single-step vector-Jacobian product: records f on a throwaway tape, pulls
// the cotangent back, and returns one cotangent per input. Nothing of the
// local graph survives the call.
template <typename F>
std::vector<Tensor> vjp_step(F&& f, const std::vector<Tensor>& inputs,
                             const Tensor& cotangent) {
    Tape tape;
    std::vector<Var> in_vars;
    in_vars.reserve(inputs.size());
    for (const Tensor& in : inputs) in_vars.push_back(tape.leaf(in, true));
    Var out = f(tape, in_vars);
    check_same_shape("vjp_step cotangent", tape.value(out), cotangent);
    // seed the pullback with the given cotangent via a dot-product head
    Var cot_leaf = tape.leaf(cotangent, false);
    Var head = sum_all(mul(reshape(out, {cotangent.numel()}),
                           reshape(cot_leaf, {cotangent.numel()})));
    tape.backward(head);
    std::vector<Tensor> cots;
    cots.reserve(inputs.size());
    for (Var v : in_vars) cots.push_back(tape.grad(v));
    return cots;
}

inline double rel_err(double a, double b, double floor_abs = 1e-9) {
    double denom = std::max({std::fabs(a), std::fabs(b), floor_abs});
    return std::fabs(a - b) / denom;
}

inline double max_rel_err(const Tensor& a, const Tensor& b, double floor_abs = 1e-9) {
    check_same_shape("max_rel_err", a, b);
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, rel_err(a.data[i], b.data[i], floor_abs));
    return m;
}

}  // namespace ecoprune

#endif
