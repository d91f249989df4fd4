#ifndef ECOPRUNE_OPS_HPP
#define ECOPRUNE_OPS_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include "tape.hpp"
#include "tensor.hpp"

namespace ecoprune {

// ---- value-level kernels -------------------------------------------------

inline Tensor matmul_val(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
        throw shape_error("matmul: incompatible operands " + a.shape_str() + " * " +
                          b.shape_str());
    }
    std::size_t R = a.shape[0], K = a.shape[1], C = b.shape[1];
    Tensor out = Tensor::zeros({R, C});
    for (std::size_t i = 0; i < R; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
            double aik = a.data[i * K + k];
            if (aik == 0.0) continue;
            const double* brow = &b.data[k * C];
            double* orow = &out.data[i * C];
            for (std::size_t j = 0; j < C; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

inline Tensor transpose_val(const Tensor& a) {
    Tensor out = Tensor::zeros({a.shape[1], a.shape[0]});
    for (std::size_t i = 0; i < a.shape[0]; ++i)
        for (std::size_t j = 0; j < a.shape[1]; ++j)
            out.data[j * a.shape[0] + i] = a.data[i * a.shape[1] + j];
    return out;
}

inline double gelu_scalar(double x) {
    // exact Gaussian-CDF form
    return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476));
}
inline double gelu_grad_scalar(double x) {
    double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865476));
    double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
    return cdf + x * pdf;
}

inline double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---- differentiable primitives --------------------------------------------

namespace detail {
inline bool any_grad(std::initializer_list<Var> vs) {
    for (Var v : vs)
        if (v.tape->needs_grad(v)) return true;
    return false;
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
    Tape& t = *a.tape;
    Tensor out = matmul_val(t.value(a), t.value(b));
    int ai = a.id, bi = b.id;
    return t.node(std::move(out), detail::any_grad({a, b}),
                  [ai, bi](Tape& tp, const Tensor& cot) {
                      tp.accumulate(ai, matmul_val(cot, transpose_val(tp.value(bi))));
                      tp.accumulate(bi, matmul_val(transpose_val(tp.value(ai)), cot));
                  });
}

inline Var add(Var a, Var b) {
    Tape& t = *a.tape;
    Tensor out = t.value(a) + t.value(b);
    int ai = a.id, bi = b.id;
    return t.node(std::move(out), detail::any_grad({a, b}),
                  [ai, bi](Tape& tp, const Tensor& cot) {
                      tp.accumulate(ai, cot);
                      tp.accumulate(bi, cot);
                  });
}

inline Var sub(Var a, Var b) {
    Tape& t = *a.tape;
    Tensor out = t.value(a) - t.value(b);
    int ai = a.id, bi = b.id;
    return t.node(std::move(out), detail::any_grad({a, b}),
                  [ai, bi](Tape& tp, const Tensor& cot) {
                      tp.accumulate(ai, cot);
                      Tensor neg = -1.0 * cot;
                      tp.accumulate(bi, neg);
                  });
}

inline Var mul(Var a, Var b) {
    Tape& t = *a.tape;
    check_same_shape("mul", t.value(a), t.value(b));
    Tensor out = t.value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= t.value(b).data[i];
    int ai = a.id, bi = b.id;
    return t.node(std::move(out), detail::any_grad({a, b}),
                  [ai, bi](Tape& tp, const Tensor& cot) {
                      Tensor ga = cot, gb = cot;
                      for (std::size_t i = 0; i < cot.numel(); ++i) {
                          ga.data[i] *= tp.value(bi).data[i];
                          gb.data[i] *= tp.value(ai).data[i];
                      }
                      tp.accumulate(ai, ga);
                      tp.accumulate(bi, gb);
                  });
}

// k*x + c elementwise, with constants k and c
inline Var affine(Var a, double k, double c) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (double& v : out.data) v = k * v + c;
    int ai = a.id;
    return t.node(std::move(out), t.needs_grad(a),
                  [ai, k](Tape& tp, const Tensor& cot) {
                      tp.accumulate(ai, k * cot);
                  });
}

inline Var scalar_mul(Var a, double k) { return affine(a, k, 0.0); }

inline Var add_constant(Var a, const Tensor& c) {
    Tape& t = *a.tape;
    Tensor out = t.value(a) + c;
    int ai = a.id;
    return t.node(std::move(out), t.needs_grad(a),
                  [ai](Tape& tp, const Tensor& cot) { tp.accumulate(ai, cot); });
}

// x: R×C plus row vector b of length C, broadcast over rows
inline Var add_rows(Var x, Var b) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    const Tensor& bv = t.value(b);
    if (xv.rank() != 2 || bv.rank() != 1 || bv.shape[0] != xv.shape[1])
        throw shape_error("add_rows: " + xv.shape_str() + " + " + bv.shape_str());
    Tensor out = xv;
    std::size_t R = xv.shape[0], C = xv.shape[1];
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) out.data[i * C + j] += bv.data[j];
    int xi = x.id, bi = b.id;
    return t.node(std::move(out), detail::any_grad({x, b}),
                  [xi, bi, R, C](Tape& tp, const Tensor& cot) {
                      tp.accumulate(xi, cot);
                      Tensor gb = Tensor::zeros({C});
                      for (std::size_t i = 0; i < R; ++i)
                          for (std::size_t j = 0; j < C; ++j)
                              gb.data[j] += cot.data[i * C + j];
                      tp.accumulate(bi, gb);
                  });
}

// x: R×C times gate vector g of length C, broadcast over rows
inline Var mul_rows(Var x, Var g) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    const Tensor& gv = t.value(g);
    if (xv.rank() != 2 || gv.rank() != 1 || gv.shape[0] != xv.shape[1])
        throw shape_error("mul_rows: " + xv.shape_str() + " * " + gv.shape_str());
    Tensor out = xv;
    std::size_t R = xv.shape[0], C = xv.shape[1];
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) out.data[i * C + j] *= gv.data[j];
    int xi = x.id, gi = g.id;
    return t.node(std::move(out), detail::any_grad({x, g}),
                  [xi, gi, R, C](Tape& tp, const Tensor& cot) {
                      const Tensor& xv2 = tp.value(xi);
                      const Tensor& gv2 = tp.value(gi);
                      Tensor gx = cot;
                      Tensor gg = Tensor::zeros({C});
                      for (std::size_t i = 0; i < R; ++i)
                          for (std::size_t j = 0; j < C; ++j) {
                              gx.data[i * C + j] *= gv2.data[j];
                              gg.data[j] += cot.data[i * C + j] * xv2.data[i * C + j];
                          }
                      tp.accumulate(xi, gx);
                      tp.accumulate(gi, gg);
                  });
}

// scale a tensor by a scalar variable (differentiable in both)
inline Var mul_scalar_var(Var x, Var s) {
    Tape& t = *x.tape;
    if (t.value(s).numel() != 1) throw shape_error("mul_scalar_var: s is not scalar");
    double sv = t.value(s).data[0];
    Tensor out = sv * t.value(x);
    int xi = x.id, si = s.id;
    return t.node(std::move(out), detail::any_grad({x, s}),
                  [xi, si](Tape& tp, const Tensor& cot) {
                      double sv2 = tp.value(si).data[0];
                      tp.accumulate(xi, sv2 * cot);
                      Tensor gs = Tensor(tp.value(si).shape, {dot(cot, tp.value(xi))});
                      tp.accumulate(si, gs);
                  });
}

inline Var element(Var x, std::size_t i) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    if (i >= xv.numel()) throw shape_error("element: index out of range");
    int xi = x.id;
    return t.node(Tensor::scalar(xv.data[i]), t.needs_grad(x),
                  [xi, i](Tape& tp, const Tensor& cot) {
                      Tensor g = Tensor::zeros(tp.value(xi).shape);
                      g.data[i] = cot.data[0];
                      tp.accumulate(xi, g);
                  });
}

// concatenation along the last axis (vectors or matrices with equal rows)
inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw contract_error("concat_cols: no operands");
    Tape& t = *parts[0].tape;
    const Tensor& first = t.value(parts[0]);
    bool needs = false;
    std::size_t R = first.rank() == 2 ? first.shape[0] : 1;
    std::size_t total = 0;
    std::vector<std::size_t> widths;
    for (Var p : parts) {
        const Tensor& v = t.value(p);
        if (v.rank() != first.rank() || (v.rank() == 2 && v.shape[0] != R))
            throw shape_error("concat_cols: mismatched operand " + v.shape_str());
        widths.push_back(v.cols());
        total += v.cols();
        needs = needs || t.needs_grad(p);
    }
    Tensor out = first.rank() == 2 ? Tensor::zeros({R, total}) : Tensor::zeros({total});
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Tensor& v = t.value(parts[p]);
        std::size_t C = widths[p];
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < C; ++j)
                out.data[i * total + off + j] = v.data[i * C + j];
        off += C;
    }
    std::vector<int> ids;
    for (Var p : parts) ids.push_back(p.id);
    return t.node(std::move(out), needs,
                  [ids, widths, R, total](Tape& tp, const Tensor& cot) {
                      std::size_t off2 = 0;
                      for (std::size_t p = 0; p < ids.size(); ++p) {
                          std::size_t C = widths[p];
                          Tensor g = Tensor::zeros(tp.value(ids[p]).shape);
                          for (std::size_t i = 0; i < R; ++i)
                              for (std::size_t j = 0; j < C; ++j)
                                  g.data[i * C + j] = cot.data[i * total + off2 + j];
                          tp.accumulate(ids[p], g);
                          off2 += C;
                      }
                  });
}

inline Var slice_cols(Var x, std::size_t start, std::size_t len) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    std::size_t C = xv.cols();
    if (start + len > C) throw shape_error("slice_cols: range exceeds " + xv.shape_str());
    std::size_t R = xv.rank() == 2 ? xv.shape[0] : 1;
    Tensor out = xv.rank() == 2 ? Tensor::zeros({R, len}) : Tensor::zeros({len});
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < len; ++j)
            out.data[i * len + j] = xv.data[i * C + start + j];
    int xi = x.id;
    return t.node(std::move(out), t.needs_grad(x),
                  [xi, start, len, R, C](Tape& tp, const Tensor& cot) {
                      Tensor g = Tensor::zeros(tp.value(xi).shape);
                      for (std::size_t i = 0; i < R; ++i)
                          for (std::size_t j = 0; j < len; ++j)
                              g.data[i * C + start + j] = cot.data[i * len + j];
                      tp.accumulate(xi, g);
                  });
}

// split along the last axis into equal-width pieces
inline std::vector<Var> split_cols(Var x, std::size_t pieces) {
    Tape& t = *x.tape;
    std::size_t C = t.value(x).cols();
    if (pieces == 0 || C % pieces != 0)
        throw shape_error("split_cols: width not divisible into pieces");
    std::size_t w = C / pieces;
    std::vector<Var> out;
    for (std::size_t p = 0; p < pieces; ++p) out.push_back(slice_cols(x, p * w, w));
    return out;
}

inline Var reshape(Var x, std::vector<std::size_t> shape) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    if (Tensor::numel_of(shape) != xv.numel())
        throw shape_error("reshape: element count mismatch");
    Tensor out(shape, xv.data);
    int xi = x.id;
    return t.node(std::move(out), t.needs_grad(x),
                  [xi](Tape& tp, const Tensor& cot) {
                      Tensor g(tp.value(xi).shape, cot.data);
                      tp.accumulate(xi, g);
                  });
}

inline Var softmax_rows(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    std::size_t C = xv.cols();
    std::size_t R = xv.numel() / C;
    Tensor out = xv;
    for (std::size_t i = 0; i < R; ++i) {
        double* row = &out.data[i * C];
        double m = *std::max_element(row, row + C);
        double s = 0.0;
        for (std::size_t j = 0; j < C; ++j) s += (row[j] = std::exp(row[j] - m));
        for (std::size_t j = 0; j < C; ++j) row[j] /= s;
    }
    int xi = x.id;
    int self = static_cast<int>(t.size());  // the node being created
    return t.node(std::move(out), t.needs_grad(x),
                  [xi, self, R, C](Tape& tp, const Tensor& cot) {
                      const Tensor& y = tp.value(self);
                      Tensor g = cot;
                      for (std::size_t i = 0; i < R; ++i) {
                          double sdot = 0.0;
                          for (std::size_t j = 0; j < C; ++j)
                              sdot += cot.data[i * C + j] * y.data[i * C + j];
                          for (std::size_t j = 0; j < C; ++j)
                              g.data[i * C + j] =
                                  y.data[i * C + j] * (cot.data[i * C + j] - sdot);
                      }
                      tp.accumulate(xi, g);
                  });
}

namespace detail {
template <typename F, typename G>
Var unary_elementwise(Var x, F fwd, G grad_from_input) {
    Tape& t = *x.tape;
    Tensor out = t.value(x);
    for (double& v : out.data) v = fwd(v);
    int xi = x.id;
    return t.node(std::move(out), t.needs_grad(x),
                  [xi, grad_from_input](Tape& tp, const Tensor& cot) {
                      Tensor g = cot;
                      const Tensor& xv = tp.value(xi);
                      for (std::size_t i = 0; i < g.numel(); ++i)
                          g.data[i] *= grad_from_input(xv.data[i]);
                      tp.accumulate(xi, g);
                  });
}
}  // namespace detail

inline Var sigmoid(Var x) {
    return detail::unary_elementwise(
        x, [](double v) { return sigmoid_scalar(v); },
        [](double v) {
            double s = sigmoid_scalar(v);
            return s * (1.0 - s);
        });
}

inline Var logv(Var x) {
    return detail::unary_elementwise(
        x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

inline Var expv(Var x) {
    return detail::unary_elementwise(
        x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

inline Var gelu(Var x) {
    return detail::unary_elementwise(
        x, [](double v) { return gelu_scalar(v); },
        [](double v) { return gelu_grad_scalar(v); });
}

// gradient passes through on the closed interval [0,1]
inline Var clamp01(Var x) {
    return detail::unary_elementwise(
        x, [](double v) { return std::min(1.0, std::max(0.0, v)); },
        [](double v) { return (v >= 0.0 && v <= 1.0) ? 1.0 : 0.0; });
}

inline Var layer_norm(Var x, Var gain, Var bias) {
    constexpr double eps = 1e-5;
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    const Tensor& gv = t.value(gain);
    const Tensor& bv = t.value(bias);
    std::size_t C = xv.cols();
    std::size_t R = xv.numel() / C;
    if (gv.numel() != C || bv.numel() != C)
        throw shape_error("layer_norm: gain/bias length != " + xv.shape_str());
    Tensor out = xv;
    for (std::size_t i = 0; i < R; ++i) {
        double mu = 0.0, var = 0.0;
        for (std::size_t j = 0; j < C; ++j) mu += xv.data[i * C + j];
        mu /= C;
        for (std::size_t j = 0; j < C; ++j) {
            double d = xv.data[i * C + j] - mu;
            var += d * d;
        }
        var /= C;
        double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < C; ++j)
            out.data[i * C + j] = (xv.data[i * C + j] - mu) * inv * gv.data[j] + bv.data[j];
    }
    int xi = x.id, gi = gain.id, bi = bias.id;
    return t.node(std::move(out), detail::any_grad({x, gain, bias}),
                  [xi, gi, bi, R, C](Tape& tp, const Tensor& cot) {
                      const Tensor& xv2 = tp.value(xi);
                      const Tensor& gv2 = tp.value(gi);
                      Tensor gx = Tensor::zeros(xv2.shape);
                      Tensor gg = Tensor::zeros({C});
                      Tensor gb = Tensor::zeros({C});
                      for (std::size_t i = 0; i < R; ++i) {
                          double mu = 0.0, var = 0.0;
                          for (std::size_t j = 0; j < C; ++j) mu += xv2.data[i * C + j];
                          mu /= C;
                          for (std::size_t j = 0; j < C; ++j) {
                              double d = xv2.data[i * C + j] - mu;
                              var += d * d;
                          }
                          var /= C;
                          double inv = 1.0 / std::sqrt(var + eps);
                          double m1 = 0.0, m2 = 0.0;  // means of g⊙cot and g⊙cot⊙x̂
                          std::vector<double> xhat(C), gc(C);
                          for (std::size_t j = 0; j < C; ++j) {
                              xhat[j] = (xv2.data[i * C + j] - mu) * inv;
                              gc[j] = cot.data[i * C + j] * gv2.data[j];
                              m1 += gc[j];
                              m2 += gc[j] * xhat[j];
                              gg.data[j] += cot.data[i * C + j] * xhat[j];
                              gb.data[j] += cot.data[i * C + j];
                          }
                          m1 /= C;
                          m2 /= C;
                          for (std::size_t j = 0; j < C; ++j)
                              gx.data[i * C + j] = inv * (gc[j] - m1 - xhat[j] * m2);
                      }
                      tp.accumulate(xi, gx);
                      tp.accumulate(gi, gg);
                      tp.accumulate(bi, gb);
                  });
}

inline Var sum_all(Var x) {
    Tape& t = *x.tape;
    double s = 0.0;
    for (double v : t.value(x).data) s += v;
    int xi = x.id;
    return t.node(Tensor::scalar(s), t.needs_grad(x),
                  [xi](Tape& tp, const Tensor& cot) {
                      tp.accumulate(xi, Tensor::full(tp.value(xi).shape, cot.data[0]));
                  });
}

inline Var mean_all(Var x) {
    Tape& t = *x.tape;
    std::size_t n = t.value(x).numel();
    return scalar_mul(sum_all(x), 1.0 / static_cast<double>(n));
}

inline Var l1_norm(Var x) {
    Tape& t = *x.tape;
    double s = 0.0;
    for (double v : t.value(x).data) s += std::fabs(v);
    int xi = x.id;
    return t.node(Tensor::scalar(s), t.needs_grad(x),
                  [xi](Tape& tp, const Tensor& cot) {
                      Tensor g = Tensor::zeros(tp.value(xi).shape);
                      const Tensor& xv = tp.value(xi);
                      for (std::size_t i = 0; i < g.numel(); ++i) {
                          double v = xv.data[i];
                          g.data[i] = cot.data[0] * (v > 0.0 ? 1.0 : v < 0.0 ? -1.0 : 0.0);
                      }
                      tp.accumulate(xi, g);
                  });
}

inline Var l2_norm(Var x) {
    Tape& t = *x.tape;
    double s = frob_norm(t.value(x));
    int xi = x.id;
    return t.node(Tensor::scalar(s), t.needs_grad(x),
                  [xi, s](Tape& tp, const Tensor& cot) {
                      if (s == 0.0) return;  // subgradient 0 at the origin
                      Tensor g = (cot.data[0] / s) * tp.value(xi);
                      tp.accumulate(xi, g);
                  });
}

// row lookup in an embedding table; gradient scatters into the row
inline Var embed_row(Var table, std::size_t idx) {
    Tape& t = *table.tape;
    const Tensor& tv = t.value(table);
    if (tv.rank() != 2 || idx >= tv.shape[0])
        throw shape_error("embed_row: index out of table " + tv.shape_str());
    std::size_t C = tv.shape[1];
    Tensor out = Tensor::zeros({C});
    for (std::size_t j = 0; j < C; ++j) out.data[j] = tv.data[idx * C + j];
    int ti = table.id;
    return t.node(std::move(out), t.needs_grad(table),
                  [ti, idx, C](Tape& tp, const Tensor& cot) {
                      Tensor g = Tensor::zeros(tp.value(ti).shape);
                      for (std::size_t j = 0; j < C; ++j) g.data[idx * C + j] = cot.data[j];
                      tp.accumulate(ti, g);
                  });
}

}  // namespace ecoprune

#endif
