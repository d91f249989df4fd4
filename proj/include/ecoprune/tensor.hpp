#ifndef ECOPRUNE_TENSOR_HPP
#define ECOPRUNE_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecoprune {

struct shape_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct domain_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct contract_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major array of doubles. Rank 0 = scalar, rank 1 = vector,
// rank 2 = matrix; nothing higher is needed here.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != data.size()) {
            throw shape_error("tensor: shape/data length mismatch");
        }
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        std::size_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }
    static Tensor full(std::vector<std::size_t> s, double v) {
        std::size_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<double>(n, v));
    }
    static Tensor scalar(double v) { return Tensor({}, {v}); }
    static Tensor vec(std::vector<double> d) {
        std::size_t n = d.size();
        return Tensor({n}, std::move(d));
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }

    double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    double item() const {
        if (numel() != 1) throw contract_error("item(): tensor is not a scalar");
        return data[0];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i)
            os << (i ? "x" : "") << shape[i];
        os << "]";
        return os.str();
    }
};

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw shape_error(std::string(op) + ": shape mismatch " + a.shape_str() +
                          " vs " + b.shape_str());
    }
}

inline double dot(const Tensor& a, const Tensor& b) {
    check_same_shape("dot", a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    Tensor r = a;
    for (std::size_t i = 0; i < r.numel(); ++i) r.data[i] += b.data[i];
    return r;
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    Tensor r = a;
    for (std::size_t i = 0; i < r.numel(); ++i) r.data[i] -= b.data[i];
    return r;
}

inline Tensor operator*(double k, const Tensor& a) {
    Tensor r = a;
    for (double& v : r.data) v *= k;
    return r;
}

inline double frob_norm(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return std::sqrt(s);
}

}  // namespace ecoprune

#endif
