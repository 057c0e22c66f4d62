#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "attrib/util.hpp"

namespace attrib {

// Dense row-major f64 array. All public operations keep entries finite on
// finite inputs and use a fixed summation order, so repeated calls are
// bit-identical.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double value);

    const std::vector<std::size_t>& shape() const { return shape_; }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t rank() const { return shape_.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    double& at(std::size_t i) { return data_[i]; }
    double at(std::size_t i) const { return data_[i]; }
    double& at(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

    double* row(std::size_t i) { return data_.data() + i * cols(); }
    const double* row(std::size_t i) const { return data_.data() + i * cols(); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    std::string shape_str() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// ---- forward primitives ----

Tensor matmul(const Tensor& a, const Tensor& b);   // [m,k] x [k,n] -> [m,n]
Tensor add(const Tensor& a, const Tensor& b);      // elementwise, same shape
Tensor softmax_rows(const Tensor& x);              // per-row max-subtracted softmax
Tensor gelu(const Tensor& x);                      // x * Phi(x), exact erf form
double gelu_scalar(double x);
double gelu_derivative(double x);                  // Phi(x) + x * phi(x)

// Single-vector layernorm: (x - mean) / sqrt(var + eps) * gamma + beta,
// population variance.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-12);

// ---- vector-Jacobian products ----

Tensor matmul_vjp_a(const Tensor& b, const Tensor& upstream);                 // upstream * b^T
Tensor matmul_vjp_b(const Tensor& a, const Tensor& upstream);                 // a^T * upstream
Tensor softmax_rows_vjp(const Tensor& softmax_out, const Tensor& upstream);
Tensor gelu_vjp(const Tensor& x, const Tensor& upstream);
// Returns (dx, dgamma, dbeta).
struct LayerNormVjp {
    Tensor dx;
    Tensor dgamma;
    Tensor dbeta;
};
LayerNormVjp layernorm_vjp(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           const Tensor& upstream, double eps = 1e-12);

// String-dispatched vjp over the primitive set {matmul, softmax_rows, gelu,
// layernorm, add}; returns one cotangent per input. Unknown ids are a
// contract error.
std::vector<Tensor> vjp(std::string_view primitive_id, const std::vector<Tensor>& inputs,
                        const Tensor& upstream);

// ---- Jacobians ----

// Central-difference Jacobian of f at x, flattened: output [m, n] where
// m = f(x).size(), n = x.size().
Tensor numeric_jacobian(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                        double h = 1e-5);

// Analytic Jacobian of softmax over one probability vector a: J[i][j] = a_i (d_ij - a_j).
Tensor softmax_jacobian(const Tensor& softmax_out_row);
// Analytic Jacobian of layernorm(x; gamma, beta, eps) w.r.t. x.
Tensor layernorm_jacobian(const Tensor& x, const Tensor& gamma, double eps = 1e-12);

}  // namespace attrib
