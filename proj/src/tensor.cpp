#include "attrib/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace attrib {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

void require_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw_numeric(std::string("non-finite values in output of ") + op);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw_contract(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {
    for (std::size_t e : shape_) {
        if (e == 0) throw_contract("tensor extents must be positive, got " + shape_str());
    }
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_product(shape_)) {
        throw_contract("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str());
    }
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

std::size_t Tensor::rows() const {
    if (shape_.size() != 2) throw_contract("rows() on non-matrix tensor " + shape_str());
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (shape_.size() == 2) return shape_[1];
    if (shape_.size() == 1) return shape_[0];
    throw_contract("cols() on tensor of rank " + std::to_string(shape_.size()));
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream ss;
    ss << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) ss << ",";
        ss << shape_[i];
    }
    ss << "]";
    return ss.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw_contract("matmul: expected matrices, got " + a.shape_str() + " and " + b.shape_str());
    }
    std::size_t m = a.shape()[0], k = a.shape()[1];
    std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) {
        throw_contract("matmul: inner extents disagree, " + a.shape_str() + " x " + b.shape_str());
    }
    Tensor out({m, n});
    // i-k-j order: fixed left-to-right accumulation over k, cache friendly.
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (std::size_t kk = 0; kk < k; ++kk) {
            double av = arow[kk];
            const double* brow = b.row(kk);
            for (std::size_t j = 0; j < n; ++j) {
                orow[j] += av * brow[j];
            }
        }
    }
    require_finite(out, "matmul");
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) += b.at(i);
    require_finite(out, "add");
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    std::size_t nrows = x.rank() == 2 ? x.shape()[0] : 1;
    std::size_t ncols = x.cols();
    Tensor out = x;
    for (std::size_t i = 0; i < nrows; ++i) {
        double* row = out.data().data() + i * ncols;
        double mx = row[0];
        for (std::size_t j = 1; j < ncols; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < ncols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < ncols; ++j) row[j] /= sum;
    }
    require_finite(out, "softmax_rows");
    return out;
}

double gelu_scalar(double x) {
    // x * Phi(x) with the exact Gaussian CDF.
    return x * 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
}

double gelu_derivative(double x) {
    static const double inv_sqrt_2pi = 0.3989422804014326779;
    double phi_cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    double phi_pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
    return phi_cdf + x * phi_pdf;
}

Tensor gelu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data()) v = gelu_scalar(v);
    require_finite(out, "gelu");
    return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() != 1) throw_contract("layernorm: expected vector, got " + x.shape_str());
    require_same_shape(x, gamma, "layernorm(gamma)");
    require_same_shape(x, beta, "layernorm(beta)");
    std::size_t n = x.size();
    if (n < 2) throw_contract("layernorm: need at least 2 elements");
    if (eps <= 0.0) throw_contract("layernorm: eps must be positive");
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x.at(i);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = x.at(i) - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    double inv_std = 1.0 / std::sqrt(var + eps);
    Tensor out({n});
    for (std::size_t i = 0; i < n; ++i) {
        out.at(i) = (x.at(i) - mean) * inv_std * gamma.at(i) + beta.at(i);
    }
    require_finite(out, "layernorm");
    return out;
}

Tensor matmul_vjp_a(const Tensor& b, const Tensor& upstream) {
    // dA = upstream * B^T
    std::size_t m = upstream.shape()[0], n = upstream.shape()[1];
    std::size_t k = b.shape()[0];
    if (b.shape()[1] != n) throw_contract("matmul_vjp_a: shape mismatch");
    Tensor out({m, k});
    for (std::size_t i = 0; i < m; ++i) {
        const double* urow = upstream.row(i);
        double* orow = out.row(i);
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double* brow = b.row(kk);
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += urow[j] * brow[j];
            orow[kk] = acc;
        }
    }
    return out;
}

Tensor matmul_vjp_b(const Tensor& a, const Tensor& upstream) {
    // dB = A^T * upstream
    std::size_t m = a.shape()[0], k = a.shape()[1];
    std::size_t n = upstream.shape()[1];
    if (upstream.shape()[0] != m) throw_contract("matmul_vjp_b: shape mismatch");
    Tensor out({k, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.row(i);
        const double* urow = upstream.row(i);
        for (std::size_t kk = 0; kk < k; ++kk) {
            double av = arow[kk];
            double* orow = out.row(kk);
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * urow[j];
        }
    }
    return out;
}

Tensor softmax_rows_vjp(const Tensor& softmax_out, const Tensor& upstream) {
    require_same_shape(softmax_out, upstream, "softmax_rows_vjp");
    std::size_t nrows = softmax_out.rank() == 2 ? softmax_out.shape()[0] : 1;
    std::size_t ncols = softmax_out.cols();
    Tensor out = softmax_out;
    for (std::size_t i = 0; i < nrows; ++i) {
        const double* a = softmax_out.data().data() + i * ncols;
        const double* u = upstream.data().data() + i * ncols;
        double* o = out.data().data() + i * ncols;
        double dot = 0.0;
        for (std::size_t j = 0; j < ncols; ++j) dot += u[j] * a[j];
        for (std::size_t j = 0; j < ncols; ++j) o[j] = a[j] * (u[j] - dot);
    }
    return out;
}

Tensor gelu_vjp(const Tensor& x, const Tensor& upstream) {
    require_same_shape(x, upstream, "gelu_vjp");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.at(i) = gelu_derivative(x.at(i)) * upstream.at(i);
    }
    return out;
}

LayerNormVjp layernorm_vjp(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           const Tensor& upstream, double eps) {
    (void)beta;
    std::size_t n = x.size();
    require_same_shape(x, upstream, "layernorm_vjp");
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x.at(i);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = x.at(i) - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    double inv_std = 1.0 / std::sqrt(var + eps);

    LayerNormVjp result{Tensor({n}), Tensor({n}), Tensor({n})};
    std::vector<double> xhat(n), g(n);
    double g_mean = 0.0, gx_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        xhat[i] = (x.at(i) - mean) * inv_std;
        g[i] = upstream.at(i) * gamma.at(i);
        g_mean += g[i];
        gx_mean += g[i] * xhat[i];
        result.dgamma.at(i) = upstream.at(i) * xhat[i];
        result.dbeta.at(i) = upstream.at(i);
    }
    g_mean /= static_cast<double>(n);
    gx_mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        result.dx.at(i) = inv_std * (g[i] - g_mean - xhat[i] * gx_mean);
    }
    return result;
}

std::vector<Tensor> vjp(std::string_view primitive_id, const std::vector<Tensor>& inputs,
                        const Tensor& upstream) {
    auto need = [&](std::size_t n) {
        if (inputs.size() != n) {
            throw_contract("vjp(" + std::string(primitive_id) + "): expected " + std::to_string(n) +
                           " inputs, got " + std::to_string(inputs.size()));
        }
    };
    if (primitive_id == "matmul") {
        need(2);
        Tensor expect = matmul(inputs[0], inputs[1]);
        if (!expect.same_shape(upstream)) throw_contract("vjp(matmul): upstream shape mismatch");
        return {matmul_vjp_a(inputs[1], upstream), matmul_vjp_b(inputs[0], upstream)};
    }
    if (primitive_id == "softmax_rows") {
        need(1);
        if (!inputs[0].same_shape(upstream)) throw_contract("vjp(softmax_rows): upstream shape mismatch");
        return {softmax_rows_vjp(softmax_rows(inputs[0]), upstream)};
    }
    if (primitive_id == "gelu") {
        need(1);
        if (!inputs[0].same_shape(upstream)) throw_contract("vjp(gelu): upstream shape mismatch");
        return {gelu_vjp(inputs[0], upstream)};
    }
    if (primitive_id == "layernorm") {
        need(3);
        if (!inputs[0].same_shape(upstream)) throw_contract("vjp(layernorm): upstream shape mismatch");
        auto r = layernorm_vjp(inputs[0], inputs[1], inputs[2], upstream);
        return {r.dx, r.dgamma, r.dbeta};
    }
    if (primitive_id == "add") {
        need(2);
        if (!inputs[0].same_shape(upstream)) throw_contract("vjp(add): upstream shape mismatch");
        return {upstream, upstream};
    }
    throw_contract("vjp: unknown primitive id '" + std::string(primitive_id) + "'");
}

Tensor numeric_jacobian(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
    if (h <= 0.0) throw_contract("numeric_jacobian: h must be positive");
    Tensor y0 = f(x);
    if (!y0.all_finite()) throw_numeric("numeric_jacobian: f produced non-finite output");
    std::size_t m = y0.size(), n = x.size();
    Tensor jac({m, n});
    Tensor xp = x;
    for (std::size_t j = 0; j < n; ++j) {
        double orig = x.at(j);
        xp.at(j) = orig + h;
        Tensor yp = f(xp);
        xp.at(j) = orig - h;
        Tensor ym = f(xp);
        xp.at(j) = orig;
        if (!yp.all_finite() || !ym.all_finite()) {
            throw_numeric("numeric_jacobian: f produced non-finite output during perturbation");
        }
        for (std::size_t i = 0; i < m; ++i) {
            jac.at(i, j) = (yp.at(i) - ym.at(i)) / (2.0 * h);
        }
    }
    return jac;
}

Tensor softmax_jacobian(const Tensor& a) {
    std::size_t n = a.size();
    Tensor jac({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            jac.at(i, j) = a.at(i) * ((i == j ? 1.0 : 0.0) - a.at(j));
        }
    }
    return jac;
}

Tensor layernorm_jacobian(const Tensor& x, const Tensor& gamma, double eps) {
    std::size_t n = x.size();
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x.at(i);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = x.at(i) - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    double inv_std = 1.0 / std::sqrt(var + eps);
    double inv_n = 1.0 / static_cast<double>(n);
    std::vector<double> xhat(n);
    for (std::size_t i = 0; i < n; ++i) xhat[i] = (x.at(i) - mean) * inv_std;
    // d y_j / d x_i = gamma_j * inv_std * (d_ij - 1/n - xhat_j * xhat_i / n)
    Tensor jac({n, n});
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            double delta = (i == j) ? 1.0 : 0.0;
            jac.at(j, i) = gamma.at(j) * inv_std * (delta - inv_n - xhat[j] * xhat[i] * inv_n);
        }
    }
    return jac;
}

}  // namespace attrib
