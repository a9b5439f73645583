#include "spectradiff/gradcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kernels.hpp"
#include "spectradiff/errors.hpp"

namespace spectradiff::ops {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                             shape_string(b.shape()) + " differ");
    }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
    if (x.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             ", got " + shape_string(x.shape()));
    }
}

/// Shared pattern for elementwise unary ops: forward value and local derivative
/// computed from (input, output).
template <class Forward, class Derivative>
Tensor unary(Graph& g, const Tensor& x, Forward forward, Derivative derivative) {
    Tensor out = Tensor::zeros(x.shape());
    auto xd = x.data();
    auto od = out.data();
    for (std::size_t i = 0; i < xd.size(); ++i) {
        od[i] = forward(xd[i]);
    }
    if (g.tracks({&x})) {
        g.record({x}, out, [x, out, derivative]() {
            auto go = out.grad();
            auto gx = x.grad();
            auto xv = x.data();
            auto ov = out.data();
            for (std::size_t i = 0; i < go.size(); ++i) {
                gx[i] += go[i] * derivative(xv[i], ov[i]);
            }
        });
    }
    return out;
}

}  // namespace

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
    require_rank(b, 2, "matmul");
    const std::size_t k = a.shape().back();
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    }
    const std::size_t n = b.dim(1);
    const std::size_t m = a.numel() / k;
    Shape out_shape = a.shape();
    out_shape.back() = n;
    Tensor out = Tensor::zeros(out_shape);
    kernels::gemm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n, false);
    if (g.tracks({&a, &b})) {
        g.record({a, b}, out, [a, b, out, m, k, n]() {
            const double* go = out.grad().data();
            if (a.requires_grad()) {
                kernels::gemm_nt(go, b.data().data(), a.grad().data(), m, n, k, true);
            }
            if (b.requires_grad()) {
                kernels::gemm_tn(a.data().data(), go, b.grad().data(), k, m, n, true);
            }
        });
    }
    return out;
}

Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias) {
    require_rank(bias, 1, "add_bias");
    const std::size_t n = x.shape().back();
    if (bias.dim(0) != n) {
        throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " vs input " +
                             shape_string(x.shape()));
    }
    Tensor out = x.detach();
    auto od = out.data();
    auto bd = bias.data();
    for (std::size_t i = 0; i < od.size(); ++i) {
        od[i] += bd[i % n];
    }
    if (g.tracks({&x, &bias})) {
        g.record({x, bias}, out, [x, bias, out, n]() {
            auto go = out.grad();
            if (x.requires_grad()) {
                auto gx = x.grad();
                for (std::size_t i = 0; i < go.size(); ++i) {
                    gx[i] += go[i];
                }
            }
            if (bias.requires_grad()) {
                auto gb = bias.grad();
                for (std::size_t i = 0; i < go.size(); ++i) {
                    gb[i % n] += go[i];
                }
            }
        });
    }
    return out;
}

Tensor linear(Graph& g, const Tensor& x, const Tensor& weight, const Tensor& bias) {
    Tensor y = matmul(g, x, weight);
    return bias.defined() ? add_bias(g, y, bias) : y;
}

Tensor bmm(Graph& g, const Tensor& a, const Tensor& b) {
    require_rank(a, 3, "bmm");
    require_rank(b, 3, "bmm");
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    if (b.dim(0) != batch || b.dim(1) != k) {
        throw DimensionError("bmm: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    }
    Tensor out = Tensor::zeros({batch, m, n});
    for (std::size_t i = 0; i < batch; ++i) {
        kernels::gemm_nn(a.data().data() + i * m * k, b.data().data() + i * k * n,
                         out.data().data() + i * m * n, m, k, n, false);
    }
    if (g.tracks({&a, &b})) {
        g.record({a, b}, out, [a, b, out, batch, m, k, n]() {
            const double* go = out.grad().data();
            for (std::size_t i = 0; i < batch; ++i) {
                if (a.requires_grad()) {
                    kernels::gemm_nt(go + i * m * n, b.data().data() + i * k * n,
                                     a.grad().data() + i * m * k, m, n, k, true);
                }
                if (b.requires_grad()) {
                    kernels::gemm_tn(a.data().data() + i * m * k, go + i * m * n,
                                     b.grad().data() + i * k * n, k, m, n, true);
                }
            }
        });
    }
    return out;
}

Tensor bmm_nt(Graph& g, const Tensor& a, const Tensor& b) {
    require_rank(a, 3, "bmm_nt");
    require_rank(b, 3, "bmm_nt");
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    if (b.dim(0) != batch || b.dim(2) != k) {
        throw DimensionError("bmm_nt: " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()) + "^T");
    }
    Tensor out = Tensor::zeros({batch, m, n});
    for (std::size_t i = 0; i < batch; ++i) {
        kernels::gemm_nt(a.data().data() + i * m * k, b.data().data() + i * n * k,
                         out.data().data() + i * m * n, m, k, n, false);
    }
    if (g.tracks({&a, &b})) {
        g.record({a, b}, out, [a, b, out, batch, m, k, n]() {
            const double* go = out.grad().data();
            for (std::size_t i = 0; i < batch; ++i) {
                // dA = dC * B, dB = dC^T * A
                if (a.requires_grad()) {
                    kernels::gemm_nn(go + i * m * n, b.data().data() + i * n * k,
                                     a.grad().data() + i * m * k, m, n, k, true);
                }
                if (b.requires_grad()) {
                    kernels::gemm_tn(go + i * m * n, a.data().data() + i * m * k,
                                     b.grad().data() + i * n * k, n, m, k, true);
                }
            }
        });
    }
    return out;
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.detach();
    auto od = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < od.size(); ++i) {
        od[i] += bd[i];
    }
    if (g.tracks({&a, &b})) {
        g.record({a, b}, out, [a, b, out]() {
            auto go = out.grad();
            for (const Tensor* t : {&a, &b}) {
                if (t->requires_grad()) {
                    auto gt = t->grad();
                    for (std::size_t i = 0; i < go.size(); ++i) {
                        gt[i] += go[i];
                    }
                }
            }
        });
    }
    return out;
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.detach();
    auto od = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < od.size(); ++i) {
        od[i] -= bd[i];
    }
    if (g.tracks({&a, &b})) {
        g.record({a, b}, out, [a, b, out]() {
            auto go = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < go.size(); ++i) {
                    ga[i] += go[i];
                }
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < go.size(); ++i) {
                    gb[i] -= go[i];
                }
            }
        });
    }
    return out;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.detach();
    auto od = out.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < od.size(); ++i) {
        od[i] *= bd[i];
    }
    if (g.tracks({&a, &b})) {
        g.record({a, b}, out, [a, b, out]() {
            auto go = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                auto bv = b.data();
                for (std::size_t i = 0; i < go.size(); ++i) {
                    ga[i] += go[i] * bv[i];
                }
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                auto av = a.data();
                for (std::size_t i = 0; i < go.size(); ++i) {
                    gb[i] += go[i] * av[i];
                }
            }
        });
    }
    return out;
}

Tensor scale(Graph& g, const Tensor& x, double factor) {
    return unary(g, x, [factor](double v) { return factor * v; },
                 [factor](double, double) { return factor; });
}

Tensor add_scalar(Graph& g, const Tensor& x, double value) {
    return unary(g, x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor exp(Graph& g, const Tensor& x) {
    return unary(g, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor sigmoid(Graph& g, const Tensor& x) {
    return unary(
        g, x,
        [](double v) {
            if (v >= 0.0) {
                return 1.0 / (1.0 + std::exp(-v));
            }
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(Graph& g, const Tensor& x) {
    return unary(g, x, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(Graph& g, const Tensor& x) {
    return unary(
        g, x,
        [](double v) {
            const double inner = kGeluScale * (v + kGeluCubic * v * v * v);
            return 0.5 * v * (1.0 + std::tanh(inner));
        },
        [](double v, double) {
            const double inner = kGeluScale * (v + kGeluCubic * v * v * v);
            const double th = std::tanh(inner);
            const double dinner = kGeluScale * (1.0 + 3.0 * kGeluCubic * v * v);
            return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * dinner;
        });
}

Tensor softmax(Graph& g, const Tensor& x) {
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.numel() / d;
    Tensor out = Tensor::zeros(x.shape());
    auto xd = x.data();
    auto od = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * d;
        double* orow = od.data() + r * d;
        const double mx = *std::max_element(xr, xr + d);
        double total = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            orow[j] = std::exp(xr[j] - mx);
            total += orow[j];
        }
        for (std::size_t j = 0; j < d; ++j) {
            orow[j] /= total;
        }
    }
    if (g.tracks({&x})) {
        g.record({x}, out, [x, out, rows, d]() {
            auto go = out.grad();
            auto gx = x.grad();
            auto y = out.data();
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    dot += go[r * d + j] * y[r * d + j];
                }
                for (std::size_t j = 0; j < d; ++j) {
                    gx[r * d + j] += y[r * d + j] * (go[r * d + j] - dot);
                }
            }
        });
    }
    return out;
}

Tensor layernorm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t d = x.shape().back();
    if (d == 0) {
        throw DimensionError("layernorm: empty last axis");
    }
    for (const Tensor* p : {&gain, &bias}) {
        if (p->defined() && (p->rank() != 1 || p->dim(0) != d)) {
            throw DimensionError("layernorm: affine parameter " + shape_string(p->shape()) +
                                 " does not match last extent " + std::to_string(d));
        }
    }
    const std::size_t rows = x.numel() / d;
    Tensor out = Tensor::zeros(x.shape());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    auto xd = x.data();
    auto od = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * d;
        const double mu = std::accumulate(xr, xr + d, 0.0) / static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            var += (xr[j] - mu) * (xr[j] - mu);
        }
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xr[j] - mu) * inv_std[r];
            xhat[r * d + j] = h;
            double y = h;
            if (gain.defined()) {
                y *= gain.data()[j];
            }
            if (bias.defined()) {
                y += bias.data()[j];
            }
            od[r * d + j] = y;
        }
    }
    if (g.tracks({&x, &gain, &bias})) {
        std::vector<Tensor> inputs{x};
        if (gain.defined()) {
            inputs.push_back(gain);
        }
        if (bias.defined()) {
            inputs.push_back(bias);
        }
        g.record(std::move(inputs), out,
                 [x, gain, bias, out, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)]() {
                     auto go = out.grad();
                     if (gain.defined() && gain.requires_grad()) {
                         auto gg = gain.grad();
                         for (std::size_t i = 0; i < go.size(); ++i) {
                             gg[i % d] += go[i] * xhat[i];
                         }
                     }
                     if (bias.defined() && bias.requires_grad()) {
                         auto gb = bias.grad();
                         for (std::size_t i = 0; i < go.size(); ++i) {
                             gb[i % d] += go[i];
                         }
                     }
                     if (!x.requires_grad()) {
                         return;
                     }
                     auto gx = x.grad();
                     std::vector<double> dh(d);
                     for (std::size_t r = 0; r < rows; ++r) {
                         double mean_dh = 0.0;
                         double mean_dh_h = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                             dh[j] = go[r * d + j] * (gain.defined() ? gain.data()[j] : 1.0);
                             mean_dh += dh[j];
                             mean_dh_h += dh[j] * xhat[r * d + j];
                         }
                         mean_dh /= static_cast<double>(d);
                         mean_dh_h /= static_cast<double>(d);
                         for (std::size_t j = 0; j < d; ++j) {
                             gx[r * d + j] +=
                                 inv_std[r] * (dh[j] - mean_dh - xhat[r * d + j] * mean_dh_h);
                         }
                     }
                 });
    }
    return out;
}

Tensor embedding(Graph& g, const Tensor& table, std::span<const std::size_t> indices) {
    require_rank(table, 2, "embedding");
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    if (indices.empty()) {
        throw DimensionError("embedding: no indices");
    }
    Tensor out = Tensor::zeros({indices.size(), d});
    auto od = out.data();
    auto td = table.data();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= vocab) {
            throw ContractError("embedding: index " + std::to_string(indices[i]) +
                                " out of range for " + std::to_string(vocab) + " rows");
        }
        std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(indices[i] * d), d,
                    od.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    if (g.tracks({&table})) {
        std::vector<std::size_t> idx(indices.begin(), indices.end());
        g.record({table}, out, [table, out, d, idx = std::move(idx)]() {
            auto go = out.grad();
            auto gt = table.grad();
            for (std::size_t i = 0; i < idx.size(); ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    gt[idx[i] * d + j] += go[i * d + j];
                }
            }
        });
    }
    return out;
}

Tensor sum(Graph& g, const Tensor& x) {
    auto xd = x.data();
    Tensor out = Tensor::scalar(std::accumulate(xd.begin(), xd.end(), 0.0));
    if (g.tracks({&x})) {
        g.record({x}, out, [x, out]() {
            const double go = out.grad()[0];
            for (auto& v : x.grad()) {
                v += go;
            }
        });
    }
    return out;
}

Tensor mean(Graph& g, const Tensor& x) {
    return scale(g, sum(g, x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_last(Graph& g, const Tensor& x) {
    const std::size_t d = x.shape().back();
    Shape out_shape(x.shape().begin(), x.shape().end() - 1);
    if (out_shape.empty()) {
        out_shape.push_back(1);
    }
    Tensor out = Tensor::zeros(out_shape);
    auto xd = x.data();
    auto od = out.data();
    for (std::size_t r = 0; r < od.size(); ++r) {
        od[r] = std::accumulate(xd.begin() + static_cast<std::ptrdiff_t>(r * d),
                                xd.begin() + static_cast<std::ptrdiff_t>((r + 1) * d), 0.0);
    }
    if (g.tracks({&x})) {
        g.record({x}, out, [x, out, d]() {
            auto go = out.grad();
            auto gx = x.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += go[i / d];
            }
        });
    }
    return out;
}

Tensor mean_last(Graph& g, const Tensor& x) {
    return scale(g, sum_last(g, x), 1.0 / static_cast<double>(x.shape().back()));
}

Tensor mse(Graph& g, const Tensor& a, const Tensor& b) {
    Tensor diff = sub(g, a, b);
    return mean(g, mul(g, diff, diff));
}

Tensor reshape(Graph& g, const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
    }
    Tensor out = Tensor::from(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
    if (g.tracks({&x})) {
        g.record({x}, out, [x, out]() {
            auto go = out.grad();
            auto gx = x.grad();
            for (std::size_t i = 0; i < go.size(); ++i) {
                gx[i] += go[i];
            }
        });
    }
    return out;
}

Tensor permute(Graph& g, const Tensor& x, const std::vector<std::size_t>& perm) {
    const std::size_t rank = x.rank();
    if (perm.size() != rank) {
        throw DimensionError("permute: permutation length differs from rank");
    }
    std::vector<bool> seen(rank, false);
    for (auto p : perm) {
        if (p >= rank || seen[p]) {
            throw DimensionError("permute: not a permutation");
        }
        seen[p] = true;
    }
    const Shape& in_shape = x.shape();
    Shape out_shape(rank);
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t i = rank - 1; i > 0; --i) {
        in_strides[i - 1] = in_strides[i] * in_shape[i];
    }
    std::vector<std::size_t> strides(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = in_shape[perm[i]];
        strides[i] = in_strides[perm[i]];
    }
    // source offset for every output element, in output order
    const std::size_t total = x.numel();
    std::vector<std::size_t> source(total);
    std::vector<std::size_t> counter(rank, 0);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < total; ++i) {
        source[i] = offset;
        for (std::size_t ax = rank; ax-- > 0;) {
            ++counter[ax];
            offset += strides[ax];
            if (counter[ax] < out_shape[ax]) {
                break;
            }
            offset -= strides[ax] * out_shape[ax];
            counter[ax] = 0;
        }
    }
    Tensor out = Tensor::zeros(out_shape);
    auto od = out.data();
    auto xd = x.data();
    for (std::size_t i = 0; i < total; ++i) {
        od[i] = xd[source[i]];
    }
    if (g.tracks({&x})) {
        g.record({x}, out, [x, out, source = std::move(source)]() {
            auto go = out.grad();
            auto gx = x.grad();
            for (std::size_t i = 0; i < go.size(); ++i) {
                gx[source[i]] += go[i];
            }
        });
    }
    return out;
}

Tensor slice_last(Graph& g, const Tensor& x, std::size_t start, std::size_t length) {
    const std::size_t d = x.shape().back();
    if (length == 0 || start + length > d) {
        throw DimensionError("slice_last: [" + std::to_string(start) + ", " +
                             std::to_string(start + length) + ") outside last extent " +
                             std::to_string(d));
    }
    const std::size_t rows = x.numel() / d;
    Shape out_shape = x.shape();
    out_shape.back() = length;
    Tensor out = Tensor::zeros(out_shape);
    auto od = out.data();
    auto xd = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(r * d + start), length,
                    od.begin() + static_cast<std::ptrdiff_t>(r * length));
    }
    if (g.tracks({&x})) {
        g.record({x}, out, [x, out, rows, d, start, length]() {
            auto go = out.grad();
            auto gx = x.grad();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < length; ++j) {
                    gx[r * d + start + j] += go[r * length + j];
                }
            }
        });
    }
    return out;
}

Tensor expand_batch(Graph& g, const Tensor& x, std::size_t n) {
    if (n == 0) {
        throw DimensionError("expand_batch: zero copies");
    }
    Shape out_shape{n};
    out_shape.insert(out_shape.end(), x.shape().begin(), x.shape().end());
    const std::size_t block = x.numel();
    Tensor out = Tensor::zeros(out_shape);
    auto od = out.data();
    auto xd = x.data();
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(xd.begin(), xd.end(), od.begin() + static_cast<std::ptrdiff_t>(i * block));
    }
    if (g.tracks({&x})) {
        g.record({x}, out, [x, out, block]() {
            auto go = out.grad();
            auto gx = x.grad();
            for (std::size_t i = 0; i < go.size(); ++i) {
                gx[i % block] += go[i];
            }
        });
    }
    return out;
}

Tensor expand_middle(Graph& g, const Tensor& x, std::size_t n) {
    require_rank(x, 2, "expand_middle");
    if (n == 0) {
        throw DimensionError("expand_middle: zero copies");
    }
    const std::size_t b = x.dim(0), h = x.dim(1);
    Tensor out = Tensor::zeros({b, n, h});
    auto od = out.data();
    auto xd = x.data();
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t p = 0; p < n; ++p) {
            std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(i * h), h,
                        od.begin() + static_cast<std::ptrdiff_t>((i * n + p) * h));
        }
    }
    if (g.tracks({&x})) {
        g.record({x}, out, [x, out, b, n, h]() {
            auto go = out.grad();
            auto gx = x.grad();
            for (std::size_t i = 0; i < b; ++i) {
                for (std::size_t p = 0; p < n; ++p) {
                    for (std::size_t j = 0; j < h; ++j) {
                        gx[i * h + j] += go[(i * n + p) * h + j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor conv1d(Graph& g, const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(x, 3, "conv1d");
    require_rank(weight, 3, "conv1d");
    const std::size_t batch = x.dim(0), channels = x.dim(1), length = x.dim(2);
    const std::size_t out_channels = weight.dim(0), kernel = weight.dim(2);
    if (weight.dim(1) != channels) {
        throw DimensionError("conv1d: weight " + shape_string(weight.shape()) + " vs input " +
                             shape_string(x.shape()));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_channels)) {
        throw DimensionError("conv1d: bias " + shape_string(bias.shape()));
    }
    const std::size_t pad_left = (kernel - 1) / 2;
    const std::size_t patch = channels * kernel;
    const std::size_t wide = batch * length;
    // Unfolded input for the whole batch: cols[(c*K + k), n*L + l] = x[n, c, l + k - pad_left],
    // zero outside, so one product covers every sample.
    std::vector<double> cols(patch * wide, 0.0);
    auto xd = x.data();
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t k = 0; k < kernel; ++k) {
            double* crow = cols.data() + (c * kernel + k) * wide;
            for (std::size_t nidx = 0; nidx < batch; ++nidx) {
                const double* xn = xd.data() + (nidx * channels + c) * length;
                double* cn = crow + nidx * length;
                for (std::size_t l = 0; l < length; ++l) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l + k) -
                                               static_cast<std::ptrdiff_t>(pad_left);
                    if (src >= 0 && src < static_cast<std::ptrdiff_t>(length)) {
                        cn[l] = xn[src];
                    }
                }
            }
        }
    }
    std::vector<double> flat(out_channels * wide);
    kernels::gemm_nn(weight.data().data(), cols.data(), flat.data(), out_channels, patch, wide, false);
    Tensor out = Tensor::zeros({batch, out_channels, length});
    auto od = out.data();
    for (std::size_t nidx = 0; nidx < batch; ++nidx) {
        for (std::size_t o = 0; o < out_channels; ++o) {
            const double b = bias.defined() ? bias.data()[o] : 0.0;
            const double* src = flat.data() + o * wide + nidx * length;
            double* dst = od.data() + (nidx * out_channels + o) * length;
            for (std::size_t l = 0; l < length; ++l) {
                dst[l] = src[l] + b;
            }
        }
    }
    if (g.tracks({&x, &weight, &bias})) {
        std::vector<Tensor> inputs{x, weight};
        if (bias.defined()) {
            inputs.push_back(bias);
        }
        g.record(std::move(inputs), out,
                 [x, weight, bias, out, batch, channels, length, out_channels, kernel, pad_left,
                  patch, wide, cols = std::move(cols)]() {
                     auto go = out.grad();
                     // go regrouped as [O, N*L] to match cols.
                     std::vector<double> gflat(out_channels * wide);
                     for (std::size_t nidx = 0; nidx < batch; ++nidx) {
                         for (std::size_t o = 0; o < out_channels; ++o) {
                             const double* src = go.data() + (nidx * out_channels + o) * length;
                             std::copy(src, src + length, gflat.data() + o * wide + nidx * length);
                         }
                     }
                     if (weight.requires_grad()) {
                         kernels::gemm_nt(gflat.data(), cols.data(), weight.grad().data(),
                                          out_channels, wide, patch, true);
                     }
                     if (bias.defined() && bias.requires_grad()) {
                         auto gb = bias.grad();
                         for (std::size_t o = 0; o < out_channels; ++o) {
                             const double* row = gflat.data() + o * wide;
                             for (std::size_t j = 0; j < wide; ++j) {
                                 gb[o] += row[j];
                             }
                         }
                     }
                     if (!x.requires_grad()) {
                         return;
                     }
                     std::vector<double> dcols(patch * wide);
                     kernels::gemm_tn(weight.data().data(), gflat.data(), dcols.data(), patch,
                                      out_channels, wide, false);
                     auto gx = x.grad();
                     for (std::size_t c = 0; c < channels; ++c) {
                         for (std::size_t k = 0; k < kernel; ++k) {
                             const double* drow = dcols.data() + (c * kernel + k) * wide;
                             for (std::size_t nidx = 0; nidx < batch; ++nidx) {
                                 double* gxn = gx.data() + (nidx * channels + c) * length;
                                 const double* dn = drow + nidx * length;
                                 for (std::size_t l = 0; l < length; ++l) {
                                     const std::ptrdiff_t src =
                                         static_cast<std::ptrdiff_t>(l + k) -
                                         static_cast<std::ptrdiff_t>(pad_left);
                                     if (src >= 0 && src < static_cast<std::ptrdiff_t>(length)) {
                                         gxn[src] += dn[l];
                                     }
                                 }
                             }
                         }
                     }
                 });
    }
    return out;
}

Tensor cross_entropy(Graph& g, const Tensor& logits, std::span<const std::size_t> labels) {
    require_rank(logits, 2, "cross_entropy");
    const std::size_t n = logits.dim(0), classes = logits.dim(1);
    if (labels.size() != n) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(n) + " rows");
    }
    std::vector<double> probs(n * classes);
    double total = 0.0;
    auto ld = logits.data();
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= classes) {
            throw ContractError("cross_entropy: label out of range");
        }
        const double* row = ld.data() + i * classes;
        const double mx = *std::max_element(row, row + classes);
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            probs[i * classes + c] = std::exp(row[c] - mx);
            z += probs[i * classes + c];
        }
        for (std::size_t c = 0; c < classes; ++c) {
            probs[i * classes + c] /= z;
        }
        total += -(row[labels[i]] - mx - std::log(z));
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(n));
    if (g.tracks({&logits})) {
        std::vector<std::size_t> lab(labels.begin(), labels.end());
        g.record({logits}, out,
                 [logits, out, n, classes, probs = std::move(probs), lab = std::move(lab)]() {
                     const double go = out.grad()[0] / static_cast<double>(n);
                     auto gl = logits.grad();
                     for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t c = 0; c < classes; ++c) {
                             const double target = (c == lab[i]) ? 1.0 : 0.0;
                             gl[i * classes + c] += go * (probs[i * classes + c] - target);
                         }
                     }
                 });
    }
    return out;
}

}  // namespace spectradiff::ops
