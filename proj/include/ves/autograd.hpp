#pragma once

// Reverse-mode tape over matrix-valued nodes. Only the operations this
// pipeline needs: affine layers, layer norm, row l2-normalization, the
// aggregation reductions, and the symmetric InfoNCE head. Scalars are
// 1x1 matrices. A tape belongs to one evaluation and one thread.

#include <cstddef>
#include <functional>
#include <vector>

#include "ves/aggregation.hpp"
#include "ves/matrix.hpp"

namespace ves {

template <typename T>
class Tape {
public:
    using VarId = std::size_t;

    VarId leaf(Matrix<T> value) { return push(std::move(value), {}); }

    const Matrix<T>& value(VarId id) const { return nodes_[id].value; }
    const Matrix<T>& grad(VarId id) const { return nodes_[id].grad; }

    T scalar(VarId id) const { return nodes_[id].value.data[0]; }

    VarId matmul(VarId a, VarId b) {
        Matrix<T> out = ves::matmul(value(a), value(b));
        return push(std::move(out), [this, a, b](const Node& n) {
            accumulate(a, ves::matmul_nt(n.grad, value(b)));
            accumulate(b, ves::matmul_tn(value(a), n.grad));
        });
    }

    // a * b^T
    VarId matmul_nt(VarId a, VarId b) {
        Matrix<T> out = ves::matmul_nt(value(a), value(b));
        return push(std::move(out), [this, a, b](const Node& n) {
            accumulate(a, ves::matmul(n.grad, value(b)));
            accumulate(b, ves::matmul_tn(n.grad, value(a)));
        });
    }

    // x [N x D] + bias [1 x D] broadcast over rows
    VarId add_row_vector(VarId x, VarId bias) {
        const Matrix<T>& xv = value(x);
        const Matrix<T>& bv = value(bias);
        if (bv.rows != 1 || bv.cols != xv.cols)
            throw std::invalid_argument("add_row_vector: bias shape " + bv.shape_str() +
                                        " does not broadcast over " + xv.shape_str());
        Matrix<T> out = xv;
        for (std::size_t i = 0; i < out.rows; ++i)
            for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += bv(0, j);
        return push(std::move(out), [this, x, bias](const Node& n) {
            accumulate(x, n.grad);
            Matrix<T> gb(1, n.grad.cols);
            for (std::size_t i = 0; i < n.grad.rows; ++i)
                for (std::size_t j = 0; j < n.grad.cols; ++j) gb(0, j) += n.grad(i, j);
            accumulate(bias, gb);
        });
    }

    // Per-row layer norm over features with affine scale/shift [1 x D].
    VarId layer_norm_rows(VarId x, VarId scale, VarId shift, T eps) {
        const Matrix<T>& xv = value(x);
        const std::size_t D = xv.cols;
        Matrix<T> xhat(xv.rows, D);
        std::vector<T> inv_std(xv.rows);
        for (std::size_t i = 0; i < xv.rows; ++i) {
            T mu = T(0);
            for (std::size_t j = 0; j < D; ++j) mu += xv(i, j);
            mu /= T(D);
            T var = T(0);
            for (std::size_t j = 0; j < D; ++j) {
                const T d = xv(i, j) - mu;
                var += d * d;
            }
            var /= T(D);
            inv_std[i] = T(1) / std::sqrt(var + eps);
            for (std::size_t j = 0; j < D; ++j) xhat(i, j) = (xv(i, j) - mu) * inv_std[i];
        }
        const Matrix<T>& sc = value(scale);
        const Matrix<T>& sh = value(shift);
        Matrix<T> out(xv.rows, D);
        for (std::size_t i = 0; i < xv.rows; ++i)
            for (std::size_t j = 0; j < D; ++j)
                out(i, j) = xhat(i, j) * sc(0, j) + sh(0, j);
        return push(std::move(out),
                    [this, x, scale, shift, xhat = std::move(xhat),
                     inv_std = std::move(inv_std)](const Node& n) {
            const Matrix<T>& g = n.grad;
            const Matrix<T>& sc = value(scale);
            const std::size_t D = g.cols;
            Matrix<T> gscale(1, D), gshift(1, D), gx(g.rows, D);
            for (std::size_t i = 0; i < g.rows; ++i) {
                // dxhat = g * scale; dx = inv_std*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                T m1 = T(0), m2 = T(0);
                for (std::size_t j = 0; j < D; ++j) {
                    gscale(0, j) += g(i, j) * xhat(i, j);
                    gshift(0, j) += g(i, j);
                    const T dxh = g(i, j) * sc(0, j);
                    m1 += dxh;
                    m2 += dxh * xhat(i, j);
                }
                m1 /= T(D);
                m2 /= T(D);
                for (std::size_t j = 0; j < D; ++j) {
                    const T dxh = g(i, j) * sc(0, j);
                    gx(i, j) = inv_std[i] * (dxh - m1 - xhat(i, j) * m2);
                }
            }
            accumulate(x, gx);
            accumulate(scale, gscale);
            accumulate(shift, gshift);
        });
    }

    // Rows divided by max(norm, eps). Backward projects off the radial
    // direction when the norm is above eps, and is a plain 1/eps scaling
    // below it (the divisor is then constant).
    VarId l2_normalize_rows(VarId x, T eps) {
        const Matrix<T>& xv = value(x);
        Matrix<T> out(xv.rows, xv.cols);
        std::vector<T> inv_n(xv.rows);
        std::vector<std::uint8_t> guarded(xv.rows);
        for (std::size_t i = 0; i < xv.rows; ++i) {
            const T n = row_norm(xv, i);
            guarded[i] = n < eps;
            inv_n[i] = T(1) / std::max(n, eps);
            for (std::size_t j = 0; j < xv.cols; ++j) out(i, j) = xv(i, j) * inv_n[i];
        }
        Matrix<T> y = out;
        return push(std::move(out),
                    [this, x, y = std::move(y), inv_n = std::move(inv_n),
                     guarded = std::move(guarded)](const Node& n) {
            const Matrix<T>& g = n.grad;
            Matrix<T> gx(g.rows, g.cols);
            for (std::size_t i = 0; i < g.rows; ++i) {
                if (guarded[i]) {
                    for (std::size_t j = 0; j < g.cols; ++j) gx(i, j) = g(i, j) * inv_n[i];
                    continue;
                }
                T dot = T(0);
                for (std::size_t j = 0; j < g.cols; ++j) dot += g(i, j) * y(i, j);
                for (std::size_t j = 0; j < g.cols; ++j)
                    gx(i, j) = (g(i, j) - y(i, j) * dot) * inv_n[i];
            }
            accumulate(x, gx);
        });
    }

    // Masked mean over time of per-row max. Gradient routes to the
    // lowest-index argmax entry of each unmasked row.
    VarId phi(VarId s, const MaskVector& m, T eps) {
        const Matrix<T>& sv = value(s);
        if (m.length() != sv.rows)
            throw std::invalid_argument("tape phi: mask length != rows");
        std::vector<std::size_t> arg(sv.rows);
        T num = T(0), den = eps;
        for (std::size_t t = 0; t < sv.rows; ++t) {
            arg[t] = row_argmax(sv, t);
            if (m[t]) {
                num += sv(t, arg[t]);
                den += T(1);
            }
        }
        Matrix<T> out(1, 1);
        out.data[0] = num / den;
        return push(std::move(out), [this, s, m, den, arg = std::move(arg)](const Node& n) {
            const T g = n.grad.data[0] / den;
            Matrix<T> gs(value(s).rows, value(s).cols);
            for (std::size_t t = 0; t < gs.rows; ++t)
                if (m[t]) gs(t, arg[t]) = g;
            accumulate(s, gs);
        });
    }

    // Mean over patches of per-column max.
    VarId psi(VarId s) {
        const Matrix<T>& sv = value(s);
        std::vector<std::size_t> arg(sv.cols);
        T sum = T(0);
        for (std::size_t p = 0; p < sv.cols; ++p) {
            arg[p] = col_argmax(sv, p);
            sum += sv(arg[p], p);
        }
        Matrix<T> out(1, 1);
        out.data[0] = sum / T(sv.cols);
        return push(std::move(out), [this, s, arg = std::move(arg)](const Node& n) {
            const T g = n.grad.data[0] / T(value(s).cols);
            Matrix<T> gs(value(s).rows, value(s).cols);
            for (std::size_t p = 0; p < gs.cols; ++p) gs(arg[p], p) += g;
            accumulate(s, gs);
        });
    }

    VarId masked_mean_rows(VarId x, const MaskVector& m, T eps) {
        const Matrix<T>& xv = value(x);
        if (m.length() != xv.rows)
            throw std::invalid_argument("tape masked_mean_rows: mask length != rows");
        Matrix<T> out(1, xv.cols);
        T den = eps;
        for (std::size_t t = 0; t < xv.rows; ++t) {
            if (!m[t]) continue;
            den += T(1);
            for (std::size_t j = 0; j < xv.cols; ++j) out(0, j) += xv(t, j);
        }
        for (std::size_t j = 0; j < xv.cols; ++j) out(0, j) /= den;
        return push(std::move(out), [this, x, m, den](const Node& n) {
            Matrix<T> gx(value(x).rows, value(x).cols);
            for (std::size_t t = 0; t < gx.rows; ++t) {
                if (!m[t]) continue;
                for (std::size_t j = 0; j < gx.cols; ++j) gx(t, j) = n.grad(0, j) / den;
            }
            accumulate(x, gx);
        });
    }

    VarId mean_rows(VarId x) {
        const Matrix<T>& xv = value(x);
        Matrix<T> out(1, xv.cols);
        for (std::size_t t = 0; t < xv.rows; ++t)
            for (std::size_t j = 0; j < xv.cols; ++j) out(0, j) += xv(t, j);
        for (std::size_t j = 0; j < xv.cols; ++j) out(0, j) /= T(xv.rows);
        return push(std::move(out), [this, x](const Node& n) {
            const T inv = T(1) / T(value(x).rows);
            Matrix<T> gx(value(x).rows, value(x).cols);
            for (std::size_t t = 0; t < gx.rows; ++t)
                for (std::size_t j = 0; j < gx.cols; ++j) gx(t, j) = n.grad(0, j) * inv;
            accumulate(x, gx);
        });
    }

    // Inner product of two 1 x D nodes.
    VarId dot(VarId a, VarId b) {
        const Matrix<T>& av = value(a);
        const Matrix<T>& bv = value(b);
        if (av.rows != 1 || bv.rows != 1 || av.cols != bv.cols)
            throw std::invalid_argument("tape dot: expects matching 1xD operands");
        Matrix<T> out(1, 1);
        for (std::size_t j = 0; j < av.cols; ++j) out.data[0] += av(0, j) * bv(0, j);
        return push(std::move(out), [this, a, b](const Node& n) {
            const T g = n.grad.data[0];
            Matrix<T> ga = value(b);
            Matrix<T> gb = value(a);
            for (T& v : ga.data) v *= g;
            for (T& v : gb.data) v *= g;
            accumulate(a, ga);
            accumulate(b, gb);
        });
    }

    // ca * a + cb * b for scalar nodes.
    VarId lincomb(VarId a, VarId b, T ca, T cb) {
        Matrix<T> out(1, 1);
        out.data[0] = ca * scalar(a) + cb * scalar(b);
        return push(std::move(out), [this, a, b, ca, cb](const Node& n) {
            Matrix<T> g(1, 1);
            g.data[0] = n.grad.data[0] * ca;
            accumulate(a, g);
            g.data[0] = n.grad.data[0] * cb;
            accumulate(b, g);
        });
    }

    // Symmetric InfoNCE over a B x B grid of scalar similarity nodes with
    // logits tau * C, tau = exp(log_tau). Row/column softmaxes are
    // max-shifted.
    VarId infonce(const std::vector<VarId>& cells, std::size_t B, VarId log_tau) {
        if (cells.size() != B * B || B == 0)
            throw std::invalid_argument("tape infonce: expected B*B cells");
        const T tau = std::exp(scalar(log_tau));
        Matrix<T> logits(B, B);
        for (std::size_t i = 0; i < B * B; ++i) logits.data[i] = tau * scalar(cells[i]);
        T loss = T(0);
        Matrix<T> dlogits(B, B);
        // rows
        std::vector<T> buf(B);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t k = 0; k < B; ++k) buf[k] = logits(b, k);
            const T lse = log_sum_exp(buf.data(), B);
            loss -= (logits(b, b) - lse) / T(2 * B);
            for (std::size_t k = 0; k < B; ++k)
                dlogits(b, k) += (std::exp(logits(b, k) - lse) - T(k == b)) / T(2 * B);
        }
        // columns
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t k = 0; k < B; ++k) buf[k] = logits(k, b);
            const T lse = log_sum_exp(buf.data(), B);
            loss -= (logits(b, b) - lse) / T(2 * B);
            for (std::size_t k = 0; k < B; ++k)
                dlogits(k, b) += (std::exp(logits(k, b) - lse) - T(k == b)) / T(2 * B);
        }
        Matrix<T> out(1, 1);
        out.data[0] = loss;
        return push(std::move(out),
                    [this, cells, B, log_tau, tau,
                     dlogits = std::move(dlogits)](const Node& n) {
            const T g = n.grad.data[0];
            Matrix<T> gc(1, 1);
            T gtau = T(0);
            for (std::size_t i = 0; i < B * B; ++i) {
                gc.data[0] = g * tau * dlogits.data[i];
                accumulate(cells[i], gc);
                gtau += dlogits.data[i] * scalar(cells[i]);
            }
            Matrix<T> gl(1, 1);
            gl.data[0] = g * tau * gtau;  // d/dlog_tau = tau * d/dtau
            accumulate(log_tau, gl);
        });
    }

    // Seeds d(loss)/d(loss)=1 and sweeps the tape in reverse order.
    void backward_from(VarId loss) {
        if (value(loss).size() != 1)
            throw std::invalid_argument("backward_from: loss must be scalar");
        for (auto& n : nodes_)
            n.grad = Matrix<T>(n.value.rows, n.value.cols);
        nodes_[loss].grad.data[0] = T(1);
        for (std::size_t i = nodes_.size(); i-- > 0;)
            if (nodes_[i].backward) nodes_[i].backward(nodes_[i]);
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix<T> value;
        Matrix<T> grad;
        std::function<void(const Node&)> backward;
    };

    VarId push(Matrix<T> value, std::function<void(const Node&)> backward) {
        nodes_.push_back(Node{std::move(value), {}, std::move(backward)});
        return nodes_.size() - 1;
    }

    void accumulate(VarId id, const Matrix<T>& g) {
        Matrix<T>& dst = nodes_[id].grad;
        if (!dst.same_shape(g))
            throw std::logic_error("tape: gradient shape mismatch");
        for (std::size_t i = 0; i < g.size(); ++i) dst.data[i] += g.data[i];
    }

    std::vector<Node> nodes_;
};

}  // namespace ves
