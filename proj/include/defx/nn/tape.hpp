#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "defx/nn/matrix.hpp"

namespace defx::nn {

/// Handle to a node on a Tape.
struct Var {
    std::size_t id = 0;
};

/// Reverse-mode gradient tape over dense matrices.
///
/// Every op records its output value plus a closure that, given the output
/// gradient, accumulates into its inputs' gradients. backward() replays the
/// closures in reverse creation order, so inputs always precede outputs.
/// Leaves created with param()/gather_rows() write their gradient straight
/// into the owning Param; the Param must outlive the tape.
class Tape {
public:
    using Backward = std::function<void(Tape&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    Matrix& grad(Var v) { return nodes_[v.id].grad; }
    const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Records an op. The closure may read value()/grad() of any earlier node.
    Var push(Matrix value, Backward backward = {}) {
        Node n;
        n.grad = Matrix(value.rows(), value.cols());
        n.value = std::move(value);
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    Var constant(Matrix value) { return push(std::move(value)); }

    Var param(Param& p) {
        Var out = push(p.value);
        nodes_[out.id].backward = [out, &p](Tape& t) {
            if (!p.trainable) return;
            const Matrix& g = t.grad(out);
            for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
        };
        return out;
    }

    /// Rows of `p` selected by index; gradient scatters back sparsely.
    Var gather_rows(Param& p, std::span<const std::size_t> rows) {
        const std::size_t cols = p.value.cols();
        Matrix v(rows.size(), cols);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r] >= p.value.rows())
                throw UsageError("gather_rows: row " + std::to_string(rows[r]) + " out of range for " +
                                 p.name);
            auto src = p.value.row_span(rows[r]);
            std::copy(src.begin(), src.end(), v.row_span(r).begin());
        }
        std::vector<std::size_t> idx(rows.begin(), rows.end());
        Var out = push(std::move(v));
        nodes_[out.id].backward = [out, &p, idx = std::move(idx), cols](Tape& t) {
            if (!p.trainable) return;
            const Matrix& g = t.grad(out);
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t c = 0; c < cols; ++c) p.grad(idx[r], c) += g(r, c);
        };
        return out;
    }

    Var add(Var a, Var b) {
        require_same(a, b, "add");
        Matrix v = value(a);
        const Matrix& bv = value(b);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += bv[i];
        return push(std::move(v), [a, b, out = next_id()](Tape& t) {
            const Matrix& g = t.grad(Var{out});
            accumulate(t.grad(a), g);
            accumulate(t.grad(b), g);
        });
    }

    /// x (n x c) plus a 1 x c row broadcast over every row.
    Var add_row(Var x, Var row) {
        const Matrix& xv = value(x);
        const Matrix& rv = value(row);
        if (rv.rows() != 1 || rv.cols() != xv.cols())
            throw UsageError("add_row: shape mismatch " + xv.shape_string() + " + " + rv.shape_string());
        Matrix v = xv;
        for (std::size_t r = 0; r < v.rows(); ++r)
            for (std::size_t c = 0; c < v.cols(); ++c) v(r, c) += rv[c];
        return push(std::move(v), [x, row, out = next_id()](Tape& t) {
            const Matrix& g = t.grad(Var{out});
            accumulate(t.grad(x), g);
            Matrix& gr = t.grad(row);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) gr[c] += g(r, c);
        });
    }

    Var scale(Var x, double s) {
        Matrix v = value(x);
        for (double& e : v.data()) e *= s;
        return push(std::move(v), [x, s, out = next_id()](Tape& t) {
            const Matrix& g = t.grad(Var{out});
            Matrix& gx = t.grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
        });
    }

    /// A (n x k) times B (k x m).
    Var matmul(Var a, Var b) {
        const Matrix& av = value(a);
        const Matrix& bv = value(b);
        if (av.cols() != bv.rows())
            throw UsageError("matmul: shape mismatch " + av.shape_string() + " * " + bv.shape_string());
        Matrix v(av.rows(), bv.cols());
        for (std::size_t i = 0; i < av.rows(); ++i)
            for (std::size_t k = 0; k < av.cols(); ++k) {
                const double aik = av(i, k);
                for (std::size_t j = 0; j < bv.cols(); ++j) v(i, j) += aik * bv(k, j);
            }
        return push(std::move(v), [a, b, out = next_id()](Tape& t) {
            const Matrix& g = t.grad(Var{out});
            const Matrix& av = t.value(a);
            const Matrix& bv = t.value(b);
            Matrix& ga = t.grad(a);
            Matrix& gb = t.grad(b);
            for (std::size_t i = 0; i < av.rows(); ++i)
                for (std::size_t k = 0; k < av.cols(); ++k) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < bv.cols(); ++j) {
                        acc += g(i, j) * bv(k, j);
                        gb(k, j) += av(i, k) * g(i, j);
                    }
                    ga(i, k) += acc;
                }
        });
    }

    /// A (n x k) times B^T where B is (m x k).
    Var matmul_nt(Var a, Var b) {
        const Matrix& av = value(a);
        const Matrix& bv = value(b);
        if (av.cols() != bv.cols())
            throw UsageError("matmul_nt: shape mismatch " + av.shape_string() + " * " + bv.shape_string() +
                             "^T");
        Matrix v(av.rows(), bv.rows());
        for (std::size_t i = 0; i < av.rows(); ++i)
            for (std::size_t j = 0; j < bv.rows(); ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < av.cols(); ++k) acc += av(i, k) * bv(j, k);
                v(i, j) = acc;
            }
        return push(std::move(v), [a, b, out = next_id()](Tape& t) {
            const Matrix& g = t.grad(Var{out});
            const Matrix& av = t.value(a);
            const Matrix& bv = t.value(b);
            Matrix& ga = t.grad(a);
            Matrix& gb = t.grad(b);
            for (std::size_t i = 0; i < av.rows(); ++i)
                for (std::size_t j = 0; j < bv.rows(); ++j) {
                    const double gij = g(i, j);
                    if (gij == 0.0) continue;
                    for (std::size_t k = 0; k < av.cols(); ++k) {
                        ga(i, k) += gij * bv(j, k);
                        gb(j, k) += gij * av(i, k);
                    }
                }
        });
    }

    /// Affine map applied row-wise: x W^T + b, W is (out x in), b is 1 x out.
    Var linear(Var x, Var w, Var b) {
        const Matrix& xv = value(x);
        const Matrix& wv = value(w);
        const Matrix& bv = value(b);
        if (xv.cols() != wv.cols() || bv.rows() != 1 || bv.cols() != wv.rows())
            throw UsageError("linear: shape mismatch x " + xv.shape_string() + ", W " + wv.shape_string() +
                             ", b " + bv.shape_string());
        return add_row(matmul_nt(x, w), b);
    }

    Var relu(Var x) {
        return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                     [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
    }

    Var tanh(Var x) {
        return unary(x, [](double v) { return std::tanh(v); },
                     [](double, double out) { return 1.0 - out * out; });
    }

    Var sigmoid(Var x) {
        return unary(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                     [](double, double out) { return out * (1.0 - out); });
    }

    /// Tanh-approximated GELU.
    Var gelu(Var x) {
        static constexpr double c = 0.7978845608028654; // sqrt(2/pi)
        static constexpr double a = 0.044715;
        return unary(
            x, [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v))); },
            [](double v, double) {
                const double u = c * (v + a * v * v * v);
                const double th = std::tanh(u);
                return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * c * (1.0 + 3.0 * a * v * v);
            });
    }

    /// Row-wise softmax, max-shifted.
    Var softmax_rows(Var x) {
        Matrix v = softmax_rows_value(value(x));
        return push(std::move(v), [x, out = next_id()](Tape& t) {
            const Matrix& g = t.grad(Var{out});
            const Matrix& y = t.value(Var{out});
            Matrix& gx = t.grad(x);
            for (std::size_t r = 0; r < y.rows(); ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
                for (std::size_t c = 0; c < y.cols(); ++c) gx(r, c) += y(r, c) * (g(r, c) - dot);
            }
        });
    }

    /// Row-wise layer normalization with affine gamma/beta (each 1 x c).
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
        const Matrix& xv = value(x);
        const Matrix& gv = value(gamma);
        const Matrix& bv = value(beta);
        if (gv.cols() != xv.cols() || bv.cols() != xv.cols() || gv.rows() != 1 || bv.rows() != 1)
            throw UsageError("layer_norm: shape mismatch");
        const std::size_t n = xv.rows();
        const std::size_t d = xv.cols();
        Matrix xhat(n, d);
        std::vector<double> inv_std(n);
        Matrix v(n, d);
        for (std::size_t r = 0; r < n; ++r) {
            double mean = 0.0;
            for (std::size_t c = 0; c < d; ++c) mean += xv(r, c);
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (std::size_t c = 0; c < d; ++c) var += (xv(r, c) - mean) * (xv(r, c) - mean);
            var /= static_cast<double>(d);
            inv_std[r] = 1.0 / std::sqrt(var + eps);
            for (std::size_t c = 0; c < d; ++c) {
                xhat(r, c) = (xv(r, c) - mean) * inv_std[r];
                v(r, c) = gv[c] * xhat(r, c) + bv[c];
            }
        }
        return push(std::move(v), [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std),
                                   out = next_id()](Tape& t) {
            const Matrix& g = t.grad(Var{out});
            const Matrix& gv = t.value(gamma);
            Matrix& gx = t.grad(x);
            Matrix& gg = t.grad(gamma);
            Matrix& gb = t.grad(beta);
            const std::size_t d = g.cols();
            const double dd = static_cast<double>(d);
            for (std::size_t r = 0; r < g.rows(); ++r) {
                double sum_dxhat = 0.0;
                double sum_dxhat_xhat = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    const double dxhat = g(r, c) * gv[c];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat(r, c);
                    gg[c] += g(r, c) * xhat(r, c);
                    gb[c] += g(r, c);
                }
                for (std::size_t c = 0; c < d; ++c) {
                    const double dxhat = g(r, c) * gv[c];
                    gx(r, c) += inv_std[r] / dd * (dd * dxhat - sum_dxhat - xhat(r, c) * sum_dxhat_xhat);
                }
            }
        });
    }

    Var slice_cols(Var x, std::size_t begin, std::size_t count) {
        const Matrix& xv = value(x);
        if (begin + count > xv.cols()) throw UsageError("slice_cols: out of range");
        Matrix v(xv.rows(), count);
        for (std::size_t r = 0; r < xv.rows(); ++r)
            for (std::size_t c = 0; c < count; ++c) v(r, c) = xv(r, begin + c);
        return push(std::move(v), [x, begin, out = next_id()](Tape& t) {
            const Matrix& g = t.grad(Var{out});
            Matrix& gx = t.grad(x);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) gx(r, begin + c) += g(r, c);
        });
    }

    Var select_row(Var x, std::size_t row) {
        const Matrix& xv = value(x);
        if (row >= xv.rows()) throw UsageError("select_row: out of range");
        Matrix v = Matrix::row(xv.row_span(row));
        return push(std::move(v), [x, row, out = next_id()](Tape& t) {
            const Matrix& g = t.grad(Var{out});
            Matrix& gx = t.grad(x);
            for (std::size_t c = 0; c < g.cols(); ++c) gx(row, c) += g[c];
        });
    }

    Var concat_cols(std::span<const Var> parts) {
        if (parts.empty()) throw UsageError("concat_cols: no inputs");
        const std::size_t rows = value(parts[0]).rows();
        std::size_t cols = 0;
        for (Var p : parts) {
            if (value(p).rows() != rows) throw UsageError("concat_cols: row mismatch");
            cols += value(p).cols();
        }
        Matrix v(rows, cols);
        std::size_t off = 0;
        for (Var p : parts) {
            const Matrix& pv = value(p);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < pv.cols(); ++c) v(r, off + c) = pv(r, c);
            off += pv.cols();
        }
        std::vector<Var> in(parts.begin(), parts.end());
        return push(std::move(v), [in = std::move(in), out = next_id()](Tape& t) {
            const Matrix& g = t.grad(Var{out});
            std::size_t off = 0;
            for (Var p : in) {
                Matrix& gp = t.grad(p);
                for (std::size_t r = 0; r < gp.rows(); ++r)
                    for (std::size_t c = 0; c < gp.cols(); ++c) gp(r, c) += g(r, off + c);
                off += gp.cols();
            }
        });
    }

    Var concat_rows(std::span<const Var> parts) {
        if (parts.empty()) throw UsageError("concat_rows: no inputs");
        const std::size_t cols = value(parts[0]).cols();
        std::vector<double> data;
        std::size_t rows = 0;
        for (Var p : parts) {
            const Matrix& pv = value(p);
            if (pv.cols() != cols) throw UsageError("concat_rows: column mismatch");
            data.insert(data.end(), pv.data().begin(), pv.data().end());
            rows += pv.rows();
        }
        std::vector<Var> in(parts.begin(), parts.end());
        return push(Matrix(rows, cols, std::move(data)), [in = std::move(in), out = next_id()](Tape& t) {
            const Matrix& g = t.grad(Var{out});
            std::size_t off = 0;
            for (Var p : in) {
                Matrix& gp = t.grad(p);
                for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
                off += gp.size();
            }
        });
    }

    /// Mean over rows: (n x c) -> (1 x c).
    Var mean_rows(Var x) {
        const Matrix& xv = value(x);
        if (xv.rows() == 0) throw UsageError("mean_rows: empty input");
        Matrix v(1, xv.cols());
        for (std::size_t r = 0; r < xv.rows(); ++r)
            for (std::size_t c = 0; c < xv.cols(); ++c) v[c] += xv(r, c);
        const double inv = 1.0 / static_cast<double>(xv.rows());
        for (double& e : v.data()) e *= inv;
        return push(std::move(v), [x, inv, out = next_id()](Tape& t) {
            const Matrix& g = t.grad(Var{out});
            Matrix& gx = t.grad(x);
            for (std::size_t r = 0; r < gx.rows(); ++r)
                for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += g[c] * inv;
        });
    }

    /// Runs every recorded closure in reverse order, seeding d(root) = 1.
    void backward(Var root) {
        Matrix& g = grad(root);
        if (g.size() != 1) throw UsageError("backward: root must be a scalar, got " + g.shape_string());
        g[0] = 1.0;
        for (std::size_t i = root.id + 1; i-- > 0;)
            if (nodes_[i].backward) nodes_[i].backward(*this);
    }

    static Matrix softmax_rows_value(const Matrix& x) {
        Matrix v(x.rows(), x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r) {
            double mx = x(r, 0);
            for (std::size_t c = 1; c < x.cols(); ++c) mx = std::max(mx, x(r, c));
            double sum = 0.0;
            for (std::size_t c = 0; c < x.cols(); ++c) sum += (v(r, c) = std::exp(x(r, c) - mx));
            for (std::size_t c = 0; c < x.cols(); ++c) v(r, c) /= sum;
        }
        return v;
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backward backward;
    };

    std::size_t next_id() const noexcept { return nodes_.size(); }

    void require_same(Var a, Var b, const char* op) const {
        if (!value(a).same_shape(value(b)))
            throw UsageError(std::string(op) + ": shape mismatch " + value(a).shape_string() + " vs " +
                             value(b).shape_string());
    }

    static void accumulate(Matrix& dst, const Matrix& src) {
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    }

    template <class F, class DF>
    Var unary(Var x, F f, DF df) {
        Matrix v = value(x);
        for (double& e : v.data()) e = f(e);
        return push(std::move(v), [x, df, out = next_id()](Tape& t) {
            const Matrix& g = t.grad(Var{out});
            const Matrix& in = t.value(x);
            const Matrix& y = t.value(Var{out});
            Matrix& gx = t.grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(in[i], y[i]);
        });
    }

    std::vector<Node> nodes_;
};

} // namespace defx::nn
