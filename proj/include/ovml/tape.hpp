#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ovml/parameter.hpp"
#include "ovml/tensor.hpp"

namespace ovml {

// Reverse-mode autodiff over a dynamically built tape. Construction order
// is a topological order, so backward() is a single reverse sweep. Nodes
// whose inputs carry no gradient are recorded value-only, which lets the
// frozen backbones share this code path at near-inference cost.
template <typename T>
class Tape {
public:
    using Ref = int;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::size_t size() const { return nodes_.size(); }

    const Tensor<T>& value(Ref r) const { return nodes_[check(r)].value; }

    Tensor<T>& grad(Ref r) {
        Node& n = nodes_[check(r)];
        if (!n.grad_alloc) {
            n.grad = Tensor<T>(n.value.dims());
            n.grad_alloc = true;
        }
        return n.grad;
    }

    bool needs_grad(Ref r) const { return nodes_[check(r)].needs_grad; }

    // ---- leaves ----

    Ref constant(Tensor<T> v) { return push(std::move(v), false, {}); }

    Ref input(Tensor<T> v, bool requires_grad) { return push(std::move(v), requires_grad, {}); }

    Ref param(Parameter<T>& p) {
        Ref r = push(p.values, p.trainable, {});
        if (p.trainable) bindings_.emplace_back(r, &p);
        return r;
    }

    // Gradient w.r.t. a parameter regardless of trainable flag; used by the
    // gradient checker.
    Ref param_forced(Parameter<T>& p) {
        Ref r = push(p.values, true, {});
        bindings_.emplace_back(r, &p);
        return r;
    }

    // ---- arithmetic ----

    Ref add(Ref a, Ref b) {
        require_same_shape(a, b, "add");
        Tensor<T> out = value(a);
        const Tensor<T>& vb = value(b);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
        return push(std::move(out), needs_grad(a) || needs_grad(b), [this, a, b](Ref self) {
            const Tensor<T>& g = grad(self);
            if (needs_grad(a)) accumulate(a, g);
            if (needs_grad(b)) accumulate(b, g);
        });
    }

    Ref sub(Ref a, Ref b) {
        require_same_shape(a, b, "sub");
        Tensor<T> out = value(a);
        const Tensor<T>& vb = value(b);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
        return push(std::move(out), needs_grad(a) || needs_grad(b), [this, a, b](Ref self) {
            const Tensor<T>& g = grad(self);
            if (needs_grad(a)) accumulate(a, g);
            if (needs_grad(b)) {
                Tensor<T>& gb = grad(b);
                for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
            }
        });
    }

    Ref scale(Ref a, T c) {
        Tensor<T> out = value(a);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
        return push(std::move(out), needs_grad(a), [this, a, c](Ref self) {
            if (!needs_grad(a)) return;
            const Tensor<T>& g = grad(self);
            Tensor<T>& ga = grad(a);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
        });
    }

    // out = c * a + k, with k a fixed tensor. Gradient w.r.t. a is scaled
    // by c; this is the pass-through used for stochastic weight averaging.
    Ref scale_add_const(Ref a, T c, const Tensor<T>& k) {
        if (!value(a).same_shape(k)) throw std::invalid_argument("scale_add_const: shape mismatch");
        Tensor<T> out = k;
        const Tensor<T>& va = value(a);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += c * va[i];
        return push(std::move(out), needs_grad(a), [this, a, c](Ref self) {
            if (!needs_grad(a)) return;
            const Tensor<T>& g = grad(self);
            Tensor<T>& ga = grad(a);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
        });
    }

    Ref matmul(Ref a, Ref b) {
        const Tensor<T>& va = value(a);
        const Tensor<T>& vb = value(b);
        const int m = va.rows(), k = va.cols(), n = vb.cols();
        if (vb.rows() != k) throw std::invalid_argument("matmul: inner dim mismatch");
        Tensor<T> out(m, n);
        matmul_accumulate(va.data(), vb.data(), out.data(), m, k, n);
        return push(std::move(out), needs_grad(a) || needs_grad(b),
                    [this, a, b, m, k, n](Ref self) {
                        const Tensor<T>& g = grad(self);
                        if (needs_grad(a))
                            matmul_nt_accumulate(g.data(), value(b).data(), grad(a).data(), m, n, k);
                        if (needs_grad(b))
                            matmul_tn_accumulate(value(a).data(), g.data(), grad(b).data(), m, k, n);
                    });
    }

    // out = a @ b^T, a: m x k, b: n x k
    Ref matmul_nt(Ref a, Ref b) {
        const Tensor<T>& va = value(a);
        const Tensor<T>& vb = value(b);
        const int m = va.rows(), k = va.cols(), n = vb.rows();
        if (vb.cols() != k) throw std::invalid_argument("matmul_nt: inner dim mismatch");
        Tensor<T> out(m, n);
        matmul_nt_accumulate(va.data(), vb.data(), out.data(), m, k, n);
        return push(std::move(out), needs_grad(a) || needs_grad(b),
                    [this, a, b, m, k, n](Ref self) {
                        const Tensor<T>& g = grad(self);
                        if (needs_grad(a))
                            matmul_accumulate(g.data(), value(b).data(), grad(a).data(), m, n, k);
                        if (needs_grad(b))
                            matmul_tn_accumulate(g.data(), value(a).data(), grad(b).data(), m, n, k);
                    });
    }

    // Adds row vector b (1 x d) to every row of x.
    Ref add_bias(Ref x, Ref b) {
        const Tensor<T>& vx = value(x);
        const Tensor<T>& vb = value(b);
        if (vb.rows() != 1 || vb.cols() != vx.cols())
            throw std::invalid_argument("add_bias: bias must be 1 x cols");
        Tensor<T> out = vx;
        const int rows = vx.rows(), cols = vx.cols();
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) out.at(i, j) += vb.at(0, j);
        return push(std::move(out), needs_grad(x) || needs_grad(b),
                    [this, x, b, rows, cols](Ref self) {
                        const Tensor<T>& g = grad(self);
                        if (needs_grad(x)) accumulate(x, g);
                        if (needs_grad(b)) {
                            Tensor<T>& gb = grad(b);
                            for (int i = 0; i < rows; ++i)
                                for (int j = 0; j < cols; ++j) gb.at(0, j) += g.at(i, j);
                        }
                    });
    }

    Ref linear(Ref x, Ref w, Ref b) { return add_bias(matmul_nt(x, w), b); }

    // ---- shape ops ----

    Ref concat_rows(const std::vector<Ref>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
        const int cols = value(parts[0]).cols();
        int rows = 0;
        bool ng = false;
        for (Ref p : parts) {
            if (value(p).cols() != cols) throw std::invalid_argument("concat_rows: col mismatch");
            rows += value(p).rows();
            ng = ng || needs_grad(p);
        }
        Tensor<T> out(rows, cols);
        int r = 0;
        for (Ref p : parts) {
            const Tensor<T>& v = value(p);
            for (int i = 0; i < v.rows(); ++i)
                for (int j = 0; j < cols; ++j) out.at(r + i, j) = v.at(i, j);
            r += v.rows();
        }
        return push(std::move(out), ng, [this, parts, cols](Ref self) {
            const Tensor<T>& g = grad(self);
            int r = 0;
            for (Ref p : parts) {
                const int pr = value(p).rows();
                if (needs_grad(p)) {
                    Tensor<T>& gp = grad(p);
                    for (int i = 0; i < pr; ++i)
                        for (int j = 0; j < cols; ++j) gp.at(i, j) += g.at(r + i, j);
                }
                r += pr;
            }
        });
    }

    Ref slice_rows(Ref x, int r0, int n) {
        const Tensor<T>& vx = value(x);
        if (r0 < 0 || n < 0 || r0 + n > vx.rows()) throw std::invalid_argument("slice_rows: range");
        const int cols = vx.cols();
        Tensor<T> out(n, cols);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < cols; ++j) out.at(i, j) = vx.at(r0 + i, j);
        return push(std::move(out), needs_grad(x), [this, x, r0, n, cols](Ref self) {
            if (!needs_grad(x)) return;
            const Tensor<T>& g = grad(self);
            Tensor<T>& gx = grad(x);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < cols; ++j) gx.at(r0 + i, j) += g.at(i, j);
        });
    }

    // Gathers rows by index; duplicate indices accumulate on backward.
    Ref row_select(Ref x, std::vector<int> idx) {
        const Tensor<T>& vx = value(x);
        const int cols = vx.cols();
        Tensor<T> out(static_cast<int>(idx.size()), cols);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] < 0 || idx[i] >= vx.rows())
                throw std::invalid_argument("row_select: index out of range");
            for (int j = 0; j < cols; ++j) out.at(static_cast<int>(i), j) = vx.at(idx[i], j);
        }
        return push(std::move(out), needs_grad(x),
                    [this, x, idx = std::move(idx), cols](Ref self) {
                        if (!needs_grad(x)) return;
                        const Tensor<T>& g = grad(self);
                        Tensor<T>& gx = grad(x);
                        for (std::size_t i = 0; i < idx.size(); ++i)
                            for (int j = 0; j < cols; ++j)
                                gx.at(idx[i], j) += g.at(static_cast<int>(i), j);
                    });
    }

    Ref slice_cols(Ref x, int c0, int n) {
        const Tensor<T>& vx = value(x);
        if (c0 < 0 || n < 0 || c0 + n > vx.cols()) throw std::invalid_argument("slice_cols: range");
        const int rows = vx.rows();
        Tensor<T> out(rows, n);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < n; ++j) out.at(i, j) = vx.at(i, c0 + j);
        return push(std::move(out), needs_grad(x), [this, x, c0, n, rows](Ref self) {
            if (!needs_grad(x)) return;
            const Tensor<T>& g = grad(self);
            Tensor<T>& gx = grad(x);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < n; ++j) gx.at(i, c0 + j) += g.at(i, j);
        });
    }

    Ref concat_cols(const std::vector<Ref>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
        const int rows = value(parts[0]).rows();
        int cols = 0;
        bool ng = false;
        for (Ref p : parts) {
            if (value(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
            cols += value(p).cols();
            ng = ng || needs_grad(p);
        }
        Tensor<T> out(rows, cols);
        int c = 0;
        for (Ref p : parts) {
            const Tensor<T>& v = value(p);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < v.cols(); ++j) out.at(i, c + j) = v.at(i, j);
            c += v.cols();
        }
        return push(std::move(out), ng, [this, parts, rows](Ref self) {
            const Tensor<T>& g = grad(self);
            int c = 0;
            for (Ref p : parts) {
                const int pc = value(p).cols();
                if (needs_grad(p)) {
                    Tensor<T>& gp = grad(p);
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < pc; ++j) gp.at(i, j) += g.at(i, c + j);
                }
                c += pc;
            }
        });
    }

    // ---- reductions / normalizations ----

    Ref mean_rows(Ref x) {
        const Tensor<T>& vx = value(x);
        const int rows = vx.rows(), cols = vx.cols();
        if (rows == 0) throw std::invalid_argument("mean_rows: empty");
        Tensor<T> out(1, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) out.at(0, j) += vx.at(i, j);
        for (int j = 0; j < cols; ++j) out.at(0, j) /= static_cast<T>(rows);
        return push(std::move(out), needs_grad(x), [this, x, rows, cols](Ref self) {
            if (!needs_grad(x)) return;
            const Tensor<T>& g = grad(self);
            Tensor<T>& gx = grad(x);
            const T inv = T(1) / static_cast<T>(rows);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j) gx.at(i, j) += g.at(0, j) * inv;
        });
    }

    Ref l2_normalize_rows(Ref x) {
        const Tensor<T>& vx = value(x);
        const int rows = vx.rows(), cols = vx.cols();
        Tensor<T> out(rows, cols);
        std::vector<T> norms(rows);
        for (int i = 0; i < rows; ++i) {
            T s = 0;
            for (int j = 0; j < cols; ++j) s += vx.at(i, j) * vx.at(i, j);
            norms[i] = std::sqrt(s);
            if (!(norms[i] > T(0))) throw std::runtime_error("l2_normalize_rows: zero-norm row");
            for (int j = 0; j < cols; ++j) out.at(i, j) = vx.at(i, j) / norms[i];
        }
        return push(std::move(out), needs_grad(x),
                    [this, x, rows, cols, norms = std::move(norms)](Ref self) {
                        if (!needs_grad(x)) return;
                        const Tensor<T>& g = grad(self);
                        const Tensor<T>& y = value(self);
                        Tensor<T>& gx = grad(x);
                        for (int i = 0; i < rows; ++i) {
                            T gy = 0;
                            for (int j = 0; j < cols; ++j) gy += g.at(i, j) * y.at(i, j);
                            for (int j = 0; j < cols; ++j)
                                gx.at(i, j) += (g.at(i, j) - y.at(i, j) * gy) / norms[i];
                        }
                    });
    }

    Ref layer_norm(Ref x, Ref gain, Ref bias, T eps = T(1e-5)) {
        const Tensor<T>& vx = value(x);
        const int rows = vx.rows(), cols = vx.cols();
        const Tensor<T>& vg = value(gain);
        const Tensor<T>& vb = value(bias);
        if (vg.cols() != cols || vb.cols() != cols)
            throw std::invalid_argument("layer_norm: gain/bias width mismatch");
        Tensor<T> out(rows, cols);
        Tensor<T> xhat(rows, cols);
        std::vector<T> inv_std(rows);
        for (int i = 0; i < rows; ++i) {
            T mu = 0;
            for (int j = 0; j < cols; ++j) mu += vx.at(i, j);
            mu /= static_cast<T>(cols);
            T var = 0;
            for (int j = 0; j < cols; ++j) {
                const T d = vx.at(i, j) - mu;
                var += d * d;
            }
            var /= static_cast<T>(cols);
            inv_std[i] = T(1) / std::sqrt(var + eps);
            for (int j = 0; j < cols; ++j) {
                xhat.at(i, j) = (vx.at(i, j) - mu) * inv_std[i];
                out.at(i, j) = xhat.at(i, j) * vg.at(0, j) + vb.at(0, j);
            }
        }
        const bool ng = needs_grad(x) || needs_grad(gain) || needs_grad(bias);
        return push(std::move(out), ng,
                    [this, x, gain, bias, rows, cols, xhat = std::move(xhat),
                     inv_std = std::move(inv_std)](Ref self) {
                        const Tensor<T>& g = grad(self);
                        const Tensor<T>& vg = value(gain);
                        if (needs_grad(gain)) {
                            Tensor<T>& gg = grad(gain);
                            for (int i = 0; i < rows; ++i)
                                for (int j = 0; j < cols; ++j)
                                    gg.at(0, j) += g.at(i, j) * xhat.at(i, j);
                        }
                        if (needs_grad(bias)) {
                            Tensor<T>& gb = grad(bias);
                            for (int i = 0; i < rows; ++i)
                                for (int j = 0; j < cols; ++j) gb.at(0, j) += g.at(i, j);
                        }
                        if (needs_grad(x)) {
                            Tensor<T>& gx = grad(x);
                            for (int i = 0; i < rows; ++i) {
                                T m1 = 0, m2 = 0;
                                for (int j = 0; j < cols; ++j) {
                                    const T gh = g.at(i, j) * vg.at(0, j);
                                    m1 += gh;
                                    m2 += gh * xhat.at(i, j);
                                }
                                m1 /= static_cast<T>(cols);
                                m2 /= static_cast<T>(cols);
                                for (int j = 0; j < cols; ++j) {
                                    const T gh = g.at(i, j) * vg.at(0, j);
                                    gx.at(i, j) += (gh - m1 - xhat.at(i, j) * m2) * inv_std[i];
                                }
                            }
                        }
                    });
    }

    Ref gelu(Ref x) {
        const Tensor<T>& vx = value(x);
        Tensor<T> out(vx.dims());
        for (std::size_t i = 0; i < vx.numel(); ++i) {
            const double xv = static_cast<double>(vx[i]);
            out[i] = static_cast<T>(0.5 * xv * (1.0 + std::erf(xv * 0.7071067811865475)));
        }
        return push(std::move(out), needs_grad(x), [this, x](Ref self) {
            if (!needs_grad(x)) return;
            const Tensor<T>& g = grad(self);
            const Tensor<T>& vx = value(x);
            Tensor<T>& gx = grad(x);
            for (std::size_t i = 0; i < vx.numel(); ++i) {
                const double xv = static_cast<double>(vx[i]);
                const double cdf = 0.5 * (1.0 + std::erf(xv * 0.7071067811865475));
                const double pdf = 0.3989422804014327 * std::exp(-0.5 * xv * xv);
                gx[i] += g[i] * static_cast<T>(cdf + xv * pdf);
            }
        });
    }

    // Row-wise softmax. `mask` (if nonempty) has one byte per entry;
    // zero bytes are excluded. A fully masked row is an error.
    Ref softmax_rows(Ref x, std::vector<std::uint8_t> mask = {}) {
        const Tensor<T>& vx = value(x);
        const int rows = vx.rows(), cols = vx.cols();
        if (!mask.empty() && mask.size() != vx.numel())
            throw std::invalid_argument("softmax_rows: mask size mismatch");
        Tensor<T> out(rows, cols);
        for (int i = 0; i < rows; ++i) {
            T mx = 0;
            bool any = false;
            for (int j = 0; j < cols; ++j) {
                if (!mask.empty() && !mask[static_cast<std::size_t>(i) * cols + j]) continue;
                if (!any || vx.at(i, j) > mx) mx = vx.at(i, j);
                any = true;
            }
            if (!any) throw std::runtime_error("degenerate mask");
            T denom = 0;
            for (int j = 0; j < cols; ++j) {
                if (!mask.empty() && !mask[static_cast<std::size_t>(i) * cols + j]) {
                    out.at(i, j) = T(0);
                    continue;
                }
                out.at(i, j) = std::exp(vx.at(i, j) - mx);
                denom += out.at(i, j);
            }
            for (int j = 0; j < cols; ++j) out.at(i, j) /= denom;
        }
        return push(std::move(out), needs_grad(x), [this, x, rows, cols](Ref self) {
            if (!needs_grad(x)) return;
            const Tensor<T>& g = grad(self);
            const Tensor<T>& p = value(self);
            Tensor<T>& gx = grad(x);
            for (int i = 0; i < rows; ++i) {
                T gp = 0;
                for (int j = 0; j < cols; ++j) gp += g.at(i, j) * p.at(i, j);
                for (int j = 0; j < cols; ++j) gx.at(i, j) += p.at(i, j) * (g.at(i, j) - gp);
            }
        });
    }

    Ref cell(Ref x, int r, int c) {
        const Tensor<T>& vx = value(x);
        if (r < 0 || r >= vx.rows() || c < 0 || c >= vx.cols())
            throw std::invalid_argument("cell: out of range");
        Tensor<T> out(1, 1);
        out.at(0, 0) = vx.at(r, c);
        return push(std::move(out), needs_grad(x), [this, x, r, c](Ref self) {
            if (!needs_grad(x)) return;
            grad(x).at(r, c) += grad(self).at(0, 0);
        });
    }

    Ref sum_squares(Ref x) {
        const Tensor<T>& vx = value(x);
        Tensor<T> out(1, 1);
        T s = 0;
        for (std::size_t i = 0; i < vx.numel(); ++i) s += vx[i] * vx[i];
        out.at(0, 0) = s;
        return push(std::move(out), needs_grad(x), [this, x](Ref self) {
            if (!needs_grad(x)) return;
            const T g = grad(self).at(0, 0);
            const Tensor<T>& vx = value(x);
            Tensor<T>& gx = grad(x);
            for (std::size_t i = 0; i < vx.numel(); ++i) gx[i] += T(2) * vx[i] * g;
        });
    }

    // Stabilized weighted binary cross entropy over a logit matrix.
    // pos_mask marks positive pairs; every entry is either a positive
    // (weight 1) or a negative (weight neg_weight). Returns a 1x1 sum.
    Ref bce_with_logits(Ref logits, const std::vector<std::uint8_t>& pos_mask, T neg_weight) {
        const Tensor<T>& z = value(logits);
        if (pos_mask.size() != z.numel())
            throw std::invalid_argument("bce_with_logits: mask size mismatch");
        Tensor<T> out(1, 1);
        T total = 0;
        for (std::size_t i = 0; i < z.numel(); ++i) {
            const T zi = z[i];
            // -log sigmoid(z) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z)
            const T sp_pos = softplus(-zi);
            const T sp_neg = softplus(zi);
            total += pos_mask[i] ? sp_pos : neg_weight * sp_neg;
        }
        out.at(0, 0) = total;
        return push(std::move(out), needs_grad(logits),
                    [this, logits, pos_mask, neg_weight](Ref self) {
                        if (!needs_grad(logits)) return;
                        const T g = grad(self).at(0, 0);
                        const Tensor<T>& z = value(logits);
                        Tensor<T>& gz = grad(logits);
                        for (std::size_t i = 0; i < z.numel(); ++i) {
                            const T s = sigmoid(z[i]);
                            gz[i] += g * (pos_mask[i] ? (s - T(1)) : neg_weight * s);
                        }
                    });
    }

    // Softmax cross entropy summed over rows; targets[i] indexes the
    // positive column of row i.
    Ref softmax_nll(Ref logits, const std::vector<int>& targets) {
        const Tensor<T>& z = value(logits);
        const int rows = z.rows(), cols = z.cols();
        if (static_cast<int>(targets.size()) != rows)
            throw std::invalid_argument("softmax_nll: target count mismatch");
        Tensor<T> out(1, 1);
        T total = 0;
        for (int i = 0; i < rows; ++i) {
            if (targets[i] < 0 || targets[i] >= cols)
                throw std::invalid_argument("softmax_nll: target out of range");
            T mx = z.at(i, 0);
            for (int j = 1; j < cols; ++j) mx = std::max(mx, z.at(i, j));
            T lse = 0;
            for (int j = 0; j < cols; ++j) lse += std::exp(z.at(i, j) - mx);
            lse = mx + std::log(lse);
            total += lse - z.at(i, targets[i]);
        }
        out.at(0, 0) = total;
        return push(std::move(out), needs_grad(logits), [this, logits, targets](Ref self) {
            if (!needs_grad(logits)) return;
            const T g = grad(self).at(0, 0);
            const Tensor<T>& z = value(logits);
            Tensor<T>& gz = grad(logits);
            const int rows = z.rows(), cols = z.cols();
            for (int i = 0; i < rows; ++i) {
                T mx = z.at(i, 0);
                for (int j = 1; j < cols; ++j) mx = std::max(mx, z.at(i, j));
                T denom = 0;
                for (int j = 0; j < cols; ++j) denom += std::exp(z.at(i, j) - mx);
                for (int j = 0; j < cols; ++j) {
                    T p = std::exp(z.at(i, j) - mx) / denom;
                    gz.at(i, j) += g * (p - (targets[i] == j ? T(1) : T(0)));
                }
            }
        });
    }

    // ---- backward ----

    void backward(Ref loss) {
        const Tensor<T>& lv = value(loss);
        if (lv.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
        grad(loss).at(0, 0) = T(1);
        for (int i = loss; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.needs_grad && n.grad_alloc && n.backward) n.backward(i);
        }
        for (auto& [r, p] : bindings_) {
            Node& n = nodes_[r];
            if (!n.grad_alloc) continue;
            if (!p->grad.same_shape(p->values)) p->grad = Tensor<T>(p->values.dims());
            for (std::size_t i = 0; i < n.grad.numel(); ++i) p->grad[i] += n.grad[i];
        }
    }

    static T sigmoid(T z) {
        if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
        const T e = std::exp(z);
        return e / (T(1) + e);
    }

    static T softplus(T z) {
        if (z > T(0)) return z + std::log1p(std::exp(-z));
        return std::log1p(std::exp(z));
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool grad_alloc = false;
        bool needs_grad = false;
        std::function<void(Ref)> backward;
    };

    Ref push(Tensor<T> v, bool needs, std::function<void(Ref)> bw) {
        Node n;
        n.value = std::move(v);
        n.needs_grad = needs;
        if (needs) n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return static_cast<Ref>(nodes_.size()) - 1;
    }

    void accumulate(Ref r, const Tensor<T>& g) {
        Tensor<T>& dst = grad(r);
        for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
    }

    void require_same_shape(Ref a, Ref b, const char* op) const {
        if (!nodes_[check(a)].value.same_shape(nodes_[check(b)].value))
            throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }

    Ref check(Ref r) const {
        if (r < 0 || r >= static_cast<Ref>(nodes_.size()))
            throw std::out_of_range("tape ref out of range");
        return r;
    }

    std::vector<Node> nodes_;
    std::vector<std::pair<Ref, Parameter<T>*>> bindings_;
};

}  // namespace ovml
