// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "promptsep/tensor.hpp"

namespace promptsep {

/// Reverse-mode automatic differentiation over dense tensors.
///
/// Every operation appends a node holding the result value and, when
/// gradients are enabled and reachable, a closure that scatters the node's
/// gradient back to its parents. Nodes are identified by integer handles;
/// a Tape owns one forward computation and is discarded afterwards.
///
/// With gradients disabled (inference) the value buffers of spent
/// intermediate nodes can be released early via free_values_below(), which
/// keeps long forward passes at a small working set.
template <typename T>
class Tape {
   public:
    struct Ref {
        std::int32_t id = -1;
        bool valid() const { return id >= 0; }
    };

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    Ref leaf(TensorData<T> value, bool requires_grad = false) {
        return push(std::move(value), grad_enabled_ && requires_grad, nullptr);
    }
    Ref constant(TensorData<T> value) { return leaf(std::move(value), false); }

    const TensorData<T>& val(Ref r) const {
        const Node& n = node(r);
        if (n.value.v.empty() && n.value.numel() != 0)
            throw std::logic_error("tape value was already released");
        return n.value;
    }

    bool requires_grad(Ref r) const { return node(r).requires_grad; }

    /// Gradient buffer of a node, allocated (zeroed) on first access.
    TensorData<T>& grad(Ref r) {
        Node& n = node(r);
        if (n.grad.v.empty()) {
            n.grad.shape = n.value.shape;
            n.grad.v.assign(static_cast<std::size_t>(n.grad.numel()), T(0));
        }
        return n.grad;
    }

    /// Reverse sweep from a scalar root.
    void backward(Ref root, T seed = T(1)) {
        if (!grad_enabled_) throw std::logic_error("backward() on a no-grad tape");
        if (val(root).numel() != 1) throw std::logic_error("backward root must be scalar");
        grad(root).v[0] += seed;
        for (std::int32_t i = root.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.requires_grad && n.back && !n.grad.v.empty()) n.back(*this);
        }
    }

    std::int32_t mark() const { return static_cast<std::int32_t>(nodes_.size()); }

    /// Releases value storage of nodes in [lo, hi) except the listed ones.
    /// Only meaningful on no-grad tapes; a no-op when gradients are enabled.
    void free_values_below(std::int32_t lo, std::int32_t hi, std::initializer_list<Ref> keep) {
        if (grad_enabled_) return;
        for (std::int32_t i = lo; i < hi && i < mark(); ++i) {
            bool kept = false;
            for (const Ref& k : keep) kept = kept || (k.id == i);
            if (!kept) {
                nodes_[static_cast<std::size_t>(i)].value.v.clear();
                nodes_[static_cast<std::size_t>(i)].value.v.shrink_to_fit();
            }
        }
    }

    // ------------------------------------------------------------------
    // elementwise
    // ------------------------------------------------------------------

    Ref add(Ref a, Ref b) { return binary_ew(a, b, "add", [](T x, T y) { return x + y; }, T(1), T(1)); }
    Ref sub(Ref a, Ref b) { return binary_ew(a, b, "sub", [](T x, T y) { return x - y; }, T(1), T(-1)); }

    Ref mul(Ref a, Ref b) {
        check_same_shape(a, b, "mul");
        TensorData<T> out(val(a).shape);
        const auto& av = val(a).v;
        const auto& bv = val(b).v;
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = av[i] * bv[i];
        bool rg = requires_grad(a) || requires_grad(b);
        Ref out_ref = push(std::move(out), rg, nullptr);
        if (rg) {
            std::int32_t ai = a.id, bi = b.id, oi = out_ref.id;
            set_back(out_ref, [ai, bi, oi](Tape& t) {
                const auto& g = t.node_at(oi).grad.v;
                if (t.node_at(ai).requires_grad) {
                    auto& ga = t.grad(Ref{ai}).v;
                    const auto& bvv = t.node_at(bi).value.v;
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bvv[i];
                }
                if (t.node_at(bi).requires_grad) {
                    auto& gb = t.grad(Ref{bi}).v;
                    const auto& avv = t.node_at(ai).value.v;
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * avv[i];
                }
            });
        }
        return out_ref;
    }

    Ref scale(Ref a, T c) {
        TensorData<T> out(val(a).shape);
        const auto& av = val(a).v;
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = av[i] * c;
        return unary_linear(a, std::move(out), [c](Tape& t, std::int32_t ai, const std::vector<T>& g) {
            auto& ga = t.grad(Ref{ai}).v;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        });
    }

    Ref add_scalar(Ref a, T c) {
        TensorData<T> out(val(a).shape);
        const auto& av = val(a).v;
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = av[i] + c;
        return unary_linear(a, std::move(out), [](Tape& t, std::int32_t ai, const std::vector<T>& g) {
            auto& ga = t.grad(Ref{ai}).v;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }

    /// y = x + alpha * c for a constant tensor c.
    Ref axpy_const(Ref a, const TensorData<T>& c, T alpha) {
        if (val(a).shape != c.shape) throw std::invalid_argument("axpy_const: shape mismatch");
        TensorData<T> out(val(a).shape);
        const auto& av = val(a).v;
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = av[i] + alpha * c.v[i];
        return unary_linear(a, std::move(out), [](Tape& t, std::int32_t ai, const std::vector<T>& g) {
            auto& ga = t.grad(Ref{ai}).v;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }

    Ref silu(Ref a) {
        const auto& av = val(a).v;
        TensorData<T> out(val(a).shape);
        for (std::size_t i = 0; i < out.v.size(); ++i) {
            T s = sigmoid_of(av[i]);
            out.v[i] = av[i] * s;
        }
        bool rg = requires_grad(a);
        Ref out_ref = push(std::move(out), rg, nullptr);
        if (rg) {
            std::int32_t ai = a.id, oi = out_ref.id;
            set_back(out_ref, [ai, oi](Tape& t) {
                const auto& g = t.node_at(oi).grad.v;
                const auto& x = t.node_at(ai).value.v;
                auto& ga = t.grad(Ref{ai}).v;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    T s = sigmoid_of(x[i]);
                    ga[i] += g[i] * (s * (T(1) + x[i] * (T(1) - s)));
                }
            });
        }
        return out_ref;
    }

    Ref tanh_op(Ref a) {
        const auto& av = val(a).v;
        TensorData<T> out(val(a).shape);
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::tanh(av[i]);
        bool rg = requires_grad(a);
        Ref out_ref = push(std::move(out), rg, nullptr);
        if (rg) {
            std::int32_t ai = a.id, oi = out_ref.id;
            set_back(out_ref, [ai, oi](Tape& t) {
                const auto& g = t.node_at(oi).grad.v;
                const auto& y = t.node_at(oi).value.v;
                auto& ga = t.grad(Ref{ai}).v;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
            });
        }
        return out_ref;
    }

    Ref log_op(Ref a) {
        const auto& av = val(a).v;
        TensorData<T> out(val(a).shape);
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::log(av[i]);
        bool rg = requires_grad(a);
        Ref out_ref = push(std::move(out), rg, nullptr);
        if (rg) {
            std::int32_t ai = a.id, oi = out_ref.id;
            set_back(out_ref, [ai, oi](Tape& t) {
                const auto& g = t.node_at(oi).grad.v;
                const auto& x = t.node_at(ai).value.v;
                auto& ga = t.grad(Ref{ai}).v;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
            });
        }
        return out_ref;
    }

    // ------------------------------------------------------------------
    // reductions
    // ------------------------------------------------------------------

    Ref sum_sq(Ref a) {
        const auto& av = val(a).v;
        T acc = T(0);
        for (T x : av) acc += x * x;
        bool rg = requires_grad(a);
        Ref out_ref = push(TensorData<T>::scalar(acc), rg, nullptr);
        if (rg) {
            std::int32_t ai = a.id, oi = out_ref.id;
            set_back(out_ref, [ai, oi](Tape& t) {
                const T g = t.node_at(oi).grad.v[0];
                const auto& x = t.node_at(ai).value.v;
                auto& ga = t.grad(Ref{ai}).v;
                for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g * T(2) * x[i];
            });
        }
        return out_ref;
    }

    // ------------------------------------------------------------------
    // shape ops
    // ------------------------------------------------------------------

    Ref slice0(Ref a, std::int64_t r0, std::int64_t r1) {
        const TensorData<T>& x = val(a);
        if (x.rank() < 1 || r0 < 0 || r1 > x.dim(0) || r0 >= r1)
            throw std::invalid_argument("slice0: bad range");
        const std::int64_t block = x.numel() / x.dim(0);
        std::vector<std::int64_t> shape = x.shape;
        shape[0] = r1 - r0;
        TensorData<T> out(shape);
        std::copy(x.v.begin() + r0 * block, x.v.begin() + r1 * block, out.v.begin());
        return unary_linear(a, std::move(out),
                            [r0, block](Tape& t, std::int32_t ai, const std::vector<T>& g) {
                                auto& ga = t.grad(Ref{ai}).v;
                                for (std::size_t i = 0; i < g.size(); ++i)
                                    ga[static_cast<std::size_t>(r0 * block) + i] += g[i];
                            });
    }

    Ref concat0(const std::vector<Ref>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat0: no parts");
        std::vector<std::int64_t> shape = val(parts[0]).shape;
        std::int64_t rows = 0;
        for (const Ref& p : parts) {
            const auto& s = val(p).shape;
            if (s.size() != shape.size()) throw std::invalid_argument("concat0: rank mismatch");
            for (std::size_t d = 1; d < s.size(); ++d)
                if (s[d] != shape[d]) throw std::invalid_argument("concat0: trailing shape mismatch");
            rows += s[0];
        }
        shape[0] = rows;
        TensorData<T> out(shape);
        std::size_t off = 0;
        bool rg = false;
        for (const Ref& p : parts) {
            const auto& pv = val(p).v;
            std::copy(pv.begin(), pv.end(), out.v.begin() + static_cast<std::ptrdiff_t>(off));
            off += pv.size();
            rg = rg || requires_grad(p);
        }
        rg = rg && grad_enabled_;
        Ref out_ref = push(std::move(out), rg, nullptr);
        if (rg) {
            std::vector<std::int32_t> ids;
            std::vector<std::size_t> sizes;
            for (const Ref& p : parts) {
                ids.push_back(p.id);
                sizes.push_back(val(p).v.size());
            }
            std::int32_t oi = out_ref.id;
            set_back(out_ref, [ids, sizes, oi](Tape& t) {
                const auto& g = t.node_at(oi).grad.v;
                std::size_t off2 = 0;
                for (std::size_t pi = 0; pi < ids.size(); ++pi) {
                    if (t.node_at(ids[pi]).requires_grad) {
                        auto& ga = t.grad(Ref{ids[pi]}).v;
                        for (std::size_t i = 0; i < sizes[pi]; ++i) ga[i] += g[off2 + i];
                    }
                    off2 += sizes[pi];
                }
            });
        }
        return out_ref;
    }

    /// Column slice of a rank-2 tensor.
    Ref slice_cols(Ref a, std::int64_t c0, std::int64_t c1) {
        const TensorData<T>& x = val(a);
        if (x.rank() != 2) throw std::invalid_argument("slice_cols: rank-2 only");
        if (c0 < 0 || c1 > x.dim(1) || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
        const std::int64_t R = x.dim(0), C = x.dim(1), W = c1 - c0;
        TensorData<T> out({R, W});
        for (std::int64_t r = 0; r < R; ++r)
            std::copy(x.v.begin() + r * C + c0, x.v.begin() + r * C + c1, out.v.begin() + r * W);
        return unary_linear(a, std::move(out),
                            [R, C, W, c0](Tape& t, std::int32_t ai, const std::vector<T>& g) {
                                auto& ga = t.grad(Ref{ai}).v;
                                for (std::int64_t r = 0; r < R; ++r)
                                    for (std::int64_t c = 0; c < W; ++c)
                                        ga[static_cast<std::size_t>(r * C + c0 + c)] +=
                                            g[static_cast<std::size_t>(r * W + c)];
                            });
    }

    Ref concat_cols(const std::vector<Ref>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
        const std::int64_t R = val(parts[0]).dim(0);
        std::int64_t C = 0;
        bool rg = false;
        for (const Ref& p : parts) {
            const auto& s = val(p);
            if (s.rank() != 2 || s.dim(0) != R) throw std::invalid_argument("concat_cols: shape mismatch");
            C += s.dim(1);
            rg = rg || requires_grad(p);
        }
        TensorData<T> out({R, C});
        std::int64_t off = 0;
        for (const Ref& p : parts) {
            const auto& s = val(p);
            const std::int64_t W = s.dim(1);
            for (std::int64_t r = 0; r < R; ++r)
                std::copy(s.v.begin() + r * W, s.v.begin() + (r + 1) * W, out.v.begin() + r * C + off);
            off += W;
        }
        rg = rg && grad_enabled_;
        Ref out_ref = push(std::move(out), rg, nullptr);
        if (rg) {
            std::vector<std::int32_t> ids;
            std::vector<std::int64_t> widths;
            for (const Ref& p : parts) {
                ids.push_back(p.id);
                widths.push_back(val(p).dim(1));
            }
            std::int32_t oi = out_ref.id;
            set_back(out_ref, [ids, widths, R, C, oi](Tape& t) {
                const auto& g = t.node_at(oi).grad.v;
                std::int64_t off2 = 0;
                for (std::size_t pi = 0; pi < ids.size(); ++pi) {
                    const std::int64_t W = widths[pi];
                    if (t.node_at(ids[pi]).requires_grad) {
                        auto& ga = t.grad(Ref{ids[pi]}).v;
                        for (std::int64_t r = 0; r < R; ++r)
                            for (std::int64_t c = 0; c < W; ++c)
                                ga[static_cast<std::size_t>(r * W + c)] +=
                                    g[static_cast<std::size_t>(r * C + off2 + c)];
                    }
                    off2 += W;
                }
            });
        }
        return out_ref;
    }

    /// [A,B,C] -> [B,A,C]
    Ref transpose01(Ref a) {
        const TensorData<T>& x = val(a);
        if (x.rank() != 3) throw std::invalid_argument("transpose01: rank-3 only");
        const std::int64_t A = x.dim(0), B = x.dim(1), C = x.dim(2);
        TensorData<T> out({B, A, C});
        for (std::int64_t i = 0; i < A; ++i)
            for (std::int64_t j = 0; j < B; ++j)
                std::copy(x.v.begin() + (i * B + j) * C, x.v.begin() + (i * B + j + 1) * C,
                          out.v.begin() + (j * A + i) * C);
        return unary_linear(a, std::move(out),
                            [A, B, C](Tape& t, std::int32_t ai, const std::vector<T>& g) {
                                auto& ga = t.grad(Ref{ai}).v;
                                for (std::int64_t i = 0; i < A; ++i)
                                    for (std::int64_t j = 0; j < B; ++j)
                                        for (std::int64_t c = 0; c < C; ++c)
                                            ga[static_cast<std::size_t>((i * B + j) * C + c)] +=
                                                g[static_cast<std::size_t>((j * A + i) * C + c)];
                            });
    }

    /// [A,B,C] -> [A,C], picking index k on the middle axis.
    Ref slice_mid(Ref a, std::int64_t k) {
        const TensorData<T>& x = val(a);
        if (x.rank() != 3) throw std::invalid_argument("slice_mid: rank-3 only");
        const std::int64_t A = x.dim(0), B = x.dim(1), C = x.dim(2);
        checked_index(k, B, "slice_mid");
        TensorData<T> out({A, C});
        for (std::int64_t i = 0; i < A; ++i)
            std::copy(x.v.begin() + (i * B + k) * C, x.v.begin() + (i * B + k + 1) * C,
                      out.v.begin() + i * C);
        return unary_linear(a, std::move(out),
                            [B, C, k](Tape& t, std::int32_t ai, const std::vector<T>& g) {
                                auto& ga = t.grad(Ref{ai}).v;
                                const std::int64_t A2 = static_cast<std::int64_t>(g.size()) / C;
                                for (std::int64_t i = 0; i < A2; ++i)
                                    for (std::int64_t c = 0; c < C; ++c)
                                        ga[static_cast<std::size_t>((i * B + k) * C + c)] +=
                                            g[static_cast<std::size_t>(i * C + c)];
                            });
    }

    /// K tensors of shape [A,C] -> [A,K,C]
    Ref stack_mid(const std::vector<Ref>& parts) {
        if (parts.empty()) throw std::invalid_argument("stack_mid: no parts");
        const std::int64_t A = val(parts[0]).dim(0), C = val(parts[0]).dim(1);
        const std::int64_t K = static_cast<std::int64_t>(parts.size());
        bool rg = false;
        for (const Ref& p : parts) {
            if (val(p).rank() != 2 || val(p).dim(0) != A || val(p).dim(1) != C)
                throw std::invalid_argument("stack_mid: shape mismatch");
            rg = rg || requires_grad(p);
        }
        TensorData<T> out({A, K, C});
        for (std::int64_t k = 0; k < K; ++k) {
            const auto& pv = val(parts[static_cast<std::size_t>(k)]).v;
            for (std::int64_t i = 0; i < A; ++i)
                std::copy(pv.begin() + i * C, pv.begin() + (i + 1) * C,
                          out.v.begin() + (i * K + k) * C);
        }
        rg = rg && grad_enabled_;
        Ref out_ref = push(std::move(out), rg, nullptr);
        if (rg) {
            std::vector<std::int32_t> ids;
            for (const Ref& p : parts) ids.push_back(p.id);
            std::int32_t oi = out_ref.id;
            set_back(out_ref, [ids, A, K, C, oi](Tape& t) {
                const auto& g = t.node_at(oi).grad.v;
                for (std::int64_t k = 0; k < K; ++k) {
                    if (!t.node_at(ids[static_cast<std::size_t>(k)]).requires_grad) continue;
                    auto& ga = t.grad(Ref{ids[static_cast<std::size_t>(k)]}).v;
                    for (std::int64_t i = 0; i < A; ++i)
                        for (std::int64_t c = 0; c < C; ++c)
                            ga[static_cast<std::size_t>(i * C + c)] +=
                                g[static_cast<std::size_t>((i * K + k) * C + c)];
                }
            });
        }
        return out_ref;
    }

    /// [1,D] or [D] -> [1,K,D], repeating the vector K times.
    Ref tile_to_3d(Ref p, std::int64_t K) {
        const TensorData<T>& x = val(p);
        const std::int64_t D = x.dim(x.rank() - 1);
        if (x.numel() != D) throw std::invalid_argument("tile_to_3d: input must be a single vector");
        TensorData<T> out({1, K, D});
        for (std::int64_t k = 0; k < K; ++k)
            std::copy(x.v.begin(), x.v.end(), out.v.begin() + k * D);
        return unary_linear(p, std::move(out),
                            [K, D](Tape& t, std::int32_t ai, const std::vector<T>& g) {
                                auto& ga = t.grad(Ref{ai}).v;
                                for (std::int64_t k = 0; k < K; ++k)
                                    for (std::int64_t d = 0; d < D; ++d)
                                        ga[static_cast<std::size_t>(d)] += g[static_cast<std::size_t>(k * D + d)];
                            });
    }

    /// z [S,K,D] * p [1,K,D] with p broadcast along the first axis.
    Ref mul_bcast0(Ref z, Ref p) {
        const TensorData<T>& zx = val(z);
        const TensorData<T>& px = val(p);
        if (zx.rank() != 3 || px.rank() != 3 || px.dim(0) != 1 || px.dim(1) != zx.dim(1) ||
            px.dim(2) != zx.dim(2))
            throw std::invalid_argument("mul_bcast0: shape mismatch");
        const std::int64_t S = zx.dim(0), KD = zx.dim(1) * zx.dim(2);
        TensorData<T> out(zx.shape);
        for (std::int64_t s = 0; s < S; ++s)
            for (std::int64_t i = 0; i < KD; ++i)
                out.v[static_cast<std::size_t>(s * KD + i)] =
                    zx.v[static_cast<std::size_t>(s * KD + i)] * px.v[static_cast<std::size_t>(i)];
        bool rg = requires_grad(z) || requires_grad(p);
        Ref out_ref = push(std::move(out), rg, nullptr);
        if (rg) {
            std::int32_t zi = z.id, pi = p.id, oi = out_ref.id;
            set_back(out_ref, [zi, pi, oi, S, KD](Tape& t) {
                const auto& g = t.node_at(oi).grad.v;
                if (t.node_at(zi).requires_grad) {
                    auto& gz = t.grad(Ref{zi}).v;
                    const auto& pv = t.node_at(pi).value.v;
                    for (std::int64_t s = 0; s < S; ++s)
                        for (std::int64_t i = 0; i < KD; ++i)
                            gz[static_cast<std::size_t>(s * KD + i)] +=
                                g[static_cast<std::size_t>(s * KD + i)] * pv[static_cast<std::size_t>(i)];
                }
                if (t.node_at(pi).requires_grad) {
                    auto& gp = t.grad(Ref{pi}).v;
                    const auto& zv = t.node_at(zi).value.v;
                    for (std::int64_t s = 0; s < S; ++s)
                        for (std::int64_t i = 0; i < KD; ++i)
                            gp[static_cast<std::size_t>(i)] +=
                                g[static_cast<std::size_t>(s * KD + i)] * zv[static_cast<std::size_t>(s * KD + i)];
                }
            });
        }
        return out_ref;
    }

    // ------------------------------------------------------------------
    // matrix ops (Eigen-backed)
    // ------------------------------------------------------------------

    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MapM = Eigen::Map<Mat>;
    using CMapM = Eigen::Map<const Mat>;

    /// x [..., K] @ W [K, N] + b [N]; leading axes are flattened into rows.
    Ref linear(Ref x, Ref w, Ref b) {
        const TensorData<T>& xv = val(x);
        const TensorData<T>& wv = val(w);
        if (wv.rank() != 2) throw std::invalid_argument("linear: weight must be rank-2");
        const std::int64_t K = wv.dim(0), N = wv.dim(1);
        if (xv.dim(xv.rank() - 1) != K) throw std::invalid_argument("linear: inner dim mismatch");
        const std::int64_t M = xv.numel() / K;

        std::vector<std::int64_t> out_shape = xv.shape;
        out_shape.back() = N;
        TensorData<T> out(out_shape);
        {
            CMapM X(xv.v.data(), M, K);
            CMapM W(wv.v.data(), K, N);
            MapM Y(out.v.data(), M, N);
            Y.noalias() = X * W;
            if (b.valid()) {
                const TensorData<T>& bv = val(b);
                if (bv.numel() != N) throw std::invalid_argument("linear: bias size mismatch");
                Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> B(bv.v.data(), N);
                Y.rowwise() += B;
            }
        }
        bool rg = requires_grad(x) || requires_grad(w) || (b.valid() && requires_grad(b));
        Ref out_ref = push(std::move(out), rg, nullptr);
        if (rg) {
            std::int32_t xi = x.id, wi = w.id, bi = b.valid() ? b.id : -1, oi = out_ref.id;
            set_back(out_ref, [xi, wi, bi, oi, M, K, N](Tape& t) {
                const auto& gv = t.node_at(oi).grad.v;
                CMapM G(gv.data(), M, N);
                if (t.node_at(xi).requires_grad) {
                    CMapM W(t.node_at(wi).value.v.data(), K, N);
                    MapM GX(t.grad(Ref{xi}).v.data(), M, K);
                    GX.noalias() += G * W.transpose();
                }
                if (t.node_at(wi).requires_grad) {
                    CMapM X(t.node_at(xi).value.v.data(), M, K);
                    MapM GW(t.grad(Ref{wi}).v.data(), K, N);
                    GW.noalias() += X.transpose() * G;
                }
                if (bi >= 0 && t.node_at(bi).requires_grad) {
                    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> GB(t.grad(Ref{bi}).v.data(), N);
                    GB += G.colwise().sum();
                }
            });
        }
        return out_ref;
    }

    // ------------------------------------------------------------------
    // internals shared with the nn ops defined in nn.hpp
    // ------------------------------------------------------------------

    struct Node {
        TensorData<T> value;
        TensorData<T> grad;
        std::function<void(Tape&)> back;
        bool requires_grad = false;
    };

    Node& node_at(std::int32_t id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node_at(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)]; }

    Ref push(TensorData<T> value, bool requires_grad, std::function<void(Tape&)> back) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad && grad_enabled_;
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Ref{static_cast<std::int32_t>(nodes_.size() - 1)};
    }

    void set_back(Ref r, std::function<void(Tape&)> back) { node(r).back = std::move(back); }

    static T sigmoid_of(T x) { return T(1) / (T(1) + std::exp(-x)); }

   private:
    Node& node(Ref r) {
        if (!r.valid() || r.id >= mark()) throw std::logic_error("invalid tape ref");
        return nodes_[static_cast<std::size_t>(r.id)];
    }
    const Node& node(Ref r) const {
        if (!r.valid() || r.id >= mark()) throw std::logic_error("invalid tape ref");
        return nodes_[static_cast<std::size_t>(r.id)];
    }

    void check_same_shape(Ref a, Ref b, const char* op) const {
        if (!val(a).same_shape(val(b)))
            throw std::invalid_argument(std::string(op) + ": shape mismatch " + val(a).shape_str() +
                                        " vs " + val(b).shape_str());
    }

    template <typename F>
    Ref binary_ew(Ref a, Ref b, const char* name, F f, T da, T db) {
        check_same_shape(a, b, name);
        TensorData<T> out(val(a).shape);
        const auto& av = val(a).v;
        const auto& bv = val(b).v;
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = f(av[i], bv[i]);
        bool rg = requires_grad(a) || requires_grad(b);
        Ref out_ref = push(std::move(out), rg, nullptr);
        if (rg) {
            std::int32_t ai = a.id, bi = b.id, oi = out_ref.id;
            set_back(out_ref, [ai, bi, oi, da, db](Tape& t) {
                const auto& g = t.node_at(oi).grad.v;
                if (t.node_at(ai).requires_grad) {
                    auto& ga = t.grad(Ref{ai}).v;
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += da * g[i];
                }
                if (t.node_at(bi).requires_grad) {
                    auto& gb = t.grad(Ref{bi}).v;
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += db * g[i];
                }
            });
        }
        return out_ref;
    }

    /// Helper for ops that are linear in their single parent: the backward
    /// closure receives (tape, parent id, output grad).
    template <typename BackFn>
    Ref unary_linear(Ref a, TensorData<T> out, BackFn back) {
        bool rg = requires_grad(a);
        Ref out_ref = push(std::move(out), rg, nullptr);
        if (rg) {
            std::int32_t ai = a.id, oi = out_ref.id;
            set_back(out_ref, [ai, oi, back](Tape& t) {
                if (t.node_at(ai).requires_grad) back(t, ai, t.node_at(oi).grad.v);
            });
        }
        return out_ref;
    }

    std::vector<Node> nodes_;
    bool grad_enabled_;
};

}  // namespace promptsep
