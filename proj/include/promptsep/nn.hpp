// Copyright 2026 The promptsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "promptsep/stft.hpp"
#include "promptsep/tape.hpp"
#include "promptsep/tensor.hpp"

namespace promptsep {
namespace nn {

/// Root-mean-square normalization over groups of the channel axis, with a
/// learnable per-channel scale. Input is treated as rows of D channels.
template <typename T>
typename Tape<T>::Ref rms_group_norm(Tape<T>& tape, typename Tape<T>::Ref x,
                                     typename Tape<T>::Ref gamma, int groups, T eps = T(1e-8)) {
    const TensorData<T>& xv = tape.val(x);
    const TensorData<T>& gv = tape.val(gamma);
    const std::int64_t D = xv.dim(xv.rank() - 1);
    if (gv.numel() != D) throw std::invalid_argument("rms_group_norm: gamma size mismatch");
    if (groups < 1 || D % groups != 0)
        throw std::invalid_argument("rms_group_norm: channel count not divisible by groups");
    const std::int64_t M = xv.numel() / D;
    const std::int64_t n = D / groups;

    TensorData<T> out(xv.shape);
    for (std::int64_t r = 0; r < M; ++r) {
        const T* xr = xv.v.data() + r * D;
        T* yr = out.v.data() + r * D;
        for (int g = 0; g < groups; ++g) {
            const T* xg = xr + g * n;
            T m = T(0);
            for (std::int64_t i = 0; i < n; ++i) m += xg[i] * xg[i];
            m = m / static_cast<T>(n);
            const T inv = T(1) / std::sqrt(m + eps);
            for (std::int64_t i = 0; i < n; ++i)
                yr[g * n + i] = gv.v[static_cast<std::size_t>(g * n + i)] * xg[i] * inv;
        }
    }
    bool rg = tape.requires_grad(x) || tape.requires_grad(gamma);
    auto out_ref = tape.push(std::move(out), rg, nullptr);
    if (rg) {
        std::int32_t xi = x.id, gi = gamma.id, oi = out_ref.id;
        const int G = groups;
        tape.set_back(out_ref, [xi, gi, oi, M, D, n, G, eps](Tape<T>& t) {
            const auto& gout = t.node_at(oi).grad.v;
            const auto& xvv = t.node_at(xi).value.v;
            const auto& gvv = t.node_at(gi).value.v;
            const bool need_x = t.node_at(xi).requires_grad;
            const bool need_g = t.node_at(gi).requires_grad;
            T* gx = need_x ? t.grad(typename Tape<T>::Ref{xi}).v.data() : nullptr;
            T* gg = need_g ? t.grad(typename Tape<T>::Ref{gi}).v.data() : nullptr;
            for (std::int64_t r = 0; r < M; ++r) {
                const T* xr = xvv.data() + r * D;
                const T* gr = gout.data() + r * D;
                for (int grp = 0; grp < G; ++grp) {
                    const T* xg = xr + grp * n;
                    const T* gy = gr + grp * n;
                    const T* gm = gvv.data() + grp * n;
                    T m = T(0);
                    for (std::int64_t i = 0; i < n; ++i) m += xg[i] * xg[i];
                    m = m / static_cast<T>(n);
                    const T inv = T(1) / std::sqrt(m + eps);
                    if (need_g) {
                        for (std::int64_t i = 0; i < n; ++i)
                            gg[grp * n + i] += gy[i] * xg[i] * inv;
                    }
                    if (need_x) {
                        T dot = T(0);
                        for (std::int64_t i = 0; i < n; ++i) dot += gy[i] * gm[i] * xg[i];
                        const T scale = dot * inv * inv * inv / static_cast<T>(n);
                        for (std::int64_t i = 0; i < n; ++i)
                            gx[r * D + grp * n + i] += gm[i] * gy[i] * inv - xg[i] * scale;
                    }
                }
            }
        });
    }
    return out_ref;
}

namespace detail {

/// im2col for [B, L, C] with a centered kernel (pad_left = (k-1)/2), zero
/// padding outside the sequence. Output is [B*L, k*C].
template <typename T>
TensorData<T> im2col(const TensorData<T>& x, int kernel) {
    const std::int64_t B = x.dim(0), L = x.dim(1), C = x.dim(2);
    const int pad = (kernel - 1) / 2;
    TensorData<T> out({B * L, static_cast<std::int64_t>(kernel) * C});
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t l = 0; l < L; ++l) {
            T* row = out.v.data() + (b * L + l) * kernel * C;
            for (int j = 0; j < kernel; ++j) {
                const std::int64_t src = l + j - pad;
                if (src >= 0 && src < L) {
                    const T* xr = x.v.data() + (b * L + src) * C;
                    std::copy(xr, xr + C, row + static_cast<std::int64_t>(j) * C);
                } else {
                    std::fill(row + static_cast<std::int64_t>(j) * C,
                              row + (static_cast<std::int64_t>(j) + 1) * C, T(0));
                }
            }
        }
    }
    return out;
}

/// Adjoint of im2col: scatter-adds column gradients back onto [B, L, C].
template <typename T>
void col2im_add(const TensorData<T>& gcol, int kernel, std::int64_t B, std::int64_t L,
                std::int64_t C, T* gx) {
    const int pad = (kernel - 1) / 2;
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t l = 0; l < L; ++l) {
            const T* row = gcol.v.data() + (b * L + l) * kernel * C;
            for (int j = 0; j < kernel; ++j) {
                const std::int64_t src = l + j - pad;
                if (src < 0 || src >= L) continue;
                T* dst = gx + (b * L + src) * C;
                const T* blk = row + static_cast<std::int64_t>(j) * C;
                for (std::int64_t c = 0; c < C; ++c) dst[c] += blk[c];
            }
        }
    }
}

}  // namespace detail

/// Gated convolutional feed-forward core: 1-d convolution along the middle
/// axis expanding D channels to a 2C-wide gated hidden layer (SiLU gate),
/// then a same-kernel convolution back to D. Weights are stored flat as
/// [k*D, 2C] and [k*C, D] matching the im2col layout. Intermediates are
/// recomputed in the backward pass instead of being stored.
template <typename T>
typename Tape<T>::Ref gated_conv_ffn(Tape<T>& tape, typename Tape<T>::Ref x,
                                     typename Tape<T>::Ref w_in, typename Tape<T>::Ref b_in,
                                     typename Tape<T>::Ref w_out, typename Tape<T>::Ref b_out,
                                     int kernel) {
    using MapM = typename Tape<T>::MapM;
    using CMapM = typename Tape<T>::CMapM;

    const TensorData<T>& xv = tape.val(x);
    if (xv.rank() != 3) throw std::invalid_argument("gated_conv_ffn: input must be [B,L,D]");
    const std::int64_t B = xv.dim(0), L = xv.dim(1), D = xv.dim(2);
    const TensorData<T>& wi = tape.val(w_in);
    const TensorData<T>& wo = tape.val(w_out);
    if (wi.dim(0) != kernel * D || wi.dim(1) % 2 != 0)
        throw std::invalid_argument("gated_conv_ffn: w_in shape mismatch");
    const std::int64_t C = wi.dim(1) / 2;
    if (wo.dim(0) != kernel * C || wo.dim(1) != D)
        throw std::invalid_argument("gated_conv_ffn: w_out shape mismatch");
    const std::int64_t M = B * L;

    auto forward_half = [&](const TensorData<T>& xin, TensorData<T>& hidden) {
        TensorData<T> cols = detail::im2col(xin, kernel);
        TensorData<T> u({M, 2 * C});
        {
            CMapM Xc(cols.v.data(), M, kernel * D);
            CMapM Wi(wi.v.data(), kernel * D, 2 * C);
            MapM U(u.v.data(), M, 2 * C);
            U.noalias() = Xc * Wi;
            Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> Bi(tape.val(b_in).v.data(), 2 * C);
            U.rowwise() += Bi;
        }
        hidden = TensorData<T>({B, L, C});
        for (std::int64_t r = 0; r < M; ++r) {
            const T* ur = u.v.data() + r * 2 * C;
            T* hr = hidden.v.data() + r * C;
            for (std::int64_t c = 0; c < C; ++c) {
                const T a = ur[c];
                const T s = Tape<T>::sigmoid_of(a);
                hr[c] = (a * s) * ur[C + c];
            }
        }
        return u;  // pre-activation, used by backward
    };

    TensorData<T> hidden;
    forward_half(xv, hidden);
    TensorData<T> hcols = detail::im2col(hidden, kernel);
    TensorData<T> y({B, L, D});
    {
        CMapM Hc(hcols.v.data(), M, kernel * C);
        CMapM Wo(wo.v.data(), kernel * C, D);
        MapM Y(y.v.data(), M, D);
        Y.noalias() = Hc * Wo;
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> Bo(tape.val(b_out).v.data(), D);
        Y.rowwise() += Bo;
    }

    bool rg = tape.requires_grad(x) || tape.requires_grad(w_in) || tape.requires_grad(b_in) ||
              tape.requires_grad(w_out) || tape.requires_grad(b_out);
    auto out_ref = tape.push(std::move(y), rg, nullptr);
    if (rg) {
        std::int32_t xi = x.id, wii = w_in.id, bii = b_in.id, woi = w_out.id, boi = b_out.id,
                     oi = out_ref.id;
        const int k = kernel;
        tape.set_back(out_ref, [xi, wii, bii, woi, boi, oi, B, L, D, C, M, k](Tape<T>& t) {
            using Ref = typename Tape<T>::Ref;
            const TensorData<T>& xin = t.node_at(xi).value;
            const TensorData<T>& wi2 = t.node_at(wii).value;
            const TensorData<T>& bi2 = t.node_at(bii).value;
            const TensorData<T>& wo2 = t.node_at(woi).value;

            // recompute the forward intermediates
            TensorData<T> cols = detail::im2col(xin, k);
            TensorData<T> u({M, 2 * C});
            {
                CMapM Xc(cols.v.data(), M, k * D);
                CMapM Wi(wi2.v.data(), k * D, 2 * C);
                MapM U(u.v.data(), M, 2 * C);
                U.noalias() = Xc * Wi;
                Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> Bi(bi2.v.data(), 2 * C);
                U.rowwise() += Bi;
            }
            TensorData<T> hidden({B, L, C});
            for (std::int64_t r = 0; r < M; ++r) {
                const T* ur = u.v.data() + r * 2 * C;
                T* hr = hidden.v.data() + r * C;
                for (std::int64_t c = 0; c < C; ++c) {
                    const T a = ur[c];
                    const T s = Tape<T>::sigmoid_of(a);
                    hr[c] = (a * s) * ur[C + c];
                }
            }
            TensorData<T> hcols = detail::im2col(hidden, k);

            const auto& gy = t.node_at(oi).grad.v;
            CMapM GY(gy.data(), M, D);

            if (t.node_at(boi).requires_grad) {
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> GBo(t.grad(Ref{boi}).v.data(), D);
                GBo += GY.colwise().sum();
            }
            if (t.node_at(woi).requires_grad) {
                CMapM Hc(hcols.v.data(), M, k * C);
                MapM GWo(t.grad(Ref{woi}).v.data(), k * C, D);
                GWo.noalias() += Hc.transpose() * GY;
            }
            TensorData<T> ghcols({M, k * C});
            {
                CMapM Wo(wo2.v.data(), k * C, D);
                MapM GHc(ghcols.v.data(), M, k * C);
                GHc.noalias() = GY * Wo.transpose();
            }
            TensorData<T> gh({B, L, C});
            detail::col2im_add(ghcols, k, B, L, C, gh.v.data());

            // through the gate
            TensorData<T> gu({M, 2 * C});
            for (std::int64_t r = 0; r < M; ++r) {
                const T* ur = u.v.data() + r * 2 * C;
                const T* ghr = gh.v.data() + r * C;
                T* gur = gu.v.data() + r * 2 * C;
                for (std::int64_t c = 0; c < C; ++c) {
                    const T a = ur[c];
                    const T s = Tape<T>::sigmoid_of(a);
                    const T silu_a = a * s;
                    const T dsilu = s * (T(1) + a * (T(1) - s));
                    gur[c] = ghr[c] * ur[C + c] * dsilu;
                    gur[C + c] = ghr[c] * silu_a;
                }
            }

            if (t.node_at(bii).requires_grad) {
                CMapM GU(gu.v.data(), M, 2 * C);
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> GBi(t.grad(Ref{bii}).v.data(), 2 * C);
                GBi += GU.colwise().sum();
            }
            if (t.node_at(wii).requires_grad) {
                CMapM Xc(cols.v.data(), M, k * D);
                CMapM GU(gu.v.data(), M, 2 * C);
                MapM GWi(t.grad(Ref{wii}).v.data(), k * D, 2 * C);
                GWi.noalias() += Xc.transpose() * GU;
            }
            if (t.node_at(xi).requires_grad) {
                TensorData<T> gxcols({M, k * D});
                CMapM Wi(wi2.v.data(), k * D, 2 * C);
                CMapM GU(gu.v.data(), M, 2 * C);
                MapM GXc(gxcols.v.data(), M, k * D);
                GXc.noalias() = GU * Wi.transpose();
                detail::col2im_add(gxcols, k, B, L, D, t.grad(Ref{xi}).v.data());
            }
        });
    }
    return out_ref;
}

namespace detail {

template <typename T>
void rope_rotate(T* vec, std::int64_t rows, std::int64_t row_stride, std::int64_t heads,
                 std::int64_t head_dim, bool inverse) {
    // standard rotary scheme: pair (2i, 2i+1), angle pos * base^(-2i/e)
    const double base = 10000.0;
    for (std::int64_t l = 0; l < rows; ++l) {
        T* row = vec + l * row_stride;
        for (std::int64_t h = 0; h < heads; ++h) {
            T* hv = row + h * head_dim;
            for (std::int64_t i = 0; i + 1 < head_dim; i += 2) {
                const double theta =
                    static_cast<double>(l) *
                    std::pow(base, -static_cast<double>(i) / static_cast<double>(head_dim));
                const T c = static_cast<T>(std::cos(theta));
                const T s = static_cast<T>(inverse ? -std::sin(theta) : std::sin(theta));
                const T v0 = hv[i], v1 = hv[i + 1];
                hv[i] = v0 * c - v1 * s;
                hv[i + 1] = v0 * s + v1 * c;
            }
        }
    }
}

}  // namespace detail

/// Multi-head self-attention over the middle axis of [B, L, D]. Queries,
/// keys and values are projected to heads*head_dim channels; rotary position
/// encoding is applied to queries and keys when enabled (position = index
/// along L). Attention probabilities are only retained when gradients are on.
template <typename T>
typename Tape<T>::Ref mhsa(Tape<T>& tape, typename Tape<T>::Ref x, typename Tape<T>::Ref wq,
                           typename Tape<T>::Ref bq, typename Tape<T>::Ref wk,
                           typename Tape<T>::Ref bk, typename Tape<T>::Ref wv,
                           typename Tape<T>::Ref bv, typename Tape<T>::Ref wo,
                           typename Tape<T>::Ref bo, int heads, bool rope) {
    using Mat = typename Tape<T>::Mat;
    using MapM = typename Tape<T>::MapM;
    using CMapM = typename Tape<T>::CMapM;
    using Stride = Eigen::OuterStride<>;

    const TensorData<T>& xv = tape.val(x);
    if (xv.rank() != 3) throw std::invalid_argument("mhsa: input must be [B,L,D]");
    const std::int64_t B = xv.dim(0), L = xv.dim(1), D = xv.dim(2);
    const std::int64_t HE = tape.val(wq).dim(1);
    if (HE % heads != 0) throw std::invalid_argument("mhsa: hidden size not divisible by heads");
    const std::int64_t e = HE / heads;
    if (rope && e % 2 != 0) throw std::invalid_argument("mhsa: rotary encoding needs even head dim");
    const T inv_sqrt_e = static_cast<T>(1.0 / std::sqrt(static_cast<double>(e)));

    auto project = [&](typename Tape<T>::Ref w, typename Tape<T>::Ref b) {
        TensorData<T> out({B, L, HE});
        CMapM X(xv.v.data(), B * L, D);
        CMapM W(tape.val(w).v.data(), D, HE);
        MapM Y(out.v.data(), B * L, HE);
        Y.noalias() = X * W;
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> Bb(tape.val(b).v.data(), HE);
        Y.rowwise() += Bb;
        return out;
    };

    auto q = std::make_shared<TensorData<T>>(project(wq, bq));
    auto kt = std::make_shared<TensorData<T>>(project(wk, bk));
    auto vt = std::make_shared<TensorData<T>>(project(wv, bv));
    if (rope) {
        for (std::int64_t b = 0; b < B; ++b) {
            detail::rope_rotate(q->v.data() + b * L * HE, L, HE, heads, e, false);
            detail::rope_rotate(kt->v.data() + b * L * HE, L, HE, heads, e, false);
        }
    }

    const bool rg = tape.grad_enabled() &&
                    (tape.requires_grad(x) || tape.requires_grad(wq) || tape.requires_grad(bq) ||
                     tape.requires_grad(wk) || tape.requires_grad(bk) || tape.requires_grad(wv) ||
                     tape.requires_grad(bv) || tape.requires_grad(wo) || tape.requires_grad(bo));

    auto probs = std::make_shared<std::vector<TensorData<T>>>();
    if (rg) probs->reserve(static_cast<std::size_t>(B * heads));

    auto o = std::make_shared<TensorData<T>>(TensorData<T>({B, L, HE}));
    Mat scores(L, L);
    for (std::int64_t b = 0; b < B; ++b) {
        for (int h = 0; h < heads; ++h) {
            Eigen::Map<const Mat, 0, Stride> Q(q->v.data() + b * L * HE + h * e, L, e, Stride(HE));
            Eigen::Map<const Mat, 0, Stride> K(kt->v.data() + b * L * HE + h * e, L, e, Stride(HE));
            Eigen::Map<const Mat, 0, Stride> V(vt->v.data() + b * L * HE + h * e, L, e, Stride(HE));
            scores.noalias() = Q * K.transpose() * inv_sqrt_e;
            // row softmax
            for (std::int64_t i = 0; i < L; ++i) {
                T mx = scores(i, 0);
                for (std::int64_t j = 1; j < L; ++j) mx = std::max(mx, scores(i, j));
                T sum = T(0);
                for (std::int64_t j = 0; j < L; ++j) {
                    scores(i, j) = std::exp(scores(i, j) - mx);
                    sum += scores(i, j);
                }
                for (std::int64_t j = 0; j < L; ++j) scores(i, j) /= sum;
            }
            Eigen::Map<Mat, 0, Stride> O(o->v.data() + b * L * HE + h * e, L, e, Stride(HE));
            O.noalias() = scores * V;
            if (rg) {
                TensorData<T> p({L, L});
                Eigen::Map<Mat>(p.v.data(), L, L) = scores;
                probs->push_back(std::move(p));
            }
        }
    }

    TensorData<T> y({B, L, D});
    {
        CMapM O(o->v.data(), B * L, HE);
        CMapM Wo(tape.val(wo).v.data(), HE, D);
        MapM Y(y.v.data(), B * L, D);
        Y.noalias() = O * Wo;
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> Bo(tape.val(bo).v.data(), D);
        Y.rowwise() += Bo;
    }

    auto out_ref = tape.push(std::move(y), rg, nullptr);
    if (rg) {
        std::int32_t xi = x.id, wqi = wq.id, bqi = bq.id, wki = wk.id, bki = bk.id, wvi = wv.id,
                     bvi = bv.id, woi = wo.id, boi = bo.id, oi = out_ref.id;
        const int H = heads;
        const bool use_rope = rope;
        tape.set_back(out_ref, [=](Tape<T>& t) {
            using Ref = typename Tape<T>::Ref;
            const auto& gy = t.node_at(oi).grad.v;
            CMapM GY(gy.data(), B * L, D);

            if (t.node_at(boi).requires_grad) {
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> GBo(t.grad(Ref{boi}).v.data(), D);
                GBo += GY.colwise().sum();
            }
            if (t.node_at(woi).requires_grad) {
                CMapM O(o->v.data(), B * L, HE);
                MapM GWo(t.grad(Ref{woi}).v.data(), HE, D);
                GWo.noalias() += O.transpose() * GY;
            }
            TensorData<T> go({B, L, HE});
            {
                CMapM Wo(t.node_at(woi).value.v.data(), HE, D);
                MapM GO(go.v.data(), B * L, HE);
                GO.noalias() = GY * Wo.transpose();
            }

            TensorData<T> gq({B, L, HE}), gk({B, L, HE}), gv({B, L, HE});
            Mat gp(L, L), gs(L, L);
            for (std::int64_t b = 0; b < B; ++b) {
                for (int h = 0; h < H; ++h) {
                    Eigen::Map<const Mat, 0, Stride> Q(q->v.data() + b * L * HE + h * e, L, e, Stride(HE));
                    Eigen::Map<const Mat, 0, Stride> K(kt->v.data() + b * L * HE + h * e, L, e, Stride(HE));
                    Eigen::Map<const Mat, 0, Stride> V(vt->v.data() + b * L * HE + h * e, L, e, Stride(HE));
                    Eigen::Map<const Mat, 0, Stride> GOh(go.v.data() + b * L * HE + h * e, L, e, Stride(HE));
                    const TensorData<T>& pd = (*probs)[static_cast<std::size_t>(b * H + h)];
                    Eigen::Map<const Mat> P(pd.v.data(), L, L);

                    gp.noalias() = GOh * V.transpose();
                    for (std::int64_t i = 0; i < L; ++i) {
                        T dot = T(0);
                        for (std::int64_t j = 0; j < L; ++j) dot += gp(i, j) * P(i, j);
                        for (std::int64_t j = 0; j < L; ++j)
                            gs(i, j) = P(i, j) * (gp(i, j) - dot) * inv_sqrt_e;
                    }
                    Eigen::Map<Mat, 0, Stride> GQ(gq.v.data() + b * L * HE + h * e, L, e, Stride(HE));
                    Eigen::Map<Mat, 0, Stride> GK(gk.v.data() + b * L * HE + h * e, L, e, Stride(HE));
                    Eigen::Map<Mat, 0, Stride> GV(gv.v.data() + b * L * HE + h * e, L, e, Stride(HE));
                    GQ.noalias() = gs * K;
                    GK.noalias() = gs.transpose() * Q;
                    GV.noalias() = P.transpose() * GOh;
                }
            }
            if (use_rope) {
                for (std::int64_t b = 0; b < B; ++b) {
                    detail::rope_rotate(gq.v.data() + b * L * HE, L, HE, H, e, true);
                    detail::rope_rotate(gk.v.data() + b * L * HE, L, HE, H, e, true);
                }
            }

            const TensorData<T>& xin = t.node_at(xi).value;
            CMapM X(xin.v.data(), B * L, D);
            auto backprop_proj = [&](const TensorData<T>& gproj, std::int32_t wi, std::int32_t bi) {
                CMapM GP(gproj.v.data(), B * L, HE);
                if (t.node_at(wi).requires_grad) {
                    MapM GW(t.grad(Ref{wi}).v.data(), D, HE);
                    GW.noalias() += X.transpose() * GP;
                }
                if (t.node_at(bi).requires_grad) {
                    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> GB(t.grad(Ref{bi}).v.data(), HE);
                    GB += GP.colwise().sum();
                }
                if (t.node_at(xi).requires_grad) {
                    CMapM W(t.node_at(wi).value.v.data(), D, HE);
                    MapM GX(t.grad(Ref{xi}).v.data(), B * L, D);
                    GX.noalias() += GP * W.transpose();
                }
            };
            backprop_proj(gq, wqi, bqi);
            backprop_proj(gk, wki, bki);
            backprop_proj(gv, wvi, bvi);
        });
    }
    return out_ref;
}

/// Complex multiply of a mask [R, 2b] (real columns then imaginary columns)
/// with a constant grid of the same layout.
template <typename T>
typename Tape<T>::Ref cmul_const(Tape<T>& tape, typename Tape<T>::Ref m,
                                 std::shared_ptr<const TensorData<T>> c) {
    const TensorData<T>& mv = tape.val(m);
    if (mv.rank() != 2 || mv.shape != c->shape || mv.dim(1) % 2 != 0)
        throw std::invalid_argument("cmul_const: shape mismatch");
    const std::int64_t R = mv.dim(0), b = mv.dim(1) / 2;
    TensorData<T> out(mv.shape);
    for (std::int64_t r = 0; r < R; ++r) {
        const T* mr = mv.v.data() + r * 2 * b;
        const T* cr = c->v.data() + r * 2 * b;
        T* yr = out.v.data() + r * 2 * b;
        for (std::int64_t j = 0; j < b; ++j) {
            yr[j] = mr[j] * cr[j] - mr[b + j] * cr[b + j];
            yr[b + j] = mr[j] * cr[b + j] + mr[b + j] * cr[j];
        }
    }
    bool rg = tape.requires_grad(m);
    auto out_ref = tape.push(std::move(out), rg, nullptr);
    if (rg) {
        std::int32_t mi = m.id, oi = out_ref.id;
        tape.set_back(out_ref, [mi, oi, c, R, b](Tape<T>& t) {
            const auto& g = t.node_at(oi).grad.v;
            auto& gm = t.grad(typename Tape<T>::Ref{mi}).v;
            for (std::int64_t r = 0; r < R; ++r) {
                const T* gr = g.data() + r * 2 * b;
                const T* cr = c->v.data() + r * 2 * b;
                T* gmr = gm.data() + r * 2 * b;
                for (std::int64_t j = 0; j < b; ++j) {
                    gmr[j] += gr[j] * cr[j] + gr[b + j] * cr[b + j];
                    gmr[b + j] += -gr[j] * cr[b + j] + gr[b + j] * cr[j];
                }
            }
        });
    }
    return out_ref;
}

/// Inverse STFT as a tape op over a [T, 2F] grid (real columns then
/// imaginary columns). The backward pass applies the exact adjoint of the
/// linear synthesis map.
template <typename T>
typename Tape<T>::Ref istft_tape(Tape<T>& tape, typename Tape<T>::Ref spec_ref,
                                 const StftConfig& cfg, std::int64_t target_length,
                                 int sample_rate_hz) {
    const TensorData<T>& sv = tape.val(spec_ref);
    const std::int64_t F = cfg.fft_length / 2 + 1;
    if (sv.rank() != 2 || sv.dim(1) != 2 * F)
        throw std::invalid_argument("istft_tape: spec must be [T, 2F]");
    const std::int64_t Tn = sv.dim(0);

    Spectrogram spec;
    spec.num_frames = Tn;
    spec.num_bins = F;
    spec.config = cfg;
    spec.re.resize(static_cast<std::size_t>(Tn * F));
    spec.im.resize(static_cast<std::size_t>(Tn * F));
    for (std::int64_t t = 0; t < Tn; ++t)
        for (std::int64_t f = 0; f < F; ++f) {
            spec.re_at(t, f) = static_cast<double>(sv.v[static_cast<std::size_t>(t * 2 * F + f)]);
            spec.im_at(t, f) = static_cast<double>(sv.v[static_cast<std::size_t>(t * 2 * F + F + f)]);
        }
    AudioBuffer wave = istft(spec, target_length, sample_rate_hz);

    TensorData<T> out({target_length});
    for (std::int64_t i = 0; i < target_length; ++i)
        out.v[static_cast<std::size_t>(i)] = static_cast<T>(wave.samples[static_cast<std::size_t>(i)]);

    bool rg = tape.requires_grad(spec_ref);
    auto out_ref = tape.push(std::move(out), rg, nullptr);
    if (rg) {
        std::int32_t si = spec_ref.id, oi = out_ref.id;
        const StftConfig cfg2 = cfg;
        tape.set_back(out_ref, [si, oi, cfg2, Tn, F, target_length](Tape<T>& t) {
            const auto& g = t.node_at(oi).grad.v;
            const std::int64_t pad = promptsep::detail::stft_pad(cfg2);
            const std::vector<double> w = make_window(cfg2);
            const std::vector<double> norm = promptsep::detail::ola_norm(Tn, cfg2);

            // pull the output gradient back through the trim and the
            // normalization divide
            std::vector<double> u(norm.size(), 0.0);
            for (std::int64_t i = 0; i < target_length; ++i) {
                const std::int64_t src = i + pad;
                if (src < static_cast<std::int64_t>(u.size()) && norm[static_cast<std::size_t>(src)] > 1e-12)
                    u[static_cast<std::size_t>(src)] =
                        static_cast<double>(g[static_cast<std::size_t>(i)]) / norm[static_cast<std::size_t>(src)];
            }

            auto& gs = t.grad(typename Tape<T>::Ref{si}).v;
            const std::int64_t nfft = cfg2.fft_length;
            std::vector<double> frame(static_cast<std::size_t>(nfft), 0.0);
            for (std::int64_t tt = 0; tt < Tn; ++tt) {
                std::fill(frame.begin(), frame.end(), 0.0);
                for (int n = 0; n < cfg2.window_length; ++n)
                    frame[static_cast<std::size_t>(n)] =
                        w[static_cast<std::size_t>(n)] * u[static_cast<std::size_t>(tt * cfg2.hop_length + n)];
                const auto bins = promptsep::detail::rfft(frame.data(), nfft, nfft);
                for (std::int64_t f = 0; f < F; ++f) {
                    const double cf = (f == 0 || f == nfft / 2) ? 1.0 : 2.0;
                    gs[static_cast<std::size_t>(tt * 2 * F + f)] +=
                        static_cast<T>(cf / static_cast<double>(nfft) * bins[static_cast<std::size_t>(f)].real());
                    if (f != 0 && f != nfft / 2)
                        gs[static_cast<std::size_t>(tt * 2 * F + F + f)] +=
                            static_cast<T>(2.0 / static_cast<double>(nfft) * bins[static_cast<std::size_t>(f)].imag());
                }
            }
        });
    }
    return out_ref;
}

/// Throws when a tape value contains NaN or Inf, naming the pipeline stage.
template <typename T>
void check_finite(const Tape<T>& tape, typename Tape<T>::Ref r, const std::string& stage) {
    if (!tape.val(r).all_finite())
        throw std::runtime_error("non-finite values after " + stage);
}

}  // namespace nn
}  // namespace promptsep
