#pragma once
// Differentiable operations. Each op validates shapes, computes the forward
// value (dense kernels go through Eigen maps), and records a gradient rule.
// Tensors of rank > 2 are treated as [rows x last_dim] where it matters.
// Backward lambdas capture the would-be output id (== tape size at emit time).

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "elecrec/rng.hpp"
#include "elecrec/tape.hpp"

namespace elec {

namespace detail {

template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapM = Eigen::Map<MatRM<S>>;
template <class S>
using CMapM = Eigen::Map<const MatRM<S>>;
template <class S>
using StridedMap = Eigen::Map<MatRM<S>, 0, Eigen::OuterStride<>>;
template <class S>
using CStridedMap = Eigen::Map<const MatRM<S>, 0, Eigen::OuterStride<>>;

template <class S>
CMapM<S> as_mat(const Tensor<S>& t, std::int64_t rows, std::int64_t cols) {
    return CMapM<S>(t.ptr(), rows, cols);
}

template <class S>
MapM<S> as_mat(Tensor<S>& t, std::int64_t rows, std::int64_t cols) {
    return MapM<S>(t.ptr(), rows, cols);
}

}  // namespace detail

// Numerically stable softmax of one row; normalizer accumulated in double.
template <class S>
void softmax_row(std::span<const S> logits, std::span<double> out) {
    S m = logits[0];
    for (S v : logits) m = std::max(m, v);
    double denom = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(static_cast<double>(logits[i]) - static_cast<double>(m));
        denom += out[i];
    }
    for (size_t i = 0; i < logits.size(); ++i) out[i] /= denom;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// out[..., n] = a[..., k] * b[k, n].
template <class S>
int matmul(Tape<S>& t, int a, int b) {
    const Tensor<S>& A = t.val(a);
    const Tensor<S>& B = t.val(b);
    if (A.rank() < 2 || B.rank() != 2 || A.last_dim() != B.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(A.shape) + " and " + shape_str(B.shape));
    const std::int64_t m = A.rows(), k = A.last_dim(), n = B.dim(1);
    std::vector<int> out_shape(A.shape.begin(), A.shape.end() - 1);
    out_shape.push_back(static_cast<int>(n));
    Tensor<S> out(out_shape);
    detail::as_mat(out, m, n).noalias() = detail::as_mat(A, m, k) * detail::as_mat(B, k, n);
    const int out_id = static_cast<int>(t.size());
    return t.emit(std::move(out), {a, b}, [a, b, out_id, m, k, n](Tape<S>& tp) {
        auto G = detail::as_mat(tp.grad_buf(out_id), m, n);
        if (tp.needs_grad(a)) {
            auto B2 = detail::as_mat(tp.val(b), k, n);
            detail::as_mat(tp.grad_buf(a), m, k).noalias() += G * B2.transpose();
        }
        if (tp.needs_grad(b)) {
            auto A2 = detail::as_mat(tp.val(a), m, k);
            detail::as_mat(tp.grad_buf(b), k, n).noalias() += A2.transpose() * G;
        }
    });
}

// out[..., n] = a[..., k] * b[n, k]^T  (b stored row-major by output item).
template <class S>
int matmul_nt(Tape<S>& t, int a, int b) {
    const Tensor<S>& A = t.val(a);
    const Tensor<S>& B = t.val(b);
    if (A.rank() < 2 || B.rank() != 2 || A.last_dim() != B.dim(1))
        throw ShapeError("matmul_nt: incompatible shapes " + shape_str(A.shape) + " and " + shape_str(B.shape));
    const std::int64_t m = A.rows(), k = A.last_dim(), n = B.dim(0);
    std::vector<int> out_shape(A.shape.begin(), A.shape.end() - 1);
    out_shape.push_back(static_cast<int>(n));
    Tensor<S> out(out_shape);
    detail::as_mat(out, m, n).noalias() = detail::as_mat(A, m, k) * detail::as_mat(B, n, k).transpose();
    const int out_id = static_cast<int>(t.size());
    return t.emit(std::move(out), {a, b}, [a, b, out_id, m, k, n](Tape<S>& tp) {
        auto G = detail::as_mat(tp.grad_buf(out_id), m, n);
        if (tp.needs_grad(a)) {
            auto B2 = detail::as_mat(tp.val(b), n, k);
            detail::as_mat(tp.grad_buf(a), m, k).noalias() += G * B2;
        }
        if (tp.needs_grad(b)) {
            auto A2 = detail::as_mat(tp.val(a), m, k);
            detail::as_mat(tp.grad_buf(b), n, k).noalias() += G.transpose() * A2;
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise / structural
// ---------------------------------------------------------------------------

template <class S>
int add(Tape<S>& t, int a, int b) {
    const Tensor<S>& A = t.val(a);
    const Tensor<S>& B = t.val(b);
    if (A.shape != B.shape)
        throw ShapeError("add: shape mismatch " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    Tensor<S> out(A.shape);
    for (std::int64_t i = 0; i < A.numel(); ++i) out.data[i] = A.data[i] + B.data[i];
    const int out_id = static_cast<int>(t.size());
    return t.emit(std::move(out), {a, b}, [a, b, out_id](Tape<S>& tp) {
        const Tensor<S>& G = tp.grad_buf(out_id);
        if (tp.needs_grad(a)) {
            Tensor<S>& ga = tp.grad_buf(a);
            for (std::int64_t i = 0; i < G.numel(); ++i) ga.data[i] += G.data[i];
        }
        if (tp.needs_grad(b)) {
            Tensor<S>& gb = tp.grad_buf(b);
            for (std::int64_t i = 0; i < G.numel(); ++i) gb.data[i] += G.data[i];
        }
    });
}

template <class S>
int scale(Tape<S>& t, int x, double c) {
    const Tensor<S>& X = t.val(x);
    Tensor<S> out(X.shape);
    const S cs = static_cast<S>(c);
    for (std::int64_t i = 0; i < X.numel(); ++i) out.data[i] = X.data[i] * cs;
    const int out_id = static_cast<int>(t.size());
    return t.emit(std::move(out), {x}, [x, out_id, cs](Tape<S>& tp) {
        if (!tp.needs_grad(x)) return;
        const Tensor<S>& G = tp.grad_buf(out_id);
        Tensor<S>& gx = tp.grad_buf(x);
        for (std::int64_t i = 0; i < G.numel(); ++i) gx.data[i] += cs * G.data[i];
    });
}

template <class S>
int sum(Tape<S>& t, int x) {
    const Tensor<S>& X = t.val(x);
    double acc = 0.0;
    for (std::int64_t i = 0; i < X.numel(); ++i) acc += static_cast<double>(X.data[i]);
    const int out_id = static_cast<int>(t.size());
    return t.emit(Tensor<S>::scalar(static_cast<S>(acc)), {x}, [x, out_id](Tape<S>& tp) {
        if (!tp.needs_grad(x)) return;
        const S g = tp.grad_buf(out_id).data[0];
        Tensor<S>& gx = tp.grad_buf(x);
        for (std::int64_t i = 0; i < gx.numel(); ++i) gx.data[i] += g;
    });
}

// GELU, exact form: x * Phi(x).
template <class S>
int gelu(Tape<S>& t, int x) {
    const Tensor<S>& X = t.val(x);
    Tensor<S> out(X.shape);
    for (std::int64_t i = 0; i < X.numel(); ++i) {
        const double v = static_cast<double>(X.data[i]);
        out.data[i] = static_cast<S>(v * 0.5 * std::erfc(-v * (1.0 / std::numbers::sqrt2)));
    }
    const int out_id = static_cast<int>(t.size());
    return t.emit(std::move(out), {x}, [x, out_id](Tape<S>& tp) {
        if (!tp.needs_grad(x)) return;
        const Tensor<S>& G = tp.grad_buf(out_id);
        const Tensor<S>& X2 = tp.val(x);
        Tensor<S>& gx = tp.grad_buf(x);
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (std::int64_t i = 0; i < X2.numel(); ++i) {
            const double v = static_cast<double>(X2.data[i]);
            const double phi = 0.5 * std::erfc(-v * (1.0 / std::numbers::sqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            gx.data[i] += G.data[i] * static_cast<S>(phi + v * pdf);
        }
    });
}

// Inverted dropout; identity when not training or rate == 0. Mask values are
// pre-scaled to {0, 1/(1-rate)} so forward and backward share one multiply.
template <class S>
int dropout(Tape<S>& t, int x, double rate, bool train_mode, Rng& rng) {
    if (!train_mode || rate <= 0.0) return x;
    if (rate >= 1.0) throw ConfigError("dropout: rate must be < 1");
    const Tensor<S>& X = t.val(x);
    auto mask = std::make_shared<std::vector<S>>(static_cast<size_t>(X.numel()));
    const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
    for (auto& m : *mask) m = (rng.uniform() < rate) ? S(0) : keep_scale;
    Tensor<S> out(X.shape);
    for (std::int64_t i = 0; i < X.numel(); ++i) out.data[i] = X.data[i] * (*mask)[i];
    const int out_id = static_cast<int>(t.size());
    return t.emit(std::move(out), {x}, [x, out_id, mask](Tape<S>& tp) {
        if (!tp.needs_grad(x)) return;
        const Tensor<S>& G = tp.grad_buf(out_id);
        Tensor<S>& gx = tp.grad_buf(x);
        for (std::int64_t i = 0; i < G.numel(); ++i) gx.data[i] += G.data[i] * (*mask)[i];
    });
}

// ---------------------------------------------------------------------------
// Embedding / gather
// ---------------------------------------------------------------------------

// Row gather: out[i] = table[ids[i]]; shape {dims..., d}. Backward scatter-adds.
template <class S>
int embedding_lookup(Tape<S>& t, int table, std::span<const std::int32_t> ids, std::vector<int> leading_dims) {
    const Tensor<S>& T2 = t.val(table);
    if (T2.rank() != 2) throw ShapeError("embedding_lookup: table must be rank 2, got " + shape_str(T2.shape));
    const int V = T2.dim(0), d = T2.dim(1);
    if (shape_numel(leading_dims) != static_cast<std::int64_t>(ids.size()))
        throw ShapeError("embedding_lookup: ids count does not match requested shape");
    for (size_t i = 0; i < ids.size(); ++i)
        if (ids[i] < 0 || ids[i] >= V)
            throw VocabError("embedding_lookup: id " + std::to_string(ids[i]) + " at position " +
                             std::to_string(i) + " outside vocabulary of size " + std::to_string(V));
    std::vector<int> out_shape = std::move(leading_dims);
    out_shape.push_back(d);
    Tensor<S> out(out_shape);
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(T2.ptr() + static_cast<std::int64_t>(ids[i]) * d, d, out.ptr() + static_cast<std::int64_t>(i) * d);
    auto idv = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
    const int out_id = static_cast<int>(t.size());
    return t.emit(std::move(out), {table}, [table, out_id, idv, d](Tape<S>& tp) {
        if (!tp.needs_grad(table)) return;
        const Tensor<S>& G = tp.grad_buf(out_id);
        Tensor<S>& gt = tp.grad_buf(table);
        for (size_t i = 0; i < idv->size(); ++i) {
            S* dst = gt.ptr() + static_cast<std::int64_t>((*idv)[i]) * d;
            const S* src = G.ptr() + static_cast<std::int64_t>(i) * d;
            for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

// out[i, :] = x[rows[i], :] for 2D-viewed x; backward scatter-adds.
template <class S>
int select_rows(Tape<S>& t, int x, std::span<const std::int32_t> rows) {
    const Tensor<S>& X = t.val(x);
    const int d = X.last_dim();
    const std::int64_t n_rows = X.rows();
    for (size_t i = 0; i < rows.size(); ++i)
        if (rows[i] < 0 || rows[i] >= n_rows)
            throw ShapeError("select_rows: row " + std::to_string(rows[i]) + " out of range");
    Tensor<S> out({static_cast<int>(rows.size()), d});
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy_n(X.ptr() + static_cast<std::int64_t>(rows[i]) * d, d, out.ptr() + static_cast<std::int64_t>(i) * d);
    auto idx = std::make_shared<std::vector<std::int32_t>>(rows.begin(), rows.end());
    const int out_id = static_cast<int>(t.size());
    return t.emit(std::move(out), {x}, [x, out_id, idx, d](Tape<S>& tp) {
        if (!tp.needs_grad(x)) return;
        const Tensor<S>& G = tp.grad_buf(out_id);
        Tensor<S>& gx = tp.grad_buf(x);
        for (size_t i = 0; i < idx->size(); ++i) {
            S* dst = gx.ptr() + static_cast<std::int64_t>((*idx)[i]) * d;
            const S* src = G.ptr() + static_cast<std::int64_t>(i) * d;
            for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

// x[B,T,d] + pos[T,d] broadcast over the batch axis.
template <class S>
int add_position_embedding(Tape<S>& t, int x, int pos, int B, int T) {
    const Tensor<S>& X = t.val(x);
    const Tensor<S>& P = t.val(pos);
    const int d = X.last_dim();
    if (P.rank() != 2 || P.dim(0) != T || P.dim(1) != d || X.rows() != static_cast<std::int64_t>(B) * T)
        throw ShapeError("add_position_embedding: shapes " + shape_str(X.shape) + " and " + shape_str(P.shape));
    Tensor<S> out(X.shape);
    for (int b = 0; b < B; ++b)
        for (int tt = 0; tt < T; ++tt) {
            const std::int64_t off = (static_cast<std::int64_t>(b) * T + tt) * d;
            for (int j = 0; j < d; ++j) out.data[off + j] = X.data[off + j] + P.data[static_cast<std::int64_t>(tt) * d + j];
        }
    const int out_id = static_cast<int>(t.size());
    return t.emit(std::move(out), {x, pos}, [x, pos, out_id, B, T, d](Tape<S>& tp) {
        const Tensor<S>& G = tp.grad_buf(out_id);
        if (tp.needs_grad(x)) {
            Tensor<S>& gx = tp.grad_buf(x);
            for (std::int64_t i = 0; i < G.numel(); ++i) gx.data[i] += G.data[i];
        }
        if (tp.needs_grad(pos)) {
            Tensor<S>& gp = tp.grad_buf(pos);
            for (int b = 0; b < B; ++b)
                for (int tt = 0; tt < T; ++tt) {
                    const std::int64_t off = (static_cast<std::int64_t>(b) * T + tt) * d;
                    for (int j = 0; j < d; ++j) gp.data[static_cast<std::int64_t>(tt) * d + j] += G.data[off + j];
                }
        }
    });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Per-last-axis standardization followed by affine transform.
template <class S>
int layer_norm(Tape<S>& t, int x, int gain, int bias, double eps) {
    const Tensor<S>& X = t.val(x);
    const Tensor<S>& Gn = t.val(gain);
    const Tensor<S>& Bs = t.val(bias);
    const int d = X.last_dim();
    if (d < 1 || eps <= 0.0) throw ConfigError("layer_norm: need d >= 1 and eps > 0");
    if (Gn.numel() != d || Bs.numel() != d)
        throw ShapeError("layer_norm: gain/bias must have length " + std::to_string(d));
    const std::int64_t rows = X.rows();
    auto xhat = std::make_shared<std::vector<S>>(static_cast<size_t>(X.numel()));
    auto inv_std = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
    Tensor<S> out(X.shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        const S* xr = X.ptr() + r * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += static_cast<double>(xr[j]);
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = static_cast<double>(xr[j]) - mean;
            var += c * c;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = static_cast<S>(inv);
        for (int j = 0; j < d; ++j) {
            const S xh = static_cast<S>((static_cast<double>(xr[j]) - mean) * inv);
            (*xhat)[static_cast<size_t>(r * d + j)] = xh;
            out.data[r * d + j] = Gn.data[j] * xh + Bs.data[j];
        }
    }
    const int out_id = static_cast<int>(t.size());
    return t.emit(std::move(out), {x, gain, bias},
                  [x, gain, bias, out_id, d, rows, xhat, inv_std](Tape<S>& tp) {
        const Tensor<S>& G = tp.grad_buf(out_id);
        const Tensor<S>& Gn2 = tp.val(gain);
        const bool need_x = tp.needs_grad(x);
        const bool need_g = tp.needs_grad(gain);
        const bool need_b = tp.needs_grad(bias);
        Tensor<S>* gx = need_x ? &tp.grad_buf(x) : nullptr;
        Tensor<S>* gg = need_g ? &tp.grad_buf(gain) : nullptr;
        Tensor<S>* gb = need_b ? &tp.grad_buf(bias) : nullptr;
        for (std::int64_t r = 0; r < rows; ++r) {
            const S* gr = G.ptr() + r * d;
            const S* xh = xhat->data() + r * d;
            if (need_g)
                for (int j = 0; j < d; ++j) gg->data[j] += gr[j] * xh[j];
            if (need_b)
                for (int j = 0; j < d; ++j) gb->data[j] += gr[j];
            if (need_x) {
                // dxhat = g * gain; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                for (int j = 0; j < d; ++j) {
                    const double dxh = static_cast<double>(gr[j]) * static_cast<double>(Gn2.data[j]);
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * static_cast<double>(xh[j]);
                }
                mean_dxh /= d;
                mean_dxh_xh /= d;
                const double inv = static_cast<double>((*inv_std)[static_cast<size_t>(r)]);
                for (int j = 0; j < d; ++j) {
                    const double dxh = static_cast<double>(gr[j]) * static_cast<double>(Gn2.data[j]);
                    gx->data[r * d + j] +=
                        static_cast<S>(inv * (dxh - mean_dxh - static_cast<double>(xh[j]) * mean_dxh_xh));
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

// Additive attention mask: 0 where key j is attendable from query t
// (j <= t and j valid), -1e9 elsewhere. Shape [B,T,T].
template <class S>
Tensor<S> causal_mask(int T, std::span<const std::uint8_t> validity, int B) {
    if (T < 1) throw ShapeError("causal_mask: T must be >= 1");
    if (validity.size() != static_cast<size_t>(B) * static_cast<size_t>(T))
        throw ShapeError("causal_mask: validity size mismatch");
    Tensor<S> m({B, T, T});
    const S blocked = neg_inf_surrogate<S>();
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < T; ++i)
            for (int j = 0; j < T; ++j) {
                const bool allowed = j <= i && validity[static_cast<size_t>(b) * T + j] != 0;
                m.data[(static_cast<std::int64_t>(b) * T + i) * T + j] = allowed ? S(0) : blocked;
            }
    return m;
}

// Multi-head scaled dot-product attention over q,k,v of shape [B,T,d] with an
// additive [B,T,T] mask. Row-softmax probabilities are saved for backward.
template <class S>
int causal_self_attention(Tape<S>& t, int q, int k, int v, int B, int T, int H, const Tensor<S>& add_mask) {
    const Tensor<S>& Q = t.val(q);
    const Tensor<S>& K = t.val(k);
    const Tensor<S>& V = t.val(v);
    if (Q.shape != K.shape || Q.shape != V.shape)
        throw ShapeError("attention: q/k/v shapes differ");
    const int d = Q.last_dim();
    if (d % H != 0) throw ConfigError("attention: hidden size " + std::to_string(d) +
                                      " not divisible by heads " + std::to_string(H));
    if (Q.rows() != static_cast<std::int64_t>(B) * T)
        throw ShapeError("attention: input rows do not match B*T");
    if (add_mask.shape != std::vector<int>{B, T, T})
        throw ShapeError("attention: mask must be [B,T,T], got " + shape_str(add_mask.shape));
    const int dh = d / H;
    const double scale_f = 1.0 / std::sqrt(static_cast<double>(dh));

    auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(B) * H * T * T);
    Tensor<S> out(Q.shape);
    detail::MatRM<S> scores(T, T);
    std::vector<double> prow(static_cast<size_t>(T));
    for (int b = 0; b < B; ++b) {
        const S* mrow = add_mask.ptr() + static_cast<std::int64_t>(b) * T * T;
        for (int h = 0; h < H; ++h) {
            const S* qb = Q.ptr() + static_cast<std::int64_t>(b) * T * d + h * dh;
            const S* kb = K.ptr() + static_cast<std::int64_t>(b) * T * d + h * dh;
            const S* vb = V.ptr() + static_cast<std::int64_t>(b) * T * d + h * dh;
            detail::CStridedMap<S> Qh(qb, T, dh, Eigen::OuterStride<>(d));
            detail::CStridedMap<S> Kh(kb, T, dh, Eigen::OuterStride<>(d));
            detail::CStridedMap<S> Vh(vb, T, dh, Eigen::OuterStride<>(d));
            scores.noalias() = Qh * Kh.transpose();
            S* pb = probs->data() + ((static_cast<std::int64_t>(b) * H + h) * T) * T;
            for (int i = 0; i < T; ++i) {
                double mx = -1e30;
                for (int j = 0; j < T; ++j) {
                    const double s = static_cast<double>(scores(i, j)) * scale_f + static_cast<double>(mrow[i * T + j]);
                    prow[static_cast<size_t>(j)] = s;
                    mx = std::max(mx, s);
                }
                double denom = 0.0;
                for (int j = 0; j < T; ++j) {
                    prow[static_cast<size_t>(j)] = std::exp(prow[static_cast<size_t>(j)] - mx);
                    denom += prow[static_cast<size_t>(j)];
                }
                for (int j = 0; j < T; ++j) pb[i * T + j] = static_cast<S>(prow[static_cast<size_t>(j)] / denom);
            }
            detail::CMapM<S> Pm(pb, T, T);
            detail::StridedMap<S> Oh(out.ptr() + static_cast<std::int64_t>(b) * T * d + h * dh, T, dh,
                                     Eigen::OuterStride<>(d));
            Oh.noalias() = Pm * Vh;
        }
    }
    const int out_id = static_cast<int>(t.size());
    return t.emit(std::move(out), {q, k, v},
                  [q, k, v, out_id, B, T, H, d, dh, scale_f, probs](Tape<S>& tp) {
        const Tensor<S>& G = tp.grad_buf(out_id);
        const Tensor<S>& Q2 = tp.val(q);
        const Tensor<S>& K2 = tp.val(k);
        const Tensor<S>& V2 = tp.val(v);
        const bool need_q = tp.needs_grad(q), need_k = tp.needs_grad(k), need_v = tp.needs_grad(v);
        Tensor<S>* gq = need_q ? &tp.grad_buf(q) : nullptr;
        Tensor<S>* gk = need_k ? &tp.grad_buf(k) : nullptr;
        Tensor<S>* gv = need_v ? &tp.grad_buf(v) : nullptr;
        detail::MatRM<S> dP(T, T), dS(T, T);
        for (int b = 0; b < B; ++b) {
            for (int h = 0; h < H; ++h) {
                const std::int64_t base = static_cast<std::int64_t>(b) * T * d + h * dh;
                detail::CStridedMap<S> Qh(Q2.ptr() + base, T, dh, Eigen::OuterStride<>(d));
                detail::CStridedMap<S> Kh(K2.ptr() + base, T, dh, Eigen::OuterStride<>(d));
                detail::CStridedMap<S> Vh(V2.ptr() + base, T, dh, Eigen::OuterStride<>(d));
                detail::CStridedMap<S> Gh(G.ptr() + base, T, dh, Eigen::OuterStride<>(d));
                detail::CMapM<S> Pm(probs->data() + ((static_cast<std::int64_t>(b) * H + h) * T) * T, T, T);
                dP.noalias() = Gh * Vh.transpose();
                // dS = P .* (dP - rowsum(dP .* P))
                for (int i = 0; i < T; ++i) {
                    double row_dot = 0.0;
                    for (int j = 0; j < T; ++j) row_dot += static_cast<double>(dP(i, j)) * static_cast<double>(Pm(i, j));
                    for (int j = 0; j < T; ++j)
                        dS(i, j) = Pm(i, j) * static_cast<S>(static_cast<double>(dP(i, j)) - row_dot);
                }
                if (need_v) {
                    detail::StridedMap<S> gVh(gv->ptr() + base, T, dh, Eigen::OuterStride<>(d));
                    gVh.noalias() += Pm.transpose() * Gh;
                }
                if (need_q) {
                    detail::StridedMap<S> gQh(gq->ptr() + base, T, dh, Eigen::OuterStride<>(d));
                    gQh.noalias() += static_cast<S>(scale_f) * (dS * Kh);
                }
                if (need_k) {
                    detail::StridedMap<S> gKh(gk->ptr() + base, T, dh, Eigen::OuterStride<>(d));
                    gKh.noalias() += static_cast<S>(scale_f) * (dS.transpose() * Qh);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Mean over unmasked rows of -log softmax(logits)[target]; max-subtracted,
// normalizer in double. Masked rows contribute zero loss and zero gradient.
template <class S>
int softmax_cross_entropy(Tape<S>& t, int logits, std::span<const std::int32_t> targets,
                          std::span<const std::uint8_t> ignore_mask) {
    const Tensor<S>& L = t.val(logits);
    const int V = L.last_dim();
    const std::int64_t rows = L.rows();
    if (targets.size() != static_cast<size_t>(rows) || ignore_mask.size() != static_cast<size_t>(rows))
        throw ShapeError("softmax_cross_entropy: targets/mask size must equal logit rows");
    std::int64_t n_valid = 0;
    for (auto m : ignore_mask)
        if (!m) ++n_valid;
    if (n_valid == 0) throw DegenerateBatchError("softmax_cross_entropy: every row is masked");
    auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(rows) * V);
    double total = 0.0;
    std::vector<double> prow(static_cast<size_t>(V));
    for (std::int64_t r = 0; r < rows; ++r) {
        if (ignore_mask[static_cast<size_t>(r)]) continue;
        const std::int32_t tgt = targets[static_cast<size_t>(r)];
        if (tgt < 0 || tgt >= V)
            throw VocabError("softmax_cross_entropy: target " + std::to_string(tgt) + " at row " +
                             std::to_string(r) + " outside [0," + std::to_string(V) + ")");
        const S* lr = L.ptr() + r * V;
        double mx = -1e300;
        for (int j = 0; j < V; ++j) mx = std::max(mx, static_cast<double>(lr[j]));
        double denom = 0.0;
        for (int j = 0; j < V; ++j) {
            prow[static_cast<size_t>(j)] = std::exp(static_cast<double>(lr[j]) - mx);
            denom += prow[static_cast<size_t>(j)];
        }
        for (int j = 0; j < V; ++j)
            (*probs)[static_cast<size_t>(r * V + j)] = static_cast<S>(prow[static_cast<size_t>(j)] / denom);
        total += (mx + std::log(denom)) - static_cast<double>(lr[tgt]);
    }
    const double mean_loss = total / static_cast<double>(n_valid);
    auto tgts = std::make_shared<std::vector<std::int32_t>>(targets.begin(), targets.end());
    auto mask = std::make_shared<std::vector<std::uint8_t>>(ignore_mask.begin(), ignore_mask.end());
    const int out_id = static_cast<int>(t.size());
    return t.emit(Tensor<S>::scalar(static_cast<S>(mean_loss)), {logits},
                  [logits, out_id, probs, tgts, mask, rows, V, n_valid](Tape<S>& tp) {
        if (!tp.needs_grad(logits)) return;
        const S g = tp.grad_buf(out_id).data[0];
        const S inv_n = static_cast<S>(1.0 / static_cast<double>(n_valid));
        Tensor<S>& gl = tp.grad_buf(logits);
        for (std::int64_t r = 0; r < rows; ++r) {
            if ((*mask)[static_cast<size_t>(r)]) continue;
            const S* pr = probs->data() + r * V;
            S* gr = gl.ptr() + r * V;
            const S w = g * inv_n;
            for (int j = 0; j < V; ++j) gr[j] += w * pr[j];
            gr[(*tgts)[static_cast<size_t>(r)]] -= w;
        }
    });
}

// Mean over unmasked elements of the stable binary cross-entropy on logits:
// max(x,0) - x*y + log1p(exp(-|x|)).
template <class S>
int sigmoid_bce(Tape<S>& t, int logits, std::span<const std::uint8_t> labels,
                std::span<const std::uint8_t> ignore_mask) {
    const Tensor<S>& L = t.val(logits);
    const std::int64_t n = L.numel();
    if (labels.size() != static_cast<size_t>(n) || ignore_mask.size() != static_cast<size_t>(n))
        throw ShapeError("sigmoid_bce: labels/mask size must equal logit count");
    std::int64_t n_valid = 0;
    for (auto m : ignore_mask)
        if (!m) ++n_valid;
    if (n_valid == 0) throw DegenerateBatchError("sigmoid_bce: every element is masked");
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        if (ignore_mask[static_cast<size_t>(i)]) continue;
        const double x = static_cast<double>(L.data[i]);
        const double y = labels[static_cast<size_t>(i)] ? 1.0 : 0.0;
        total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::fabs(x)));
    }
    const double mean_loss = total / static_cast<double>(n_valid);
    auto labs = std::make_shared<std::vector<std::uint8_t>>(labels.begin(), labels.end());
    auto mask = std::make_shared<std::vector<std::uint8_t>>(ignore_mask.begin(), ignore_mask.end());
    const int out_id = static_cast<int>(t.size());
    return t.emit(Tensor<S>::scalar(static_cast<S>(mean_loss)), {logits},
                  [logits, out_id, labs, mask, n, n_valid](Tape<S>& tp) {
        if (!tp.needs_grad(logits)) return;
        const S g = tp.grad_buf(out_id).data[0];
        const double inv_n = 1.0 / static_cast<double>(n_valid);
        const Tensor<S>& L2 = tp.val(logits);
        Tensor<S>& gl = tp.grad_buf(logits);
        for (std::int64_t i = 0; i < n; ++i) {
            if ((*mask)[static_cast<size_t>(i)]) continue;
            const double x = static_cast<double>(L2.data[i]);
            const double y = (*labs)[static_cast<size_t>(i)] ? 1.0 : 0.0;
            const double sig = 1.0 / (1.0 + std::exp(-x));
            gl.data[i] += g * static_cast<S>((sig - y) * inv_n);
        }
    });
}

// ---------------------------------------------------------------------------
// Heads
// ---------------------------------------------------------------------------

// Per-row scalar head: out[r] = <x[r], w> + b. Output shape = leading dims of x.
template <class S>
int affine_vec(Tape<S>& t, int x, int w, int b) {
    const Tensor<S>& X = t.val(x);
    const Tensor<S>& W = t.val(w);
    const Tensor<S>& B2 = t.val(b);
    const int d = X.last_dim();
    if (W.numel() != d || B2.numel() != 1)
        throw ShapeError("affine_vec: w must have length " + std::to_string(d) + " and b must be scalar");
    const std::int64_t rows = X.rows();
    std::vector<int> out_shape(X.shape.begin(), X.shape.end() - 1);
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor<S> out(out_shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        double acc = static_cast<double>(B2.data[0]);
        const S* xr = X.ptr() + r * d;
        for (int j = 0; j < d; ++j) acc += static_cast<double>(xr[j]) * static_cast<double>(W.data[j]);
        out.data[r] = static_cast<S>(acc);
    }
    const int out_id = static_cast<int>(t.size());
    return t.emit(std::move(out), {x, w, b}, [x, w, b, out_id, d, rows](Tape<S>& tp) {
        const Tensor<S>& G = tp.grad_buf(out_id);
        const Tensor<S>& X2 = tp.val(x);
        const Tensor<S>& W2 = tp.val(w);
        const bool need_x = tp.needs_grad(x), need_w = tp.needs_grad(w), need_b = tp.needs_grad(b);
        Tensor<S>* gx = need_x ? &tp.grad_buf(x) : nullptr;
        Tensor<S>* gw = need_w ? &tp.grad_buf(w) : nullptr;
        Tensor<S>* gb = need_b ? &tp.grad_buf(b) : nullptr;
        for (std::int64_t r = 0; r < rows; ++r) {
            const S gr = G.data[r];
            if (need_x)
                for (int j = 0; j < d; ++j) gx->data[r * d + j] += gr * W2.data[j];
            if (need_w)
                for (int j = 0; j < d; ++j) gw->data[j] += gr * X2.data[r * d + j];
            if (need_b) gb->data[0] += gr;
        }
    });
}

// Row-wise dot product of two same-shape [..., d] tensors -> leading dims.
template <class S>
int rows_dot(Tape<S>& t, int a, int b) {
    const Tensor<S>& A = t.val(a);
    const Tensor<S>& B2 = t.val(b);
    if (A.shape != B2.shape)
        throw ShapeError("rows_dot: shape mismatch " + shape_str(A.shape) + " vs " + shape_str(B2.shape));
    const int d = A.last_dim();
    const std::int64_t rows = A.rows();
    std::vector<int> out_shape(A.shape.begin(), A.shape.end() - 1);
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor<S> out(out_shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j)
            acc += static_cast<double>(A.data[r * d + j]) * static_cast<double>(B2.data[r * d + j]);
        out.data[r] = static_cast<S>(acc);
    }
    const int out_id = static_cast<int>(t.size());
    return t.emit(std::move(out), {a, b}, [a, b, out_id, d, rows](Tape<S>& tp) {
        const Tensor<S>& G = tp.grad_buf(out_id);
        const Tensor<S>& A2 = tp.val(a);
        const Tensor<S>& B3 = tp.val(b);
        const bool need_a = tp.needs_grad(a), need_b = tp.needs_grad(b);
        Tensor<S>* ga = need_a ? &tp.grad_buf(a) : nullptr;
        Tensor<S>* gb = need_b ? &tp.grad_buf(b) : nullptr;
        for (std::int64_t r = 0; r < rows; ++r) {
            const S gr = G.data[r];
            for (int j = 0; j < d; ++j) {
                if (need_a) ga->data[r * d + j] += gr * B3.data[r * d + j];
                if (need_b) gb->data[r * d + j] += gr * A2.data[r * d + j];
            }
        }
    });
}

// Similarity logits over the item table: out[..., V] = x . table^T with the
// padding item's column forced to the -inf surrogate (excluded from softmax
// and ranking; no gradient reaches the padding row through this op).
template <class S>
int logits_over_items(Tape<S>& t, int x, int table) {
    const Tensor<S>& X = t.val(x);
    const Tensor<S>& Tb = t.val(table);
    if (Tb.rank() != 2 || X.last_dim() != Tb.dim(1))
        throw ShapeError("logits_over_items: incompatible shapes " + shape_str(X.shape) + " and " +
                         shape_str(Tb.shape));
    const std::int64_t m = X.rows(), d = X.last_dim(), V = Tb.dim(0);
    std::vector<int> out_shape(X.shape.begin(), X.shape.end() - 1);
    out_shape.push_back(static_cast<int>(V));
    Tensor<S> out(out_shape);
    detail::as_mat(out, m, V).noalias() = detail::as_mat(X, m, d) * detail::as_mat(Tb, V, d).transpose();
    for (std::int64_t r = 0; r < m; ++r) out.data[r * V] = neg_inf_surrogate<S>();
    const int out_id = static_cast<int>(t.size());
    return t.emit(std::move(out), {x, table}, [x, table, out_id, m, d, V](Tape<S>& tp) {
        // Upstream grad on the forced padding column is dropped.
        Tensor<S> Gm = tp.grad_buf(out_id);
        for (std::int64_t r = 0; r < m; ++r) Gm.data[r * V] = S(0);
        auto G = detail::as_mat(Gm, m, V);
        if (tp.needs_grad(x)) {
            auto Tb2 = detail::as_mat(tp.val(table), V, d);
            detail::as_mat(tp.grad_buf(x), m, d).noalias() += G * Tb2;
        }
        if (tp.needs_grad(table)) {
            auto X2 = detail::as_mat(tp.val(x), m, d);
            detail::as_mat(tp.grad_buf(table), V, d).noalias() += G.transpose() * X2;
        }
    });
}

}  // namespace elec
