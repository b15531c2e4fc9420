#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "linattn/config.hpp"
#include "linattn/reference.hpp"
#include "linattn/tensor.hpp"

namespace linattn {

// Per-channel depthwise kernel over the value stream. taps(0, c) is the
// oldest tap, taps(k-1, c) multiplies the current position.
template <typename S>
struct ConvWeightsT {
    TensorT<S> taps;  // k x d_k

    ConvWeightsT() = default;
    ConvWeightsT(size_t k, size_t d_k) : taps({k, d_k}) {}
    explicit ConvWeightsT(TensorT<S> t) : taps(std::move(t)) {
        if (taps.rank() != 2) throw dim_error("ConvWeights: taps must be rank-2");
    }
    size_t kernel() const { return taps.rows(); }
    size_t channels() const { return taps.cols(); }

    // Identity kernel: only the current tap, weight 1.
    static ConvWeightsT identity(size_t k, size_t d_k) {
        ConvWeightsT w(k, d_k);
        for (size_t c = 0; c < d_k; ++c) w.taps(k - 1, c) = S(1);
        return w;
    }
};

using ConvWeights = ConvWeightsT<double>;

namespace detail {

// Row-level kernels shared by the batched (prefill) and streaming (decode)
// paths. Each accumulates in a fixed ascending order, so both paths produce
// bitwise-identical rows when fed the same values.

// Causal softmax attention of one query against m gathered key/value rows:
// logits_j = dot(q, k_j) * scale, softmax with max-subtraction, then
// out[c] = sum_j p_j v_j[c]. Optionally records the probability row.
template <typename S>
void softmax_attend_rows(const S* q, const S* const* k_rows, const S* const* v_rows, size_t m,
                         size_t d, S scale, S* out, S* prob_out = nullptr) {
    thread_local std::vector<S> probs;
    probs.resize(m);
    for (size_t j = 0; j < m; ++j) {
        S dot = S(0);
        const S* kj = k_rows[j];
        for (size_t a = 0; a < d; ++a) dot += q[a] * kj[a];
        probs[j] = dot * scale;
    }
    S mx = probs[0];
    for (size_t j = 1; j < m; ++j) mx = std::max(mx, probs[j]);
    S denom = S(0);
    for (size_t j = 0; j < m; ++j) {
        probs[j] = std::exp(probs[j] - mx);
        denom += probs[j];
    }
    for (size_t c = 0; c < d; ++c) out[c] = S(0);
    for (size_t j = 0; j < m; ++j) {
        const S p = probs[j] / denom;
        if (prob_out) prob_out[j] = p;
        const S* vj = v_rows[j];
        for (size_t c = 0; c < d; ++c) out[c] += p * vj[c];
    }
}

// Global-branch readout: out[b] = count_scale * sum_a phi(q[a]) * S(a, b).
template <typename S>
void global_attend_row(const S* q, size_t d, FeatureMap fm, const TensorT<S>& state,
                       S count_scale, S* out) {
    for (size_t b = 0; b < d; ++b) out[b] = S(0);
    for (size_t a = 0; a < d; ++a) {
        const S pq = feature_map_scalar(q[a], fm);
        const S* srow = state.data() + a * d;
        for (size_t b = 0; b < d; ++b) out[b] += pq * srow[b];
    }
    if (count_scale != S(1))
        for (size_t b = 0; b < d; ++b) out[b] *= count_scale;
}

// Depthwise conv over a gathered window of value rows, oldest tap first.
// window_rows[j] == nullptr stands for the zero padding left of the stream.
template <typename S>
void conv_attend_row(const TensorT<S>& taps, const S* const* window_rows, S* out) {
    const size_t k = taps.rows();
    const size_t d = taps.cols();
    for (size_t c = 0; c < d; ++c) out[c] = S(0);
    for (size_t j = 0; j < k; ++j) {
        const S* row = window_rows[j];
        if (!row) continue;
        const S* w = taps.data() + j * d;
        for (size_t c = 0; c < d; ++c) out[c] += w[c] * row[c];
    }
}

// acc(a, b) += phi(k[a]) * v[b] for each gathered row, rows in order.
template <typename S>
void accumulate_outer_rows(const S* const* k_rows, const S* const* v_rows, size_t m, size_t d,
                           FeatureMap fm, TensorT<S>& acc) {
    for (size_t r = 0; r < m; ++r) {
        const S* k = k_rows[r];
        const S* v = v_rows[r];
        for (size_t a = 0; a < d; ++a) {
            const S pk = feature_map_scalar(k[a], fm);
            S* arow = acc.data() + a * d;
            for (size_t b = 0; b < d; ++b) arow[b] += pk * v[b];
        }
    }
}

// Count scale of a token whose state sums `count` key/value pairs.
template <typename S>
S count_scale(GlobalScale gs, size_t count) {
    return (gs == GlobalScale::inverse_count && count > 0) ? S(1) / static_cast<S>(count) : S(1);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Branch forwards
// ---------------------------------------------------------------------------

// Masked depthwise conv on the value stream:
// out[t, c] = sum_j taps(j, c) * V[t - (k-1) + j, c], rows left of the
// stream are zero. Output at t depends only on rows <= t.
template <typename S>
TensorT<S> masked_dwconv_forward(const TensorT<S>& v, const ConvWeightsT<S>& w) {
    if (v.rank() != 2) throw dim_error("masked_dwconv: rank-2 V required");
    if (w.channels() != v.cols()) throw dim_error("masked_dwconv: channel mismatch");
    const size_t n = v.rows();
    const size_t k = w.kernel();
    TensorT<S> out({n, v.cols()});
    std::vector<const S*> window(k);
    for (size_t t = 0; t < n; ++t) {
        for (size_t j = 0; j < k; ++j) {
            const ptrdiff_t src = static_cast<ptrdiff_t>(t) - static_cast<ptrdiff_t>(k - 1) +
                                  static_cast<ptrdiff_t>(j);
            window[j] = src >= 0 ? v.data() + static_cast<size_t>(src) * v.cols() : nullptr;
        }
        detail::conv_attend_row(w.taps, window.data(), out.data() + t * v.cols());
    }
    return out;
}

// Deliberately broken variant for the leakage negative control: the window
// is centered on t, so taps reach rows up to t + floor(k/2).
template <typename S>
TensorT<S> unmasked_dwconv_forward(const TensorT<S>& v, const ConvWeightsT<S>& w) {
    if (v.rank() != 2) throw dim_error("unmasked_dwconv: rank-2 V required");
    if (w.channels() != v.cols()) throw dim_error("unmasked_dwconv: channel mismatch");
    const size_t n = v.rows();
    const size_t k = w.kernel();
    const ptrdiff_t shift = static_cast<ptrdiff_t>((k - 1) / 2);
    TensorT<S> out({n, v.cols()});
    std::vector<const S*> window(k);
    for (size_t t = 0; t < n; ++t) {
        for (size_t j = 0; j < k; ++j) {
            const ptrdiff_t src = static_cast<ptrdiff_t>(t) - shift + static_cast<ptrdiff_t>(j);
            window[j] = (src >= 0 && src < static_cast<ptrdiff_t>(n))
                            ? v.data() + static_cast<size_t>(src) * v.cols()
                            : nullptr;
        }
        detail::conv_attend_row(w.taps, window.data(), out.data() + t * v.cols());
    }
    return out;
}

// Per-group probability matrices, kept for the backward pass.
template <typename S>
struct LocalCacheT {
    std::vector<TensorT<S>> group_probs;  // group g: m_g x m_g causal rows
};

// Causal softmax attention within non-overlapping groups of G tokens.
template <typename S>
TensorT<S> local_group_attention_forward(const TensorT<S>& q, const TensorT<S>& k,
                                         const TensorT<S>& v, size_t group_size,
                                         LocalCacheT<S>* cache = nullptr) {
    if (!q.same_shape(k) || !q.same_shape(v) || q.rank() != 2)
        throw dim_error("local_group_attention: Q/K/V must share one n x d_k shape");
    if (group_size < 1) throw config_error("local_group_attention: group_size must be >= 1");
    const size_t n = q.rows();
    const size_t d = q.cols();
    const S scale = S(1) / std::sqrt(static_cast<S>(d));
    TensorT<S> out({n, d});
    if (cache) cache->group_probs.clear();
    std::vector<const S*> krows(group_size), vrows(group_size);
    for (size_t start = 0; start < n; start += group_size) {
        const size_t m = std::min(group_size, n - start);
        TensorT<S>* probs = nullptr;
        if (cache) {
            cache->group_probs.emplace_back(std::vector<size_t>{m, m});
            probs = &cache->group_probs.back();
        }
        for (size_t i = 0; i < m; ++i) {
            for (size_t j = 0; j <= i; ++j) {
                krows[j] = k.data() + (start + j) * d;
                vrows[j] = v.data() + (start + j) * d;
            }
            detail::softmax_attend_rows(q.data() + (start + i) * d, krows.data(), vrows.data(),
                                        i + 1, d, scale, out.data() + (start + i) * d,
                                        probs ? probs->data() + i * m : nullptr);
        }
    }
    return out;
}

// State snapshots per group, kept for the backward pass.
template <typename S>
struct GlobalCacheT {
    std::vector<TensorT<S>> group_state;  // state seen by group g (sum over groups < g)
    std::vector<size_t> group_start;      // first row of group g
    std::vector<size_t> group_count;      // key/value pairs summed into group_state[g]
};

// Grouped global linear attention: token t in group g reads
// phi(q_t) . S_{g-1} where S_{g-1} sums phi(k)^T v over all tokens of
// earlier groups. Tokens of the first group output zero rows.
template <typename S>
TensorT<S> grouped_global_la_forward(const TensorT<S>& q, const TensorT<S>& k,
                                     const TensorT<S>& v, size_t group_size, FeatureMap fm,
                                     GlobalScale gs = GlobalScale::none,
                                     GlobalCacheT<S>* cache = nullptr) {
    if (!q.same_shape(k) || !q.same_shape(v) || q.rank() != 2)
        throw dim_error("grouped_global_la: Q/K/V must share one n x d_k shape");
    if (group_size < 1) throw config_error("grouped_global_la: group_size must be >= 1");
    const size_t n = q.rows();
    const size_t d = q.cols();
    TensorT<S> out({n, d});
    TensorT<S> state({d, d});
    if (cache) {
        cache->group_state.clear();
        cache->group_start.clear();
        cache->group_count.clear();
    }
    std::vector<const S*> krows(group_size), vrows(group_size);
    size_t folded = 0;
    for (size_t start = 0; start < n; start += group_size) {
        const size_t m = std::min(group_size, n - start);
        if (cache) {
            cache->group_state.push_back(state);
            cache->group_start.push_back(start);
            cache->group_count.push_back(folded);
        }
        const S cs = detail::count_scale<S>(gs, folded);
        for (size_t i = 0; i < m; ++i)
            detail::global_attend_row(q.data() + (start + i) * d, d, fm, state, cs,
                                      out.data() + (start + i) * d);
        for (size_t i = 0; i < m; ++i) {
            krows[i] = k.data() + (start + i) * d;
            vrows[i] = v.data() + (start + i) * d;
        }
        // Fold this group so the next one sees it. Matches the streaming
        // fold: a per-group partial sum added to the state in one step.
        TensorT<S> group_sum({d, d});
        detail::accumulate_outer_rows(krows.data(), vrows.data(), m, d, fm, group_sum);
        for (size_t i = 0; i < state.size(); ++i) state[i] += group_sum[i];
        folded += m;
    }
    return out;
}

// Everything the backward pass needs from one forward call.
template <typename S>
struct ForwardCacheT {
    AttnConfig cfg;
    bool unmasked_conv = false;
    TensorT<S> q, k, v;
    ConvWeightsT<S> w;
    LocalCacheT<S> local;
    GlobalCacheT<S> global;
    bool valid = false;
    bool consumed = false;
};

using ForwardCache = ForwardCacheT<double>;

// Three-branch augmented attention:
// out = local_group_attention(Q,K,V) + alpha * grouped_global_la(Q,K,V)
//     + masked_dwconv(V, W).
template <typename S>
TensorT<S> augmented_attention_forward(const TensorT<S>& q, const TensorT<S>& k,
                                       const TensorT<S>& v, const ConvWeightsT<S>& w,
                                       const AttnConfig& cfg,
                                       ForwardCacheT<S>* cache = nullptr,
                                       bool unmasked_conv = false) {
    cfg.validate();
    if (!q.same_shape(k) || !q.same_shape(v) || q.rank() != 2)
        throw dim_error("augmented_attention: Q/K/V must share one n x d_k shape");
    if (q.cols() != cfg.head_dim)
        throw dim_error("augmented_attention: input width does not match cfg.head_dim");
    if (w.kernel() != cfg.conv_kernel || w.channels() != cfg.head_dim)
        throw dim_error("augmented_attention: conv weights do not match cfg");
    ensure_finite(q, "augmented_attention: Q");
    ensure_finite(k, "augmented_attention: K");
    ensure_finite(v, "augmented_attention: V");
    ensure_finite(w.taps, "augmented_attention: conv taps");
    LocalCacheT<S>* lc = cache ? &cache->local : nullptr;
    GlobalCacheT<S>* gc = cache ? &cache->global : nullptr;
    TensorT<S> local = local_group_attention_forward(q, k, v, cfg.group_size, lc);
    TensorT<S> global = grouped_global_la_forward(q, k, v, cfg.group_size, cfg.feature_map,
                                                  cfg.global_scale, gc);
    TensorT<S> conv = unmasked_conv ? unmasked_dwconv_forward(v, w) : masked_dwconv_forward(v, w);
    const S alpha = static_cast<S>(cfg.alpha);
    TensorT<S> out({q.rows(), q.cols()});
    for (size_t i = 0; i < out.size(); ++i) {
        S o = local[i] + alpha * global[i];
        o += conv[i];
        out[i] = o;
    }
    if (cache) {
        cache->cfg = cfg;
        cache->unmasked_conv = unmasked_conv;
        cache->q = q;
        cache->k = k;
        cache->v = v;
        cache->w = w;
        cache->valid = true;
        cache->consumed = false;
    }
    return out;
}

template <typename S>
struct AugmentedGradsT {
    TensorT<S> dq, dk, dv;
    ConvWeightsT<S> dw;
};

using AugmentedGrads = AugmentedGradsT<double>;

// Exact analytic gradients of augmented_attention_forward with respect to
// Q, K, V and the conv taps.
template <typename S>
AugmentedGradsT<S> augmented_attention_backward(ForwardCacheT<S>& cache,
                                                const TensorT<S>& d_out) {
    if (!cache.valid) throw contract_error("augmented backward: cache not produced by forward");
    if (cache.consumed) throw contract_error("augmented backward: cache already consumed");
    if (!d_out.same_shape(cache.q))
        throw dim_error("augmented backward: d_out shape does not match cached inputs");
    cache.consumed = true;

    const AttnConfig& cfg = cache.cfg;
    const size_t n = cache.q.rows();
    const size_t d = cache.q.cols();
    const size_t g_sz = cfg.group_size;
    const size_t kk = cfg.conv_kernel;
    const S alpha = static_cast<S>(cfg.alpha);
    const S scale = S(1) / std::sqrt(static_cast<S>(d));
    const TensorT<S>& q = cache.q;
    const TensorT<S>& k = cache.k;
    const TensorT<S>& v = cache.v;

    AugmentedGradsT<S> grads;
    grads.dq = TensorT<S>({n, d});
    grads.dk = TensorT<S>({n, d});
    grads.dv = TensorT<S>({n, d});
    grads.dw = ConvWeightsT<S>(kk, d);

    // Conv branch.
    const ptrdiff_t conv_shift = cache.unmasked_conv
                                     ? static_cast<ptrdiff_t>((kk - 1) / 2)
                                     : static_cast<ptrdiff_t>(kk - 1);
    for (size_t t = 0; t < n; ++t) {
        for (size_t j = 0; j < kk; ++j) {
            const ptrdiff_t src = static_cast<ptrdiff_t>(t) - conv_shift +
                                  static_cast<ptrdiff_t>(j);
            if (src < 0 || src >= static_cast<ptrdiff_t>(n)) continue;
            const size_t s = static_cast<size_t>(src);
            for (size_t c = 0; c < d; ++c) {
                grads.dv(s, c) += cache.w.taps(j, c) * d_out(t, c);
                grads.dw.taps(j, c) += v(s, c) * d_out(t, c);
            }
        }
    }

    // Local branch, group by group.
    const size_t n_groups = (n + g_sz - 1) / g_sz;
    if (cache.local.group_probs.size() != n_groups)
        throw contract_error("augmented backward: stale cache (group count mismatch)");
    for (size_t g = 0; g < n_groups; ++g) {
        const size_t start = g * g_sz;
        const size_t m = std::min(g_sz, n - start);
        const TensorT<S>& p = cache.local.group_probs[g];
        for (size_t i = 0; i < m; ++i) {
            // dP row and the softmax Jacobian contraction.
            std::vector<S> dp(i + 1);
            for (size_t j = 0; j <= i; ++j) {
                S acc = S(0);
                for (size_t c = 0; c < d; ++c) acc += d_out(start + i, c) * v(start + j, c);
                dp[j] = acc;
            }
            S dot = S(0);
            for (size_t j = 0; j <= i; ++j) dot += p(i, j) * dp[j];
            for (size_t j = 0; j <= i; ++j) {
                const S dz = p(i, j) * (dp[j] - dot);
                for (size_t c = 0; c < d; ++c) {
                    grads.dq(start + i, c) += scale * dz * k(start + j, c);
                    grads.dk(start + j, c) += scale * dz * q(start + i, c);
                }
                for (size_t c = 0; c < d; ++c)
                    grads.dv(start + j, c) += p(i, j) * d_out(start + i, c);
            }
        }
    }

    // Global branch: walk groups newest to oldest, carrying the accumulated
    // query-side outer products of all later groups.
    if (cache.global.group_state.size() != n_groups)
        throw contract_error("augmented backward: stale cache (global group mismatch)");
    TensorT<S> t_acc({d, d});
    for (size_t g = n_groups; g-- > 0;) {
        const size_t start = g * g_sz;
        const size_t m = std::min(g_sz, n - start);
        const S cs = detail::count_scale<S>(cfg.global_scale, cache.global.group_count[g]);
        // Key/value side from later groups.
        for (size_t i = 0; i < m; ++i) {
            const size_t t = start + i;
            for (size_t a = 0; a < d; ++a) {
                const S pk = feature_map_scalar(k(t, a), cfg.feature_map);
                const S dpk_row = [&] {
                    S acc = S(0);
                    for (size_t b = 0; b < d; ++b) acc += t_acc(a, b) * v(t, b);
                    return acc;
                }();
                grads.dk(t, a) += dpk_row * feature_map_grad_scalar(k(t, a), cfg.feature_map);
                for (size_t b = 0; b < d; ++b) grads.dv(t, b) += pk * t_acc(a, b);
            }
        }
        // Query side against the cached state snapshot.
        const TensorT<S>& st = cache.global.group_state[g];
        for (size_t i = 0; i < m; ++i) {
            const size_t t = start + i;
            for (size_t a = 0; a < d; ++a) {
                S acc = S(0);
                for (size_t b = 0; b < d; ++b) acc += d_out(t, b) * st(a, b);
                grads.dq(t, a) += alpha * cs * acc *
                                  feature_map_grad_scalar(q(t, a), cfg.feature_map);
            }
        }
        // This group's query contributions feed all earlier groups.
        for (size_t i = 0; i < m; ++i) {
            const size_t t = start + i;
            for (size_t a = 0; a < d; ++a) {
                const S pq = alpha * cs * feature_map_scalar(q(t, a), cfg.feature_map);
                for (size_t b = 0; b < d; ++b) t_acc(a, b) += pq * d_out(t, b);
            }
        }
    }
    return grads;
}

// Column block [h*d_k, (h+1)*d_k) of a rank-2 tensor.
template <typename S>
TensorT<S> slice_cols(const TensorT<S>& t, size_t c0, size_t c1) {
    if (t.rank() != 2 || c1 > t.cols() || c0 >= c1) throw dim_error("slice_cols: bad range");
    TensorT<S> out({t.rows(), c1 - c0});
    for (size_t i = 0; i < t.rows(); ++i)
        for (size_t j = c0; j < c1; ++j) out(i, j - c0) = t(i, j);
    return out;
}

// Multi-head augmented attention: project X with Wq/Wk/Wv, run the
// augmented op per head on column blocks, concatenate, then apply Wo.
template <typename S>
TensorT<S> multi_head_augmented(const TensorT<S>& x, const TensorT<S>& wq, const TensorT<S>& wk,
                                const TensorT<S>& wv, const TensorT<S>& wo,
                                const std::vector<ConvWeightsT<S>>& wc, const AttnConfig& cfg,
                                bool unmasked_conv = false) {
    cfg.validate();
    if (x.rank() != 2 || x.cols() != cfg.d_model)
        throw dim_error("multi_head_augmented: X must be n x d_model");
    if (wc.size() != cfg.n_heads)
        throw dim_error("multi_head_augmented: one ConvWeights per head required");
    const TensorT<S> q = matmul(x, wq);
    const TensorT<S> k = matmul(x, wk);
    const TensorT<S> v = matmul(x, wv);
    TensorT<S> concat({x.rows(), cfg.d_model});
    for (size_t h = 0; h < cfg.n_heads; ++h) {
        const size_t c0 = h * cfg.head_dim;
        const size_t c1 = c0 + cfg.head_dim;
        TensorT<S> head = augmented_attention_forward(
            slice_cols(q, c0, c1), slice_cols(k, c0, c1), slice_cols(v, c0, c1), wc[h], cfg,
            static_cast<ForwardCacheT<S>*>(nullptr), unmasked_conv);
        for (size_t i = 0; i < x.rows(); ++i)
            for (size_t j = 0; j < cfg.head_dim; ++j) concat(i, c0 + j) = head(i, j);
    }
    return matmul(concat, wo);
}

}  // namespace linattn
