#pragma once

#include <cmath>
#include <cstddef>

#include "linattn/config.hpp"
#include "linattn/tensor.hpp"

namespace linattn {

template <typename S>
S feature_map_scalar(S x, FeatureMap kind) {
    switch (kind) {
        case FeatureMap::relu: return x > S(0) ? x : S(0);
        case FeatureMap::elu_plus_one: return x >= S(0) ? x + S(1) : std::exp(x);
        case FeatureMap::identity: return x;
    }
    return x;
}

template <typename S>
S feature_map_grad_scalar(S x, FeatureMap kind) {
    switch (kind) {
        case FeatureMap::relu: return x > S(0) ? S(1) : S(0);
        case FeatureMap::elu_plus_one: return x >= S(0) ? S(1) : std::exp(x);
        case FeatureMap::identity: return S(1);
    }
    return S(1);
}

// Elementwise kernel embedding phi.
template <typename S>
TensorT<S> apply_feature_map(const TensorT<S>& x, FeatureMap kind) {
    ensure_finite(x, "feature_map");
    TensorT<S> out = x;
    for (size_t i = 0; i < out.size(); ++i) out[i] = feature_map_scalar(out[i], kind);
    return out;
}

// Quadratic softmax attention, the brute-force oracle every fast path is
// tested against. Runs entirely on the tensor-op route (matmul, masked_fill,
// row_softmax) so it shares no code with the streaming kernels.
template <typename S>
TensorT<S> softmax_attention_ref(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
                                 bool causal) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw dim_error("softmax_attention_ref: rank-2 inputs required");
    if (q.rows() != k.rows() || q.rows() != v.rows() || q.cols() != k.cols() ||
        q.cols() != v.cols())
        throw dim_error("softmax_attention_ref: Q/K/V must share one n x d_k shape");
    const size_t n = q.rows();
    const S scale = S(1) / std::sqrt(static_cast<S>(q.cols()));
    TensorT<S> logits = matmul(q, transpose(k));
    if (causal) {
        BoolTensor mask({n, n}, false);
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j <= i; ++j) mask(i, j) = 1;
        logits = masked_fill(logits, mask, mask_fill_value<S>());
    }
    return matmul(row_softmax(logits, scale), v);
}

// Naive causal linear attention: out_t = phi(q_t) . S_t with
// S_t = sum_{i<=t} phi(k_i)^T v_i (include_current) or sum_{i<t} otherwise.
// Unnormalized; optional 1/count scaling divides by the number of summed
// (k, v) pairs.
template <typename S>
TensorT<S> causal_linear_attention_ref(const TensorT<S>& q, const TensorT<S>& k,
                                       const TensorT<S>& v, FeatureMap fm, bool include_current,
                                       GlobalScale gs = GlobalScale::none) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw dim_error("causal_linear_attention_ref: rank-2 inputs required");
    if (!q.same_shape(k) || !q.same_shape(v))
        throw dim_error("causal_linear_attention_ref: Q/K/V must share one shape");
    const size_t n = q.rows();
    const size_t d = q.cols();
    TensorT<S> out({n, d});
    TensorT<S> state({d, d});  // running sum of phi(k)^T v outer products
    for (size_t t = 0; t < n; ++t) {
        if (include_current) {
            for (size_t a = 0; a < d; ++a) {
                const S pk = feature_map_scalar(k(t, a), fm);
                for (size_t b = 0; b < d; ++b) state(a, b) += pk * v(t, b);
            }
        }
        const size_t count = include_current ? t + 1 : t;
        const S cs = (gs == GlobalScale::inverse_count && count > 0)
                         ? S(1) / static_cast<S>(count)
                         : S(1);
        for (size_t b = 0; b < d; ++b) {
            S acc = S(0);
            for (size_t a = 0; a < d; ++a)
                acc += feature_map_scalar(q(t, a), fm) * state(a, b);
            out(t, b) = acc * cs;
        }
        if (!include_current) {
            for (size_t a = 0; a < d; ++a) {
                const S pk = feature_map_scalar(k(t, a), fm);
                for (size_t b = 0; b < d; ++b) state(a, b) += pk * v(t, b);
            }
        }
    }
    return out;
}

}  // namespace linattn
