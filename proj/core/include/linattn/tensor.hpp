#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "linattn/errors.hpp"
#include "linattn/rng.hpp"

namespace linattn {

// Dense row-major numeric array. Double precision is the reference scalar;
// float is available for benchmark builds via the same template.
template <typename S>
class TensorT {
public:
    TensorT() = default;

    // A zero extent is legal and yields an empty tensor (e.g. a 0 x d
    // output for an empty input batch).
    explicit TensorT(std::vector<size_t> shape, S fill = S{}) : shape_(std::move(shape)) {
        size_t n = shape_.empty() ? 0 : 1;
        for (size_t d : shape_) n *= d;
        data_.assign(n, fill);
    }

    static TensorT zeros(std::vector<size_t> shape) { return TensorT(std::move(shape)); }

    // 2-D builder for literals in tests and small fixtures.
    static TensorT from_rows(std::initializer_list<std::initializer_list<S>> rows) {
        if (rows.size() == 0) throw dim_error("from_rows: no rows");
        const size_t c = rows.begin()->size();
        TensorT t({rows.size(), c});
        size_t i = 0;
        for (const auto& r : rows) {
            if (r.size() != c) throw dim_error("from_rows: ragged rows");
            size_t j = 0;
            for (S v : r) t(i, j++) = v;
            ++i;
        }
        return t;
    }

    static TensorT identity(size_t n) {
        TensorT t({n, n});
        for (size_t i = 0; i < n; ++i) t(i, i) = S(1);
        return t;
    }

    const std::vector<size_t>& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t dim(size_t i) const { return shape_.at(i); }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    size_t rows() const {
        assert(rank() == 2);
        return shape_[0];
    }
    size_t cols() const {
        assert(rank() == 2);
        return shape_[1];
    }

    S& operator[](size_t i) { return data_[i]; }
    S operator[](size_t i) const { return data_[i]; }

    S& operator()(size_t i, size_t j) {
        assert(rank() == 2 && i < shape_[0] && j < shape_[1]);
        return data_[i * shape_[1] + j];
    }
    S operator()(size_t i, size_t j) const {
        assert(rank() == 2 && i < shape_[0] && j < shape_[1]);
        return data_[i * shape_[1] + j];
    }
    S& operator()(size_t i, size_t j, size_t l) {
        assert(rank() == 3 && i < shape_[0] && j < shape_[1] && l < shape_[2]);
        return data_[(i * shape_[1] + j) * shape_[2] + l];
    }
    S operator()(size_t i, size_t j, size_t l) const {
        assert(rank() == 3 && i < shape_[0] && j < shape_[1] && l < shape_[2]);
        return data_[(i * shape_[1] + j) * shape_[2] + l];
    }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }

    std::span<S> row_span(size_t i) {
        assert(rank() == 2 && i < shape_[0]);
        return {data_.data() + i * shape_[1], shape_[1]};
    }
    std::span<const S> row_span(size_t i) const {
        assert(rank() == 2 && i < shape_[0]);
        return {data_.data() + i * shape_[1], shape_[1]};
    }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (S v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const TensorT& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    std::vector<size_t> shape_;
    std::vector<S> data_;
};

using Tensor = TensorT<double>;
using TensorF = TensorT<float>;

// Boolean mask with tensor shape semantics (1 = keep, 0 = fill).
struct BoolTensor {
    std::vector<size_t> shape;
    std::vector<uint8_t> v;

    BoolTensor() = default;
    BoolTensor(std::vector<size_t> s, bool fill) : shape(std::move(s)) {
        size_t n = 1;
        for (size_t d : shape) n *= d;
        v.assign(n, fill ? 1 : 0);
    }
    size_t rows() const { return shape.at(0); }
    size_t cols() const { return shape.at(1); }
    uint8_t& operator()(size_t i, size_t j) { return v[i * shape[1] + j]; }
    uint8_t operator()(size_t i, size_t j) const { return v[i * shape[1] + j]; }
};

template <typename S>
void ensure_finite(const TensorT<S>& t, const char* what) {
    if (!t.all_finite()) throw numeric_error(std::string(what) + ": non-finite value");
}

namespace detail {

// One output row of a matrix product: out[j] = sum_k a_row[k] * b(k, j),
// accumulated in ascending k. Every matmul in the library funnels through
// this so accumulation order is a testable constant.
template <typename S>
void matmul_row(const S* a_row, const TensorT<S>& b, S* out) {
    const size_t p = b.rows();
    const size_t n = b.cols();
    const S* bd = b.data();
    for (size_t j = 0; j < n; ++j) out[j] = S(0);
    for (size_t k = 0; k < p; ++k) {
        const S a = a_row[k];
        const S* brow = bd + k * n;
        for (size_t j = 0; j < n; ++j) out[j] += a * brow[j];
    }
}

}  // namespace detail

// Standard matrix product with a fixed accumulation order: element (i, j)
// sums a(i,k)*b(k,j) over ascending k, so repeated calls are bitwise
// identical and match a naive triple loop exactly.
template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.rank() != 2 || b.rank() != 2) throw dim_error("matmul: operands must be rank-2");
    if (a.cols() != b.rows())
        throw dim_error("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                        std::to_string(b.rows()));
    TensorT<S> out({a.rows(), b.cols()});
    for (size_t i = 0; i < a.rows(); ++i)
        detail::matmul_row(a.data() + i * a.cols(), b, out.data() + i * out.cols());
    ensure_finite(out, "matmul");
    return out;
}

// Row-wise softmax of (a * scale) with max-subtraction. Rows sum to 1 for
// any finite input.
template <typename S>
TensorT<S> row_softmax(const TensorT<S>& a, S scale) {
    if (a.rank() != 2) throw dim_error("row_softmax: rank-2 input required");
    ensure_finite(a, "row_softmax");
    TensorT<S> out({a.rows(), a.cols()});
    for (size_t i = 0; i < a.rows(); ++i) {
        const S* in = a.data() + i * a.cols();
        S* o = out.data() + i * a.cols();
        S mx = in[0] * scale;
        for (size_t j = 1; j < a.cols(); ++j) mx = std::max(mx, in[j] * scale);
        S denom = S(0);
        for (size_t j = 0; j < a.cols(); ++j) {
            o[j] = std::exp(in[j] * scale - mx);
            denom += o[j];
        }
        for (size_t j = 0; j < a.cols(); ++j) o[j] /= denom;
    }
    return out;
}

// out[i,j] = a[i,j] where mask is true, fill elsewhere.
template <typename S>
TensorT<S> masked_fill(const TensorT<S>& a, const BoolTensor& mask, S fill) {
    if (a.shape() != mask.shape) throw dim_error("masked_fill: shape mismatch");
    ensure_finite(a, "masked_fill");
    if (!std::isfinite(fill)) throw numeric_error("masked_fill: non-finite fill");
    TensorT<S> out = a;
    for (size_t i = 0; i < out.size(); ++i)
        if (!mask.v[i]) out[i] = fill;
    return out;
}

template <typename S>
TensorT<S> transpose(const TensorT<S>& a) {
    if (a.rank() != 2) throw dim_error("transpose: rank-2 input required");
    TensorT<S> out({a.cols(), a.rows()});
    for (size_t i = 0; i < a.rows(); ++i)
        for (size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    if (!a.same_shape(b)) throw dim_error("add: shape mismatch");
    TensorT<S> out = a;
    for (size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

template <typename S>
TensorT<S> scaled(const TensorT<S>& a, S s) {
    TensorT<S> out = a;
    for (size_t i = 0; i < out.size(); ++i) out[i] *= s;
    return out;
}

// Mask-logit fill value: most-negative finite scalar rather than -inf, so
// softmax arithmetic stays NaN-free.
template <typename S>
constexpr S mask_fill_value() {
    return std::numeric_limits<S>::lowest();
}

template <typename S>
TensorT<S> random_tensor(Rng& rng, std::vector<size_t> shape, S lo = S(-1), S hi = S(1)) {
    TensorT<S> t(std::move(shape));
    for (size_t i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.uniform(lo, hi));
    return t;
}

}  // namespace linattn
