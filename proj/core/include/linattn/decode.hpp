#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "linattn/augmented.hpp"
#include "linattn/config.hpp"
#include "linattn/tensor.hpp"

namespace linattn {

namespace detail {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

class ByteReader {
public:
    ByteReader(const uint8_t* p, size_t n) : p_(p), n_(n) {}
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    bool at_end() const { return pos_ == n_; }

private:
    void need(size_t k) const {
        if (pos_ + k > n_) throw io_error("snapshot: truncated blob");
    }
    const uint8_t* p_;
    size_t n_;
    size_t pos_ = 0;
};

template <typename S>
void put_scalar(std::vector<uint8_t>& out, S v) {
    if constexpr (sizeof(S) == 8) {
        put_u64(out, std::bit_cast<uint64_t>(static_cast<double>(v)));
    } else {
        put_u32(out, std::bit_cast<uint32_t>(static_cast<float>(v)));
    }
}

template <typename S>
S get_scalar(ByteReader& r) {
    if constexpr (sizeof(S) == 8) {
        return std::bit_cast<double>(r.u64());
    } else {
        return std::bit_cast<float>(r.u32());
    }
}

}  // namespace detail

// Streaming form of augmented attention for one head. Holds the folded
// global state, the open group's raw rows, and the conv tail; committed
// token count grows without growing the footprint.
template <typename S>
class DecodeStateT {
public:
    DecodeStateT(const AttnConfig& cfg, ConvWeightsT<S> conv)
        : cfg_(cfg), state_({cfg.head_dim, cfg.head_dim}), conv_(std::move(conv)) {
        cfg_.validate();
        if (conv_.kernel() != cfg_.conv_kernel || conv_.channels() != cfg_.head_dim)
            throw dim_error("DecodeState: conv weights do not match cfg");
        group_k_.reserve(cfg_.group_size);
        group_v_.reserve(cfg_.group_size);
    }

    const AttnConfig& cfg() const { return cfg_; }
    const ConvWeightsT<S>& conv_weights() const { return conv_; }
    size_t pos() const { return pos_; }
    size_t folded_tokens() const { return pos_ - group_k_.size(); }
    size_t group_rows() const { return group_k_.size(); }
    size_t tail_rows() const { return tail_.size(); }
    const TensorT<S>& state_matrix() const { return state_; }
    const S* group_k_row(size_t i) const { return group_k_[i].data(); }
    const S* group_v_row(size_t i) const { return group_v_[i].data(); }
    // Tail rows ordered oldest to newest; index tail_rows()-1 is position pos-1.
    const S* tail_row(size_t i) const { return tail_[i].data(); }

    // Output for a hypothetical next token at position pos, without
    // committing it. Read-only: used by decode_step and by speculative
    // tree evaluation (which must not mutate the stream).
    void compute_row(const S* q, const S* k, const S* v, S* out) const {
        const size_t d = cfg_.head_dim;
        thread_local std::vector<S> local_out, global_out, conv_out;
        thread_local std::vector<const S*> krows, vrows, window;
        local_out.resize(d);
        global_out.resize(d);
        conv_out.resize(d);

        // Local: causal softmax over the open group's committed rows plus self.
        const size_t m = group_k_.size();
        krows.resize(m + 1);
        vrows.resize(m + 1);
        for (size_t j = 0; j < m; ++j) {
            krows[j] = group_k_[j].data();
            vrows[j] = group_v_[j].data();
        }
        krows[m] = k;
        vrows[m] = v;
        const S scale = S(1) / std::sqrt(static_cast<S>(d));
        detail::softmax_attend_rows(q, krows.data(), vrows.data(), m + 1, d, scale,
                                    local_out.data());

        // Global: folded groups only.
        const S cs = detail::count_scale<S>(cfg_.global_scale, folded_tokens());
        detail::global_attend_row(q, d, cfg_.feature_map, state_, cs, global_out.data());

        // Conv: committed tail plus the incoming value row under the newest taps.
        const size_t kk = cfg_.conv_kernel;
        window.resize(kk);
        const size_t tn = tail_.size();
        for (size_t j = 0; j + 1 < kk; ++j) {
            // Tap j reads absolute position pos - (kk-1) + j, which sits
            // tn + j - (kk-1) slots into the tail when non-negative.
            const ptrdiff_t idx = static_cast<ptrdiff_t>(tn) + static_cast<ptrdiff_t>(j) -
                                  static_cast<ptrdiff_t>(kk) + 1;
            window[j] = idx >= 0 ? tail_[static_cast<size_t>(idx)].data() : nullptr;
        }
        window[kk - 1] = v;
        detail::conv_attend_row(conv_.taps, window.data(), conv_out.data());

        const S alpha = static_cast<S>(cfg_.alpha);
        for (size_t c = 0; c < d; ++c) {
            S o = local_out[c] + alpha * global_out[c];
            o += conv_out[c];
            out[c] = o;
        }
    }

    // Commit one token: append to the open group (folding when it fills),
    // advance the conv tail, bump pos. Mirrors the batched path exactly.
    void commit_row(const S* k, const S* v) {
        const size_t d = cfg_.head_dim;
        group_k_.emplace_back(k, k + d);
        group_v_.emplace_back(v, v + d);
        if (group_k_.size() == cfg_.group_size) fold_group();
        if (cfg_.conv_kernel > 1) {
            tail_.emplace_back(v, v + d);
            if (tail_.size() > cfg_.conv_kernel - 1) tail_.erase(tail_.begin());
        }
        ++pos_;
    }

    // Exposed for tests; requires a full group.
    void fold_group() {
        if (group_k_.size() != cfg_.group_size)
            throw contract_error("fold_group: buffer holds " + std::to_string(group_k_.size()) +
                                 " rows, needs " + std::to_string(cfg_.group_size));
        const size_t d = cfg_.head_dim;
        thread_local std::vector<const S*> krows, vrows;
        const size_t m = group_k_.size();
        krows.resize(m);
        vrows.resize(m);
        for (size_t j = 0; j < m; ++j) {
            krows[j] = group_k_[j].data();
            vrows[j] = group_v_[j].data();
        }
        TensorT<S> group_sum({d, d});
        detail::accumulate_outer_rows(krows.data(), vrows.data(), m, d, cfg_.feature_map,
                                      group_sum);
        for (size_t i = 0; i < state_.size(); ++i) state_[i] += group_sum[i];
        group_k_.clear();
        group_v_.clear();
    }

    TensorT<S> decode_step(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v) {
        check_row(q, "q");
        check_row(k, "k");
        check_row(v, "v");
        TensorT<S> out({cfg_.head_dim});
        compute_row(q.data(), k.data(), v.data(), out.data());
        commit_row(k.data(), v.data());
        return out;
    }

    void decode_step(const S* q, const S* k, const S* v, S* out) {
        compute_row(q, k, v, out);
        commit_row(k, v);
    }

    // Batched ingest of n rows on top of the existing stream; outputs and
    // final state are bitwise-identical to n decode_steps because both
    // paths run the same row kernels in the same order.
    TensorT<S> prefill(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v) {
        if (!q.same_shape(k) || !q.same_shape(v) || q.rank() != 2)
            throw dim_error("prefill: Q/K/V must share one n x d_k shape");
        if (q.rows() > 0 && q.cols() != cfg_.head_dim)
            throw dim_error("prefill: width does not match head_dim");
        const size_t n = q.rows();
        const size_t d = cfg_.head_dim;
        TensorT<S> out({n, d});
        for (size_t t = 0; t < n; ++t) {
            compute_row(q.data() + t * d, k.data() + t * d, v.data() + t * d,
                        out.data() + t * d);
            commit_row(k.data() + t * d, v.data() + t * d);
        }
        return out;
    }

    // Copy of this state that convolves with different taps.
    DecodeStateT with_conv(ConvWeightsT<S> w) const {
        if (w.kernel() != cfg_.conv_kernel || w.channels() != cfg_.head_dim)
            throw dim_error("with_conv: shape does not match cfg");
        DecodeStateT c = *this;
        c.conv_ = std::move(w);
        return c;
    }

    bool operator==(const DecodeStateT& o) const {
        return pos_ == o.pos_ && state_ == o.state_ && group_k_ == o.group_k_ &&
               group_v_ == o.group_v_ && tail_ == o.tail_;
    }

    // Versioned little-endian blob of every state field (weights and cfg
    // travel separately; restore validates dimensions against them).
    std::vector<uint8_t> snapshot() const {
        std::vector<uint8_t> out;
        out.insert(out.end(), {'L', 'A', 'D', 'S'});
        detail::put_u32(out, kSnapshotVersion);
        detail::put_u32(out, static_cast<uint32_t>(sizeof(S)));
        detail::put_u32(out, static_cast<uint32_t>(cfg_.head_dim));
        detail::put_u32(out, static_cast<uint32_t>(cfg_.group_size));
        detail::put_u32(out, static_cast<uint32_t>(cfg_.conv_kernel));
        detail::put_u64(out, static_cast<uint64_t>(pos_));
        detail::put_u64(out, static_cast<uint64_t>(group_k_.size()));
        detail::put_u64(out, static_cast<uint64_t>(tail_.size()));
        for (size_t i = 0; i < state_.size(); ++i) detail::put_scalar<S>(out, state_[i]);
        for (const auto& r : group_k_)
            for (S v : r) detail::put_scalar<S>(out, v);
        for (const auto& r : group_v_)
            for (S v : r) detail::put_scalar<S>(out, v);
        for (const auto& r : tail_)
            for (S v : r) detail::put_scalar<S>(out, v);
        return out;
    }

    static DecodeStateT restore(const AttnConfig& cfg, ConvWeightsT<S> conv,
                                const std::vector<uint8_t>& blob) {
        if (blob.size() < 4 || blob[0] != 'L' || blob[1] != 'A' || blob[2] != 'D' ||
            blob[3] != 'S')
            throw io_error("snapshot: bad magic");
        detail::ByteReader r(blob.data(), blob.size());
        (void)r.u32();  // magic, validated above
        if (r.u32() != kSnapshotVersion) throw io_error("snapshot: unsupported version");
        if (r.u32() != sizeof(S)) throw io_error("snapshot: scalar width mismatch");
        if (r.u32() != cfg.head_dim || r.u32() != cfg.group_size || r.u32() != cfg.conv_kernel)
            throw io_error("snapshot: dimensions do not match cfg");
        DecodeStateT st(cfg, std::move(conv));
        st.pos_ = static_cast<size_t>(r.u64());
        const size_t buffered = static_cast<size_t>(r.u64());
        const size_t tail_n = static_cast<size_t>(r.u64());
        if (buffered >= cfg.group_size) throw io_error("snapshot: buffered rows >= group size");
        if (tail_n > cfg.conv_kernel - 1) throw io_error("snapshot: tail longer than kernel - 1");
        if (st.pos_ < buffered) throw io_error("snapshot: pos smaller than buffered rows");
        const size_t d = cfg.head_dim;
        for (size_t i = 0; i < st.state_.size(); ++i) st.state_[i] = detail::get_scalar<S>(r);
        auto read_rows = [&](std::vector<std::vector<S>>& dst, size_t rows) {
            dst.assign(rows, std::vector<S>(d));
            for (auto& row : dst)
                for (S& v : row) v = detail::get_scalar<S>(r);
        };
        read_rows(st.group_k_, buffered);
        read_rows(st.group_v_, buffered);
        read_rows(st.tail_, tail_n);
        if (!r.at_end()) throw io_error("snapshot: trailing bytes");
        return st;
    }

private:
    static constexpr uint32_t kSnapshotVersion = 1;

    void check_row(const TensorT<S>& t, const char* what) const {
        if (t.rank() != 1 || t.dim(0) != cfg_.head_dim)
            throw dim_error(std::string("decode_step: ") + what + " must be a d_k vector");
    }

    AttnConfig cfg_;
    TensorT<S> state_;                     // d_k x d_k folded sum of phi(K)^T V
    std::vector<std::vector<S>> group_k_;  // open group, raw keys
    std::vector<std::vector<S>> group_v_;  // open group, values
    std::vector<std::vector<S>> tail_;     // last kernel-1 committed value rows
    size_t pos_ = 0;
    ConvWeightsT<S> conv_;
};

using DecodeState = DecodeStateT<double>;

}  // namespace linattn
