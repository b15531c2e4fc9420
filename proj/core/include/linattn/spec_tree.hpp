#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "linattn/decode.hpp"
#include "linattn/rng.hpp"
#include "linattn/tensor.hpp"

namespace linattn {

// Candidate-continuation tree. Nodes are stored topologically (parents
// precede children); ROOT is a sentinel, not a node — ROOT children have
// parent kRootParent and depth 1.
struct SpecTree {
    static constexpr ptrdiff_t kRootParent = -1;

    struct Node {
        ptrdiff_t parent = kRootParent;
        size_t token = 0;
    };

    std::vector<Node> nodes;

    size_t size() const { return nodes.size(); }
};

// Structural validation: nonempty, parent indices strictly below the node.
// Returns per-node depth (ROOT children have depth 1).
std::vector<size_t> validate_tree(const SpecTree& tree);

// Depth of the deepest node.
size_t tree_depth(const SpecTree& tree);

// Children of every node, plus the ROOT children at index nodes.size().
std::vector<std::vector<size_t>> tree_children(const SpecTree& tree);

// mask(i, j) true iff j is i or an ancestor of i.
BoolTensor tree_mask(const SpecTree& tree);

struct VerifyResult {
    std::vector<size_t> accepted;  // node indices, root-path order
    size_t bonus_token = 0;
};

// Greedy acceptance walk: starting from ROOT with root_argmax, repeatedly
// accept the lowest-index child whose token matches the current argmax;
// the argmax at the stopping point becomes the bonus token.
VerifyResult verify_greedy(const SpecTree& tree, const std::vector<size_t>& verifier_argmax,
                           size_t root_argmax);

struct TreeStats {
    size_t qkv_rows = 0;  // transient query/key/value rows materialized
};

// Per-node conv windows: block x = the last k value rows along x's
// root-path (committed tail, then ancestors, then x), newest last,
// zero-padded past the start of the stream.
template <typename S>
TensorT<S> unfold_conv_rows(const SpecTree& tree, const TensorT<S>& node_v,
                            const DecodeStateT<S>& state) {
    const std::vector<size_t> depth = validate_tree(tree);
    const size_t m = tree.size();
    const size_t d = state.cfg().head_dim;
    const size_t k = state.cfg().conv_kernel;
    if (node_v.rank() != 2 || node_v.rows() != m || node_v.cols() != d)
        throw dim_error("unfold_conv_rows: node_V must be m x d_k");
    TensorT<S> out({m, k, d});
    const size_t tn = state.tail_rows();
    for (size_t x = 0; x < m; ++x) {
        // Slots k-1, k-2, ... take the node itself, then ancestors.
        ptrdiff_t slot = static_cast<ptrdiff_t>(k) - 1;
        ptrdiff_t node = static_cast<ptrdiff_t>(x);
        while (node >= 0 && slot >= 0) {
            const S* src = node_v.data() + static_cast<size_t>(node) * d;
            S* dst = out.data() + (x * k + static_cast<size_t>(slot)) * d;
            for (size_t c = 0; c < d; ++c) dst[c] = src[c];
            node = tree.nodes[static_cast<size_t>(node)].parent;
            --slot;
        }
        // Remaining slots take committed tail rows, newest first; slots
        // reaching past the start of the stream stay zero.
        size_t age = 0;  // 0 = newest committed row (position pos-1)
        while (slot >= 0) {
            if (age < tn) {
                const S* src = state.tail_row(tn - 1 - age);
                S* dst = out.data() + (x * k + static_cast<size_t>(slot)) * d;
                for (size_t c = 0; c < d; ++c) dst[c] = src[c];
            }
            ++age;
            --slot;
        }
    }
    return out;
}

// Attention over all tree candidates in one pass against a frozen state.
// Node x sits at absolute position state.pos + depth(x) - 1 and sees:
//  - local: the rows of its own group — committed buffer rows when x's
//    group is still the open one, otherwise the ancestors that fall in
//    x's group — plus itself;
//  - global: alpha * phi(q_x) . (S + dS(x)) where dS(x) sums phi(k)^T v
//    over visible tokens in groups before x's that are not yet in S
//    (the open-group buffer plus intervening ancestors);
//  - conv: taps applied to the unfolded window for x.
// The state is strictly read-only; candidates share it.
template <typename S>
TensorT<S> tree_attention_forward(const DecodeStateT<S>& state, const SpecTree& tree,
                                  const TensorT<S>& q, const TensorT<S>& k,
                                  const TensorT<S>& v, const ConvWeightsT<S>& w,
                                  size_t max_depth = 8, TreeStats* stats = nullptr) {
    const std::vector<size_t> depth = validate_tree(tree);
    const size_t m = tree.size();
    const AttnConfig& cfg = state.cfg();
    const size_t d = cfg.head_dim;
    const size_t g_sz = cfg.group_size;
    if (!q.same_shape(k) || !q.same_shape(v) || q.rank() != 2 || q.rows() != m || q.cols() != d)
        throw dim_error("tree_attention_forward: Q/K/V must be m x d_k");
    if (w.kernel() != cfg.conv_kernel || w.channels() != d)
        throw dim_error("tree_attention_forward: conv weights do not match cfg");
    for (size_t dep : depth)
        if (dep > max_depth)
            throw config_error("tree_attention_forward: tree depth exceeds max of " +
                               std::to_string(max_depth));
    if (stats) stats->qkv_rows += m;

    const size_t open_group = state.folded_tokens() / g_sz;
    const S scale = S(1) / std::sqrt(static_cast<S>(d));
    const S alpha = static_cast<S>(cfg.alpha);
    const TensorT<S> windows = unfold_conv_rows(tree, v, state);

    TensorT<S> out({m, d});
    std::vector<S> local_out(d), global_out(d), conv_out(d);
    std::vector<size_t> path;
    std::vector<const S*> krows, vrows, wrows;
    TensorT<S> s_eff({d, d});
    for (size_t x = 0; x < m; ++x) {
        const size_t p_x = state.pos() + depth[x] - 1;
        const size_t g_x = p_x / g_sz;
        const size_t group_start = g_x * g_sz;

        // Root-path of x in position order (excluding x).
        path.clear();
        for (ptrdiff_t a = tree.nodes[x].parent; a >= 0; a = tree.nodes[static_cast<size_t>(a)].parent)
            path.push_back(static_cast<size_t>(a));
        std::reverse(path.begin(), path.end());

        // Local: group members visible to x, position order, x last.
        krows.clear();
        vrows.clear();
        if (g_x == open_group) {
            for (size_t j = 0; j < state.group_rows(); ++j) {
                krows.push_back(state.group_k_row(j));
                vrows.push_back(state.group_v_row(j));
            }
        }
        for (size_t a : path) {
            const size_t p_a = state.pos() + depth[a] - 1;
            if (p_a >= group_start) {
                krows.push_back(k.data() + a * d);
                vrows.push_back(v.data() + a * d);
            }
        }
        krows.push_back(k.data() + x * d);
        vrows.push_back(v.data() + x * d);
        detail::softmax_attend_rows(q.data() + x * d, krows.data(), vrows.data(), krows.size(),
                                    d, scale, local_out.data());

        // Global: S plus the visible-but-unfolded prefix, count = g_x * G.
        const TensorT<S>* s_ptr = &state.state_matrix();
        if (g_x > open_group) {
            TensorT<S> delta({d, d});
            krows.clear();
            vrows.clear();
            for (size_t j = 0; j < state.group_rows(); ++j) {
                krows.push_back(state.group_k_row(j));
                vrows.push_back(state.group_v_row(j));
            }
            for (size_t a : path) {
                const size_t p_a = state.pos() + depth[a] - 1;
                if (p_a < group_start) {
                    krows.push_back(k.data() + a * d);
                    vrows.push_back(v.data() + a * d);
                }
            }
            detail::accumulate_outer_rows(krows.data(), vrows.data(), krows.size(), d,
                                          cfg.feature_map, delta);
            for (size_t i = 0; i < s_eff.size(); ++i) s_eff[i] = state.state_matrix()[i] + delta[i];
            s_ptr = &s_eff;
        }
        const S cs = detail::count_scale<S>(cfg.global_scale, group_start);
        detail::global_attend_row(q.data() + x * d, d, cfg.feature_map, *s_ptr, cs,
                                  global_out.data());

        // Conv over the unfolded window.
        wrows.resize(cfg.conv_kernel);
        for (size_t j = 0; j < cfg.conv_kernel; ++j)
            wrows[j] = windows.data() + (x * cfg.conv_kernel + j) * d;
        detail::conv_attend_row(w.taps, wrows.data(), conv_out.data());

        for (size_t c = 0; c < d; ++c) {
            S o = local_out[c] + alpha * global_out[c];
            o += conv_out[c];
            out(x, c) = o;
        }
    }
    return out;
}

// Commit verified rows in path order; pure sequence of ordinary commits,
// so the state ends bitwise-identical to stepwise decoding of these rows.
template <typename S>
void commit_path(DecodeStateT<S>& state, const TensorT<S>& k_rows, const TensorT<S>& v_rows) {
    if (!k_rows.same_shape(v_rows) || k_rows.rank() != 2)
        throw dim_error("commit_path: K/V must share one n x d_k shape");
    if (k_rows.rows() > 0 && k_rows.cols() != state.cfg().head_dim)
        throw dim_error("commit_path: width does not match head_dim");
    for (size_t i = 0; i < k_rows.rows(); ++i)
        state.commit_row(k_rows.data() + i * k_rows.cols(), v_rows.data() + i * v_rows.cols());
}

// Baseline oracle: decode every root-path sequentially on a cloned state
// and scatter results to node indices. Nodes shared by several paths are
// recomputed per path and must agree; disagreement means the streaming
// semantics are broken.
template <typename S>
TensorT<S> decode_paths_independently(const DecodeStateT<S>& state, const SpecTree& tree,
                                      const TensorT<S>& q, const TensorT<S>& k,
                                      const TensorT<S>& v, const ConvWeightsT<S>& w,
                                      TreeStats* stats = nullptr) {
    const std::vector<size_t> depth = validate_tree(tree);
    const size_t m = tree.size();
    const size_t d = state.cfg().head_dim;
    if (!q.same_shape(k) || !q.same_shape(v) || q.rank() != 2 || q.rows() != m || q.cols() != d)
        throw dim_error("decode_paths_independently: Q/K/V must be m x d_k");
    if (w.kernel() != state.cfg().conv_kernel || w.channels() != d)
        throw dim_error("decode_paths_independently: conv weights do not match cfg");

    const std::vector<std::vector<size_t>> children = tree_children(tree);
    TensorT<S> out({m, d});
    std::vector<uint8_t> seen(m, 0);
    std::vector<size_t> path;
    std::vector<S> row(d);
    for (size_t leaf = 0; leaf < m; ++leaf) {
        if (!children[leaf].empty()) continue;
        path.clear();
        for (ptrdiff_t a = static_cast<ptrdiff_t>(leaf); a >= 0;
             a = tree.nodes[static_cast<size_t>(a)].parent)
            path.push_back(static_cast<size_t>(a));
        std::reverse(path.begin(), path.end());
        if (stats) stats->qkv_rows += path.size();

        DecodeStateT<S> clone = state.with_conv(w);
        for (size_t node : path) {
            clone.decode_step(q.data() + node * d, k.data() + node * d, v.data() + node * d,
                              row.data());
            if (!seen[node]) {
                for (size_t c = 0; c < d; ++c) out(node, c) = row[c];
                seen[node] = 1;
            } else {
                for (size_t c = 0; c < d; ++c) {
                    const S diff = std::abs(out(node, c) - row[c]);
                    if (!(diff <= S(1e-10)))
                        throw numeric_error(
                            "decode_paths_independently: paths disagree at node " +
                            std::to_string(node));
                }
            }
        }
    }
    return out;
}

// Deterministic proposal stub: level sizes follow fan_out, tokens come
// from the caller's seeded stream.
SpecTree draft_stub(const std::vector<size_t>& fan_out, Rng& rng, size_t vocab_size);

// Textual tree topology: either a comma/whitespace separated fan-out list
// ("4,2,2"), or "parents:" followed by one integer per node where -1
// denotes a ROOT child ("parents: -1 -1 0 0 1").
struct TreeSpecConfig {
    std::vector<size_t> fan_out;
    std::vector<ptrdiff_t> parents;
    bool explicit_parents = false;
};

TreeSpecConfig parse_tree_spec(const std::string& text);

// Materialize a parsed topology; tokens drawn from rng.
SpecTree build_tree(const TreeSpecConfig& spec, Rng& rng, size_t vocab_size);

}  // namespace linattn
