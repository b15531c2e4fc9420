// Project acceptance suite: nine numbered checks, one PASS/FAIL line each.
// Exit status is 0 only when every check holds. Thresholds are fixed here
// on purpose — loosening them is a behavior change, not a test fix.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "linattn/augmented.hpp"
#include "linattn/bench.hpp"
#include "linattn/decode.hpp"
#include "linattn/model.hpp"
#include "linattn/reference.hpp"
#include "linattn/rng.hpp"
#include "linattn/spec_tree.hpp"
#include "linattn/train.hpp"
#include "linattn/verify.hpp"

using namespace linattn;

namespace {

FeatureMap random_fm(Rng& rng) {
    switch (rng.uniform_int(3)) {
        case 0: return FeatureMap::relu;
        case 1: return FeatureMap::elu_plus_one;
        default: return FeatureMap::identity;
    }
}

GlobalScale random_gs(Rng& rng) {
    return rng.uniform_int(2) == 0 ? GlobalScale::none : GlobalScale::inverse_count;
}

AttnConfig head_cfg(size_t d_k, size_t group, size_t kernel, double alpha, FeatureMap fm,
                    GlobalScale gs) {
    AttnConfig cfg;
    cfg.d_model = d_k;
    cfg.n_heads = 1;
    cfg.head_dim = d_k;
    cfg.group_size = group;
    cfg.conv_kernel = kernel;
    cfg.alpha = alpha;
    cfg.feature_map = fm;
    cfg.global_scale = gs;
    cfg.validate();
    return cfg;
}

// Keep |x| >= margin so a 1e-6 finite-difference step can never cross the
// relu kink at zero.
Tensor smooth_random(Rng& rng, std::initializer_list<size_t> shape, double margin = 0.05) {
    Tensor t = random_tensor<double>(rng, shape);
    for (size_t i = 0; i < t.size(); ++i) {
        double& x = t.data()[i];
        if (x >= 0.0 && x < margin) x += margin;
        if (x < 0.0 && x > -margin) x -= margin;
    }
    return t;
}

// ---- 1: composed forward equals the sum of independent branch oracles ----

bool check_branch_sums(std::string& detail) {
    Rng rng(101);
    double worst = 0.0;
    for (int it = 0; it < 200; ++it) {
        const size_t n = 1 + rng.uniform_int(64);
        const size_t d = 1 + rng.uniform_int(16);
        const size_t g = 1 + rng.uniform_int(n + 4);
        const size_t kk = 1 + rng.uniform_int(6);
        AttnConfig cfg = head_cfg(d, g, kk, rng.uniform(0.0, 1.5), random_fm(rng),
                                  random_gs(rng));
        Tensor q = random_tensor<double>(rng, {n, d});
        Tensor k = random_tensor<double>(rng, {n, d});
        Tensor v = random_tensor<double>(rng, {n, d});
        ConvWeights w(random_tensor<double>(rng, {kk, d}));

        Tensor got = augmented_attention_forward(q, k, v, w, cfg);
        Tensor want = add(add(local_attention_oracle(q, k, v, g),
                              scaled(grouped_global_oracle(q, k, v, g, cfg.feature_map,
                                                           cfg.global_scale),
                                     cfg.alpha)),
                          masked_conv_oracle(v, w));
        worst = std::max(worst, max_abs_diff(got, want));
    }
    std::ostringstream os;
    os << "200 random configs, max abs err " << worst << " (tol 1e-12)";
    detail = os.str();
    return worst <= 1e-12;
}

// ---- 2: batched prefill vs token-by-token decode, plus split fuzzing ----

bool check_prefill_decode(std::string& detail) {
    Rng rng(202);
    double worst = 0.0;
    const size_t n = 512, d = 32;
    for (size_t g : {size_t(1), size_t(16), size_t(64), size_t(128)}) {
        for (size_t kk : {size_t(1), size_t(4), size_t(16)}) {
            AttnConfig cfg = head_cfg(d, g, kk, 0.7, FeatureMap::elu_plus_one,
                                      GlobalScale::inverse_count);
            Tensor q = random_tensor<double>(rng, {n, d});
            Tensor k = random_tensor<double>(rng, {n, d});
            Tensor v = random_tensor<double>(rng, {n, d});
            ConvWeights w(random_tensor<double>(rng, {kk, d}));
            Tensor batched = augmented_attention_forward(q, k, v, w, cfg);

            // Pure stepping.
            DecodeState st(cfg, w);
            Tensor out({n, d});
            for (size_t t = 0; t < n; ++t)
                st.decode_step(q.row_span(t).data(), k.row_span(t).data(),
                               v.row_span(t).data(), out.row_span(t).data());
            worst = std::max(worst, max_abs_diff(batched, out));

            // Random prefill/decode split points, including the endpoints.
            for (int s_it = 0; s_it < 4; ++s_it) {
                const size_t split = s_it == 0 ? 0 : s_it == 1 ? n : rng.uniform_int(n + 1);
                DecodeState st2(cfg, w);
                Tensor head_q({split, d}), head_k({split, d}), head_v({split, d});
                for (size_t t = 0; t < split; ++t)
                    for (size_t c = 0; c < d; ++c) {
                        head_q(t, c) = q(t, c);
                        head_k(t, c) = k(t, c);
                        head_v(t, c) = v(t, c);
                    }
                Tensor mixed({n, d});
                Tensor pre = st2.prefill(head_q, head_k, head_v);
                for (size_t t = 0; t < split; ++t)
                    for (size_t c = 0; c < d; ++c) mixed(t, c) = pre(t, c);
                for (size_t t = split; t < n; ++t)
                    st2.decode_step(q.row_span(t).data(), k.row_span(t).data(),
                                    v.row_span(t).data(), mixed.row_span(t).data());
                worst = std::max(worst, max_abs_diff(batched, mixed));
            }
        }
    }
    std::ostringstream os;
    os << "n=512 over 4x3 (group,kernel) grid + split fuzz, max abs err " << worst
       << " (tol 1e-10)";
    detail = os.str();
    return worst <= 1e-10;
}

// ---- 3: tree forward vs cloned sequential decode on every root path ----

SpecTree random_topology(Rng& rng, size_t max_nodes, size_t max_depth, size_t vocab) {
    SpecTree tree;
    const size_t m = 1 + rng.uniform_int(max_nodes);
    std::vector<size_t> depth;
    for (size_t i = 0; i < m; ++i) {
        ptrdiff_t parent = SpecTree::kRootParent;
        if (i > 0 && rng.uniform_int(4) != 0) {
            const size_t cand = rng.uniform_int(i);
            if (depth[cand] < max_depth) parent = static_cast<ptrdiff_t>(cand);
        }
        depth.push_back(parent < 0 ? 1 : depth[static_cast<size_t>(parent)] + 1);
        tree.nodes.push_back({parent, rng.uniform_int(vocab)});
    }
    return tree;
}

bool check_tree_vs_sequential(std::string& detail) {
    Rng rng(303);
    double worst = 0.0;
    size_t paths = 0;
    for (int it = 0; it < 500; ++it) {
        const size_t d = 1 + rng.uniform_int(8);
        AttnConfig cfg = head_cfg(d, 1 + rng.uniform_int(6), 1 + rng.uniform_int(4),
                                  rng.uniform(0.0, 1.2), random_fm(rng), random_gs(rng));
        ConvWeights w(random_tensor<double>(rng, {cfg.conv_kernel, d}));
        DecodeState state(cfg, w);
        const size_t warm = rng.uniform_int(11);
        for (size_t t = 0; t < warm; ++t) {
            Tensor kr = random_tensor<double>(rng, {1, d});
            Tensor vr = random_tensor<double>(rng, {1, d});
            state.commit_row(kr.data(), vr.data());
        }

        SpecTree tree = random_topology(rng, 12, 5, 32);
        const size_t m = tree.size();
        Tensor q = random_tensor<double>(rng, {m, d});
        Tensor k = random_tensor<double>(rng, {m, d});
        Tensor v = random_tensor<double>(rng, {m, d});
        Tensor tree_out = tree_attention_forward(state, tree, q, k, v, w);

        // Every leaf's root path, replayed on a cloned sequential state.
        std::vector<std::vector<size_t>> children = tree_children(tree);
        for (size_t i = 0; i < m; ++i) {
            if (!children[i].empty()) continue;
            std::vector<size_t> path;
            for (ptrdiff_t x = static_cast<ptrdiff_t>(i); x >= 0; x = tree.nodes[x].parent)
                path.push_back(static_cast<size_t>(x));
            std::reverse(path.begin(), path.end());
            DecodeState clone = state;
            std::vector<double> row(d);
            for (size_t node : path) {
                clone.decode_step(q.row_span(node).data(), k.row_span(node).data(),
                                  v.row_span(node).data(), row.data());
                for (size_t c = 0; c < d; ++c)
                    worst = std::max(worst, std::abs(row[c] - tree_out(node, c)));
            }
            ++paths;

            // Committing the path must leave the exact sequential state.
            const size_t len = path.size();
            Tensor pk({len, d}), pv({len, d});
            for (size_t j = 0; j < len; ++j)
                for (size_t c = 0; c < d; ++c) {
                    pk(j, c) = k(path[j], c);
                    pv(j, c) = v(path[j], c);
                }
            DecodeState bulk = state;
            commit_path(bulk, pk, pv);
            if (!(bulk == clone)) {
                detail = "commit_path state mismatch vs sequential commits";
                return false;
            }
        }
    }
    std::ostringstream os;
    os << "500 random trees, " << paths << " root paths, max abs err " << worst
       << " (tol 1e-10); commit_path states identical";
    detail = os.str();
    return worst <= 1e-10;
}

// ---- 4: causality fuzz + the train/eval contrast between conv modes ----

bool check_causality_and_leakage(std::string& detail) {
    Rng rng(404);
    size_t masked_violations = 0, unmasked_detected = 0;
    const int cases = 1000;
    for (int it = 0; it < cases; ++it) {
        const size_t n = 6 + rng.uniform_int(19);  // 6..24
        const size_t d = 1 + rng.uniform_int(8);
        const size_t t = 1 + rng.uniform_int(n - 2);  // perturb rows > t; t+1 < n
        const size_t g = 1 + rng.uniform_int(8);
        Tensor q = random_tensor<double>(rng, {n, d});
        Tensor k = random_tensor<double>(rng, {n, d});
        Tensor v = random_tensor<double>(rng, {n, d});
        Tensor k2 = k, v2 = v;
        for (size_t r = t + 1; r < n; ++r)
            for (size_t c = 0; c < d; ++c) {
                k2(r, c) += rng.uniform(0.25, 1.0);
                v2(r, c) += rng.uniform(0.25, 1.0);
            }

        // Masked mode: rows <= t must be bit-identical.
        {
            AttnConfig cfg = head_cfg(d, g, 1 + rng.uniform_int(5), 0.7, random_fm(rng),
                                      random_gs(rng));
            ConvWeights w(random_tensor<double>(rng, {cfg.conv_kernel, d}));
            Tensor a = augmented_attention_forward(q, k, v, w, cfg);
            Tensor b = augmented_attention_forward(q, k2, v2, w, cfg);
            for (size_t r = 0; r <= t; ++r)
                for (size_t c = 0; c < d; ++c)
                    if (a(r, c) != b(r, c)) ++masked_violations;
        }

        // Unmasked debug mode: the centered window must leak at least once.
        {
            const size_t kk = 2 + rng.uniform_int(4);  // reach >= 1 for k >= 2
            AttnConfig cfg = head_cfg(d, g, kk, 0.7, FeatureMap::elu_plus_one,
                                      GlobalScale::none);
            Tensor taps = random_tensor<double>(rng, {kk, d}, 0.2, 1.0);
            ConvWeights w(taps);
            Tensor a = augmented_attention_forward<double>(q, k, v, w, cfg, nullptr, true);
            Tensor b = augmented_attention_forward<double>(q, k2, v2, w, cfg, nullptr, true);
            bool leaked = false;
            for (size_t r = 0; r <= t && !leaked; ++r)
                for (size_t c = 0; c < d; ++c)
                    if (a(r, c) != b(r, c)) {
                        leaked = true;
                        break;
                    }
            if (leaked) ++unmasked_detected;
        }
    }
    if (masked_violations != 0 || unmasked_detected != static_cast<size_t>(cases)) {
        std::ostringstream os;
        os << masked_violations << " masked violations, " << unmasked_detected << "/" << cases
           << " unmasked leaks detected";
        detail = os.str();
        return false;
    }

    // Copy-task contrast: the leaky conv collapses training loss while
    // generation stays at chance; the masked model actually learns.
    ModelConfig mc;
    mc.vocab_size = 16;
    mc.d_model = 64;
    mc.n_heads = 2;
    mc.n_layers = 2;
    mc.ffn_mult = 2;
    mc.max_seq = 24;
    mc.seed = 1;
    mc.attn.group_size = 24;
    mc.attn.conv_kernel = 4;
    mc.attn.alpha = 0.5;
    mc.attn.feature_map = FeatureMap::elu_plus_one;
    mc.attn.global_scale = GlobalScale::inverse_count;
    mc.sync_attn();
    mc.validate();

    TrainConfig tc;
    tc.task = TaskKind::copy;
    tc.steps = 1000;
    tc.lr = 0.5;
    tc.dataset_size = 64;  // enough sequences that copy generalizes, not memorizes
    tc.eval_instances = 32;

    mc.unmasked_conv = true;
    ToyModel leaky = init_model(mc);
    TrainResult leaky_run = train_synthetic(leaky, tc);

    mc.unmasked_conv = false;
    ToyModel masked = init_model(mc);
    TrainResult masked_run = train_synthetic(masked, tc);

    const double chance = leaky_run.chance_accuracy;
    const bool ok = leaky_run.loss_curve.back() < 0.1 &&
                    leaky_run.eval_accuracy <= chance + 0.1 &&
                    masked_run.eval_accuracy >= 0.9;
    std::ostringstream os;
    os << cases << "/" << cases << " fuzz cases clean; leaky: loss "
       << leaky_run.loss_curve.back() << " (<0.1), eval " << leaky_run.eval_accuracy
       << " (<= chance+0.1 = " << chance + 0.1 << "); masked: eval " << masked_run.eval_accuracy
       << " (>= 0.9)";
    detail = os.str();
    return ok;
}

// ---- 5: analytic backward vs central finite differences ----

bool check_gradients(std::string& detail) {
    Rng rng(505);
    const double fd_step = 1e-6, rel_tol = 1e-4, abs_floor = 1e-8;
    double worst_rel = 0.0;
    size_t checked = 0;

    for (int it = 0; it < 10; ++it) {
        const size_t n = 4 + rng.uniform_int(7);
        const size_t d = 2 + rng.uniform_int(4);
        AttnConfig cfg = head_cfg(d, 1 + rng.uniform_int(5), 1 + rng.uniform_int(4),
                                  rng.uniform(0.2, 1.2), random_fm(rng), random_gs(rng));
        Tensor q = smooth_random(rng, {n, d});
        Tensor k = smooth_random(rng, {n, d});
        Tensor v = random_tensor<double>(rng, {n, d});
        Tensor taps = random_tensor<double>(rng, {cfg.conv_kernel, d});
        Tensor r = random_tensor<double>(rng, {n, d});  // fixed linear functional

        auto loss = [&](const Tensor& qq, const Tensor& kk, const Tensor& vv,
                        const Tensor& tt) {
            Tensor out = augmented_attention_forward(qq, kk, vv, ConvWeights(tt), cfg);
            double s = 0.0;
            for (size_t i = 0; i < out.size(); ++i) s += r.data()[i] * out.data()[i];
            return s;
        };

        ForwardCache cache;
        Tensor out = augmented_attention_forward(q, k, v, ConvWeights(taps), cfg, &cache);
        (void)out;
        AugmentedGrads grads = augmented_attention_backward(cache, r);

        struct Slot {
            Tensor* param;
            const Tensor* grad;
        };
        Tensor taps_copy = taps;
        Slot slots[] = {{&q, &grads.dq}, {&k, &grads.dk}, {&v, &grads.dv},
                        {&taps_copy, &grads.dw.taps}};
        for (Slot& slot : slots) {
            for (size_t i = 0; i < slot.param->size(); ++i) {
                double& x = slot.param->data()[i];
                const double keep = x;
                x = keep + fd_step;
                const double up = loss(q, k, v, taps_copy);
                x = keep - fd_step;
                const double down = loss(q, k, v, taps_copy);
                x = keep;
                const double fd = (up - down) / (2.0 * fd_step);
                const double an = slot.grad->data()[i];
                const double diff = std::abs(fd - an);
                if (diff > abs_floor) {
                    const double rel = diff / std::max(std::abs(fd), std::abs(an));
                    worst_rel = std::max(worst_rel, rel);
                }
                ++checked;
            }
        }
    }
    std::ostringstream os;
    os << checked << " coordinates over 10 random configs, worst rel err " << worst_rel
       << " (tol 1e-4, abs floor 1e-8)";
    detail = os.str();
    return worst_rel < 1e-4;
}

// ---- 6: prefill wall-time scaling, augmented vs quadratic reference ----

bool check_scaling(std::string& detail) {
    BenchOptions opt;
    opt.attn.d_model = 256;
    opt.attn.n_heads = 4;
    opt.attn.head_dim = 64;
    opt.attn.group_size = 64;
    opt.attn.conv_kernel = 63;
    opt.attn.alpha = 0.5;
    opt.attn.feature_map = FeatureMap::elu_plus_one;
    opt.attn.global_scale = GlobalScale::inverse_count;
    opt.seq_lens = {1024, 8192};
    opt.reps = 1;
    opt.seed = 606;
    std::vector<PrefillBenchRow> rows = run_prefill_bench(opt);

    auto find = [&](const std::string& variant, size_t n) -> double {
        for (const PrefillBenchRow& r : rows)
            if (r.variant == variant && r.seq_len == n) return r.ms_mean;
        return -1.0;
    };
    const double aug_small = find("augmented", 1024), aug_big = find("augmented", 8192);
    const double quad_small = find("quadratic", 1024), quad_big = find("quadratic", 8192);
    const double aug_ratio = aug_big / aug_small;
    const double quad_ratio = quad_big / quad_small;
    std::ostringstream os;
    os << "T(8192)/T(1024): augmented " << aug_ratio << " (<= 12), quadratic " << quad_ratio
       << " (>= 40); at 8192 augmented " << aug_big << " ms vs quadratic " << quad_big << " ms";
    detail = os.str();
    return aug_small > 0 && quad_small > 0 && aug_ratio <= 12.0 && quad_ratio >= 40.0 &&
           aug_big < quad_big;
}

// ---- 7: one shared-prefix pass beats per-path decoding on a wide tree ----

bool check_tree_speedup(std::string& detail) {
    Rng rng(707);
    AttnConfig cfg = head_cfg(64, 16, 7, 0.5, FeatureMap::elu_plus_one,
                              GlobalScale::inverse_count);
    ConvWeights w(random_tensor<double>(rng, {cfg.conv_kernel, cfg.head_dim}, -0.5, 0.5));
    DecodeState state(cfg, w);
    for (size_t t = 0; t < 96; ++t) {
        Tensor kr = random_tensor<double>(rng, {1, cfg.head_dim});
        Tensor vr = random_tensor<double>(rng, {1, cfg.head_dim});
        state.commit_row(kr.data(), vr.data());
    }

    SpecTree tree = draft_stub({1, 21, 2}, rng, 32);
    const size_t m = tree.size();
    std::vector<std::vector<size_t>> children = tree_children(tree);
    size_t leaves = 0, path_rows = 0;
    std::vector<size_t> depth = validate_tree(tree);
    for (size_t i = 0; i < m; ++i)
        if (children[i].empty()) {
            ++leaves;
            path_rows += depth[i];
        }
    if (m != 64 || leaves != 42) {
        detail = "topology construction failed";
        return false;
    }

    Tensor q = random_tensor<double>(rng, {m, cfg.head_dim});
    Tensor k = random_tensor<double>(rng, {m, cfg.head_dim});
    Tensor v = random_tensor<double>(rng, {m, cfg.head_dim});

    TreeStats tree_stats, path_stats;
    Tensor a = tree_attention_forward(state, tree, q, k, v, w, 8, &tree_stats);
    Tensor b = decode_paths_independently(state, tree, q, k, v, w, &path_stats);
    (void)a;
    (void)b;

    const int rounds = 20;
    auto clock = []() { return std::chrono::steady_clock::now(); };
    auto t0 = clock();
    for (int i = 0; i < rounds; ++i) tree_attention_forward(state, tree, q, k, v, w);
    auto t1 = clock();
    for (int i = 0; i < rounds; ++i) decode_paths_independently(state, tree, q, k, v, w);
    auto t2 = clock();
    const double tree_ms = std::chrono::duration<double, std::milli>(t1 - t0).count() / rounds;
    const double path_ms = std::chrono::duration<double, std::milli>(t2 - t1).count() / rounds;

    std::ostringstream os;
    os << "64-node/42-leaf tree: " << tree_ms << " ms vs per-path " << path_ms << " ms ("
       << path_ms / tree_ms << "x, need >= 1.5x); transient rows " << tree_stats.qkv_rows
       << " vs " << path_stats.qkv_rows;
    detail = os.str();
    return path_ms >= 1.5 * tree_ms && tree_stats.qkv_rows == 64 &&
           path_stats.qkv_rows == path_rows && path_stats.qkv_rows == 126;
}

// ---- 8: speculative decoding reproduces greedy decoding exactly ----

bool check_speculative_equals_greedy(std::string& detail) {
    ModelConfig mc;
    mc.vocab_size = 13;
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.n_layers = 2;
    mc.ffn_mult = 2;
    mc.max_seq = 48;
    mc.seed = 8;
    mc.attn.group_size = 5;
    mc.attn.conv_kernel = 3;
    mc.attn.alpha = 0.6;
    mc.attn.feature_map = FeatureMap::elu_plus_one;
    mc.attn.global_scale = GlobalScale::inverse_count;
    mc.sync_attn();
    mc.validate();
    ToyModel model = init_model(mc);

    Rng rng(808);
    size_t matched = 0;
    for (int it = 0; it < 50; ++it) {
        std::vector<size_t> prompt;
        const size_t plen = 1 + rng.uniform_int(6);
        for (size_t i = 0; i < plen; ++i) prompt.push_back(rng.uniform_int(mc.vocab_size));
        const size_t n_new = 6 + rng.uniform_int(5);

        TreeSpecConfig spec;
        const size_t levels = 1 + rng.uniform_int(3);
        for (size_t l = 0; l < levels; ++l) spec.fan_out.push_back(1 + rng.uniform_int(4));

        std::vector<size_t> greedy = generate_greedy(model, prompt, n_new);
        std::vector<size_t> spec_out =
            generate_speculative(model, prompt, n_new, spec, rng.next_u64());
        if (spec_out == greedy) ++matched;
    }
    std::ostringstream os;
    os << matched << "/50 random (prompt, tree) pairs identical to greedy";
    detail = os.str();
    return matched == 50;
}

// ---- 9: a single group reduces to strict-causal linear attention ----

bool check_group_one_reduction(std::string& detail) {
    Rng rng(909);
    double worst = 0.0;
    for (int it = 0; it < 100; ++it) {
        const size_t n = 1 + rng.uniform_int(64);
        const size_t d = 1 + rng.uniform_int(16);
        const FeatureMap fm = random_fm(rng);
        const GlobalScale gs = random_gs(rng);
        Tensor q = random_tensor<double>(rng, {n, d});
        Tensor k = random_tensor<double>(rng, {n, d});
        Tensor v = random_tensor<double>(rng, {n, d});
        Tensor got = grouped_global_la_forward(q, k, v, 1, fm, gs);
        Tensor want = causal_linear_attention_ref(q, k, v, fm, /*include_current=*/false, gs);
        worst = std::max(worst, max_abs_diff(got, want));
    }
    std::ostringstream os;
    os << "100 random instances, max abs err " << worst << " (tol 1e-12)";
    detail = os.str();
    return worst <= 1e-12;
}

}  // namespace

int main() {
    struct Check {
        const char* name;
        std::function<bool(std::string&)> run;
    };
    const Check checks[] = {
        {"branch-sum oracle equivalence", check_branch_sums},
        {"prefill/decode equivalence", check_prefill_decode},
        {"tree/sequential equivalence", check_tree_vs_sequential},
        {"causality and leakage contrast", check_causality_and_leakage},
        {"gradient checks", check_gradients},
        {"sequence-length scaling", check_scaling},
        {"shared-prefix tree speedup", check_tree_speedup},
        {"speculative equals greedy", check_speculative_equals_greedy},
        {"single-group reduction", check_group_one_reduction},
    };

    int failures = 0;
    for (size_t i = 0; i < sizeof(checks) / sizeof(checks[0]); ++i) {
        std::string detail;
        bool ok = false;
        const auto start = std::chrono::steady_clock::now();
        try {
            ok = checks[i].run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cout << (ok ? "[PASS] " : "[FAIL] ") << (i + 1) << "/9 " << checks[i].name << ": "
                  << detail << " [" << secs << "s]" << std::endl;
        if (!ok) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
