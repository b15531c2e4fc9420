#include "linattn/verify.hpp"

#include <cmath>
#include <sstream>

#include "linattn/decode.hpp"
#include "linattn/reference.hpp"
#include "linattn/spec_tree.hpp"

namespace linattn {

Tensor local_attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v,
                              size_t group_size) {
    if (!q.same_shape(k) || !q.same_shape(v) || q.rank() != 2)
        throw dim_error("local_attention_oracle: Q/K/V must share one n x d shape");
    const size_t n = q.rows();
    const size_t d = q.cols();
    Tensor out({n, d});
    for (size_t start = 0; start < n; start += group_size) {
        const size_t m = std::min(group_size, n - start);
        Tensor qg({m, d}), kg({m, d}), vg({m, d});
        for (size_t i = 0; i < m; ++i)
            for (size_t c = 0; c < d; ++c) {
                qg(i, c) = q(start + i, c);
                kg(i, c) = k(start + i, c);
                vg(i, c) = v(start + i, c);
            }
        const Tensor og = softmax_attention_ref(qg, kg, vg, /*causal=*/true);
        for (size_t i = 0; i < m; ++i)
            for (size_t c = 0; c < d; ++c) out(start + i, c) = og(i, c);
    }
    return out;
}

Tensor grouped_global_oracle(const Tensor& q, const Tensor& k, const Tensor& v,
                             size_t group_size, FeatureMap fm, GlobalScale gs) {
    if (!q.same_shape(k) || !q.same_shape(v) || q.rank() != 2)
        throw dim_error("grouped_global_oracle: Q/K/V must share one n x d shape");
    const size_t n = q.rows();
    const size_t d = q.cols();
    const Tensor pq = apply_feature_map(q, fm);
    const Tensor pk = apply_feature_map(k, fm);
    Tensor out({n, d});
    for (size_t start = 0; start < n; start += group_size) {
        const size_t m = std::min(group_size, n - start);
        if (start > 0) {
            Tensor pk_prefix({start, d}), v_prefix({start, d});
            for (size_t i = 0; i < start; ++i)
                for (size_t c = 0; c < d; ++c) {
                    pk_prefix(i, c) = pk(i, c);
                    v_prefix(i, c) = v(i, c);
                }
            const Tensor state = matmul(transpose(pk_prefix), v_prefix);
            Tensor qg({m, d});
            for (size_t i = 0; i < m; ++i)
                for (size_t c = 0; c < d; ++c) qg(i, c) = pq(start + i, c);
            Tensor og = matmul(qg, state);
            if (gs == GlobalScale::inverse_count) {
                const double cs = 1.0 / static_cast<double>(start);
                for (size_t i = 0; i < og.size(); ++i) og[i] *= cs;
            }
            for (size_t i = 0; i < m; ++i)
                for (size_t c = 0; c < d; ++c) out(start + i, c) = og(i, c);
        }
        // start == 0: the first group has no prefix and outputs zero rows.
    }
    return out;
}

Tensor masked_conv_oracle(const Tensor& v, const ConvWeights& w) {
    const size_t n = v.rows();
    const size_t d = v.cols();
    const size_t k = w.kernel();
    Tensor out({n, d});
    for (size_t t = 0; t < n; ++t)
        for (size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (size_t j = 0; j < k; ++j) {
                const ptrdiff_t src =
                    static_cast<ptrdiff_t>(t) - static_cast<ptrdiff_t>(k - 1) +
                    static_cast<ptrdiff_t>(j);
                if (src >= 0) acc += w.taps(j, c) * v(static_cast<size_t>(src), c);
            }
            out(t, c) = acc;
        }
    return out;
}

Tensor unmasked_conv_oracle(const Tensor& v, const ConvWeights& w) {
    const size_t n = v.rows();
    const size_t d = v.cols();
    const size_t k = w.kernel();
    const ptrdiff_t shift = static_cast<ptrdiff_t>((k - 1) / 2);
    Tensor out({n, d});
    for (size_t t = 0; t < n; ++t)
        for (size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (size_t j = 0; j < k; ++j) {
                const ptrdiff_t src = static_cast<ptrdiff_t>(t) - shift + static_cast<ptrdiff_t>(j);
                if (src >= 0 && src < static_cast<ptrdiff_t>(n))
                    acc += w.taps(j, c) * v(static_cast<size_t>(src), c);
            }
            out(t, c) = acc;
        }
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw dim_error("max_abs_diff: shape mismatch");
    double mx = 0.0;
    for (size_t i = 0; i < a.size(); ++i) mx = std::max(mx, std::abs(a[i] - b[i]));
    return mx;
}

namespace {

struct Case {
    AttnConfig cfg;
    Tensor q, k, v;
    ConvWeights w;
};

Case random_case(Rng& rng, size_t n, size_t d, size_t g, size_t k) {
    Case c;
    c.cfg.d_model = d;
    c.cfg.n_heads = 1;
    c.cfg.head_dim = d;
    c.cfg.group_size = g;
    c.cfg.conv_kernel = k;
    c.cfg.alpha = rng.uniform(0.1, 1.5);
    c.cfg.feature_map = static_cast<FeatureMap>(rng.uniform_int(3));
    c.cfg.global_scale = rng.uniform_int(2) ? GlobalScale::inverse_count : GlobalScale::none;
    c.q = random_tensor(rng, {n, d}, -1.0, 1.0);
    c.k = random_tensor(rng, {n, d}, -1.0, 1.0);
    c.v = random_tensor(rng, {n, d}, -1.0, 1.0);
    c.w = ConvWeights(random_tensor(rng, {k, d}, -1.0, 1.0));
    return c;
}

Tensor branch_sum_oracle(const Case& c) {
    const Tensor local = local_attention_oracle(c.q, c.k, c.v, c.cfg.group_size);
    const Tensor global = grouped_global_oracle(c.q, c.k, c.v, c.cfg.group_size,
                                                c.cfg.feature_map, c.cfg.global_scale);
    const Tensor conv = masked_conv_oracle(c.v, c.w);
    Tensor out({c.q.rows(), c.q.cols()});
    for (size_t i = 0; i < out.size(); ++i) out[i] = local[i] + c.cfg.alpha * global[i] + conv[i];
    return out;
}

std::string fmt(double x) {
    std::ostringstream s;
    s.precision(3);
    s << std::scientific << x;
    return s.str();
}

CheckResult check_branch_sums(Rng& rng) {
    double worst = 0.0;
    for (int it = 0; it < 40; ++it) {
        const size_t n = 1 + rng.uniform_int(48);
        const size_t d = 1 + rng.uniform_int(12);
        const size_t g = 1 + rng.uniform_int(12);
        const size_t k = 1 + rng.uniform_int(6);
        const Case c = random_case(rng, n, d, g, k);
        const Tensor got = augmented_attention_forward(c.q, c.k, c.v, c.w, c.cfg);
        worst = std::max(worst, max_abs_diff(got, branch_sum_oracle(c)));
    }
    return {"branch-sums vs tensor-op oracles", worst <= 1e-12, "max err " + fmt(worst)};
}

CheckResult check_prefill_decode(Rng& rng) {
    double worst = 0.0;
    bool bitwise = true;
    for (size_t g : {size_t{1}, size_t{3}, size_t{8}}) {
        for (size_t k : {size_t{1}, size_t{4}}) {
            const size_t n = 48 + rng.uniform_int(32);
            const size_t d = 6;
            const Case c = random_case(rng, n, d, g, k);
            DecodeState a(c.cfg, c.w), b(c.cfg, c.w);
            const Tensor pre = a.prefill(c.q, c.k, c.v);
            Tensor step({n, d});
            std::vector<double> row(d);
            for (size_t t = 0; t < n; ++t) {
                b.decode_step(c.q.data() + t * d, c.k.data() + t * d, c.v.data() + t * d,
                              row.data());
                for (size_t cc = 0; cc < d; ++cc) step(t, cc) = row[cc];
            }
            worst = std::max(worst, max_abs_diff(pre, step));
            if (!(pre == step) || !(a == b)) bitwise = false;
        }
    }
    return {"prefill vs stepwise decode", bitwise && worst == 0.0,
            bitwise ? "bitwise identical" : "mismatch, max err " + fmt(worst)};
}

CheckResult check_batched_vs_stream(Rng& rng) {
    double worst = 0.0;
    bool bitwise = true;
    for (int it = 0; it < 10; ++it) {
        const size_t n = 1 + rng.uniform_int(64);
        const Case c = random_case(rng, n, 5, 1 + rng.uniform_int(9), 1 + rng.uniform_int(5));
        const Tensor batched = augmented_attention_forward(c.q, c.k, c.v, c.w, c.cfg);
        DecodeState st(c.cfg, c.w);
        const Tensor streamed = st.prefill(c.q, c.k, c.v);
        worst = std::max(worst, max_abs_diff(batched, streamed));
        if (!(batched == streamed)) bitwise = false;
    }
    return {"batched forward vs fresh-state prefill", bitwise && worst == 0.0,
            bitwise ? "bitwise identical" : "mismatch, max err " + fmt(worst)};
}

CheckResult check_tree_sequential(Rng& rng) {
    double worst = 0.0;
    for (int it = 0; it < 25; ++it) {
        const size_t d = 5;
        const Case c = random_case(rng, 1, d, 1 + rng.uniform_int(4), 1 + rng.uniform_int(4));
        DecodeState st(c.cfg, c.w);
        const size_t warm = rng.uniform_int(12);
        for (size_t t = 0; t < warm; ++t) {
            const Tensor q = random_tensor(rng, {d}, -1.0, 1.0);
            const Tensor k = random_tensor(rng, {d}, -1.0, 1.0);
            const Tensor v = random_tensor(rng, {d}, -1.0, 1.0);
            std::vector<double> row(d);
            st.decode_step(q.data(), k.data(), v.data(), row.data());
        }
        std::vector<size_t> fan;
        const size_t depth = 1 + rng.uniform_int(4);
        for (size_t l = 0; l < depth; ++l) fan.push_back(1 + rng.uniform_int(3));
        const SpecTree tree = draft_stub(fan, rng, 32);
        const size_t m = tree.size();
        const Tensor q = random_tensor(rng, {m, d}, -1.0, 1.0);
        const Tensor k = random_tensor(rng, {m, d}, -1.0, 1.0);
        const Tensor v = random_tensor(rng, {m, d}, -1.0, 1.0);
        const Tensor tree_out = tree_attention_forward(st, tree, q, k, v, c.w);
        const Tensor oracle = decode_paths_independently(st, tree, q, k, v, c.w);
        worst = std::max(worst, max_abs_diff(tree_out, oracle));
    }
    return {"tree attention vs per-path decode", worst <= 1e-10, "max err " + fmt(worst)};
}

CheckResult check_commit_equivalence(Rng& rng) {
    bool ok = true;
    for (int it = 0; it < 20 && ok; ++it) {
        const size_t d = 4;
        const Case c = random_case(rng, 1, d, 1 + rng.uniform_int(4), 1 + rng.uniform_int(4));
        DecodeState a(c.cfg, c.w), b(c.cfg, c.w);
        const size_t rows = 1 + rng.uniform_int(12);
        const Tensor k = random_tensor(rng, {rows, d}, -1.0, 1.0);
        const Tensor v = random_tensor(rng, {rows, d}, -1.0, 1.0);
        commit_path(a, k, v);
        std::vector<double> out(d);
        for (size_t t = 0; t < rows; ++t) b.commit_row(k.data() + t * d, v.data() + t * d);
        ok = a == b;
    }
    return {"commit_path vs sequential commits", ok,
            ok ? "states bitwise equal" : "state fields diverged"};
}

CheckResult check_causality(Rng& rng) {
    bool ok = true;
    std::string detail = "masked invariant; unmasked violated";
    for (int it = 0; it < 30 && ok; ++it) {
        const size_t n = 8 + rng.uniform_int(24);
        const size_t d = 4;
        const Case c = random_case(rng, n, d, 1 + rng.uniform_int(8), 3 + rng.uniform_int(3));
        const size_t t = rng.uniform_int(n - 1);
        Tensor q2 = c.q, k2 = c.k, v2 = c.v;
        for (size_t r = t + 1; r < n; ++r)
            for (size_t cc = 0; cc < d; ++cc) {
                q2(r, cc) += rng.uniform(-1.0, 1.0);
                k2(r, cc) += rng.uniform(-1.0, 1.0);
                v2(r, cc) += rng.uniform(-1.0, 1.0);
            }
        const Tensor base = augmented_attention_forward(c.q, c.k, c.v, c.w, c.cfg);
        const Tensor pert = augmented_attention_forward(q2, k2, v2, c.w, c.cfg);
        for (size_t r = 0; r <= t && ok; ++r)
            for (size_t cc = 0; cc < d; ++cc)
                if (base(r, cc) != pert(r, cc)) {
                    ok = false;
                    detail = "masked mode leaked at row " + std::to_string(r);
                }
        if (!ok) break;
        // The deliberately unmasked variant must show at least one change
        // in the past rows for the same perturbation of future values.
        const Tensor ubase =
            augmented_attention_forward<double>(c.q, c.k, c.v, c.w, c.cfg, nullptr, true);
        const Tensor upert =
            augmented_attention_forward<double>(c.q, k2, v2, c.w, c.cfg, nullptr, true);
        bool violated = false;
        for (size_t r = 0; r <= t && !violated; ++r)
            for (size_t cc = 0; cc < d; ++cc)
                if (ubase(r, cc) != upert(r, cc)) violated = true;
        if (!violated) {
            ok = false;
            detail = "unmasked mode failed to leak";
        }
    }
    return {"causality fuzz (masked strict, unmasked leaks)", ok, detail};
}

CheckResult check_g1_reduction(Rng& rng) {
    double worst = 0.0;
    for (int it = 0; it < 30; ++it) {
        const size_t n = 1 + rng.uniform_int(48);
        const size_t d = 1 + rng.uniform_int(10);
        const FeatureMap fm = static_cast<FeatureMap>(rng.uniform_int(3));
        const GlobalScale gs =
            rng.uniform_int(2) ? GlobalScale::inverse_count : GlobalScale::none;
        const Tensor q = random_tensor(rng, {n, d}, -1.0, 1.0);
        const Tensor k = random_tensor(rng, {n, d}, -1.0, 1.0);
        const Tensor v = random_tensor(rng, {n, d}, -1.0, 1.0);
        const Tensor got = grouped_global_la_forward(q, k, v, 1, fm, gs);
        const Tensor want =
            causal_linear_attention_ref(q, k, v, fm, /*include_current=*/false, gs);
        worst = std::max(worst, max_abs_diff(got, want));
    }
    return {"G=1 reduction to strict-causal linear attention", worst <= 1e-12,
            "max err " + fmt(worst)};
}

CheckResult check_snapshot_roundtrip(Rng& rng) {
    bool ok = true;
    for (int it = 0; it < 10 && ok; ++it) {
        const size_t d = 5;
        const Case c = random_case(rng, 1, d, 2 + rng.uniform_int(4), 2 + rng.uniform_int(4));
        DecodeState st(c.cfg, c.w);
        const size_t warm = rng.uniform_int(20);
        std::vector<double> row(d);
        for (size_t t = 0; t < warm; ++t) {
            const Tensor q = random_tensor(rng, {d}, -1.0, 1.0);
            const Tensor k = random_tensor(rng, {d}, -1.0, 1.0);
            const Tensor v = random_tensor(rng, {d}, -1.0, 1.0);
            st.decode_step(q.data(), k.data(), v.data(), row.data());
        }
        DecodeState back = DecodeState::restore(c.cfg, c.w, st.snapshot());
        ok = back == st;
        if (ok) {
            // Both must continue identically.
            const Tensor q = random_tensor(rng, {d}, -1.0, 1.0);
            const Tensor k = random_tensor(rng, {d}, -1.0, 1.0);
            const Tensor v = random_tensor(rng, {d}, -1.0, 1.0);
            std::vector<double> r1(d), r2(d);
            st.decode_step(q.data(), k.data(), v.data(), r1.data());
            back.decode_step(q.data(), k.data(), v.data(), r2.data());
            ok = r1 == r2;
        }
    }
    return {"snapshot/restore round-trip", ok, ok ? "states and outputs equal" : "mismatch"};
}

}  // namespace

std::vector<CheckResult> run_invariant_checks(uint64_t seed) {
    Rng rng(seed);
    std::vector<CheckResult> out;
    out.push_back(check_branch_sums(rng));
    out.push_back(check_prefill_decode(rng));
    out.push_back(check_batched_vs_stream(rng));
    out.push_back(check_tree_sequential(rng));
    out.push_back(check_commit_equivalence(rng));
    out.push_back(check_causality(rng));
    out.push_back(check_g1_reduction(rng));
    out.push_back(check_snapshot_roundtrip(rng));
    return out;
}

}  // namespace linattn
