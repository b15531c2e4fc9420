#include "linattn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <numeric>

#include "linattn/augmented.hpp"
#include "linattn/decode.hpp"
#include "linattn/reference.hpp"
#include "linattn/rng.hpp"
#include "linattn/spec_tree.hpp"

namespace linattn {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Keeps the optimizer from discarding a timed computation.
volatile double g_sink = 0.0;

// Modeled peak transient footprint of one prefill. Heads run sequentially,
// so per-head score/state buffers count once, not n_heads times. The
// quadratic path materializes two n x n score matrices plus an n x n byte
// mask; the augmented path needs only per-branch n x d_k outputs, a
// d_k x d_k state and a group-sized probability row.
size_t modeled_bytes(const std::string& variant, const AttnConfig& cfg, size_t n, size_t elem) {
    const size_t d = cfg.d_model;
    const size_t dk = cfg.head_dim;
    const size_t io = 4 * n * d;  // Q, K, V inputs and the combined output
    if (variant == "quadratic") return elem * (io + 2 * n * n) + n * n;
    return elem * (io + 3 * n * dk + dk * dk + cfg.group_size);
}

template <typename S>
double prefill_once(const std::string& variant, const AttnConfig& cfg, const TensorT<S>& q,
                    const TensorT<S>& k, const TensorT<S>& v,
                    const std::vector<ConvWeightsT<S>>& wc) {
    const size_t heads = cfg.n_heads;
    const size_t dk = cfg.head_dim;
    const auto t0 = Clock::now();
    S acc = S(0);
    for (size_t h = 0; h < heads; ++h) {
        TensorT<S> qh = slice_cols(q, h * dk, (h + 1) * dk);
        TensorT<S> kh = slice_cols(k, h * dk, (h + 1) * dk);
        TensorT<S> vh = slice_cols(v, h * dk, (h + 1) * dk);
        TensorT<S> out = (variant == "quadratic")
                             ? softmax_attention_ref(qh, kh, vh, /*causal=*/true)
                             : augmented_attention_forward(qh, kh, vh, wc[h], cfg);
        acc += out[0] + out[out.size() - 1];
    }
    const double ms = ms_since(t0);
    g_sink = g_sink + static_cast<double>(acc);
    return ms;
}

template <typename S>
std::vector<PrefillBenchRow> run_prefill_bench_t(const BenchOptions& opt) {
    AttnConfig cfg = opt.attn;
    cfg.validate();
    for (const auto& variant : opt.variants)
        if (variant != "augmented" && variant != "quadratic")
            throw config_error("bench: unknown variant '" + variant + "'");
    if (opt.reps == 0) throw config_error("bench: reps must be positive");

    std::vector<PrefillBenchRow> rows;
    for (size_t n : opt.seq_lens) {
        if (n == 0) throw config_error("bench: seq_len must be positive");
        Rng rng(opt.seed ^ (0x9e3779b97f4a7c15ULL * n));
        TensorT<S> q = random_tensor<S>(rng, {n, cfg.d_model});
        TensorT<S> k = random_tensor<S>(rng, {n, cfg.d_model});
        TensorT<S> v = random_tensor<S>(rng, {n, cfg.d_model});
        std::vector<ConvWeightsT<S>> wc;
        for (size_t h = 0; h < cfg.n_heads; ++h) {
            ConvWeightsT<S> w;
            w.taps = random_tensor<S>(rng, {cfg.conv_kernel, cfg.head_dim}, S(-0.5), S(0.5));
            wc.push_back(std::move(w));
        }
        for (const auto& variant : opt.variants) {
            std::vector<double> times;
            for (size_t r = 0; r < opt.reps; ++r)
                times.push_back(prefill_once<S>(variant, cfg, q, k, v, wc));
            PrefillBenchRow row;
            row.variant = variant;
            row.seq_len = n;
            row.ms_mean = mean_of(times);
            row.ms_p50 = median_of(times);
            row.mem_bytes = modeled_bytes(variant, cfg, n, sizeof(S));
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

}  // namespace

std::vector<PrefillBenchRow> run_prefill_bench(const BenchOptions& opt) {
    return opt.f32 ? run_prefill_bench_t<float>(opt) : run_prefill_bench_t<double>(opt);
}

void write_prefill_csv(std::ostream& out, const std::vector<PrefillBenchRow>& rows) {
    out << "variant,seq_len,ms_mean,ms_p50,mem_bytes\n";
    out << std::fixed << std::setprecision(6);
    for (const auto& r : rows)
        out << r.variant << ',' << r.seq_len << ',' << r.ms_mean << ',' << r.ms_p50 << ','
            << r.mem_bytes << '\n';
}

namespace {

template <typename S>
std::vector<SpecBenchRow> run_spec_bench_t(const SpecBenchOptions& opt) {
    AttnConfig cfg = opt.attn;
    cfg.validate();
    if (cfg.n_heads != 1 || cfg.d_model != cfg.head_dim)
        throw config_error("spec bench: single-head config required (d_model == head_dim)");
    if (opt.rounds == 0) throw config_error("spec bench: rounds must be positive");

    Rng rng(opt.seed);
    const TreeSpecConfig spec = parse_tree_spec(opt.tree_spec);
    const SpecTree tree = build_tree(spec, rng, /*vocab_size=*/32);
    if (tree_depth(tree) > opt.max_depth)
        throw config_error("spec bench: tree deeper than max_depth");
    const auto children = tree_children(tree);
    size_t leaves = 0;
    for (size_t i = 0; i < tree.size(); ++i)
        if (children[i].empty()) ++leaves;

    ConvWeightsT<S> w;
    w.taps = random_tensor<S>(rng, {cfg.conv_kernel, cfg.head_dim}, S(-0.5), S(0.5));
    DecodeStateT<S> state(cfg, w);
    for (size_t t = 0; t < opt.warm_tokens; ++t) {
        TensorT<S> kr = random_tensor<S>(rng, {cfg.head_dim});
        TensorT<S> vr = random_tensor<S>(rng, {cfg.head_dim});
        state.commit_row(kr.data(), vr.data());
    }

    const size_t m = tree.size();
    std::vector<double> tree_ms, path_ms;
    for (size_t round = 0; round < opt.rounds; ++round) {
        TensorT<S> q = random_tensor<S>(rng, {m, cfg.head_dim});
        TensorT<S> k = random_tensor<S>(rng, {m, cfg.head_dim});
        TensorT<S> v = random_tensor<S>(rng, {m, cfg.head_dim});

        auto t0 = Clock::now();
        TensorT<S> out_tree = tree_attention_forward(state, tree, q, k, v, w, opt.max_depth);
        tree_ms.push_back(ms_since(t0));
        g_sink = g_sink + static_cast<double>(out_tree[0]);

        t0 = Clock::now();
        TensorT<S> out_path = decode_paths_independently(state, tree, q, k, v, w);
        path_ms.push_back(ms_since(t0));
        g_sink = g_sink + static_cast<double>(out_path[0]);
    }

    std::vector<SpecBenchRow> rows(2);
    rows[0] = {"tree", m, leaves, mean_of(tree_ms)};
    rows[1] = {"per-path", m, leaves, mean_of(path_ms)};
    return rows;
}

}  // namespace

std::vector<SpecBenchRow> run_spec_bench(const SpecBenchOptions& opt) {
    return opt.f32 ? run_spec_bench_t<float>(opt) : run_spec_bench_t<double>(opt);
}

void write_spec_csv(std::ostream& out, const std::vector<SpecBenchRow>& rows) {
    out << "mode,nodes,leaves,ms_mean\n";
    out << std::fixed << std::setprecision(6);
    for (const auto& r : rows)
        out << r.mode << ',' << r.nodes << ',' << r.leaves << ',' << r.ms_mean << '\n';
}

}  // namespace linattn
