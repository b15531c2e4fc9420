// Command-line workbench: latency benches, the masked-vs-leaky training
// demo, and the oracle-equivalence suite. All output is CSV or plain
// pass/fail lines; plotting stays external.

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "linattn/bench.hpp"
#include "linattn/errors.hpp"
#include "linattn/model.hpp"
#include "linattn/train.hpp"
#include "linattn/verify.hpp"

namespace {

// Writes to path, or stdout when path is empty.
void emit(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream f(path);
    if (!f) throw linattn::io_error("cannot open output file: " + path);
    f << text;
}

struct GlobalFlags {
    uint64_t seed = 1;
    std::string dtype = "f64";
    double alpha = 1.0;
    size_t group = 64;
    size_t kernel = 1;
    CLI::Option* alpha_opt = nullptr;
    CLI::Option* group_opt = nullptr;
    CLI::Option* kernel_opt = nullptr;

    bool f32() const { return dtype == "f32"; }
};

int run_bench(const GlobalFlags& g, const std::vector<size_t>& seq, size_t reps, size_t d_model,
              size_t heads, const std::string& out_path) {
    linattn::BenchOptions opt;
    opt.attn.d_model = d_model;
    opt.attn.n_heads = heads;
    if (heads == 0 || d_model % heads != 0)
        throw linattn::config_error("bench: d_model must be divisible by heads");
    opt.attn.head_dim = d_model / heads;
    opt.attn.group_size = g.group;
    opt.attn.conv_kernel = g.kernel;
    opt.attn.alpha = g.alpha;
    opt.seq_lens = seq;
    opt.reps = reps;
    opt.seed = g.seed;
    opt.f32 = g.f32();
    std::ostringstream csv;
    linattn::write_prefill_csv(csv, linattn::run_prefill_bench(opt));
    emit(out_path, csv.str());
    return 0;
}

int run_spec_bench(const GlobalFlags& g, const std::string& tree, size_t rounds, size_t warm,
                   size_t head_dim, size_t max_depth, const std::string& out_path) {
    linattn::SpecBenchOptions opt;
    opt.attn.d_model = head_dim;
    opt.attn.n_heads = 1;
    opt.attn.head_dim = head_dim;
    opt.attn.group_size = g.group;
    opt.attn.conv_kernel = g.kernel;
    opt.attn.alpha = g.alpha;
    opt.tree_spec = tree;
    opt.rounds = rounds;
    opt.warm_tokens = warm;
    opt.max_depth = max_depth;
    opt.seed = g.seed;
    opt.f32 = g.f32();
    std::ostringstream csv;
    linattn::write_spec_csv(csv, linattn::run_spec_bench(opt));
    emit(out_path, csv.str());
    return 0;
}

int run_train_demo(const GlobalFlags& g, const std::string& task, bool leaky, size_t steps,
                   double lr, size_t eval_every, const std::string& config_path,
                   const std::string& out_path) {
    if (g.f32())
        std::cerr << "note: train-demo always runs in f64; --dtype ignored\n";

    linattn::ModelConfig mc;
    if (!config_path.empty()) {
        mc = linattn::load_model_config(config_path);
    } else {
        // Desk-scale copy/induction setup: one group spans the whole
        // sequence and a short value conv provides the local mixing whose
        // masking is under test.
        mc.vocab_size = 16;
        mc.d_model = 64;
        mc.n_heads = 2;
        mc.n_layers = 2;
        mc.ffn_mult = 2;
        mc.max_seq = 24;
        mc.attn.group_size = 24;
        mc.attn.conv_kernel = 4;
        mc.attn.alpha = 0.5;
    }
    mc.seed = g.seed;
    if (g.alpha_opt->count() > 0) mc.attn.alpha = g.alpha;
    if (g.group_opt->count() > 0) mc.attn.group_size = g.group;
    if (g.kernel_opt->count() > 0) mc.attn.conv_kernel = g.kernel;
    if (leaky) mc.unmasked_conv = true;
    mc.sync_attn();
    mc.validate();

    linattn::TrainConfig tc;
    tc.task = linattn::task_from_string(task);
    tc.steps = steps;
    tc.lr = lr;
    tc.eval_every = eval_every;

    linattn::ToyModel model = linattn::init_model(mc);
    linattn::TrainResult res = linattn::train_synthetic(model, tc);

    std::ostringstream csv;
    csv << "step,loss,eval_accuracy\n";
    csv << std::setprecision(10);
    size_t ep = 0;
    for (size_t i = 0; i < res.loss_curve.size(); ++i) {
        csv << i << ',' << res.loss_curve[i] << ',';
        if (ep < res.eval_points.size() && res.eval_points[ep].first == i + 1) {
            csv << res.eval_points[ep].second;
            ++ep;
        }
        csv << '\n';
    }
    emit(out_path, csv.str());
    std::cerr << "final eval accuracy " << res.eval_accuracy << " (chance "
              << res.chance_accuracy << ")\n";
    return 0;
}

int run_invariants(const GlobalFlags& g) {
    bool all_pass = true;
    for (const auto& c : linattn::run_invariant_checks(g.seed)) {
        std::cout << (c.pass ? "PASS" : "FAIL") << "  " << c.name;
        if (!c.detail.empty()) std::cout << "  (" << c.detail << ")";
        std::cout << '\n';
        all_pass = all_pass && c.pass;
    }
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"augmented linear attention workbench"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalFlags g;
    app.add_option("--seed", g.seed, "base RNG seed");
    app.add_option("--dtype", g.dtype, "scalar type for the raw-op benches (training is f64)")
        ->check(CLI::IsMember({"f32", "f64"}));
    g.alpha_opt = app.add_option("--alpha", g.alpha, "global-branch weight");
    g.group_opt = app.add_option("--group", g.group, "attention group size");
    g.kernel_opt = app.add_option("--kernel", g.kernel, "value-conv kernel width");

    auto* bench = app.add_subcommand("bench", "prefill latency: augmented vs quadratic reference");
    std::vector<size_t> seq = {1024, 8192};
    size_t reps = 3, d_model = 256, heads = 4;
    std::string bench_out;
    bench->add_option("--seq", seq, "sequence lengths")->delimiter(',');
    bench->add_option("--reps", reps, "timed repetitions per variant");
    bench->add_option("--d-model", d_model, "model width");
    bench->add_option("--heads", heads, "head count");
    bench->add_option("--out", bench_out, "CSV path (default stdout)");

    auto* sb = app.add_subcommand("spec-bench", "tree decode vs per-path oracle latency");
    std::string tree = "4,2,2";
    size_t rounds = 100, warm = 96, head_dim = 64, max_depth = 8;
    std::string sb_out;
    sb->add_option("--tree", tree, "fan-out list (\"4,2,2\") or \"parents: -1 0 0 ...\"");
    sb->add_option("--rounds", rounds, "speculation rounds to time");
    sb->add_option("--warm", warm, "committed tokens before speculation");
    sb->add_option("--head-dim", head_dim, "per-head width");
    sb->add_option("--max-depth", max_depth, "speculation depth cap");
    sb->add_option("--out", sb_out, "CSV path (default stdout)");

    auto* td = app.add_subcommand("train-demo", "masked vs leaky conv training contrast");
    std::string task = "copy", config_path, td_out;
    bool leaky = false;
    size_t steps = 1000, eval_every = 100;
    double lr = 0.5;
    td->add_option("--task", task, "synthetic task")->check(CLI::IsMember({"copy", "induction"}));
    td->add_flag("--leaky", leaky, "use the unmasked (future-leaking) value conv");
    td->add_option("--steps", steps, "gradient-descent steps");
    td->add_option("--lr", lr, "learning rate");
    td->add_option("--eval-every", eval_every, "steps between held-out evals (0 = final only)");
    td->add_option("--config", config_path, "key=value model config file");
    td->add_option("--out", td_out, "CSV path (default stdout)");

    auto* inv = app.add_subcommand("invariants", "run the oracle-equivalence suite");

    CLI11_PARSE(app, argc, argv);

    try {
        if (bench->parsed()) return run_bench(g, seq, reps, d_model, heads, bench_out);
        if (sb->parsed()) return run_spec_bench(g, tree, rounds, warm, head_dim, max_depth, sb_out);
        if (td->parsed())
            return run_train_demo(g, task, leaky, steps, lr, eval_every, config_path, td_out);
        if (inv->parsed()) return run_invariants(g);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
