#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "linattn/config.hpp"

namespace linattn {

// Prefill latency of one attention variant at one sequence length.
// mem_bytes models the dominant transient allocations of the variant
// (inputs/outputs plus score matrices or state buffers).
struct PrefillBenchRow {
    std::string variant;
    size_t seq_len = 0;
    double ms_mean = 0.0;
    double ms_p50 = 0.0;
    size_t mem_bytes = 0;
};

struct BenchOptions {
    AttnConfig attn;                     // multi-head layout; heads run sequentially
    std::vector<size_t> seq_lens = {1024, 8192};
    std::vector<std::string> variants = {"augmented", "quadratic"};
    size_t reps = 3;
    uint64_t seed = 1;
    bool f32 = false;
};

std::vector<PrefillBenchRow> run_prefill_bench(const BenchOptions& opt);
void write_prefill_csv(std::ostream& out, const std::vector<PrefillBenchRow>& rows);

// Tree speculation round against the per-path sequential baseline.
struct SpecBenchRow {
    std::string mode;  // "tree" or "per-path"
    size_t nodes = 0;
    size_t leaves = 0;
    double ms_mean = 0.0;
};

struct SpecBenchOptions {
    AttnConfig attn;          // single-head shape for the raw ops
    std::string tree_spec = "4,2,2";
    size_t rounds = 100;
    size_t warm_tokens = 96;  // committed context before speculation
    size_t max_depth = 8;
    uint64_t seed = 1;
    bool f32 = false;
};

std::vector<SpecBenchRow> run_spec_bench(const SpecBenchOptions& opt);
void write_spec_csv(std::ostream& out, const std::vector<SpecBenchRow>& rows);

}  // namespace linattn
