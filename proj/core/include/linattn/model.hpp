#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "linattn/augmented.hpp"
#include "linattn/config.hpp"
#include "linattn/decode.hpp"
#include "linattn/spec_tree.hpp"
#include "linattn/tensor.hpp"

namespace linattn {

// Desk-scale decoder-only transformer configuration. The embedded
// AttnConfig carries the per-head attention knobs; d_model/n_heads are
// kept consistent by validate().
struct ModelConfig {
    size_t vocab_size = 16;
    size_t d_model = 64;
    size_t n_heads = 2;
    size_t n_layers = 2;
    size_t ffn_mult = 4;
    size_t max_seq = 64;
    uint64_t seed = 1;
    bool unmasked_conv = false;  // leakage negative-control mode
    AttnConfig attn;

    // Derive the per-head attention dims from the model dims, keeping the
    // remaining attention knobs as set.
    void sync_attn() {
        attn.d_model = d_model;
        attn.n_heads = n_heads;
        attn.head_dim = n_heads == 0 ? 0 : d_model / n_heads;
    }

    void validate() const {
        if (vocab_size == 0 || d_model == 0 || n_heads == 0 || n_layers == 0 ||
            ffn_mult == 0 || max_seq == 0)
            throw config_error("ModelConfig: all dimensions must be positive");
        if (d_model % n_heads != 0)
            throw config_error("ModelConfig: d_model must be divisible by n_heads");
        if (attn.d_model != d_model || attn.n_heads != n_heads ||
            attn.head_dim != d_model / n_heads)
            throw config_error("ModelConfig: embedded AttnConfig out of sync (call sync_attn)");
        attn.validate();
    }
};

// Flat key=value configuration text ('#' comments, blank lines allowed).
// Unknown keys are errors.
ModelConfig parse_model_config(const std::string& text);
ModelConfig load_model_config(const std::string& path);

struct LayerWeights {
    Tensor ln1_g, ln1_b;              // d
    Tensor wq, wk, wv, wo;            // d x d
    std::vector<ConvWeights> conv;    // per head, k x head_dim
    Tensor ln2_g, ln2_b;              // d
    Tensor w1, w2;                    // d x hidden, hidden x d
};

struct ToyModel {
    ModelConfig cfg;
    Tensor embedding;      // vocab x d, also the (tied) LM head
    Tensor pos_embedding;  // max_seq x d, learned absolute positions
    std::vector<LayerWeights> layers;
    Tensor final_ln_g, final_ln_b;
};

// Seeded scaled-uniform init: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in));
// layer-norm gains start at 1, shifts at 0.
ToyModel init_model(const ModelConfig& cfg);

// Row-wise layer norm bookkeeping for the backward pass.
struct LnCache {
    Tensor normalized;  // n x d, (x - mean) * rstd
    std::vector<double> rstd;
};

struct LayerCacheFwd {
    Tensor x_in;            // residual input
    Tensor ln1_out;
    LnCache ln1;
    Tensor q, k, v;         // n x d projected
    std::vector<ForwardCache> heads;
    Tensor attn_concat;     // n x d, pre-Wo
    Tensor x_mid;           // after attention residual
    Tensor ln2_out;
    LnCache ln2;
    Tensor ffn_pre;         // n x hidden, pre-activation
    Tensor ffn_act;         // n x hidden, post-GELU
};

struct ModelCacheFwd {
    std::vector<size_t> tokens;
    Tensor x0;
    std::vector<LayerCacheFwd> layers;
    Tensor final_in;
    LnCache final_ln;
    Tensor final_out;
    bool valid = false;
    bool consumed = false;
};

// Batched forward: pre-norm blocks x += MHA(LN(x)), x += FFN(LN(x)) with
// GELU, then logits = LN(x) . embedding^T. Pass a cache to enable the
// backward pass.
Tensor model_prefill(const ToyModel& model, const std::vector<size_t>& tokens,
                     ModelCacheFwd* cache = nullptr);

struct LayerGrads {
    Tensor ln1_g, ln1_b, wq, wk, wv, wo;
    std::vector<ConvWeights> conv;
    Tensor ln2_g, ln2_b, w1, w2;
};

struct ModelGrads {
    Tensor embedding, pos_embedding;
    std::vector<LayerGrads> layers;
    Tensor final_ln_g, final_ln_b;
};

ModelGrads zero_grads(const ToyModel& model);

// Exact gradients for every parameter given d(loss)/d(logits).
ModelGrads model_backward(const ToyModel& model, ModelCacheFwd& cache, const Tensor& dlogits);

// axpy over every parameter: model += scale * grads (scale = -lr for GD).
void apply_grads(ToyModel& model, const ModelGrads& grads, double scale);

// Streaming inference over per-layer, per-head decode states. Masked
// mode only: the leakage variant has no causal streaming form.
class ModelSession {
public:
    explicit ModelSession(const ToyModel& model);

    size_t pos() const { return pos_; }

    // Feed tokens one position at a time; returns logits of the last row.
    Tensor prefill(const std::vector<size_t>& tokens);
    // Feed one token, return its logits row (1 x vocab).
    Tensor step(size_t token);

    // Evaluate all tree candidates against the frozen states; stashes
    // per-layer projections so accepted nodes can be committed. Does not
    // advance the stream.
    Tensor tree_forward(const SpecTree& tree, size_t max_depth = 8, TreeStats* stats = nullptr);
    // Commit the given nodes of the last tree_forward, in path order.
    void commit_nodes(const SpecTree& tree, const std::vector<size_t>& accepted);

private:
    Tensor forward_row(const Tensor& x_row, bool commit, size_t abs_pos);
    void check_capacity(size_t incoming) const;

    const ToyModel& model_;
    std::vector<std::vector<DecodeState>> states_;  // [layer][head]
    size_t pos_ = 0;
    Tensor emb_t_;  // transposed embedding, built on first logits row
    // Projections of the last speculative tree, per layer: K,V (m x d).
    std::vector<Tensor> tree_k_, tree_v_;
    size_t tree_nodes_ = 0;
};

// Greedy decoding: prefill the prompt, then argmax one token at a time.
std::vector<size_t> generate_greedy(const ToyModel& model, const std::vector<size_t>& prompt,
                                    size_t n_new);

struct SpecStats {
    size_t rounds = 0;
    std::vector<size_t> accepted_lengths;  // accepted nodes per round (bonus excluded)
};

// Draft source: proposes a candidate tree for the current prefix.
using DraftFn = std::function<SpecTree(const std::vector<size_t>& prefix, size_t round)>;

// Speculative decoding with greedy verification; token output is
// identical to generate_greedy. The default draft samples a tree of the
// given topology with seeded random tokens.
std::vector<size_t> generate_speculative(const ToyModel& model, const std::vector<size_t>& prompt,
                                         size_t n_new, const TreeSpecConfig& tree_spec,
                                         uint64_t draft_seed, SpecStats* stats = nullptr);
std::vector<size_t> generate_speculative(const ToyModel& model, const std::vector<size_t>& prompt,
                                         size_t n_new, const DraftFn& draft,
                                         SpecStats* stats = nullptr);

// erf-form GELU and its derivative.
double gelu(double x);
double gelu_grad(double x);

// Index of the largest entry; ties break to the lowest index.
size_t argmax_row(const double* row, size_t n);

}  // namespace linattn
