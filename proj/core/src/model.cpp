#include "linattn/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

#include "linattn/errors.hpp"
#include "linattn/rng.hpp"

namespace linattn {

namespace {

constexpr double kLnEps = 1e-5;

// Row form of layer norm so the streaming and batched paths share bits.
void ln_row(const double* x, const double* g, const double* b, size_t d, double* out,
            double* normalized = nullptr, double* rstd_out = nullptr) {
    double mean = 0.0;
    for (size_t c = 0; c < d; ++c) mean += x[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (size_t c = 0; c < d; ++c) {
        const double dev = x[c] - mean;
        var += dev * dev;
    }
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    for (size_t c = 0; c < d; ++c) {
        const double nh = (x[c] - mean) * rstd;
        if (normalized) normalized[c] = nh;
        out[c] = g[c] * nh + b[c];
    }
    if (rstd_out) *rstd_out = rstd;
}

Tensor layer_norm_forward(const Tensor& x, const Tensor& g, const Tensor& b, LnCache* cache) {
    const size_t n = x.rows(), d = x.cols();
    Tensor out({n, d});
    if (cache) {
        cache->normalized = Tensor({n, d});
        cache->rstd.assign(n, 0.0);
    }
    for (size_t i = 0; i < n; ++i)
        ln_row(x.data() + i * d, g.data(), b.data(), d, out.data() + i * d,
               cache ? cache->normalized.data() + i * d : nullptr,
               cache ? &cache->rstd[i] : nullptr);
    return out;
}

// dx for y = g*normalized + b given upstream dy; accumulates dg/db.
Tensor layer_norm_backward(const Tensor& dy, const LnCache& cache, const Tensor& g,
                           Tensor& dg, Tensor& db) {
    const size_t n = dy.rows(), d = dy.cols();
    Tensor dx({n, d});
    for (size_t i = 0; i < n; ++i) {
        const double* dyr = dy.data() + i * d;
        const double* nh = cache.normalized.data() + i * d;
        double mean_dxhat = 0.0, mean_dxhat_nh = 0.0;
        for (size_t c = 0; c < d; ++c) {
            const double dxhat = dyr[c] * g[c];
            mean_dxhat += dxhat;
            mean_dxhat_nh += dxhat * nh[c];
            dg[c] += dyr[c] * nh[c];
            db[c] += dyr[c];
        }
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_nh /= static_cast<double>(d);
        for (size_t c = 0; c < d; ++c) {
            const double dxhat = dyr[c] * g[c];
            dx(i, c) = cache.rstd[i] * (dxhat - mean_dxhat - nh[c] * mean_dxhat_nh);
        }
    }
    return dx;
}

void check_tokens(const std::vector<size_t>& tokens, const ModelConfig& cfg) {
    if (tokens.empty()) throw input_error("model: token sequence must be nonempty");
    if (tokens.size() > cfg.max_seq)
        throw input_error("model: sequence length " + std::to_string(tokens.size()) +
                          " exceeds max_seq " + std::to_string(cfg.max_seq));
    for (size_t t : tokens)
        if (t >= cfg.vocab_size)
            throw input_error("model: token id " + std::to_string(t) + " out of range");
}

Tensor scaled_uniform(Rng& rng, std::vector<size_t> shape, size_t fan_in) {
    Tensor t(shape);
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-s, s);
    return t;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw config_error("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

size_t parse_size(const std::string& key, const std::string& v) {
    try {
        size_t idx = 0;
        const long long x = std::stoll(v, &idx);
        if (idx != v.size() || x < 0) throw std::invalid_argument(v);
        return static_cast<size_t>(x);
    } catch (const std::exception&) {
        throw config_error("config: key '" + key + "' expects a non-negative integer, got '" +
                           v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t idx = 0;
        const double x = std::stod(v, &idx);
        if (idx != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw config_error("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

ModelConfig parse_model_config(const std::string& text) {
    ModelConfig cfg;
    bool head_dim_given = false;
    size_t head_dim_value = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config: expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw config_error("config: empty key or value in '" + line + "'");
        if (key == "vocab_size") cfg.vocab_size = parse_size(key, value);
        else if (key == "d_model") cfg.d_model = parse_size(key, value);
        else if (key == "n_heads") cfg.n_heads = parse_size(key, value);
        else if (key == "n_layers") cfg.n_layers = parse_size(key, value);
        else if (key == "ffn_mult") cfg.ffn_mult = parse_size(key, value);
        else if (key == "max_seq") cfg.max_seq = parse_size(key, value);
        else if (key == "seed") cfg.seed = static_cast<uint64_t>(parse_size(key, value));
        else if (key == "unmasked_conv") cfg.unmasked_conv = parse_bool(key, value);
        else if (key == "group_size") cfg.attn.group_size = parse_size(key, value);
        else if (key == "conv_kernel") cfg.attn.conv_kernel = parse_size(key, value);
        else if (key == "alpha") cfg.attn.alpha = parse_double(key, value);
        else if (key == "feature_map") cfg.attn.feature_map = feature_map_from_string(value);
        else if (key == "global_scale") cfg.attn.global_scale = global_scale_from_string(value);
        else if (key == "head_dim") {
            head_dim_given = true;
            head_dim_value = parse_size(key, value);
        } else {
            throw config_error("config: unknown key '" + key + "'");
        }
    }
    cfg.sync_attn();
    if (head_dim_given && head_dim_value != cfg.attn.head_dim)
        throw config_error("config: head_dim " + std::to_string(head_dim_value) +
                           " contradicts d_model / n_heads = " +
                           std::to_string(cfg.attn.head_dim));
    cfg.validate();
    return cfg;
}

ModelConfig load_model_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_model_config(buf.str());
}

ToyModel init_model(const ModelConfig& cfg) {
    cfg.validate();
    ToyModel m;
    m.cfg = cfg;
    Rng rng(cfg.seed);
    const size_t d = cfg.d_model;
    const size_t dk = cfg.attn.head_dim;
    const size_t hidden = cfg.ffn_mult * d;
    m.embedding = scaled_uniform(rng, {cfg.vocab_size, d}, d);
    m.pos_embedding = scaled_uniform(rng, {cfg.max_seq, d}, d);
    m.layers.resize(cfg.n_layers);
    for (LayerWeights& lw : m.layers) {
        lw.ln1_g = Tensor({d}, 1.0);
        lw.ln1_b = Tensor({d}, 0.0);
        lw.wq = scaled_uniform(rng, {d, d}, d);
        lw.wk = scaled_uniform(rng, {d, d}, d);
        lw.wv = scaled_uniform(rng, {d, d}, d);
        lw.wo = scaled_uniform(rng, {d, d}, d);
        lw.conv.reserve(cfg.n_heads);
        for (size_t h = 0; h < cfg.n_heads; ++h)
            lw.conv.emplace_back(scaled_uniform(rng, {cfg.attn.conv_kernel, dk},
                                                cfg.attn.conv_kernel));
        lw.ln2_g = Tensor({d}, 1.0);
        lw.ln2_b = Tensor({d}, 0.0);
        lw.w1 = scaled_uniform(rng, {d, hidden}, d);
        lw.w2 = scaled_uniform(rng, {hidden, d}, hidden);
    }
    m.final_ln_g = Tensor({d}, 1.0);
    m.final_ln_b = Tensor({d}, 0.0);
    return m;
}

Tensor model_prefill(const ToyModel& model, const std::vector<size_t>& tokens,
                     ModelCacheFwd* cache) {
    const ModelConfig& cfg = model.cfg;
    cfg.validate();
    check_tokens(tokens, cfg);
    const size_t n = tokens.size();
    const size_t d = cfg.d_model;
    const size_t dk = cfg.attn.head_dim;

    Tensor x({n, d});
    for (size_t t = 0; t < n; ++t)
        for (size_t c = 0; c < d; ++c)
            x(t, c) = model.embedding(tokens[t], c) + model.pos_embedding(t, c);
    if (cache) {
        cache->tokens = tokens;
        cache->x0 = x;
        cache->layers.assign(cfg.n_layers, LayerCacheFwd{});
    }

    for (size_t l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights& lw = model.layers[l];
        LayerCacheFwd* lc = cache ? &cache->layers[l] : nullptr;
        if (lc) {
            lc->x_in = x;
            lc->heads.resize(cfg.n_heads);
        }
        Tensor ln1 = layer_norm_forward(x, lw.ln1_g, lw.ln1_b, lc ? &lc->ln1 : nullptr);
        Tensor q = matmul(ln1, lw.wq);
        Tensor k = matmul(ln1, lw.wk);
        Tensor v = matmul(ln1, lw.wv);
        Tensor concat({n, d});
        for (size_t h = 0; h < cfg.n_heads; ++h) {
            const size_t c0 = h * dk;
            Tensor head = augmented_attention_forward(
                slice_cols(q, c0, c0 + dk), slice_cols(k, c0, c0 + dk),
                slice_cols(v, c0, c0 + dk), lw.conv[h], cfg.attn,
                lc ? &lc->heads[h] : nullptr, cfg.unmasked_conv);
            for (size_t t = 0; t < n; ++t)
                for (size_t j = 0; j < dk; ++j) concat(t, c0 + j) = head(t, j);
        }
        Tensor attn_out = matmul(concat, lw.wo);
        for (size_t i = 0; i < x.size(); ++i) x[i] += attn_out[i];
        if (lc) {
            lc->ln1_out = std::move(ln1);
            lc->q = std::move(q);
            lc->k = std::move(k);
            lc->v = std::move(v);
            lc->attn_concat = std::move(concat);
            lc->x_mid = x;
        }
        Tensor ln2 = layer_norm_forward(x, lw.ln2_g, lw.ln2_b, lc ? &lc->ln2 : nullptr);
        Tensor pre = matmul(ln2, lw.w1);
        Tensor act({n, pre.cols()});
        for (size_t i = 0; i < pre.size(); ++i) act[i] = gelu(pre[i]);
        Tensor ffn_out = matmul(act, lw.w2);
        for (size_t i = 0; i < x.size(); ++i) x[i] += ffn_out[i];
        if (lc) {
            lc->ln2_out = std::move(ln2);
            lc->ffn_pre = std::move(pre);
            lc->ffn_act = std::move(act);
        }
    }
    if (cache) cache->final_in = x;
    Tensor final_out =
        layer_norm_forward(x, model.final_ln_g, model.final_ln_b, cache ? &cache->final_ln : nullptr);
    Tensor logits = matmul(final_out, transpose(model.embedding));
    if (cache) {
        cache->final_out = std::move(final_out);
        cache->valid = true;
        cache->consumed = false;
    }
    return logits;
}

ModelGrads zero_grads(const ToyModel& model) {
    const ModelConfig& cfg = model.cfg;
    const size_t d = cfg.d_model;
    const size_t hidden = cfg.ffn_mult * d;
    ModelGrads g;
    g.embedding = Tensor({cfg.vocab_size, d});
    g.pos_embedding = Tensor({cfg.max_seq, d});
    g.layers.resize(cfg.n_layers);
    for (LayerGrads& lg : g.layers) {
        lg.ln1_g = Tensor({d});
        lg.ln1_b = Tensor({d});
        lg.wq = Tensor({d, d});
        lg.wk = Tensor({d, d});
        lg.wv = Tensor({d, d});
        lg.wo = Tensor({d, d});
        lg.conv.assign(cfg.n_heads, ConvWeights(cfg.attn.conv_kernel, cfg.attn.head_dim));
        lg.ln2_g = Tensor({d});
        lg.ln2_b = Tensor({d});
        lg.w1 = Tensor({d, hidden});
        lg.w2 = Tensor({hidden, d});
    }
    g.final_ln_g = Tensor({d});
    g.final_ln_b = Tensor({d});
    return g;
}

ModelGrads model_backward(const ToyModel& model, ModelCacheFwd& cache, const Tensor& dlogits) {
    if (!cache.valid) throw contract_error("model_backward: cache not produced by a forward");
    if (cache.consumed) throw contract_error("model_backward: cache already consumed");
    const ModelConfig& cfg = model.cfg;
    const size_t n = cache.tokens.size();
    const size_t d = cfg.d_model;
    const size_t dk = cfg.attn.head_dim;
    if (dlogits.rank() != 2 || dlogits.rows() != n || dlogits.cols() != cfg.vocab_size)
        throw dim_error("model_backward: dlogits must be n x vocab");
    cache.consumed = true;

    ModelGrads grads = zero_grads(model);

    // Tied head: logits = final_out . embedding^T.
    Tensor dfinal = matmul(dlogits, model.embedding);
    {
        Tensor demb = matmul(transpose(dlogits), cache.final_out);
        for (size_t i = 0; i < demb.size(); ++i) grads.embedding[i] += demb[i];
    }
    Tensor dx = layer_norm_backward(dfinal, cache.final_ln, model.final_ln_g, grads.final_ln_g,
                                    grads.final_ln_b);

    for (size_t l = cfg.n_layers; l-- > 0;) {
        const LayerWeights& lw = model.layers[l];
        LayerCacheFwd& lc = cache.layers[l];
        LayerGrads& lg = grads.layers[l];

        // FFN half: x_out = x_mid + W2 . gelu(W1 . ln2(x_mid)).
        Tensor dact = matmul(dx, transpose(lw.w2));
        {
            Tensor dw2 = matmul(transpose(lc.ffn_act), dx);
            for (size_t i = 0; i < dw2.size(); ++i) lg.w2[i] += dw2[i];
        }
        Tensor dpre({n, dact.cols()});
        for (size_t i = 0; i < dpre.size(); ++i) dpre[i] = dact[i] * gelu_grad(lc.ffn_pre[i]);
        {
            Tensor dw1 = matmul(transpose(lc.ln2_out), dpre);
            for (size_t i = 0; i < dw1.size(); ++i) lg.w1[i] += dw1[i];
        }
        Tensor dln2 = matmul(dpre, transpose(lw.w1));
        Tensor dskip = layer_norm_backward(dln2, lc.ln2, lw.ln2_g, lg.ln2_g, lg.ln2_b);
        for (size_t i = 0; i < dx.size(); ++i) dx[i] += dskip[i];

        // Attention half: x_mid = x_in + Wo . concat(heads(ln1(x_in))).
        Tensor dconcat = matmul(dx, transpose(lw.wo));
        {
            Tensor dwo = matmul(transpose(lc.attn_concat), dx);
            for (size_t i = 0; i < dwo.size(); ++i) lg.wo[i] += dwo[i];
        }
        Tensor dq({n, d}), dkk({n, d}), dv({n, d});
        for (size_t h = 0; h < cfg.n_heads; ++h) {
            const size_t c0 = h * dk;
            AugmentedGrads hg =
                augmented_attention_backward(lc.heads[h], slice_cols(dconcat, c0, c0 + dk));
            for (size_t t = 0; t < n; ++t)
                for (size_t j = 0; j < dk; ++j) {
                    dq(t, c0 + j) = hg.dq(t, j);
                    dkk(t, c0 + j) = hg.dk(t, j);
                    dv(t, c0 + j) = hg.dv(t, j);
                }
            for (size_t i = 0; i < hg.dw.taps.size(); ++i)
                lg.conv[h].taps[i] += hg.dw.taps[i];
        }
        {
            Tensor dwq = matmul(transpose(lc.ln1_out), dq);
            Tensor dwk = matmul(transpose(lc.ln1_out), dkk);
            Tensor dwv = matmul(transpose(lc.ln1_out), dv);
            for (size_t i = 0; i < dwq.size(); ++i) {
                lg.wq[i] += dwq[i];
                lg.wk[i] += dwk[i];
                lg.wv[i] += dwv[i];
            }
        }
        Tensor dln1 = matmul(dq, transpose(lw.wq));
        {
            Tensor t2 = matmul(dkk, transpose(lw.wk));
            Tensor t3 = matmul(dv, transpose(lw.wv));
            for (size_t i = 0; i < dln1.size(); ++i) dln1[i] += t2[i] + t3[i];
        }
        Tensor dskip1 = layer_norm_backward(dln1, lc.ln1, lw.ln1_g, lg.ln1_g, lg.ln1_b);
        for (size_t i = 0; i < dx.size(); ++i) dx[i] += dskip1[i];
    }

    for (size_t t = 0; t < n; ++t)
        for (size_t c = 0; c < d; ++c) {
            grads.embedding(cache.tokens[t], c) += dx(t, c);
            grads.pos_embedding(t, c) += dx(t, c);
        }
    return grads;
}

namespace {
void axpy(Tensor& dst, const Tensor& src, double scale) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}
}  // namespace

void apply_grads(ToyModel& model, const ModelGrads& grads, double scale) {
    axpy(model.embedding, grads.embedding, scale);
    axpy(model.pos_embedding, grads.pos_embedding, scale);
    for (size_t l = 0; l < model.layers.size(); ++l) {
        LayerWeights& lw = model.layers[l];
        const LayerGrads& lg = grads.layers[l];
        axpy(lw.ln1_g, lg.ln1_g, scale);
        axpy(lw.ln1_b, lg.ln1_b, scale);
        axpy(lw.wq, lg.wq, scale);
        axpy(lw.wk, lg.wk, scale);
        axpy(lw.wv, lg.wv, scale);
        axpy(lw.wo, lg.wo, scale);
        for (size_t h = 0; h < lw.conv.size(); ++h) axpy(lw.conv[h].taps, lg.conv[h].taps, scale);
        axpy(lw.ln2_g, lg.ln2_g, scale);
        axpy(lw.ln2_b, lg.ln2_b, scale);
        axpy(lw.w1, lg.w1, scale);
        axpy(lw.w2, lg.w2, scale);
    }
    axpy(model.final_ln_g, grads.final_ln_g, scale);
    axpy(model.final_ln_b, grads.final_ln_b, scale);
}

// ---------------------------------------------------------------------------
// Streaming session
// ---------------------------------------------------------------------------

ModelSession::ModelSession(const ToyModel& model) : model_(model) {
    model.cfg.validate();
    if (model.cfg.unmasked_conv)
        throw config_error("ModelSession: the unmasked debug conv has no streaming form");
    states_.resize(model.cfg.n_layers);
    for (size_t l = 0; l < model.cfg.n_layers; ++l) {
        states_[l].reserve(model.cfg.n_heads);
        for (size_t h = 0; h < model.cfg.n_heads; ++h)
            states_[l].emplace_back(model.cfg.attn, model.layers[l].conv[h]);
    }
}

void ModelSession::check_capacity(size_t incoming) const {
    if (pos_ + incoming > model_.cfg.max_seq)
        throw input_error("session: sequence would exceed max_seq " +
                          std::to_string(model_.cfg.max_seq));
}

Tensor ModelSession::step(size_t token) {
    if (token >= model_.cfg.vocab_size)
        throw input_error("session: token id " + std::to_string(token) + " out of range");
    check_capacity(1);
    const size_t d = model_.cfg.d_model;
    Tensor x({1, d});
    for (size_t c = 0; c < d; ++c)
        x(0, c) = model_.embedding(token, c) + model_.pos_embedding(pos_, c);
    return forward_row(x, /*commit=*/true, pos_);
}

Tensor ModelSession::forward_row(const Tensor& x_row, bool commit, size_t /*abs_pos*/) {
    const ModelConfig& cfg = model_.cfg;
    const size_t d = cfg.d_model;
    const size_t dk = cfg.attn.head_dim;
    std::vector<double> x(x_row.data(), x_row.data() + d);
    std::vector<double> r1(d), qrow(d), krow(d), vrow(d), concat(d), tmp(d);
    std::vector<double> hidden(cfg.ffn_mult * d);
    for (size_t l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights& lw = model_.layers[l];
        ln_row(x.data(), lw.ln1_g.data(), lw.ln1_b.data(), d, r1.data());
        detail::matmul_row(r1.data(), lw.wq, qrow.data());
        detail::matmul_row(r1.data(), lw.wk, krow.data());
        detail::matmul_row(r1.data(), lw.wv, vrow.data());
        for (size_t h = 0; h < cfg.n_heads; ++h) {
            const size_t c0 = h * dk;
            if (commit)
                states_[l][h].decode_step(qrow.data() + c0, krow.data() + c0, vrow.data() + c0,
                                          concat.data() + c0);
            else
                states_[l][h].compute_row(qrow.data() + c0, krow.data() + c0, vrow.data() + c0,
                                          concat.data() + c0);
        }
        detail::matmul_row(concat.data(), lw.wo, tmp.data());
        for (size_t c = 0; c < d; ++c) x[c] += tmp[c];
        ln_row(x.data(), lw.ln2_g.data(), lw.ln2_b.data(), d, r1.data());
        detail::matmul_row(r1.data(), lw.w1, hidden.data());
        for (double& h : hidden) h = gelu(h);
        detail::matmul_row(hidden.data(), lw.w2, tmp.data());
        for (size_t c = 0; c < d; ++c) x[c] += tmp[c];
    }
    ln_row(x.data(), model_.final_ln_g.data(), model_.final_ln_b.data(), d, r1.data());
    if (emb_t_.size() == 0) emb_t_ = transpose(model_.embedding);
    Tensor logits({1, cfg.vocab_size});
    detail::matmul_row(r1.data(), emb_t_, logits.data());
    if (commit) ++pos_;
    return logits;
}

Tensor ModelSession::prefill(const std::vector<size_t>& tokens) {
    check_tokens(tokens, model_.cfg);
    check_capacity(tokens.size());
    Tensor logits;
    for (size_t t : tokens) logits = step(t);
    return logits;
}

Tensor ModelSession::tree_forward(const SpecTree& tree, size_t max_depth, TreeStats* stats) {
    const ModelConfig& cfg = model_.cfg;
    const std::vector<size_t> depth = validate_tree(tree);
    const size_t m = tree.size();
    const size_t d = cfg.d_model;
    const size_t dk = cfg.attn.head_dim;
    size_t deepest = 0;
    for (size_t x = 0; x < m; ++x) {
        if (tree.nodes[x].token >= cfg.vocab_size)
            throw input_error("tree_forward: node token out of range");
        deepest = std::max(deepest, depth[x]);
    }
    if (pos_ + deepest > cfg.max_seq)
        throw input_error("tree_forward: speculation would exceed max_seq");

    Tensor x({m, d});
    for (size_t i = 0; i < m; ++i) {
        const size_t p = pos_ + depth[i] - 1;
        for (size_t c = 0; c < d; ++c)
            x(i, c) = model_.embedding(tree.nodes[i].token, c) + model_.pos_embedding(p, c);
    }
    tree_k_.assign(cfg.n_layers, Tensor());
    tree_v_.assign(cfg.n_layers, Tensor());
    tree_nodes_ = m;

    for (size_t l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights& lw = model_.layers[l];
        Tensor ln1 = layer_norm_forward(x, lw.ln1_g, lw.ln1_b, nullptr);
        Tensor q = matmul(ln1, lw.wq);
        Tensor k = matmul(ln1, lw.wk);
        Tensor v = matmul(ln1, lw.wv);
        tree_k_[l] = k;
        tree_v_[l] = v;
        Tensor concat({m, d});
        for (size_t h = 0; h < cfg.n_heads; ++h) {
            const size_t c0 = h * dk;
            Tensor head = tree_attention_forward(
                states_[l][h], tree, slice_cols(q, c0, c0 + dk), slice_cols(k, c0, c0 + dk),
                slice_cols(v, c0, c0 + dk), model_.layers[l].conv[h], max_depth,
                (l == 0 && h == 0) ? stats : nullptr);
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < dk; ++j) concat(i, c0 + j) = head(i, j);
        }
        Tensor attn_out = matmul(concat, lw.wo);
        for (size_t i = 0; i < x.size(); ++i) x[i] += attn_out[i];
        Tensor ln2 = layer_norm_forward(x, lw.ln2_g, lw.ln2_b, nullptr);
        Tensor pre = matmul(ln2, lw.w1);
        Tensor act({m, pre.cols()});
        for (size_t i = 0; i < pre.size(); ++i) act[i] = gelu(pre[i]);
        Tensor ffn_out = matmul(act, lw.w2);
        for (size_t i = 0; i < x.size(); ++i) x[i] += ffn_out[i];
    }
    Tensor final_out = layer_norm_forward(x, model_.final_ln_g, model_.final_ln_b, nullptr);
    return matmul(final_out, transpose(model_.embedding));
}

void ModelSession::commit_nodes(const SpecTree& tree, const std::vector<size_t>& accepted) {
    const ModelConfig& cfg = model_.cfg;
    if (tree_nodes_ != tree.size() || tree_k_.size() != cfg.n_layers)
        throw contract_error("commit_nodes: no matching tree_forward stash");
    for (size_t idx : accepted)
        if (idx >= tree_nodes_) throw dim_error("commit_nodes: node index out of range");
    check_capacity(accepted.size());
    const size_t dk = cfg.attn.head_dim;
    for (size_t l = 0; l < cfg.n_layers; ++l) {
        for (size_t h = 0; h < cfg.n_heads; ++h) {
            const size_t c0 = h * dk;
            for (size_t idx : accepted)
                states_[l][h].commit_row(tree_k_[l].data() + idx * cfg.d_model + c0,
                                         tree_v_[l].data() + idx * cfg.d_model + c0);
        }
    }
    pos_ += accepted.size();
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

std::vector<size_t> generate_greedy(const ToyModel& model, const std::vector<size_t>& prompt,
                                    size_t n_new) {
    if (prompt.empty()) throw input_error("generate: prompt must be nonempty");
    if (n_new > 0 && prompt.size() + n_new - 1 > model.cfg.max_seq)
        throw input_error("generate: prompt + continuation exceeds max_seq");
    ModelSession session(model);
    Tensor logits = session.prefill(prompt);
    std::vector<size_t> out;
    out.reserve(n_new);
    for (size_t i = 0; i < n_new; ++i) {
        const size_t tok = argmax_row(logits.data(), model.cfg.vocab_size);
        out.push_back(tok);
        if (i + 1 < n_new) logits = session.step(tok);
    }
    return out;
}

std::vector<size_t> generate_speculative(const ToyModel& model, const std::vector<size_t>& prompt,
                                         size_t n_new, const TreeSpecConfig& tree_spec,
                                         uint64_t draft_seed, SpecStats* stats) {
    auto rng = std::make_shared<Rng>(draft_seed);
    const size_t vocab = model.cfg.vocab_size;
    DraftFn draft = [rng, tree_spec, vocab](const std::vector<size_t>&, size_t) {
        return build_tree(tree_spec, *rng, vocab);
    };
    return generate_speculative(model, prompt, n_new, draft, stats);
}

std::vector<size_t> generate_speculative(const ToyModel& model, const std::vector<size_t>& prompt,
                                         size_t n_new, const DraftFn& draft, SpecStats* stats) {
    if (prompt.empty()) throw input_error("generate: prompt must be nonempty");
    if (n_new > 0 && prompt.size() + n_new - 1 > model.cfg.max_seq)
        throw input_error("generate: prompt + continuation exceeds max_seq");
    ModelSession session(model);
    Tensor logits = session.prefill(prompt);
    std::vector<size_t> out;
    out.reserve(n_new);
    std::vector<size_t> prefix = prompt;
    size_t round = 0;
    size_t want = argmax_row(logits.data(), model.cfg.vocab_size);
    while (out.size() < n_new) {
        const SpecTree tree = draft(prefix, round);
        // Near max_seq the speculative probe itself would overflow the
        // position table; fall back to plain greedy steps.
        if (session.pos() + tree_depth(tree) > model.cfg.max_seq) {
            out.push_back(want);
            prefix.push_back(want);
            if (out.size() < n_new) {
                logits = session.step(want);
                want = argmax_row(logits.data(), model.cfg.vocab_size);
            }
            if (stats) {
                ++stats->rounds;
                stats->accepted_lengths.push_back(0);
            }
            ++round;
            continue;
        }
        Tensor node_logits = session.tree_forward(tree);
        std::vector<size_t> node_argmax(tree.size());
        for (size_t i = 0; i < tree.size(); ++i)
            node_argmax[i] =
                argmax_row(node_logits.data() + i * model.cfg.vocab_size, model.cfg.vocab_size);
        const VerifyResult vr = verify_greedy(tree, node_argmax, want);
        if (stats) {
            ++stats->rounds;
            stats->accepted_lengths.push_back(vr.accepted.size());
        }
        ++round;
        // Accepted tokens equal the greedy continuation; emit up to n_new.
        bool done = false;
        for (size_t idx : vr.accepted) {
            out.push_back(tree.nodes[idx].token);
            prefix.push_back(tree.nodes[idx].token);
            if (out.size() == n_new) {
                done = true;
                break;
            }
        }
        if (done) break;
        session.commit_nodes(tree, vr.accepted);
        out.push_back(vr.bonus_token);
        prefix.push_back(vr.bonus_token);
        if (out.size() == n_new) break;
        logits = session.step(vr.bonus_token);
        want = argmax_row(logits.data(), model.cfg.vocab_size);
    }
    return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
    constexpr double kInvSqrt2Pi = 0.3989422804014327;  // 1/sqrt(2*pi)
    return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

size_t argmax_row(const double* row, size_t n) {
    size_t best = 0;
    for (size_t i = 1; i < n; ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

}  // namespace linattn
