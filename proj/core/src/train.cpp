#include "linattn/train.hpp"

#include <cmath>

#include "linattn/errors.hpp"

namespace linattn {

namespace {

void add_grads(ModelGrads& dst, const ModelGrads& src) {
    auto add = [](Tensor& a, const Tensor& b) {
        for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    add(dst.embedding, src.embedding);
    add(dst.pos_embedding, src.pos_embedding);
    for (size_t l = 0; l < dst.layers.size(); ++l) {
        add(dst.layers[l].ln1_g, src.layers[l].ln1_g);
        add(dst.layers[l].ln1_b, src.layers[l].ln1_b);
        add(dst.layers[l].wq, src.layers[l].wq);
        add(dst.layers[l].wk, src.layers[l].wk);
        add(dst.layers[l].wv, src.layers[l].wv);
        add(dst.layers[l].wo, src.layers[l].wo);
        for (size_t h = 0; h < dst.layers[l].conv.size(); ++h)
            add(dst.layers[l].conv[h].taps, src.layers[l].conv[h].taps);
        add(dst.layers[l].ln2_g, src.layers[l].ln2_g);
        add(dst.layers[l].ln2_b, src.layers[l].ln2_b);
        add(dst.layers[l].w1, src.layers[l].w1);
        add(dst.layers[l].w2, src.layers[l].w2);
    }
    add(dst.final_ln_g, src.final_ln_g);
    add(dst.final_ln_b, src.final_ln_b);
}

// Mean cross-entropy over the loss region and its logits gradient,
// already scaled by 1/(region size * sequences) so summed sequence grads
// average correctly.
double ce_loss_and_grad(const Tensor& logits, const TaskInstance& inst, size_t sequences,
                        Tensor& dlogits) {
    const size_t vocab = logits.cols();
    const size_t region = inst.loss_end - inst.loss_begin;
    const double inv = 1.0 / (static_cast<double>(region) * static_cast<double>(sequences));
    double loss = 0.0;
    for (size_t row = inst.loss_begin; row < inst.loss_end; ++row) {
        const double* z = logits.data() + row * vocab;
        const size_t target = inst.tokens[row + 1];
        double mx = z[0];
        for (size_t j = 1; j < vocab; ++j) mx = std::max(mx, z[j]);
        double denom = 0.0;
        for (size_t j = 0; j < vocab; ++j) denom += std::exp(z[j] - mx);
        loss += -(z[target] - mx - std::log(denom));
        double* dz = dlogits.data() + row * vocab;
        for (size_t j = 0; j < vocab; ++j) dz[j] = std::exp(z[j] - mx) / denom * inv;
        dz[target] -= inv;
    }
    return loss / static_cast<double>(region);
}

}  // namespace

TaskKind task_from_string(std::string_view s) {
    if (s == "copy") return TaskKind::copy;
    if (s == "induction") return TaskKind::induction;
    throw config_error("unknown task '" + std::string(s) + "' (expected copy or induction)");
}

std::string to_string(TaskKind t) {
    switch (t) {
        case TaskKind::copy: return "copy";
        case TaskKind::induction: return "induction";
    }
    throw config_error("invalid TaskKind value");
}

TaskInstance make_task_instance(TaskKind task, const ModelConfig& cfg, Rng& rng) {
    TaskInstance inst;
    if (task == TaskKind::copy) {
        if (cfg.vocab_size < 3 || cfg.max_seq < 5)
            throw config_error("copy task: needs vocab >= 3 and max_seq >= 5");
        const size_t alphabet = cfg.vocab_size - 1;  // last id is the separator
        const size_t sep = cfg.vocab_size - 1;
        const size_t len = (cfg.max_seq - 1) / 2;
        inst.tokens.reserve(2 * len + 1);
        for (size_t i = 0; i < len; ++i) inst.tokens.push_back(rng.uniform_int(alphabet));
        inst.tokens.push_back(sep);
        for (size_t i = 0; i < len; ++i) inst.tokens.push_back(inst.tokens[i]);
        inst.loss_begin = len;       // separator row predicts the first copy token
        inst.loss_end = 2 * len;
    } else {
        if (cfg.vocab_size < 2 || cfg.max_seq < 4)
            throw config_error("induction task: needs vocab >= 2 and max_seq >= 4");
        const size_t len = cfg.max_seq / 2;
        inst.tokens.reserve(2 * len);
        for (size_t i = 0; i < len; ++i) inst.tokens.push_back(rng.uniform_int(cfg.vocab_size));
        for (size_t i = 0; i < len; ++i) inst.tokens.push_back(inst.tokens[i]);
        inst.loss_begin = len;       // the repeat's first token seeds the eval prompt
        inst.loss_end = 2 * len - 1;
    }
    return inst;
}

double task_chance_accuracy(TaskKind task, const ModelConfig& cfg) {
    const size_t alphabet = task == TaskKind::copy ? cfg.vocab_size - 1 : cfg.vocab_size;
    return 1.0 / static_cast<double>(alphabet);
}

TrainResult train_synthetic(ToyModel& model, const TrainConfig& tc) {
    model.cfg.validate();
    if (tc.dataset_size == 0) throw config_error("train: dataset_size must be positive");

    Rng data_rng(tc.data_seed);
    std::vector<TaskInstance> dataset;
    dataset.reserve(tc.dataset_size);
    for (size_t i = 0; i < tc.dataset_size; ++i)
        dataset.push_back(make_task_instance(tc.task, model.cfg, data_rng));

    TrainResult result;
    result.loss_curve.reserve(tc.steps);
    result.chance_accuracy = task_chance_accuracy(tc.task, model.cfg);

    // Runaway updates can keep the recorded loss finite (layer norm keeps
    // rescaling activations) and only overflow once generation runs the
    // model; that is still divergence and reports as such.
    auto guarded_eval = [&](size_t after_step) {
        try {
            return evaluate_generation(model, tc.task, tc.eval_seed, tc.eval_instances);
        } catch (const numeric_error& e) {
            throw train_error("training diverged: non-finite values evaluating after step " +
                              std::to_string(after_step) + " (task " + to_string(tc.task) +
                              ", lr " + std::to_string(tc.lr) + "): " + e.what());
        }
    };

    for (size_t step = 0; step < tc.steps; ++step) {
        ModelGrads total = zero_grads(model);
        double loss_sum = 0.0;
        try {
            for (const TaskInstance& inst : dataset) {
                ModelCacheFwd cache;
                Tensor logits = model_prefill(model, inst.tokens, &cache);
                Tensor dlogits({logits.rows(), logits.cols()});
                loss_sum += ce_loss_and_grad(logits, inst, dataset.size(), dlogits);
                ModelGrads g = model_backward(model, cache, dlogits);
                add_grads(total, g);
            }
        } catch (const numeric_error& e) {
            // Exploding parameters can trip a finiteness check inside the
            // forward pass before the loss itself goes non-finite.
            throw train_error("training diverged at step " + std::to_string(step) + " (task " +
                              to_string(tc.task) + ", lr " + std::to_string(tc.lr) +
                              "): " + e.what());
        }
        const double loss = loss_sum / static_cast<double>(dataset.size());
        if (!std::isfinite(loss))
            throw train_error("training diverged: non-finite loss at step " +
                              std::to_string(step) + " (task " + to_string(tc.task) +
                              ", lr " + std::to_string(tc.lr) + ")");
        result.loss_curve.push_back(loss);
        apply_grads(model, total, -tc.lr);
        if (tc.eval_every > 0 && (step + 1) % tc.eval_every == 0 && step + 1 < tc.steps)
            result.eval_points.emplace_back(step + 1, guarded_eval(step + 1));
    }

    result.eval_accuracy = guarded_eval(tc.steps);
    if (tc.eval_every > 0) result.eval_points.emplace_back(tc.steps, result.eval_accuracy);
    return result;
}

double evaluate_generation(const ToyModel& model, TaskKind task, uint64_t seed,
                           size_t instances) {
    if (instances == 0) throw config_error("evaluate: instances must be positive");
    Rng rng(seed);
    size_t correct = 0, total = 0;
    for (size_t i = 0; i < instances; ++i) {
        const TaskInstance inst = make_task_instance(task, model.cfg, rng);
        std::vector<size_t> seq(inst.tokens.begin(),
                                inst.tokens.begin() + static_cast<ptrdiff_t>(inst.loss_begin + 1));
        const size_t n_gen = inst.loss_end - inst.loss_begin;
        for (size_t g = 0; g < n_gen; ++g) {
            const Tensor logits = model_prefill(model, seq);
            const size_t tok =
                argmax_row(logits.data() + (seq.size() - 1) * logits.cols(), logits.cols());
            if (tok == inst.tokens[seq.size()]) ++correct;
            ++total;
            seq.push_back(tok);
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace linattn
