#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "linattn/model.hpp"

namespace linattn {

// Synthetic next-token tasks with exact programmatic accuracy oracles.
//  - copy: payload, separator, payload again; loss on the second payload.
//  - induction: a segment repeated twice; loss on the second repeat
//    (minus its first token, which seeds the eval prompt).
enum class TaskKind { copy, induction };

TaskKind task_from_string(std::string_view s);
std::string to_string(TaskKind t);

// One training/eval sequence. Logits rows [loss_begin, loss_end) are under
// the loss; row t predicts tokens[t + 1].
struct TaskInstance {
    std::vector<size_t> tokens;
    size_t loss_begin = 0;
    size_t loss_end = 0;
};

TaskInstance make_task_instance(TaskKind task, const ModelConfig& cfg, Rng& rng);

// Probability of a correct guess with no signal (uniform over the task's
// payload alphabet).
double task_chance_accuracy(TaskKind task, const ModelConfig& cfg);

struct TrainConfig {
    TaskKind task = TaskKind::copy;
    size_t steps = 1000;
    double lr = 0.5;
    size_t dataset_size = 32;   // fixed training set; every step is full-batch
    uint64_t data_seed = 7;     // training set generator
    uint64_t eval_seed = 1007;  // held-out instance generator
    size_t eval_instances = 32;
    size_t eval_every = 0;      // 0 = evaluate only after the last step
};

struct TrainResult {
    std::vector<double> loss_curve;  // mean cross-entropy per step, before that step's update
    double eval_accuracy = 0.0;      // after the last step
    double chance_accuracy = 0.0;
    std::vector<std::pair<size_t, double>> eval_points;  // (step, accuracy) when eval_every > 0
};

// Plain gradient descent (fixed lr, no momentum) on mean cross-entropy
// over the loss regions of a fixed seeded dataset; model updated in
// place. Non-finite loss raises a training error with the failing step.
TrainResult train_synthetic(ToyModel& model, const TrainConfig& tc);

// Fraction of loss-region targets reproduced by greedy autoregressive
// generation on freshly drawn instances. Uses full-recompute prefill per
// generated token so the unmasked debug mode is evaluated honestly.
double evaluate_generation(const ToyModel& model, TaskKind task, uint64_t seed,
                           size_t instances);

}  // namespace linattn
