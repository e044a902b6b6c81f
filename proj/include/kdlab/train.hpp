// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// AdamW, the fine-tuning / distillation loop with best-on-dev selection,
// masked-token pretraining of a base encoder, and convergence bookkeeping.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "kdlab/data.hpp"
#include "kdlab/distill.hpp"
#include "kdlab/metrics.hpp"
#include "kdlab/model.hpp"

namespace kdlab {

class NonFiniteGradient : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AdamWConfig {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

struct OptimizerState {
    AdamWConfig config;
    std::int64_t t = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

OptimizerState make_optimizer(const std::vector<Tensor>& params, const AdamWConfig& config);

// One decoupled-weight-decay Adam update using each tensor's gradient buffer
// (a missing buffer counts as zero). `lr` overrides config.lr when scheduling.
// Throws NonFiniteGradient before touching any parameter.
void adamw_step(const std::vector<Tensor>& params, OptimizerState& state, std::optional<double> lr = std::nullopt,
                const std::vector<std::string>* names = nullptr);

struct TrainConfig {
    int epochs = 30;
    int max_steps = 0;  // 0 = no cap
    int batch_size = 32;
    AdamWConfig adam;
    bool linear_decay = false;
    double dropout = 0.1;
    int eval_steps = 0;  // 0 = evaluate once per epoch
    std::uint64_t seed = 0;
    bool kd_enabled = false;
    DistillOptions distill;
    int smoothing_window = 10;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
// Unknown keys are rejected.
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainRun {
    std::vector<std::pair<int, KdLossBreakdown>> loss_curve;
    std::vector<std::pair<int, EvalReport>> dev_curve;  // includes step 0
    int best_step = 0;
    double best_dev = 0.0;
    EncoderModel best;
    int steps = 0;
    std::uint64_t seed = 0;
};

// macro_f1 for the sequence task, lenient span_f1 for the token task.
EvalReport evaluate(const EncoderModel& model, const Corpus& corpus);
std::vector<std::vector<int>> predict_corpus(const EncoderModel& model, const Corpus& corpus);

// Fine-tunes (or distills into) `student`, which is left at its final state;
// the best-on-dev snapshot is in the returned run.
TrainRun train(EncoderModel& student, const EncoderModel* teacher, const Corpus& train_set, const Corpus& dev_set,
               const TrainConfig& config);

// First logged step whose trailing-window mean of l_overall is <= tau. Early
// points average over the prefix available so far.
std::optional<int> steps_to_threshold(const TrainRun& run, double tau, int window = 10);

// Copies the teacher into a freshly initialized student of `student_cfg` and
// evaluates it with no training steps.
EvalReport zero_shot_eval(const EncoderModel& teacher, const ModelConfig& student_cfg, const Corpus& corpus,
                          std::uint64_t seed = 0);

struct PretrainConfig {
    int epochs = 10;
    int max_steps = 0;
    int batch_size = 32;
    AdamWConfig adam{1e-3};
    double mask_prob = 0.15;
    double dropout = 0.1;
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

struct PretrainRun {
    EncoderModel base;
    std::vector<std::pair<int, double>> loss_curve;
};

// Masked-token pretraining of the encoder body on unlabeled text. Masked
// positions (never [CLS]) are replaced by [MASK] and predicted through a
// separate output layer that is discarded afterwards; the task head stays at
// its random initialization.
PretrainRun make_base(const ModelConfig& cfg, const Corpus& corpus, const PretrainConfig& config);

// CSV: step,l_att,l_hid,l_embd,l_pred,l_kd,l_clf,l_overall,dev (dev empty when not evaluated).
void write_train_log(const TrainRun& run, const std::filesystem::path& path);

}  // namespace kdlab
