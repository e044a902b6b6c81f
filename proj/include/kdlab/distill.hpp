// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Layer-wise distillation objective: attention, hidden-state, embedding and
// prediction MSE terms plus the task cross-entropy.

#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "kdlab/model.hpp"

namespace kdlab {

// (student layer i, teacher layer k = i * N_T / N_S), both 1-based.
struct LayerMap {
    std::vector<std::pair<int, int>> pairs;
};

LayerMap layer_map(int n_student, int n_teacher);

// Learnable student-to-teacher width projections. Undefined tensors stand for
// the identity and are used when the widths already agree.
struct ProjectionParams {
    Tensor hidden;     // [d_S, d_T], shared by every mapped layer
    Tensor embedding;  // [d_S, d_T]

    bool identity() const { return !hidden.defined(); }
    std::vector<Tensor> parameters() const;

    // Initialized to the evenly spaced selection matrix (row j is e_{idx[j]}).
    static ProjectionParams for_configs(const ModelConfig& student, const ModelConfig& teacher);
    static ProjectionParams zeros(const ModelConfig& student, const ModelConfig& teacher);
};

enum class AttentionTarget { PreSoftmax, PostSoftmax };

struct LossWeights {
    double att = 1.0;
    double hid = 1.0;
    double embd = 1.0;
    double pred = 1.0;
    double clf = 1.0;
};

struct DistillOptions {
    LossWeights weights;
    AttentionTarget attention = AttentionTarget::PreSoftmax;
};

// Component values are unweighted; l_kd and l_overall apply the weights.
struct KdLossBreakdown {
    double l_att = 0.0;
    double l_hid = 0.0;
    double l_embd = 0.0;
    double l_pred = 0.0;
    double l_kd = 0.0;
    double l_clf = 0.0;
    double l_overall = 0.0;
};

struct KdLoss {
    KdLossBreakdown breakdown;
    Tensor total;  // differentiable l_overall
};

Tensor attention_loss(const ForwardTrace& student, const ForwardTrace& teacher, const LayerMap& map,
                      AttentionTarget target = AttentionTarget::PreSoftmax);
Tensor hidden_loss(const ForwardTrace& student, const ForwardTrace& teacher, const LayerMap& map,
                   const ProjectionParams& proj);
Tensor embedding_loss(const ForwardTrace& student, const ForwardTrace& teacher, const ProjectionParams& proj);
Tensor prediction_loss(const ForwardTrace& student, const ForwardTrace& teacher);
Tensor classification_loss(const ForwardTrace& student, std::span<const int> gold);

// With kd_enabled == false the teacher trace may be null and l_overall == l_clf.
KdLoss overall_loss(const ForwardTrace& student, const ForwardTrace* teacher, std::span<const int> gold,
                    const LayerMap& map, const ProjectionParams& proj, bool kd_enabled,
                    const DistillOptions& opts = {});

}  // namespace kdlab
