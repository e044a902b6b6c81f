// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Student initialization by copying teacher weights. Student encoder layer i
// (1-based) receives teacher layer i * N_T / N_S; when the student is
// narrower, matrices are cut down to evenly spaced rows and columns.

#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

#include "kdlab/model.hpp"

namespace kdlab {

class IncompatibleConfig : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class CopyScope {
    WholeBlock,     // attention projections, FFN and both norms
    AttentionOnly,  // q/k/v/o projections and their biases only
};

struct DimMap {
    bool identity = true;
    std::vector<int> hidden;  // teacher hidden indices kept, one per student unit
    std::vector<int> ffn;     // teacher FFN indices kept
};

struct CopyPlan {
    std::vector<std::pair<int, int>> layer_pairs;  // (student layer, teacher layer), 1-based
    DimMap dim_map;
    bool copy_embedding = true;
    bool copy_head = true;
    CopyScope scope = CopyScope::WholeBlock;
};

// floor(j * d_teacher / d_student) for j in [0, d_student).
std::vector<int> slice_indices(int d_teacher, int d_student);

CopyPlan build_copy_plan(const ModelConfig& teacher, const ModelConfig& student);

Tensor slice_matrix(const Tensor& w, const std::vector<int>& rows, const std::vector<int>& cols);
Tensor slice_bias(const Tensor& b, const std::vector<int>& rows);

// Returns a copy of `student` whose planned parameters are overwritten with
// (sliced) teacher values. Parameters outside the plan keep their values.
EncoderModel copy_weights(const EncoderModel& teacher, const EncoderModel& student, const CopyPlan& plan);

}  // namespace kdlab
