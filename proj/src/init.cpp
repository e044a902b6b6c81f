// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdlab/init.hpp"

#include <algorithm>
#include <numeric>

namespace kdlab {

std::vector<int> slice_indices(int d_teacher, int d_student) {
    if (d_student < 1 || d_teacher < 1) throw std::invalid_argument("slice_indices: dimensions must be >= 1");
    if (d_student > d_teacher) {
        throw std::invalid_argument("slice_indices: student dimension " + std::to_string(d_student) +
                                    " exceeds teacher dimension " + std::to_string(d_teacher));
    }
    std::vector<int> idx(d_student);
    for (int j = 0; j < d_student; ++j) {
        idx[j] = static_cast<int>(static_cast<long long>(j) * d_teacher / d_student);
    }
    return idx;
}

CopyPlan build_copy_plan(const ModelConfig& teacher, const ModelConfig& student) {
    teacher.validate();
    student.validate();
    auto fail = [](const std::string& what) { throw IncompatibleConfig("copy plan: " + what); };
    if (teacher.n_layers % student.n_layers != 0) {
        fail("n_layers: teacher " + std::to_string(teacher.n_layers) + " is not a multiple of student " +
             std::to_string(student.n_layers));
    }
    if (teacher.hidden_dim % student.hidden_dim != 0) {
        fail("hidden_dim: teacher " + std::to_string(teacher.hidden_dim) + " is not a multiple of student " +
             std::to_string(student.hidden_dim));
    }
    if (teacher.ffn_dim % student.ffn_dim != 0) {
        fail("ffn_dim: teacher " + std::to_string(teacher.ffn_dim) + " is not a multiple of student " +
             std::to_string(student.ffn_dim));
    }
    if (teacher.n_heads != student.n_heads) {
        fail("n_heads: teacher " + std::to_string(teacher.n_heads) + " vs student " +
             std::to_string(student.n_heads));
    }
    if (teacher.vocab_size != student.vocab_size) fail("vocab_size differs");
    if (teacher.n_classes != student.n_classes) fail("n_classes differs");
    if (teacher.task != student.task) fail("task differs");
    if (student.max_seq_len > teacher.max_seq_len) fail("max_seq_len: student exceeds teacher");

    CopyPlan plan;
    const int ratio = teacher.n_layers / student.n_layers;
    for (int i = 1; i <= student.n_layers; ++i) plan.layer_pairs.emplace_back(i, i * ratio);
    if (teacher.hidden_dim != student.hidden_dim || teacher.ffn_dim != student.ffn_dim) {
        plan.dim_map.identity = false;
        plan.dim_map.hidden = slice_indices(teacher.hidden_dim, student.hidden_dim);
        plan.dim_map.ffn = slice_indices(teacher.ffn_dim, student.ffn_dim);
    }
    return plan;
}

Tensor slice_matrix(const Tensor& w, const std::vector<int>& rows, const std::vector<int>& cols) {
    if (w.rank() != 2) throw DimensionError("slice_matrix: expected a matrix, got " + shape_str(w.shape()));
    const std::size_t a = w.dim(0), b = w.dim(1);
    auto check = [](const std::vector<int>& idx, std::size_t limit, const char* axis) {
        for (int i : idx) {
            if (i < 0 || static_cast<std::size_t>(i) >= limit) {
                throw std::out_of_range(std::string("slice_matrix: ") + axis + " index " + std::to_string(i) +
                                        " outside [0," + std::to_string(limit) + ")");
            }
        }
    };
    check(rows, a, "row");
    check(cols, b, "column");
    std::vector<double> out;
    out.reserve(rows.size() * cols.size());
    const auto v = w.values();
    for (int r : rows)
        for (int c : cols) out.push_back(v[static_cast<std::size_t>(r) * b + static_cast<std::size_t>(c)]);
    return Tensor::from({rows.size(), cols.size()}, std::move(out), w.requires_grad());
}

Tensor slice_bias(const Tensor& b, const std::vector<int>& rows) {
    if (b.rank() != 1) throw DimensionError("slice_bias: expected a vector, got " + shape_str(b.shape()));
    std::vector<double> out;
    out.reserve(rows.size());
    for (int r : rows) {
        if (r < 0 || static_cast<std::size_t>(r) >= b.size()) {
            throw std::out_of_range("slice_bias: index " + std::to_string(r) + " outside [0," +
                                    std::to_string(b.size()) + ")");
        }
        out.push_back(b.values()[static_cast<std::size_t>(r)]);
    }
    return Tensor::from({rows.size()}, std::move(out), b.requires_grad());
}

namespace {

std::vector<int> iota_indices(std::size_t n) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

void assign(Tensor dst, const Tensor& src, const char* name) {
    if (dst.shape() != src.shape()) {
        throw IncompatibleConfig(std::string("copy_weights: ") + name + " shape " + shape_str(src.shape()) +
                                 " does not fit student " + shape_str(dst.shape()));
    }
    std::copy(src.values().begin(), src.values().end(), dst.mutable_values().begin());
}

}  // namespace

EncoderModel copy_weights(const EncoderModel& teacher, const EncoderModel& student, const CopyPlan& plan) {
    const auto& tc = teacher.config;
    const auto& sc = student.config;
    for (const auto& [i, j] : plan.layer_pairs) {
        if (i < 1 || i > sc.n_layers || j < 1 || j > tc.n_layers) {
            throw IncompatibleConfig("copy_weights: layer pair (" + std::to_string(i) + "," + std::to_string(j) +
                                     ") outside the models' layer ranges");
        }
    }
    const std::vector<int> hid = plan.dim_map.identity ? iota_indices(tc.hidden_dim) : plan.dim_map.hidden;
    const std::vector<int> ffn = plan.dim_map.identity ? iota_indices(tc.ffn_dim) : plan.dim_map.ffn;
    if (hid.size() != static_cast<std::size_t>(sc.hidden_dim) || ffn.size() != static_cast<std::size_t>(sc.ffn_dim)) {
        throw IncompatibleConfig("copy_weights: dimension map does not match the student config");
    }

    EncoderModel out = student.clone();
    if (plan.copy_embedding) {
        assign(out.tok_embedding, slice_matrix(teacher.tok_embedding, iota_indices(sc.vocab_size), hid), "emb.tok");
        assign(out.pos_embedding, slice_matrix(teacher.pos_embedding, iota_indices(sc.max_seq_len), hid), "emb.pos");
    }
    for (const auto& [i, j] : plan.layer_pairs) {
        const LayerParams& t = teacher.layers[static_cast<std::size_t>(j - 1)];
        LayerParams& s = out.layers[static_cast<std::size_t>(i - 1)];
        assign(s.q, slice_matrix(t.q, hid, hid), "attn.q");
        assign(s.q_bias, slice_bias(t.q_bias, hid), "attn.q.bias");
        assign(s.k, slice_matrix(t.k, hid, hid), "attn.k");
        assign(s.k_bias, slice_bias(t.k_bias, hid), "attn.k.bias");
        assign(s.v, slice_matrix(t.v, hid, hid), "attn.v");
        assign(s.v_bias, slice_bias(t.v_bias, hid), "attn.v.bias");
        assign(s.o, slice_matrix(t.o, hid, hid), "attn.o");
        assign(s.o_bias, slice_bias(t.o_bias, hid), "attn.o.bias");
        if (plan.scope == CopyScope::AttentionOnly) continue;
        assign(s.w1, slice_matrix(t.w1, hid, ffn), "ffn.w1");
        assign(s.w1_bias, slice_bias(t.w1_bias, ffn), "ffn.w1.bias");
        assign(s.w2, slice_matrix(t.w2, ffn, hid), "ffn.w2");
        assign(s.w2_bias, slice_bias(t.w2_bias, hid), "ffn.w2.bias");
        assign(s.attn_norm_gamma, slice_bias(t.attn_norm_gamma, hid), "norm.attn.gamma");
        assign(s.attn_norm_beta, slice_bias(t.attn_norm_beta, hid), "norm.attn.beta");
        assign(s.ffn_norm_gamma, slice_bias(t.ffn_norm_gamma, hid), "norm.ffn.gamma");
        assign(s.ffn_norm_beta, slice_bias(t.ffn_norm_beta, hid), "norm.ffn.beta");
    }
    if (plan.copy_head) {
        assign(out.head_w, slice_matrix(teacher.head_w, hid, iota_indices(sc.n_classes)), "head.w");
        assign(out.head_b, teacher.head_b, "head.b");
    }
    return out;
}

}  // namespace kdlab
