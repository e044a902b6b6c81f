// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Post-LN transformer encoder with a sequence- or token-classification head.

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "kdlab/tensor.hpp"

namespace kdlab {

enum class Task { SequenceClassification, TokenClassification };

std::string to_string(Task task);
Task task_from_string(const std::string& name);

struct ModelConfig {
    int n_layers = 2;
    int n_heads = 2;
    int hidden_dim = 8;
    int ffn_dim = 16;
    int vocab_size = 32;
    int max_seq_len = 16;
    int n_classes = 3;
    Task task = Task::SequenceClassification;

    int head_dim() const { return hidden_dim / n_heads; }
    // Throws std::invalid_argument naming the offending field.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

// Number of scalar parameters; depends only on the config.
std::size_t parameter_count(const ModelConfig& cfg);

struct LayerParams {
    Tensor q, q_bias, k, k_bias, v, v_bias, o, o_bias;
    Tensor w1, w1_bias, w2, w2_bias;
    Tensor attn_norm_gamma, attn_norm_beta;
    Tensor ffn_norm_gamma, ffn_norm_beta;
};

struct EncoderModel {
    ModelConfig config;
    Tensor tok_embedding;  // [vocab, d]
    Tensor pos_embedding;  // [max_seq_len, d]
    std::vector<LayerParams> layers;
    Tensor head_w;  // [d, n_classes]
    Tensor head_b;  // [n_classes]

    // Stable order; names follow layer.{i}.{attn|ffn|norm}.*, emb.*, head.*.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;
    Tensor parameter(const std::string& name) const;

    // Deep copy with independent storage.
    EncoderModel clone() const;
    void zero_grad();
    void set_requires_grad(bool flag);
    // FNV-1a over parameter names, shapes and raw bytes.
    std::uint64_t fingerprint() const;
};

EncoderModel init_random(const ModelConfig& cfg, std::uint64_t seed);

struct ForwardOptions {
    double dropout = 0.0;
    std::mt19937_64* rng = nullptr;  // required when dropout > 0
};

// Everything the distillation losses consume. For a batch of B sequences of
// length T: embedding and hidden are [B*T, d], attention tensors are
// [B*h, T, T], logits are [B, C] (sequence task) or [B*T, C] (token task).
// The single-sequence forward() returns [C] logits for the sequence task.
struct ForwardTrace {
    std::size_t batch = 0;
    std::size_t seq_len = 0;
    Tensor embedding;
    std::vector<Tensor> attn_scores;  // scaled QK^T / sqrt(d/h), before softmax
    std::vector<Tensor> attn_probs;
    std::vector<Tensor> hidden;       // block outputs after FFN + residual + norm
    Tensor final_hidden() const { return hidden.empty() ? embedding : hidden.back(); }
    Tensor logits;
};

ForwardTrace forward_batch(const EncoderModel& model, std::span<const std::vector<int>> batch,
                           const ForwardOptions& opts = {});
ForwardTrace forward(const EncoderModel& model, std::span<const int> tokens,
                     const ForwardOptions& opts = {});

// Index of the largest value; ties resolve to the lowest index.
int argmax(std::span<const double> row);

// One class for the sequence task, one tag per position for the token task.
std::vector<int> predict(const EncoderModel& model, std::span<const int> tokens);
std::vector<std::vector<int>> predict_batch(const EncoderModel& model,
                                            std::span<const std::vector<int>> batch);

// Binary checkpoint: magic, JSON config, named float64 arrays. Round-trips bit-exactly.
void save_checkpoint(const EncoderModel& model, const std::filesystem::path& path);
EncoderModel load_checkpoint(const std::filesystem::path& path);

}  // namespace kdlab
