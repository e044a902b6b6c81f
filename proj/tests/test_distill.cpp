// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "kdlab/distill.hpp"
#include "kdlab/init.hpp"

using namespace kdlab;

namespace {

ModelConfig cfg(int layers, int d) {
    ModelConfig c;
    c.n_layers = layers;
    c.n_heads = 2;
    c.hidden_dim = d;
    c.ffn_dim = 2 * d;
    c.vocab_size = 20;
    c.max_seq_len = 6;
    c.n_classes = 3;
    return c;
}

ForwardTrace trace_with(std::vector<Tensor> attn, std::vector<Tensor> hidden, Tensor embedding, Tensor logits) {
    ForwardTrace t;
    t.attn_scores = attn;
    t.attn_probs = attn;
    t.hidden = std::move(hidden);
    t.embedding = std::move(embedding);
    t.logits = std::move(logits);
    return t;
}

std::vector<std::vector<int>> random_batch(std::mt19937_64& rng, int n, int len, int vocab) {
    std::uniform_int_distribution<int> tok(2, vocab - 1);
    std::vector<std::vector<int>> b(n, std::vector<int>(len));
    for (auto& seq : b) {
        seq[0] = 0;
        for (int i = 1; i < len; ++i) seq[i] = tok(rng);
    }
    return b;
}

}  // namespace

TEST(LayerMap, Oracles) {
    EXPECT_EQ(layer_map(2, 4).pairs, (std::vector<std::pair<int, int>>{{1, 2}, {2, 4}}));
    const auto p = layer_map(6, 12).pairs;
    ASSERT_EQ(p.size(), 6u);
    for (int i = 1; i <= 6; ++i) EXPECT_EQ(p[i - 1], std::make_pair(i, 2 * i));
    const auto id = layer_map(3, 3).pairs;
    for (int i = 1; i <= 3; ++i) EXPECT_EQ(id[i - 1], std::make_pair(i, i));
    EXPECT_THROW(layer_map(3, 4), IncompatibleConfig);
}

TEST(AttentionLoss, ZerosAgainstOnes) {
    const ForwardTrace s = trace_with({Tensor::zeros({2, 3, 3})}, {}, Tensor(), Tensor());
    const ForwardTrace t = trace_with({Tensor::full({2, 3, 3}, 1.0)}, {}, Tensor(), Tensor());
    EXPECT_DOUBLE_EQ(attention_loss(s, t, layer_map(1, 1)).item(), 1.0);
    EXPECT_DOUBLE_EQ(attention_loss(s, t, layer_map(1, 1), AttentionTarget::PostSoftmax).item(), 1.0);
}

TEST(HiddenLoss, ZeroProjectionGivesMeanSquaredTeacher) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    std::vector<double> hv(3 * 8);
    double sq = 0.0;
    for (auto& v : hv) {
        v = n(rng);
        sq += v * v;
    }
    const ForwardTrace t = trace_with({}, {Tensor::from({3, 8}, hv)}, Tensor(), Tensor());
    const ForwardTrace s = trace_with({}, {Tensor::full({3, 4}, 0.7)}, Tensor(), Tensor());
    const ProjectionParams proj = ProjectionParams::zeros(cfg(1, 4), cfg(1, 8));
    EXPECT_NEAR(hidden_loss(s, t, layer_map(1, 1), proj).item(), sq / hv.size(), 1e-12);
}

TEST(EmbeddingLoss, ConstantShift) {
    const Tensor e = Tensor::from({2, 2}, {1, -2, 0.5, 3});
    const ForwardTrace t = trace_with({}, {}, e, Tensor());
    const ForwardTrace s = trace_with({}, {}, add_scalar(e, 0.25), Tensor());
    EXPECT_NEAR(embedding_loss(s, t, ProjectionParams{}).item(), 0.0625, 1e-15);
}

TEST(PredictionLoss, Oracles) {
    const Tensor z = Tensor::from({1, 2}, {0.3, -1});
    EXPECT_EQ(prediction_loss(trace_with({}, {}, Tensor(), z), trace_with({}, {}, Tensor(), z)).item(), 0.0);
    const ForwardTrace s = trace_with({}, {}, Tensor(), Tensor::from({1, 2}, {0, 0}));
    const ForwardTrace t = trace_with({}, {}, Tensor(), Tensor::from({1, 2}, {2, 0}));
    EXPECT_DOUBLE_EQ(prediction_loss(s, t).item(), 2.0);
}

TEST(OverallLoss, WithoutKdEqualsClassificationLoss) {
    const EncoderModel m = init_random(cfg(2, 8), 2);
    std::mt19937_64 rng(2);
    const auto batch = random_batch(rng, 4, 5, 20);
    const std::vector<int> gold{0, 1, 2, 1};
    const ForwardTrace tr = forward_batch(m, batch);
    const KdLoss l = overall_loss(tr, nullptr, gold, layer_map(2, 2), ProjectionParams{}, false);
    EXPECT_EQ(l.breakdown.l_overall, l.breakdown.l_clf);
    EXPECT_EQ(l.breakdown.l_overall, classification_loss(tr, gold).item());
}

TEST(OverallLoss, SelfDistillationIsExactlyZero) {
    const EncoderModel t = init_random(cfg(2, 8), 3);
    const EncoderModel s = copy_weights(t, init_random(cfg(2, 8), 4), build_copy_plan(t.config, t.config));
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto batch = random_batch(rng, 3, 5, 20);
        const std::vector<int> gold{0, 1, 2};
        const ForwardTrace ts = forward_batch(t, batch);
        const ForwardTrace ss = forward_batch(s, batch);
        const KdLoss l = overall_loss(ss, &ts, gold, layer_map(2, 2), ProjectionParams{}, true);
        EXPECT_EQ(l.breakdown.l_att, 0.0);
        EXPECT_EQ(l.breakdown.l_hid, 0.0);
        EXPECT_EQ(l.breakdown.l_embd, 0.0);
        EXPECT_EQ(l.breakdown.l_pred, 0.0);
        EXPECT_EQ(l.breakdown.l_overall, l.breakdown.l_clf);
    }
}

TEST(OverallLoss, KdComposition) {
    const EncoderModel t = init_random(cfg(4, 8), 5);
    const EncoderModel s = init_random(cfg(2, 8), 6);
    std::mt19937_64 rng(5);
    const auto batch = random_batch(rng, 2, 4, 20);
    const std::vector<int> gold{2, 0};
    const ForwardTrace ts = forward_batch(t, batch);
    const ForwardTrace ss = forward_batch(s, batch);
    DistillOptions opts;
    opts.weights.att = 0.5;
    opts.weights.clf = 2.0;
    const KdLoss l = overall_loss(ss, &ts, gold, layer_map(2, 4), ProjectionParams{}, true, opts);
    const auto& b = l.breakdown;
    EXPECT_NEAR(b.l_kd, 0.5 * b.l_att + b.l_hid + b.l_embd + b.l_pred, 1e-12);
    EXPECT_NEAR(b.l_overall, b.l_kd + 2.0 * b.l_clf, 1e-12);
    EXPECT_THROW(overall_loss(ss, nullptr, gold, layer_map(2, 4), ProjectionParams{}, true), std::invalid_argument);
}

TEST(OverallLoss, FullLossGradientMatchesFiniteDifferences) {
    const EncoderModel t = init_random(cfg(4, 8), 7);
    const EncoderModel s = init_random(cfg(2, 4), 8);
    const ProjectionParams proj = ProjectionParams::for_configs(s.config, t.config);
    std::mt19937_64 rng(7);
    const auto batch = random_batch(rng, 2, 4, 20);
    const std::vector<int> gold{1, 2};
    ForwardTrace ts;
    {
        NoGradGuard g;
        ts = forward_batch(t, batch);
    }
    auto loss = [&] { return overall_loss(forward_batch(s, batch), &ts, gold, layer_map(2, 4), proj, true).total; };
    for (const auto& [name, p] : s.named_parameters()) EXPECT_LT(grad_check(loss, p), 1e-3) << name;
    EXPECT_LT(grad_check(loss, proj.hidden), 1e-3);
    EXPECT_LT(grad_check(loss, proj.embedding), 1e-3);
}

TEST(Projection, SelectionMatrixInit) {
    const ProjectionParams p = ProjectionParams::for_configs(cfg(2, 4), cfg(4, 8));
    ASSERT_FALSE(p.identity());
    EXPECT_EQ(p.hidden.shape(), (Shape{4, 8}));
    const auto idx = slice_indices(8, 4);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 8; ++c)
            EXPECT_EQ(p.hidden.at(r * 8 + c), static_cast<int>(c) == idx[r] ? 1.0 : 0.0);
    EXPECT_TRUE(ProjectionParams::for_configs(cfg(2, 8), cfg(4, 8)).identity());
}
