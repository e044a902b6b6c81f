// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "kdlab/init.hpp"
#include "kdlab/train.hpp"

using namespace kdlab;

namespace {

GeneratorParams task_params(int n_per_lang) {
    GeneratorParams p;
    p.n_langs = 2;
    p.n_per_lang = n_per_lang;
    p.seq_len = 8;
    p.keywords_per_class = 3;
    p.filler_symbols = 6;
    p.anchor_ratio = 0.5;
    p.seed = 21;
    return p;
}

struct Fixture {
    SyntheticCorpus train_set = generate(task_params(40), Split::Train);
    Corpus dev = generate(task_params(15), Split::Dev, &train_set.languages).corpus;

    ModelConfig config(int layers) const {
        ModelConfig c;
        c.n_layers = layers;
        c.n_heads = 2;
        c.hidden_dim = 8;
        c.ffn_dim = 16;
        c.vocab_size = task_params(1).vocab_size();
        c.max_seq_len = 8;
        c.n_classes = 3;
        return c;
    }
};

TrainConfig quick(int epochs) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 16;
    c.adam.lr = 3e-3;
    c.seed = 5;
    c.dropout = 0.1;
    return c;
}

TrainRun run_with_losses(const std::vector<double>& losses) {
    TrainRun r;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        KdLossBreakdown b;
        b.l_overall = losses[i];
        r.loss_curve.emplace_back(static_cast<int>(i + 1), b);
    }
    return r;
}

}  // namespace

TEST(AdamW, FirstStepHandComputed) {
    Tensor p = Tensor::from({2}, {1.0, -2.0}, true);
    p.mutable_grad()[0] = 0.5;
    p.mutable_grad()[1] = -4.0;
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.01;
    OptimizerState st = make_optimizer({p}, cfg);
    adamw_step({p}, st);
    // bias-corrected first step moves each weight by lr * sign(g), plus lr * wd * theta
    EXPECT_NEAR(p.at(0), 1.0 - 0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * 0.01 * 1.0, 1e-12);
    EXPECT_NEAR(p.at(1), -2.0 + 0.1 * 4.0 / (4.0 + 1e-8) + 0.1 * 0.01 * 2.0, 1e-12);
    EXPECT_EQ(st.t, 1);
}

TEST(AdamW, SecondStepMatchesMomentFormulas) {
    Tensor p = Tensor::from({1}, {0.3}, true);
    AdamWConfig cfg;
    cfg.lr = 0.01;
    OptimizerState st = make_optimizer({p}, cfg);
    double theta = 0.3, m = 0.0, v = 0.0;
    const double grads[] = {0.2, -0.7, 1.1};
    for (int t = 1; t <= 3; ++t) {
        const double g = grads[t - 1];
        p.mutable_grad()[0] = g;
        adamw_step({p}, st);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1 - std::pow(0.9, t));
        const double vh = v / (1 - std::pow(0.999, t));
        theta -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
        EXPECT_NEAR(p.at(0), theta, 1e-14);
    }
}

TEST(AdamW, DecayIsDecoupledFromGradient) {
    Tensor p = Tensor::from({1}, {2.0}, true);
    p.mutable_grad()[0] = 0.0;
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.5;
    OptimizerState st = make_optimizer({p}, cfg);
    adamw_step({p}, st);
    EXPECT_NEAR(p.at(0), 2.0 - 0.1 * 0.5 * 2.0, 1e-12);
}

TEST(AdamW, NonFiniteGradientLeavesParametersAlone) {
    Tensor a = Tensor::from({1}, {1.0}, true);
    Tensor b = Tensor::from({1}, {2.0}, true);
    a.mutable_grad()[0] = 1.0;
    b.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
    OptimizerState st = make_optimizer({a, b}, AdamWConfig{});
    EXPECT_THROW(adamw_step({a, b}, st), NonFiniteGradient);
    EXPECT_EQ(a.at(0), 1.0);
    EXPECT_EQ(b.at(0), 2.0);
    EXPECT_EQ(st.t, 0);
}

TEST(StepsToThreshold, Oracles) {
    const TrainRun r = run_with_losses({4, 3, 2, 1});
    EXPECT_EQ(steps_to_threshold(r, 2.5, 2), 3);
    EXPECT_EQ(steps_to_threshold(r, 3.5, 2), 2);
    EXPECT_EQ(steps_to_threshold(r, 4.0, 1), 1);
    EXPECT_EQ(steps_to_threshold(r, 3.0, 10), 3);  // prefix means 4, 3.5, 3
    EXPECT_EQ(steps_to_threshold(r, 0.5, 2), std::nullopt);
    EXPECT_THROW(steps_to_threshold(r, 1.0, 0), std::invalid_argument);
}

TEST(TrainConfig, JsonRoundTripAndUnknownKeys) {
    TrainConfig c = quick(7);
    c.distill.attention = AttentionTarget::PostSoftmax;
    c.distill.weights.hid = 0.25;
    nlohmann::json j = c;
    TrainConfig back;
    from_json(j, back);
    EXPECT_EQ(nlohmann::json(back), j);
    j["learning_rate"] = 1.0;
    EXPECT_THROW(from_json(j, back), std::invalid_argument);
    nlohmann::json bad{{"attention_target", "sideways"}};
    EXPECT_THROW(from_json(bad, back), std::invalid_argument);
}

TEST(Train, LearnsAndSelectsBestOnDev) {
    Fixture f;
    EncoderModel m = init_random(f.config(2), 1);
    const TrainRun run = train(m, nullptr, f.train_set.corpus, f.dev, quick(15));
    ASSERT_FALSE(run.dev_curve.empty());
    EXPECT_EQ(run.dev_curve.front().first, 0);
    double best = -1.0;
    int best_step = -1;
    for (const auto& [step, rep] : run.dev_curve) {
        if (rep.score > best) {
            best = rep.score;
            best_step = step;
        }
    }
    EXPECT_EQ(run.best_dev, best);
    EXPECT_EQ(run.best_step, best_step);
    EXPECT_DOUBLE_EQ(evaluate(run.best, f.dev).score, run.best_dev);
    EXPECT_GT(run.best_dev, run.dev_curve.front().second.score);
    EXPECT_GT(run.best_dev, 0.6);
}

TEST(Train, EvaluationCadence) {
    Fixture f;
    EncoderModel m = init_random(f.config(1), 2);
    TrainConfig c = quick(3);
    c.eval_steps = 4;
    const TrainRun run = train(m, nullptr, f.train_set.corpus, f.dev, c);
    // 80 examples in batches of 16: 5 steps per epoch, 15 in total
    EXPECT_EQ(run.steps, 15);
    std::vector<int> steps;
    for (const auto& [s, _] : run.dev_curve) steps.push_back(s);
    EXPECT_EQ(steps, (std::vector<int>{0, 4, 8, 12, 15}));
    c.eval_steps = 0;
    EncoderModel m2 = init_random(f.config(1), 2);
    const TrainRun per_epoch = train(m2, nullptr, f.train_set.corpus, f.dev, c);
    steps.clear();
    for (const auto& [s, _] : per_epoch.dev_curve) steps.push_back(s);
    EXPECT_EQ(steps, (std::vector<int>{0, 5, 10, 15}));
}

TEST(Train, RefinedCadenceNeverLowersBestDev) {
    Fixture f;
    double previous = -1.0;
    for (int k : {8, 4, 2}) {
        EncoderModel m = init_random(f.config(1), 3);
        TrainConfig c = quick(4);
        c.eval_steps = k;
        const TrainRun run = train(m, nullptr, f.train_set.corpus, f.dev, c);
        EXPECT_GE(run.best_dev, previous) << "eval_steps " << k;
        previous = run.best_dev;
    }
}

TEST(Train, DeterministicPerSeed) {
    Fixture f;
    EncoderModel a = init_random(f.config(1), 4);
    EncoderModel b = init_random(f.config(1), 4);
    const TrainRun ra = train(a, nullptr, f.train_set.corpus, f.dev, quick(2));
    const TrainRun rb = train(b, nullptr, f.train_set.corpus, f.dev, quick(2));
    EXPECT_EQ(a.fingerprint(), b.fingerprint());
    EXPECT_EQ(ra.best.fingerprint(), rb.best.fingerprint());
    ASSERT_EQ(ra.loss_curve.size(), rb.loss_curve.size());
    for (std::size_t i = 0; i < ra.loss_curve.size(); ++i)
        EXPECT_EQ(ra.loss_curve[i].second.l_overall, rb.loss_curve[i].second.l_overall);
}

TEST(Train, DistillationLeavesTeacherUntouched) {
    Fixture f;
    const EncoderModel teacher = init_random(f.config(2), 5);
    const std::uint64_t before = teacher.fingerprint();
    ModelConfig sc = f.config(1);
    sc.hidden_dim = 4;
    sc.ffn_dim = 8;
    EncoderModel student = init_random(sc, 6);
    TrainConfig c = quick(2);
    c.kd_enabled = true;
    const TrainRun run = train(student, &teacher, f.train_set.corpus, f.dev, c);
    EXPECT_EQ(teacher.fingerprint(), before);
    ASSERT_FALSE(run.loss_curve.empty());
    EXPECT_GT(run.loss_curve.front().second.l_kd, 0.0);
    for (const auto& [_, b] : run.loss_curve) {
        EXPECT_GE(b.l_kd, 0.0);
        EXPECT_GE(b.l_overall, b.l_clf - 1e-12);
    }
}

TEST(Train, RejectsBadArguments) {
    Fixture f;
    EncoderModel m = init_random(f.config(1), 7);
    const EncoderModel t = init_random(f.config(2), 8);
    TrainConfig c = quick(1);
    EXPECT_THROW(train(m, &t, f.train_set.corpus, f.dev, c), std::invalid_argument);
    c.kd_enabled = true;
    EXPECT_THROW(train(m, nullptr, f.train_set.corpus, f.dev, c), std::invalid_argument);
    ModelConfig other = f.config(2);
    other.n_heads = 4;
    const EncoderModel t4 = init_random(other, 9);
    EXPECT_THROW(train(m, &t4, f.train_set.corpus, f.dev, c), IncompatibleConfig);
    EXPECT_THROW(train(m, nullptr, Corpus{}, f.dev, quick(1)), std::invalid_argument);
}

TEST(Train, TokenTaskUsesSpanF1) {
    GeneratorParams p;
    p.task = Task::TokenClassification;
    p.n_langs = 2;
    p.n_per_lang = 30;
    p.seq_len = 8;
    p.seed = 2;
    const auto tr = generate(p);
    GeneratorParams pd = p;
    pd.n_per_lang = 10;
    const Corpus dev = generate(pd, Split::Dev, &tr.languages).corpus;
    ModelConfig c;
    c.task = Task::TokenClassification;
    c.n_classes = p.label_count();
    c.vocab_size = p.vocab_size();
    c.max_seq_len = 8;
    EncoderModel m = init_random(c, 3);
    const TrainRun run = train(m, nullptr, tr.corpus, dev, quick(2));
    EXPECT_EQ(run.dev_curve.front().second.metric, "span_f1");
}

TEST(ZeroShot, HalfDepthCopyEvaluatesWithoutTraining) {
    Fixture f;
    const EncoderModel t = init_random(f.config(2), 10);
    const EvalReport r = zero_shot_eval(t, f.config(1), f.dev, 1);
    const EncoderModel copied = copy_weights(t, init_random(f.config(1), 1), build_copy_plan(t.config, f.config(1)));
    EXPECT_DOUBLE_EQ(r.score, evaluate(copied, f.dev).score);
}

TEST(Pretrain, HeadStaysAtInitAndBodyMoves) {
    Fixture f;
    PretrainConfig short_run;
    short_run.max_steps = 1;
    short_run.seed = 3;
    PretrainConfig longer = short_run;
    longer.max_steps = 6;
    const PretrainRun a = make_base(f.config(2), f.train_set.corpus, short_run);
    const PretrainRun b = make_base(f.config(2), f.train_set.corpus, longer);
    EXPECT_EQ(a.loss_curve.size(), 1u);
    EXPECT_EQ(b.loss_curve.size(), 6u);
    EXPECT_TRUE(std::equal(a.base.head_w.values().begin(), a.base.head_w.values().end(),
                           b.base.head_w.values().begin()));
    EXPECT_NE(a.base.fingerprint(), b.base.fingerprint());
    EXPECT_TRUE(std::isfinite(b.loss_curve.back().second));
}

TEST(TrainLog, CsvLayout) {
    Fixture f;
    EncoderModel m = init_random(f.config(1), 11);
    const TrainRun run = train(m, nullptr, f.train_set.corpus, f.dev, quick(1));
    const auto path = std::filesystem::temp_directory_path() / "kdlab_test_log.csv";
    write_train_log(run, path);
    std::ifstream in(path);
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    EXPECT_EQ(header, "step,l_att,l_hid,l_embd,l_pred,l_kd,l_clf,l_overall,dev");
    EXPECT_EQ(first.rfind("0,", 0), 0u);
    std::filesystem::remove(path);
}
