// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>
#include <string>
#include <vector>

#include "kdlab/metrics.hpp"

using namespace kdlab;

using Tags = std::vector<std::string>;

TEST(MacroF1, PerfectPrediction) {
    const std::vector<int> g{0, 1, 2, 2, 1};
    EXPECT_DOUBLE_EQ(macro_f1(g, g).score, 1.0);
}

TEST(MacroF1, HandComputed) {
    const std::vector<int> gold{0, 0, 1, 1};
    const std::vector<int> pred{0, 1, 1, 1};
    const EvalReport r = macro_f1(gold, pred);
    EXPECT_NEAR(r.score, (2.0 / 3.0 + 4.0 / 5.0) / 2.0, 1e-12);
    EXPECT_EQ(r.per_class.at("0").support + r.per_class.at("1").support, r.n_examples);
}

TEST(MacroF1, AllMajorityOnThreeBalancedClasses) {
    // majority class: P = 1/3, R = 1, F1 = 1/2; the other two classes score 0
    const std::vector<int> gold{0, 1, 2, 0, 1, 2};
    const std::vector<int> pred(6, 0);
    EXPECT_NEAR(macro_f1(gold, pred).score, 0.5 / 3.0, 1e-12);
}

TEST(MacroF1, LengthMismatchThrows) {
    const std::vector<int> a{0, 1};
    const std::vector<int> b{0};
    EXPECT_THROW(macro_f1(a, b), std::invalid_argument);
}

TEST(ExtractSpans, Oracles) {
    const Tags a{"B-PER", "I-PER", "O", "B-LOC"};
    EXPECT_EQ(extract_spans(a), (std::set<Span>{{"PER", 0, 1}, {"LOC", 3, 3}}));
    const Tags o{"O", "O", "O"};
    EXPECT_TRUE(extract_spans(o).empty());
    const Tags stray{"I-PER"};
    EXPECT_EQ(extract_spans(stray), (std::set<Span>{{"PER", 0, 0}}));
    EXPECT_TRUE(extract_spans(stray, BioScheme::Strict).empty());
    const Tags switch_type{"B-PER", "I-LOC"};
    EXPECT_EQ(extract_spans(switch_type), (std::set<Span>{{"PER", 0, 0}, {"LOC", 1, 1}}));
}

TEST(ExtractSpans, UnknownTagThrows) {
    const Tags bad{"X-PER"};
    EXPECT_THROW(extract_spans(bad), UnknownTag);
}

TEST(SpanF1, Oracles) {
    const std::vector<Tags> gold{{"B-PER", "I-PER", "O", "B-LOC"}};
    EXPECT_DOUBLE_EQ(span_f1(gold, gold).score, 1.0);
    EXPECT_DOUBLE_EQ(span_f1(gold, {{"O", "O", "O", "O"}}).score, 0.0);
    const EvalReport r = span_f1(gold, {{"B-PER", "I-PER", "B-ORG", "O"}});
    EXPECT_DOUBLE_EQ(r.precision, 0.5);
    EXPECT_DOUBLE_EQ(r.recall, 0.5);
    EXPECT_DOUBLE_EQ(r.score, 0.5);
}

TEST(SpanF1, ShapeMismatchThrows) {
    EXPECT_THROW(span_f1({{"O", "O"}}, {{"O"}}), std::invalid_argument);
    EXPECT_THROW(span_f1({{"O"}}, {{"O"}, {"O"}}), std::invalid_argument);
}

TEST(MajorityBaseline, Oracles) {
    const std::vector<int> binary{0, 1, 0, 1};
    EXPECT_NEAR(majority_baseline(binary).score, 1.0 / 3.0, 1e-12);
    const std::vector<int> single{2, 2, 2};
    EXPECT_DOUBLE_EQ(majority_baseline(single).score, 1.0);
}

TEST(RandomTaggingBaseline, DeterministicAndBounded) {
    const std::vector<Tags> gold{{"B-PER", "I-PER", "O"}, {"O", "B-LOC", "O"}};
    const Tags set{"O", "B-PER", "I-PER", "B-LOC", "I-LOC"};
    const EvalReport a = random_tagging_baseline(gold, set, 4);
    const EvalReport b = random_tagging_baseline(gold, set, 4);
    EXPECT_EQ(a.score, b.score);
    EXPECT_GE(a.score, 0.0);
    EXPECT_LE(a.score, 1.0);
}

TEST(Metrics, ScoresStayInUnitIntervalOnRandomInputs) {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> cls(0, 4);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<int> g(20), p(20);
        for (auto& x : g) x = cls(rng);
        for (auto& x : p) x = cls(rng);
        const EvalReport r = macro_f1(g, p);
        EXPECT_GE(r.score, 0.0);
        EXPECT_LE(r.score, 1.0);
        std::size_t support = 0;
        for (const auto& [_, c] : r.per_class) support += c.support;
        EXPECT_EQ(support, r.n_examples);
    }
}
