// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Macro-F1 for classification, entity-level (span) F1 for BIO tagging, and
// the trivial baselines both are compared against.

#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace kdlab {

class UnknownTag : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ClassScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

struct EvalReport {
    std::string metric;  // "macro_f1" or "span_f1"
    double score = 0.0;
    double precision = 0.0;  // span_f1 only (micro)
    double recall = 0.0;     // span_f1 only (micro)
    std::map<std::string, ClassScore> per_class;
    std::size_t n_examples = 0;
};

void to_json(nlohmann::json& j, const ClassScore& s);
void to_json(nlohmann::json& j, const EvalReport& r);

// Macro average over classes present in gold; 0 when a ratio's denominator is 0.
EvalReport macro_f1(std::span<const int> gold, std::span<const int> pred);

enum class BioScheme {
    Lenient,  // an I-X that does not continue an X span opens a new span
    Strict,   // IOB2: spans must open with B-X; stray I-X tokens are dropped
};

struct Span {
    std::string type;
    int start = 0;
    int end = 0;  // inclusive
    auto operator<=>(const Span&) const = default;
};

std::set<Span> extract_spans(std::span<const std::string> tags, BioScheme scheme = BioScheme::Lenient);

EvalReport span_f1(const std::vector<std::vector<std::string>>& gold,
                   const std::vector<std::vector<std::string>>& pred, BioScheme scheme = BioScheme::Lenient);

// Score of predicting the most frequent gold class everywhere (ties -> lowest id).
EvalReport majority_baseline(std::span<const int> gold);

// Mean span F1 of `runs` uniform-random tag predictions drawn from tag_set.
EvalReport random_tagging_baseline(const std::vector<std::vector<std::string>>& gold,
                                   const std::vector<std::string>& tag_set, std::uint64_t seed, int runs = 30);

}  // namespace kdlab
