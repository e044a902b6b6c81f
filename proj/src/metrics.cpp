// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdlab/metrics.hpp"

#include <algorithm>
#include <optional>
#include <random>

namespace kdlab {

void to_json(nlohmann::json& j, const ClassScore& s) {
    j = nlohmann::json{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
}

void to_json(nlohmann::json& j, const EvalReport& r) {
    j = nlohmann::json{{"metric", r.metric}, {"score", r.score}, {"n_examples", r.n_examples}};
    if (r.metric == "span_f1") {
        j["precision"] = r.precision;
        j["recall"] = r.recall;
    }
    j["per_class"] = r.per_class;
}

namespace {

double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

double f1_of(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

}  // namespace

EvalReport macro_f1(std::span<const int> gold, std::span<const int> pred) {
    if (gold.size() != pred.size()) {
        throw std::invalid_argument("macro_f1: " + std::to_string(gold.size()) + " gold vs " +
                                    std::to_string(pred.size()) + " predicted labels");
    }
    if (gold.empty()) throw std::invalid_argument("macro_f1: empty input");

    std::map<int, std::size_t> tp, gold_count, pred_count;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        ++gold_count[gold[i]];
        ++pred_count[pred[i]];
        if (gold[i] == pred[i]) ++tp[gold[i]];
    }
    std::set<int> classes;
    for (auto& [c, _] : gold_count) classes.insert(c);
    for (auto& [c, _] : pred_count) classes.insert(c);

    EvalReport report;
    report.metric = "macro_f1";
    report.n_examples = gold.size();
    double f1_sum = 0.0;
    std::size_t present = 0;
    for (int c : classes) {
        ClassScore s;
        s.support = gold_count[c];
        s.precision = safe_div(static_cast<double>(tp[c]), static_cast<double>(pred_count[c]));
        s.recall = safe_div(static_cast<double>(tp[c]), static_cast<double>(s.support));
        s.f1 = f1_of(s.precision, s.recall);
        if (s.support > 0) {
            f1_sum += s.f1;
            ++present;
        }
        report.per_class[std::to_string(c)] = s;
    }
    report.score = f1_sum / static_cast<double>(present);
    return report;
}

namespace {

struct ParsedTag {
    char prefix;  // 'O', 'B' or 'I'
    std::string type;
};

ParsedTag parse_tag(const std::string& tag) {
    if (tag == "O") return {'O', {}};
    if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') return {tag[0], tag.substr(2)};
    throw UnknownTag("unknown BIO tag '" + tag + "'");
}

}  // namespace

std::set<Span> extract_spans(std::span<const std::string> tags, BioScheme scheme) {
    std::set<Span> spans;
    std::optional<Span> open;
    auto close = [&] {
        if (open) spans.insert(*open);
        open.reset();
    };
    for (std::size_t i = 0; i < tags.size(); ++i) {
        const ParsedTag t = parse_tag(tags[i]);
        const int pos = static_cast<int>(i);
        if (t.prefix == 'O') {
            close();
        } else if (t.prefix == 'B') {
            close();
            open = Span{t.type, pos, pos};
        } else if (open && open->type == t.type) {
            open->end = pos;
        } else {
            close();
            if (scheme == BioScheme::Lenient) open = Span{t.type, pos, pos};
        }
    }
    close();
    return spans;
}

EvalReport span_f1(const std::vector<std::vector<std::string>>& gold,
                   const std::vector<std::vector<std::string>>& pred, BioScheme scheme) {
    if (gold.size() != pred.size()) {
        throw std::invalid_argument("span_f1: " + std::to_string(gold.size()) + " gold vs " +
                                    std::to_string(pred.size()) + " predicted sequences");
    }
    std::map<std::string, std::size_t> tp, n_gold, n_pred;
    std::size_t tp_all = 0, gold_all = 0, pred_all = 0;
    for (std::size_t s = 0; s < gold.size(); ++s) {
        if (gold[s].size() != pred[s].size()) {
            throw std::invalid_argument("span_f1: sequence " + std::to_string(s) + " has mismatched lengths");
        }
        const auto g = extract_spans(gold[s], scheme);
        const auto p = extract_spans(pred[s], scheme);
        for (const auto& sp : g) ++n_gold[sp.type];
        for (const auto& sp : p) ++n_pred[sp.type];
        for (const auto& sp : p) {
            if (g.count(sp)) ++tp[sp.type];
        }
        gold_all += g.size();
        pred_all += p.size();
    }
    for (auto& [_, n] : tp) tp_all += n;

    EvalReport report;
    report.metric = "span_f1";
    report.n_examples = gold.size();
    report.precision = safe_div(static_cast<double>(tp_all), static_cast<double>(pred_all));
    report.recall = safe_div(static_cast<double>(tp_all), static_cast<double>(gold_all));
    report.score = f1_of(report.precision, report.recall);
    std::set<std::string> types;
    for (auto& [t, _] : n_gold) types.insert(t);
    for (auto& [t, _] : n_pred) types.insert(t);
    for (const auto& t : types) {
        ClassScore s;
        s.support = n_gold[t];
        s.precision = safe_div(static_cast<double>(tp[t]), static_cast<double>(n_pred[t]));
        s.recall = safe_div(static_cast<double>(tp[t]), static_cast<double>(s.support));
        s.f1 = f1_of(s.precision, s.recall);
        report.per_class[t] = s;
    }
    return report;
}

EvalReport majority_baseline(std::span<const int> gold) {
    if (gold.empty()) throw std::invalid_argument("majority_baseline: empty gold");
    std::map<int, std::size_t> counts;
    for (int g : gold) ++counts[g];
    int best = counts.begin()->first;
    for (const auto& [c, n] : counts) {
        if (n > counts[best]) best = c;
    }
    const std::vector<int> pred(gold.size(), best);
    return macro_f1(gold, pred);
}

EvalReport random_tagging_baseline(const std::vector<std::vector<std::string>>& gold,
                                   const std::vector<std::string>& tag_set, std::uint64_t seed, int runs) {
    if (gold.empty()) throw std::invalid_argument("random_tagging_baseline: empty gold");
    if (tag_set.empty() || runs < 1) throw std::invalid_argument("random_tagging_baseline: bad tag set or runs");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, tag_set.size() - 1);
    EvalReport mean_report;
    mean_report.metric = "span_f1";
    mean_report.n_examples = gold.size();
    for (int r = 0; r < runs; ++r) {
        std::vector<std::vector<std::string>> pred(gold.size());
        for (std::size_t s = 0; s < gold.size(); ++s) {
            for (std::size_t i = 0; i < gold[s].size(); ++i) pred[s].push_back(tag_set[pick(rng)]);
        }
        const EvalReport rep = span_f1(gold, pred);
        mean_report.score += rep.score / runs;
        mean_report.precision += rep.precision / runs;
        mean_report.recall += rep.recall / runs;
    }
    return mean_report;
}

}  // namespace kdlab
