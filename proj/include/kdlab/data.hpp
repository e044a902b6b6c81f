// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multilingual corpora and file ingestion.
//
// Every example is first drawn as a sequence of latent symbols. A language is
// a bijection from latent symbols onto its own disjoint block of token ids;
// each rendered token is replaced, with probability anchor_ratio, by the
// latent symbol's shared anchor id. Anchors are what lets knowledge move
// between languages, so the ratio controls cross-lingual overlap.
//
// Token id layout: 0 = [CLS], 1 = [MASK], [2, 2+S) anchors, then one block of
// S ids per language, where S is the latent inventory size.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "kdlab/model.hpp"

namespace kdlab {

inline constexpr int kClsToken = 0;
inline constexpr int kMaskToken = 1;
inline constexpr int kFirstAnchorToken = 2;

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

enum class Split { Train, Dev, Test };
std::string to_string(Split split);

struct LanguageSpec {
    std::string lang_id;
    int block_begin = 0;  // half-open token range [block_begin, block_end)
    int block_end = 0;
    double anchor_ratio = 0.3;
    std::uint64_t permutation_seed = 0;
    std::vector<int> permutation;  // latent symbol -> offset inside the block

    int surface_token(int latent) const { return block_begin + permutation.at(static_cast<std::size_t>(latent)); }
    int anchor_token(int latent) const { return kFirstAnchorToken + latent; }
};

struct Example {
    std::vector<int> tokens;
    std::vector<int> labels;  // one class id, or one tag id per token
    std::string lang;
    bool operator==(const Example&) const = default;
};

struct Corpus {
    Task task = Task::SequenceClassification;
    Split split = Split::Train;
    int n_classes = 0;
    std::vector<std::string> tag_names;  // tag id -> BIO string (token task only)
    std::vector<Example> examples;

    std::size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
    std::vector<std::string> languages() const;  // sorted, unique
    std::vector<int> flat_labels() const;
    std::vector<std::vector<std::string>> tag_sequences() const;
    bool operator==(const Corpus&) const = default;
};

// BIO tag inventory: "O", then B-/I- for each type in order.
std::vector<std::string> bio_tag_names(const std::vector<std::string>& entity_types);

struct GeneratorParams {
    Task task = Task::SequenceClassification;
    int n_langs = 8;
    int n_classes = 3;        // classification
    std::vector<double> class_weights;  // label proportions; empty = balanced
    int n_entity_types = 3;   // tagging
    int n_per_lang = 150;
    int seq_len = 12;         // includes the leading [CLS] for classification
    double anchor_ratio = 0.3;
    bool parallel = false;
    std::uint64_t seed = 0;

    // latent inventory
    int keywords_per_class = 4;
    int filler_symbols = 16;
    int keywords_per_seq = 3;  // a strict majority comes from the label's class
    int off_class_keywords = -1;  // keywords drawn from other classes; -1 = all non-majority slots
    int entity_symbols_per_type = 6;
    int background_symbols = 16;
    int max_spans = 2;
    int max_span_len = 3;

    int latent_size() const;
    int vocab_size() const;
    int label_count() const;  // classes, or BIO tags for the token task
    void validate() const;
};

void to_json(nlohmann::json& j, const GeneratorParams& p);
// Unknown keys are rejected.
void from_json(const nlohmann::json& j, GeneratorParams& p);

// Languages "lang00", "lang01", ... with disjoint blocks and seeded permutations.
std::vector<LanguageSpec> make_languages(const GeneratorParams& p, std::uint64_t seed);

struct SyntheticCorpus {
    std::vector<LanguageSpec> languages;
    Corpus corpus;
};

// Draws n_per_lang examples per language with `seed`; language permutations
// come from `languages` (or are derived from the same seed when omitted).
SyntheticCorpus gen_classification(const GeneratorParams& p, Split split = Split::Train,
                                   const std::vector<LanguageSpec>* languages = nullptr);
SyntheticCorpus gen_tagging(const GeneratorParams& p, Split split = Split::Train,
                            const std::vector<LanguageSpec>* languages = nullptr);
SyntheticCorpus generate(const GeneratorParams& p, Split split = Split::Train,
                         const std::vector<LanguageSpec>* languages = nullptr);

// Per (language, label) cell keep round(fraction * n) examples, at least one
// per non-empty cell, sampled without replacement; original order kept.
Corpus stratified_subset(const Corpus& corpus, double fraction, std::uint64_t seed);

struct LanguagePartition {
    std::set<std::string> seen;
    std::set<std::string> unseen;
    std::string english_analogue;
};

LanguagePartition partition_languages(const std::vector<std::string>& lang_ids, double unseen_fraction,
                                      std::uint64_t seed, const std::optional<std::string>& english = std::nullopt);
Corpus filter_corpus(const Corpus& corpus, const std::set<std::string>& langs);

// {"tokens":[ints],"label":int,"lang":str} per line.
Corpus load_jsonl_classification(const std::filesystem::path& path, int n_classes = 0);
void write_jsonl_classification(const Corpus& corpus, const std::filesystem::path& path);

// "# lang=<id>" before each sentence, "token_id<TAB>tag" lines, blank line between sentences.
// When tag_names is empty the inventory is built from the tags found in the file.
Corpus load_conll_tagging(const std::filesystem::path& path, const std::vector<std::string>& tag_names = {});
void write_conll_tagging(const Corpus& corpus, const std::filesystem::path& path);

}  // namespace kdlab
