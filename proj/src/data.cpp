// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdlab/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace kdlab {

std::string to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Dev: return "dev";
        case Split::Test: return "test";
    }
    return "unknown";
}

std::vector<std::string> Corpus::languages() const {
    std::set<std::string> langs;
    for (const auto& ex : examples) langs.insert(ex.lang);
    return {langs.begin(), langs.end()};
}

std::vector<int> Corpus::flat_labels() const {
    std::vector<int> out;
    for (const auto& ex : examples) out.insert(out.end(), ex.labels.begin(), ex.labels.end());
    return out;
}

std::vector<std::vector<std::string>> Corpus::tag_sequences() const {
    std::vector<std::vector<std::string>> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) {
        std::vector<std::string> tags;
        for (int id : ex.labels) tags.push_back(tag_names.at(static_cast<std::size_t>(id)));
        out.push_back(std::move(tags));
    }
    return out;
}

std::vector<std::string> bio_tag_names(const std::vector<std::string>& entity_types) {
    std::vector<std::string> names{"O"};
    for (const auto& t : entity_types) {
        names.push_back("B-" + t);
        names.push_back("I-" + t);
    }
    return names;
}

namespace {

std::vector<std::string> default_entity_types(int n) {
    static const char* base[] = {"PER", "LOC", "ORG", "MISC"};
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.emplace_back(i < 4 ? base[i] : "E" + std::to_string(i));
    return out;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    std::uint64_t out[1];
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    return out[0];
}

std::string lang_name(int i) {
    std::string n = std::to_string(i);
    return "lang" + std::string(n.size() < 2 ? 2 - n.size() : 0, '0') + n;
}

}  // namespace

// ---- generator parameters -------------------------------------------------

int GeneratorParams::latent_size() const {
    return task == Task::SequenceClassification ? n_classes * keywords_per_class + filler_symbols
                                                : n_entity_types * entity_symbols_per_type + background_symbols;
}

int GeneratorParams::vocab_size() const { return kFirstAnchorToken + latent_size() * (n_langs + 1); }

int GeneratorParams::label_count() const {
    return task == Task::SequenceClassification ? n_classes : 1 + 2 * n_entity_types;
}

void GeneratorParams::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("generator: " + msg); };
    if (!(anchor_ratio >= 0.0 && anchor_ratio <= 1.0)) fail("anchor_ratio must lie in [0,1]");
    if (n_langs < 1) fail("n_langs must be >= 1");
    if (n_per_lang < 0) fail("n_per_lang must be >= 0");
    if (task == Task::SequenceClassification) {
        if (n_classes < 2) fail("n_classes must be >= 2");
        if (!class_weights.empty()) {
            if (class_weights.size() != static_cast<std::size_t>(n_classes)) fail("class_weights needs n_classes entries");
            double total = 0.0;
            for (double w : class_weights) {
                if (!(w >= 0.0)) fail("class_weights must be non-negative");
                total += w;
            }
            if (!(total > 0.0)) fail("class_weights must not all be zero");
        }
        if (keywords_per_class < 1 || filler_symbols < 1 || keywords_per_seq < 1) fail("latent inventory too small");
        if (seq_len - 1 < keywords_per_seq) fail("seq_len too small for the keyword pattern");
        if (off_class_keywords < -1) fail("off_class_keywords must be >= -1");
        if (off_class_keywords > keywords_per_seq - (keywords_per_seq / 2 + 1)) {
            fail("off_class_keywords would break the label's majority");
        }
    } else {
        if (n_entity_types < 1) fail("n_entity_types must be >= 1");
        if (entity_symbols_per_type < 1 || background_symbols < 1) fail("latent inventory too small");
        if (max_spans < 1 || max_span_len < 1) fail("span limits must be >= 1");
        if (seq_len < max_span_len) fail("seq_len too small for a span");
    }
}

void to_json(nlohmann::json& j, const GeneratorParams& p) {
    j = nlohmann::json{{"task", to_string(p.task)},
                       {"n_langs", p.n_langs},
                       {"n_classes", p.n_classes},
                       {"class_weights", p.class_weights},
                       {"n_entity_types", p.n_entity_types},
                       {"n_per_lang", p.n_per_lang},
                       {"seq_len", p.seq_len},
                       {"anchor_ratio", p.anchor_ratio},
                       {"parallel", p.parallel},
                       {"seed", p.seed},
                       {"keywords_per_class", p.keywords_per_class},
                       {"filler_symbols", p.filler_symbols},
                       {"keywords_per_seq", p.keywords_per_seq},
                       {"off_class_keywords", p.off_class_keywords},
                       {"entity_symbols_per_type", p.entity_symbols_per_type},
                       {"background_symbols", p.background_symbols},
                       {"max_spans", p.max_spans},
                       {"max_span_len", p.max_span_len}};
}

void from_json(const nlohmann::json& j, GeneratorParams& p) {
    nlohmann::json defaults = p;
    for (const auto& [key, _] : j.items()) {
        if (!defaults.contains(key)) throw std::invalid_argument("generator: unknown key '" + key + "'");
    }
    if (j.contains("task")) p.task = task_from_string(j.at("task").get<std::string>());
    auto get_int = [&](const char* k, int& out) {
        if (j.contains(k)) out = j.at(k).get<int>();
    };
    get_int("n_langs", p.n_langs);
    get_int("n_classes", p.n_classes);
    get_int("n_entity_types", p.n_entity_types);
    get_int("n_per_lang", p.n_per_lang);
    get_int("seq_len", p.seq_len);
    get_int("keywords_per_class", p.keywords_per_class);
    get_int("filler_symbols", p.filler_symbols);
    get_int("keywords_per_seq", p.keywords_per_seq);
    get_int("off_class_keywords", p.off_class_keywords);
    get_int("entity_symbols_per_type", p.entity_symbols_per_type);
    get_int("background_symbols", p.background_symbols);
    get_int("max_spans", p.max_spans);
    get_int("max_span_len", p.max_span_len);
    if (j.contains("class_weights")) p.class_weights = j.at("class_weights").get<std::vector<double>>();
    if (j.contains("anchor_ratio")) p.anchor_ratio = j.at("anchor_ratio").get<double>();
    if (j.contains("parallel")) p.parallel = j.at("parallel").get<bool>();
    if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
}

std::vector<LanguageSpec> make_languages(const GeneratorParams& p, std::uint64_t seed) {
    const int S = p.latent_size();
    std::vector<LanguageSpec> langs;
    for (int i = 0; i < p.n_langs; ++i) {
        LanguageSpec spec;
        spec.lang_id = lang_name(i);
        spec.block_begin = kFirstAnchorToken + S * (i + 1);
        spec.block_end = spec.block_begin + S;
        spec.anchor_ratio = p.anchor_ratio;
        spec.permutation_seed = mix_seed(seed, static_cast<std::uint64_t>(i) + 0x1a2b3c);
        spec.permutation.resize(static_cast<std::size_t>(S));
        std::iota(spec.permutation.begin(), spec.permutation.end(), 0);
        std::mt19937_64 rng(spec.permutation_seed);
        std::shuffle(spec.permutation.begin(), spec.permutation.end(), rng);
        langs.push_back(std::move(spec));
    }
    return langs;
}

// ---- generators -----------------------------------------------------------

namespace {

struct LatentExample {
    std::vector<int> symbols;
    std::vector<int> labels;
};

LatentExample draw_classification(const GeneratorParams& p, int label, std::mt19937_64& rng) {
    const int content = p.seq_len - 1;
    const int K = p.keywords_per_class;
    std::uniform_int_distribution<int> pick_filler(0, p.filler_symbols - 1);
    std::uniform_int_distribution<int> pick_variant(0, K - 1);
    std::uniform_int_distribution<int> pick_other(0, p.n_classes - 2);

    LatentExample ex;
    ex.symbols.resize(static_cast<std::size_t>(content));
    for (auto& s : ex.symbols) s = p.n_classes * K + pick_filler(rng);

    std::vector<int> slots(static_cast<std::size_t>(content));
    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(slots.begin(), slots.end(), rng);
    const int off = p.off_class_keywords < 0 ? p.keywords_per_seq - (p.keywords_per_seq / 2 + 1)
                                             : p.off_class_keywords;
    for (int m = 0; m < p.keywords_per_seq; ++m) {
        int cls = label;
        if (m >= p.keywords_per_seq - off) {
            cls = pick_other(rng);
            if (cls >= label) ++cls;
        }
        ex.symbols[static_cast<std::size_t>(slots[static_cast<std::size_t>(m)])] = cls * K + pick_variant(rng);
    }
    ex.labels = {label};
    return ex;
}

LatentExample draw_tagging(const GeneratorParams& p, std::mt19937_64& rng) {
    const int T = p.seq_len;
    const int Ke = p.entity_symbols_per_type;
    std::uniform_int_distribution<int> pick_bg(0, p.background_symbols - 1);
    std::uniform_int_distribution<int> pick_type(0, p.n_entity_types - 1);
    std::uniform_int_distribution<int> pick_variant(0, Ke - 1);
    std::uniform_int_distribution<int> pick_count(1, p.max_spans);
    std::uniform_int_distribution<int> pick_len(1, p.max_span_len);

    LatentExample ex;
    ex.symbols.resize(static_cast<std::size_t>(T));
    ex.labels.assign(static_cast<std::size_t>(T), 0);
    for (auto& s : ex.symbols) s = p.n_entity_types * Ke + pick_bg(rng);

    // Spans never touch, so B/I boundaries are recoverable from the symbols.
    std::vector<bool> blocked(static_cast<std::size_t>(T), false);
    const int wanted = pick_count(rng);
    int placed = 0;
    for (int attempt = 0; attempt < 50 && placed < wanted; ++attempt) {
        const int len = std::min(pick_len(rng), T);
        std::uniform_int_distribution<int> pick_start(0, T - len);
        const int start = pick_start(rng);
        bool free = true;
        for (int i = std::max(0, start - 1); i <= std::min(T - 1, start + len); ++i) free = free && !blocked[i];
        if (!free) continue;
        const int type = pick_type(rng);
        for (int i = start; i < start + len; ++i) {
            ex.symbols[static_cast<std::size_t>(i)] = type * Ke + pick_variant(rng);
            ex.labels[static_cast<std::size_t>(i)] = 1 + 2 * type + (i == start ? 0 : 1);
            blocked[static_cast<std::size_t>(i)] = true;
        }
        ++placed;
    }
    return ex;
}

// Exact per-language label counts: balanced, or the class_weights
// proportions rounded by largest remainder (ties to the lower class).
std::vector<int> label_plan(const GeneratorParams& p) {
    const auto C = static_cast<std::size_t>(p.task == Task::SequenceClassification ? p.n_classes : 1);
    std::vector<double> w = p.class_weights;
    if (w.empty() || p.task != Task::SequenceClassification) w.assign(C, 1.0);
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    std::vector<int> counts(C);
    std::vector<std::pair<double, std::size_t>> rem;
    int assigned = 0;
    for (std::size_t c = 0; c < C; ++c) {
        const double exact = w[c] / total * p.n_per_lang;
        counts[c] = static_cast<int>(std::floor(exact));
        assigned += counts[c];
        rem.emplace_back(-(exact - counts[c]), c);
    }
    std::sort(rem.begin(), rem.end());
    for (std::size_t r = 0; assigned < p.n_per_lang; ++r, ++assigned) ++counts[rem[r % C].second];
    std::vector<int> labels;
    for (std::size_t c = 0; c < C; ++c) labels.insert(labels.end(), static_cast<std::size_t>(counts[c]), static_cast<int>(c));
    return labels;
}

std::vector<int> render(const LanguageSpec& lang, const std::vector<int>& symbols, bool with_cls,
                        std::mt19937_64& rng) {
    std::bernoulli_distribution anchor(lang.anchor_ratio);
    std::vector<int> tokens;
    tokens.reserve(symbols.size() + 1);
    if (with_cls) tokens.push_back(kClsToken);
    for (int s : symbols) tokens.push_back(anchor(rng) ? lang.anchor_token(s) : lang.surface_token(s));
    return tokens;
}

SyntheticCorpus generate_impl(const GeneratorParams& p, Split split, const std::vector<LanguageSpec>* languages) {
    p.validate();
    SyntheticCorpus out;
    out.languages = languages ? *languages : make_languages(p, p.seed);
    if (static_cast<int>(out.languages.size()) != p.n_langs) {
        throw std::invalid_argument("generator: language list does not match n_langs");
    }
    const bool classification = p.task == Task::SequenceClassification;
    Corpus& c = out.corpus;
    c.task = p.task;
    c.split = split;
    c.n_classes = p.label_count();
    if (!classification) c.tag_names = bio_tag_names(default_entity_types(p.n_entity_types));

    std::mt19937_64 rng(mix_seed(p.seed, 0x5eed0000ULL + static_cast<std::uint64_t>(split)));
    auto draw_block = [&]() {
        std::vector<LatentExample> block;
        std::vector<int> labels = label_plan(p);
        std::shuffle(labels.begin(), labels.end(), rng);
        for (int i = 0; i < p.n_per_lang; ++i) {
            block.push_back(classification ? draw_classification(p, labels[static_cast<std::size_t>(i)], rng)
                                           : draw_tagging(p, rng));
        }
        return block;
    };

    std::vector<LatentExample> shared;
    if (p.parallel) shared = draw_block();
    for (const auto& lang : out.languages) {
        const std::vector<LatentExample> block = p.parallel ? shared : draw_block();
        for (const auto& latent : block) {
            c.examples.push_back({render(lang, latent.symbols, classification, rng), latent.labels, lang.lang_id});
        }
    }
    return out;
}

}  // namespace

SyntheticCorpus gen_classification(const GeneratorParams& p, Split split, const std::vector<LanguageSpec>* languages) {
    if (p.task != Task::SequenceClassification) throw std::invalid_argument("gen_classification: task mismatch");
    return generate_impl(p, split, languages);
}

SyntheticCorpus gen_tagging(const GeneratorParams& p, Split split, const std::vector<LanguageSpec>* languages) {
    if (p.task != Task::TokenClassification) throw std::invalid_argument("gen_tagging: task mismatch");
    return generate_impl(p, split, languages);
}

SyntheticCorpus generate(const GeneratorParams& p, Split split, const std::vector<LanguageSpec>* languages) {
    return generate_impl(p, split, languages);
}

// ---- subsets and partitions -----------------------------------------------

Corpus stratified_subset(const Corpus& corpus, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw std::invalid_argument("stratified_subset: fraction must lie in (0,1]");
    }
    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
        const auto& ex = corpus.examples[i];
        std::string key;
        if (corpus.task == Task::SequenceClassification) {
            key = std::to_string(ex.labels.at(0));
        } else {
            std::set<int> types;
            for (int t : ex.labels) {
                if (t > 0) types.insert((t - 1) / 2);
            }
            for (int t : types) key += std::to_string(t) + ",";
        }
        cells[{ex.lang, key}].push_back(i);
    }
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> keep;
    for (auto& [_, idx] : cells) {
        const auto n = idx.size();
        const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
        std::shuffle(idx.begin(), idx.end(), rng);
        keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(k, n)));
    }
    std::sort(keep.begin(), keep.end());
    Corpus out = corpus;
    out.examples.clear();
    for (auto i : keep) out.examples.push_back(corpus.examples[i]);
    return out;
}

LanguagePartition partition_languages(const std::vector<std::string>& lang_ids, double unseen_fraction,
                                      std::uint64_t seed, const std::optional<std::string>& english) {
    if (!(unseen_fraction >= 0.0 && unseen_fraction <= 1.0)) {
        throw std::invalid_argument("partition_languages: unseen_fraction must lie in [0,1]");
    }
    std::vector<std::string> ids(lang_ids.begin(), lang_ids.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    const auto n_unseen = static_cast<std::size_t>(std::llround(unseen_fraction * static_cast<double>(ids.size())));
    if (n_unseen >= ids.size()) throw std::invalid_argument("partition_languages: no seen language would remain");

    std::vector<std::string> order = ids;
    if (english) {
        // The English analogue is pinned to the seen side.
        auto it = std::find(order.begin(), order.end(), *english);
        if (it == order.end()) throw std::invalid_argument("partition_languages: unknown language '" + *english + "'");
        order.erase(it);
    }
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    LanguagePartition part;
    for (std::size_t i = 0; i < order.size(); ++i) (i < n_unseen ? part.unseen : part.seen).insert(order[i]);
    if (english) part.seen.insert(*english);
    if (part.seen.empty()) throw std::invalid_argument("partition_languages: empty seen set");
    part.english_analogue = english ? *english : *part.seen.begin();
    return part;
}

Corpus filter_corpus(const Corpus& corpus, const std::set<std::string>& langs) {
    Corpus out = corpus;
    out.examples.clear();
    for (const auto& ex : corpus.examples) {
        if (langs.count(ex.lang)) out.examples.push_back(ex);
    }
    return out;
}

// ---- file formats ---------------------------------------------------------

Corpus load_jsonl_classification(const std::filesystem::path& path, int n_classes) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    Corpus c;
    c.task = Task::SequenceClassification;
    int max_label = -1;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (std::all_of(line.begin(), line.end(), [](unsigned char ch) { return std::isspace(ch); })) continue;
        Example ex;
        try {
            const auto j = nlohmann::json::parse(line);
            ex.tokens = j.at("tokens").get<std::vector<int>>();
            ex.labels = {j.at("label").get<int>()};
            ex.lang = j.at("lang").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, std::string("malformed record: ") + e.what());
        }
        if (ex.tokens.empty()) throw ParseError(line_no, "empty token list");
        if (ex.labels[0] < 0 || (n_classes > 0 && ex.labels[0] >= n_classes)) {
            throw ParseError(line_no, "label " + std::to_string(ex.labels[0]) + " out of range");
        }
        max_label = std::max(max_label, ex.labels[0]);
        c.examples.push_back(std::move(ex));
    }
    c.n_classes = n_classes > 0 ? n_classes : max_label + 1;
    return c;
}

void write_jsonl_classification(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    for (const auto& ex : corpus.examples) {
        out << nlohmann::json{{"tokens", ex.tokens}, {"label", ex.labels.at(0)}, {"lang", ex.lang}}.dump() << '\n';
    }
}

namespace {

bool valid_bio(const std::string& tag) {
    return tag == "O" || (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-');
}

}  // namespace

Corpus load_conll_tagging(const std::filesystem::path& path, const std::vector<std::string>& tag_names) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());

    struct RawSentence {
        std::string lang;
        std::vector<int> tokens;
        std::vector<std::pair<std::string, std::size_t>> tags;  // tag, line
    };
    std::vector<RawSentence> sentences;
    RawSentence current;
    std::string pending_lang;
    auto flush = [&] {
        if (!current.tokens.empty()) sentences.push_back(std::move(current));
        current = RawSentence{};
        current.lang = pending_lang;
    };

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            flush();
            continue;
        }
        if (line[0] == '#') {
            if (line.rfind("# lang=", 0) == 0) {
                pending_lang = line.substr(7);
                if (current.tokens.empty()) current.lang = pending_lang;
            }
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError(line_no, "expected 'token_id<TAB>tag'");
        int token = 0;
        const char* first = line.data();
        const char* last = line.data() + tab;
        auto [ptr, ec] = std::from_chars(first, last, token);
        if (ec != std::errc() || ptr != last || token < 0) throw ParseError(line_no, "bad token id");
        std::string tag = line.substr(tab + 1);
        if (!valid_bio(tag)) throw ParseError(line_no, "unknown tag '" + tag + "'");
        if (current.tokens.empty()) current.lang = pending_lang;
        current.tokens.push_back(token);
        current.tags.emplace_back(std::move(tag), line_no);
    }
    flush();

    Corpus c;
    c.task = Task::TokenClassification;
    c.tag_names = tag_names;
    if (c.tag_names.empty()) {
        std::set<std::string> types;
        for (const auto& s : sentences)
            for (const auto& [tag, _] : s.tags)
                if (tag != "O") types.insert(tag.substr(2));
        c.tag_names = bio_tag_names({types.begin(), types.end()});
    }
    std::map<std::string, int> ids;
    for (std::size_t i = 0; i < c.tag_names.size(); ++i) ids[c.tag_names[i]] = static_cast<int>(i);
    c.n_classes = static_cast<int>(c.tag_names.size());
    for (auto& s : sentences) {
        Example ex;
        ex.tokens = std::move(s.tokens);
        ex.lang = s.lang;
        for (const auto& [tag, at] : s.tags) {
            auto it = ids.find(tag);
            if (it == ids.end()) throw ParseError(at, "unknown tag '" + tag + "'");
            ex.labels.push_back(it->second);
        }
        c.examples.push_back(std::move(ex));
    }
    return c;
}

void write_conll_tagging(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    for (const auto& ex : corpus.examples) {
        out << "# lang=" << ex.lang << '\n';
        for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
            out << ex.tokens[i] << '\t' << corpus.tag_names.at(static_cast<std::size_t>(ex.labels.at(i))) << '\n';
        }
        out << '\n';
    }
}

}  // namespace kdlab
