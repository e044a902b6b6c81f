// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdlab/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "kdlab/init.hpp"

namespace kdlab {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- names ----------------------------------------------------------------

std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::AllLangs: return "all-langs";
        case Scenario::ZsclSeen: return "zscl-seen";
        case Scenario::ZsclEnglish: return "zscl-english";
        case Scenario::EnglishOnlyTeacher: return "english-only-teacher";
        case Scenario::ZeroShotCopy: return "zero-shot-copy";
        case Scenario::Subsets: return "subsets";
    }
    return "unknown";
}

Scenario scenario_from_string(const std::string& name) {
    for (auto s : {Scenario::AllLangs, Scenario::ZsclSeen, Scenario::ZsclEnglish, Scenario::EnglishOnlyTeacher,
                   Scenario::ZeroShotCopy, Scenario::Subsets}) {
        if (to_string(s) == name) return s;
    }
    throw ConfigError("unknown scenario '" + name + "'");
}

std::string to_string(InitKind k) {
    switch (k) {
        case InitKind::FromScratch: return "from-scratch";
        case InitKind::FromBase: return "from-base";
        case InitKind::FromTeacher: return "from-teacher";
    }
    return "unknown";
}

InitKind init_from_string(const std::string& name) {
    for (auto k : {InitKind::FromScratch, InitKind::FromBase, InitKind::FromTeacher}) {
        if (to_string(k) == name) return k;
    }
    throw ConfigError("unknown init '" + name + "'");
}

std::string Variant::label() const { return to_string(init) + (kd ? "+kd" : ""); }

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

// ---- spec parsing ---------------------------------------------------------

namespace {

void check_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

json variant_json(const Variant& v) { return json{{"init", to_string(v.init)}, {"kd", v.kd}}; }

json data_json(const DataSpec& d) {
    json j;
    if (d.generator) {
        j["generator"] = *d.generator;
        j["dev_per_lang"] = d.dev_per_lang;
        j["test_per_lang"] = d.test_per_lang;
    }
    if (d.files) {
        j["files"] = json{{"train", d.files->train.string()},
                          {"dev", d.files->dev.string()},
                          {"test", d.files->test.string()},
                          {"format", d.files->format},
                          {"vocab_size", d.files->vocab_size}};
    }
    return j;
}

}  // namespace

std::vector<Variant> effective_variants(const ExperimentSpec& spec) {
    if (!spec.variants.empty()) return spec.variants;
    using K = InitKind;
    switch (spec.scenario) {
        case Scenario::Subsets: return {{K::FromScratch, false}, {K::FromBase, false}, {K::FromTeacher, false}};
        case Scenario::ZeroShotCopy: return {};
        case Scenario::EnglishOnlyTeacher: return {{K::FromScratch, true}, {K::FromTeacher, true}};
        default: return {{K::FromScratch, false}, {K::FromScratch, true}, {K::FromTeacher, false}, {K::FromTeacher, true}};
    }
}

ExperimentSpec parse_spec(const json& j) {
    try {
        check_keys(j,
                   {"scenario", "data", "pretext", "partition", "teacher_cfg", "student_cfg", "teacher_init", "init",
                    "kd_enabled", "variants", "seeds", "fractions", "teacher_train", "student_train", "pretrain",
                    "base_checkpoint", "output_dir", "threads"},
                   "experiment");
        ExperimentSpec s;
        if (!j.contains("scenario")) throw ConfigError("experiment: missing 'scenario'");
        s.scenario = scenario_from_string(j.at("scenario").get<std::string>());

        if (!j.contains("data")) throw ConfigError("experiment: missing 'data'");
        const json& d = j.at("data");
        check_keys(d, {"generator", "dev_per_lang", "test_per_lang", "files"}, "data");
        if (d.contains("generator") == d.contains("files")) {
            throw ConfigError("data: give exactly one of 'generator' or 'files'");
        }
        if (d.contains("generator")) {
            GeneratorParams g;
            from_json(d.at("generator"), g);
            g.validate();
            s.data.generator = g;
        }
        read(d, "dev_per_lang", s.data.dev_per_lang);
        read(d, "test_per_lang", s.data.test_per_lang);
        if (s.data.dev_per_lang < 1 || s.data.test_per_lang < 1) {
            throw ConfigError("data: dev_per_lang and test_per_lang must be >= 1");
        }
        if (d.contains("files")) {
            const json& f = d.at("files");
            check_keys(f, {"train", "dev", "test", "format", "vocab_size"}, "data.files");
            DataFiles files;
            for (const char* k : {"train", "dev", "test"}) {
                if (!f.contains(k)) throw ConfigError(std::string("data.files: missing '") + k + "'");
            }
            files.train = f.at("train").get<std::string>();
            files.dev = f.at("dev").get<std::string>();
            files.test = f.at("test").get<std::string>();
            read(f, "format", files.format);
            read(f, "vocab_size", files.vocab_size);
            if (files.format != "jsonl" && files.format != "conll") {
                throw ConfigError("data.files: format must be jsonl or conll");
            }
            s.data.files = files;
        }

        if (j.contains("pretext")) {
            const json& p = j.at("pretext");
            check_keys(p, {"n_per_lang", "anchor_ratio", "keywords_per_seq", "off_class_keywords", "seed"}, "pretext");
            read(p, "n_per_lang", s.pretext.n_per_lang);
            read(p, "anchor_ratio", s.pretext.anchor_ratio);
            read(p, "keywords_per_seq", s.pretext.keywords_per_seq);
            read(p, "off_class_keywords", s.pretext.off_class_keywords);
            read(p, "seed", s.pretext.seed);
            if (s.pretext.n_per_lang < 1) throw ConfigError("pretext: n_per_lang must be >= 1");
            if (!(s.pretext.anchor_ratio >= 0.0 && s.pretext.anchor_ratio <= 1.0)) {
                throw ConfigError("pretext: anchor_ratio must lie in [0,1]");
            }
        }
        if (j.contains("partition")) {
            const json& p = j.at("partition");
            check_keys(p, {"unseen_fraction", "seed", "english"}, "partition");
            read(p, "unseen_fraction", s.partition.unseen_fraction);
            read(p, "seed", s.partition.seed);
            if (p.contains("english")) s.partition.english = p.at("english").get<std::string>();
            if (!(s.partition.unseen_fraction > 0.0 && s.partition.unseen_fraction < 1.0)) {
                throw ConfigError("partition: unseen_fraction must lie in (0,1)");
            }
        }
        for (const char* key : {"teacher_cfg", "student_cfg"}) {
            if (!j.contains(key)) continue;
            json& target = std::string(key) == "teacher_cfg" ? s.teacher_cfg : s.student_cfg;
            target = j.at(key);
            ModelConfig probe;
            from_json(target, probe);
        }
        if (j.contains("teacher_init")) {
            s.teacher_init = init_from_string(j.at("teacher_init").get<std::string>());
            if (s.teacher_init == InitKind::FromTeacher) throw ConfigError("teacher_init cannot be from-teacher");
        }
        if (j.contains("variants")) {
            if (j.contains("init") || j.contains("kd_enabled")) {
                throw ConfigError("experiment: use either 'variants' or 'init'/'kd_enabled', not both");
            }
            for (const auto& v : j.at("variants")) {
                check_keys(v, {"init", "kd"}, "variants[]");
                Variant var;
                if (!v.contains("init")) throw ConfigError("variants[]: missing 'init'");
                var.init = init_from_string(v.at("init").get<std::string>());
                read(v, "kd", var.kd);
                s.variants.push_back(var);
            }
            if (s.variants.empty()) throw ConfigError("experiment: 'variants' must not be empty");
        } else if (j.contains("init") || j.contains("kd_enabled")) {
            Variant var;
            if (j.contains("init")) var.init = init_from_string(j.at("init").get<std::string>());
            read(j, "kd_enabled", var.kd);
            s.variants.push_back(var);
        }
        if (j.contains("seeds")) {
            s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
            if (s.seeds.empty()) throw ConfigError("experiment: 'seeds' must not be empty");
            if (std::set<std::uint64_t>(s.seeds.begin(), s.seeds.end()).size() != s.seeds.size()) {
                throw ConfigError("experiment: duplicate seeds");
            }
        }
        if (j.contains("fractions")) {
            s.fractions = j.at("fractions").get<std::vector<double>>();
            if (s.fractions.empty()) throw ConfigError("experiment: 'fractions' must not be empty");
            for (double f : s.fractions) {
                if (!(f > 0.0 && f <= 1.0)) throw ConfigError("experiment: fractions must lie in (0,1]");
            }
        }
        if (j.contains("teacher_train")) from_json(j.at("teacher_train"), s.teacher_train);
        if (j.contains("student_train")) from_json(j.at("student_train"), s.student_train);
        if (j.contains("pretrain")) from_json(j.at("pretrain"), s.pretrain);
        if (s.teacher_train.kd_enabled) throw ConfigError("teacher_train: kd_enabled is meaningless for the teacher");
        if (s.student_train.kd_enabled) {
            throw ConfigError("student_train: set distillation per variant ('kd' / 'kd_enabled'), not here");
        }
        if (j.contains("base_checkpoint")) s.base_checkpoint = j.at("base_checkpoint").get<std::string>();
        read(j, "output_dir", s.output_dir);
        read(j, "threads", s.threads);
        if (s.threads < 1) throw ConfigError("experiment: threads must be >= 1");
        const bool zscl = s.scenario == Scenario::ZsclSeen || s.scenario == Scenario::ZsclEnglish ||
                          s.scenario == Scenario::EnglishOnlyTeacher;
        if (zscl && j.contains("partition") == false && s.data.files) {
            throw ConfigError("experiment: cross-lingual scenarios over file data need a 'partition' block");
        }
        return s;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
}

ExperimentSpec load_spec(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_spec(j);
}

json canonical_spec(const ExperimentSpec& s) {
    json variants = json::array();
    for (const auto& v : effective_variants(s)) variants.push_back(variant_json(v));
    json j{{"scenario", to_string(s.scenario)},
           {"data", data_json(s.data)},
           {"pretext",
            {{"n_per_lang", s.pretext.n_per_lang},
             {"anchor_ratio", s.pretext.anchor_ratio},
             {"keywords_per_seq", s.pretext.keywords_per_seq},
             {"off_class_keywords", s.pretext.off_class_keywords},
             {"seed", s.pretext.seed}}},
           {"partition",
            {{"unseen_fraction", s.partition.unseen_fraction},
             {"seed", s.partition.seed},
             {"english", s.partition.english ? json(*s.partition.english) : json(nullptr)}}},
           {"teacher_cfg", s.teacher_cfg},
           {"student_cfg", s.student_cfg},
           {"teacher_init", to_string(s.teacher_init)},
           {"variants", variants},
           {"seeds", s.seeds},
           {"fractions", s.scenario == Scenario::Subsets ? json(s.fractions) : json(nullptr)},
           {"teacher_train", s.teacher_train},
           {"student_train", s.student_train},
           {"pretrain", s.pretrain},
           {"base_checkpoint", s.base_checkpoint ? json(s.base_checkpoint->string()) : json(nullptr)}};
    return j;
}

std::string spec_hash(const ExperimentSpec& spec) { return hex64(fnv1a(canonical_spec(spec).dump())); }

// ---- data -----------------------------------------------------------------

namespace {

int max_token(const Corpus& c) {
    int m = -1;
    for (const auto& ex : c.examples)
        for (int t : ex.tokens) m = std::max(m, t);
    return m;
}

std::size_t max_len(const Corpus& c) {
    std::size_t m = 0;
    for (const auto& ex : c.examples) m = std::max(m, ex.tokens.size());
    return m;
}

std::map<std::string, std::size_t> language_counts(const Corpus& c) {
    std::map<std::string, std::size_t> counts;
    for (const auto& ex : c.examples) ++counts[ex.lang];
    return counts;
}

}  // namespace

ScenarioData build_data(const ExperimentSpec& spec) {
    ScenarioData out;
    if (spec.data.generator) {
        const GeneratorParams& g = *spec.data.generator;
        auto train = generate(g, Split::Train);
        out.languages = train.languages;
        GeneratorParams gd = g;
        gd.n_per_lang = spec.data.dev_per_lang;
        GeneratorParams gt = g;
        gt.n_per_lang = spec.data.test_per_lang;
        out.train = std::move(train.corpus);
        out.dev = generate(gd, Split::Dev, &out.languages).corpus;
        out.test = generate(gt, Split::Test, &out.languages).corpus;
        out.vocab_size = g.vocab_size();
        out.seq_len = g.seq_len;
        return out;
    }
    const DataFiles& f = *spec.data.files;
    if (f.format == "jsonl") {
        out.train = load_jsonl_classification(f.train);
        out.dev = load_jsonl_classification(f.dev);
        out.test = load_jsonl_classification(f.test);
        const int n = std::max({out.train.n_classes, out.dev.n_classes, out.test.n_classes});
        out.train.n_classes = out.dev.n_classes = out.test.n_classes = n;
    } else {
        out.train = load_conll_tagging(f.train);
        out.dev = load_conll_tagging(f.dev, out.train.tag_names);
        out.test = load_conll_tagging(f.test, out.train.tag_names);
    }
    out.train.split = Split::Train;
    out.dev.split = Split::Dev;
    out.test.split = Split::Test;
    if (out.train.empty() || out.dev.empty() || out.test.empty()) throw ConfigError("data files: empty split");
    const int top = std::max({max_token(out.train), max_token(out.dev), max_token(out.test), kMaskToken});
    out.vocab_size = f.vocab_size > 0 ? f.vocab_size : top + 1;
    if (out.vocab_size <= top) throw ConfigError("data files: vocab_size smaller than the largest token id");
    out.seq_len = static_cast<int>(std::max({max_len(out.train), max_len(out.dev), max_len(out.test)}));
    return out;
}

Corpus build_pretext(const ExperimentSpec& spec, const ScenarioData& data) {
    if (!spec.data.generator) return data.train;
    GeneratorParams p = *spec.data.generator;
    p.n_per_lang = spec.pretext.n_per_lang;
    p.seed = spec.pretext.seed;
    p.anchor_ratio = spec.pretext.anchor_ratio;
    p.class_weights.clear();  // unlabeled text: every topic equally common
    if (p.task == Task::SequenceClassification) {
        if (spec.pretext.keywords_per_seq > 0) p.keywords_per_seq = spec.pretext.keywords_per_seq;
        p.off_class_keywords = spec.pretext.off_class_keywords;
    }
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("pretext: ") + e.what());
    }
    std::vector<LanguageSpec> langs = data.languages;
    for (auto& l : langs) l.anchor_ratio = spec.pretext.anchor_ratio;
    return generate(p, Split::Train, &langs).corpus;
}

ModelConfig resolve_model_config(const json& partial, const ScenarioData& data) {
    ModelConfig cfg;
    try {
        from_json(partial, cfg);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    const int classes = data.train.task == Task::SequenceClassification
                            ? data.train.n_classes
                            : static_cast<int>(data.train.tag_names.size());
    if (!partial.contains("vocab_size")) cfg.vocab_size = data.vocab_size;
    if (!partial.contains("max_seq_len")) cfg.max_seq_len = data.seq_len;
    if (!partial.contains("n_classes")) cfg.n_classes = classes;
    if (!partial.contains("task")) cfg.task = data.train.task;
    if (!partial.contains("ffn_dim")) cfg.ffn_dim = 2 * cfg.hidden_dim;
    if (cfg.vocab_size < data.vocab_size) throw ConfigError("model config: vocab_size smaller than the data vocabulary");
    if (cfg.max_seq_len < data.seq_len) throw ConfigError("model config: max_seq_len shorter than the data");
    if (cfg.n_classes != classes) throw ConfigError("model config: n_classes disagrees with the data");
    if (cfg.task != data.train.task) throw ConfigError("model config: task disagrees with the data");
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

void write_dataset(const ScenarioData& data, const fs::path& dir) {
    fs::create_directories(dir);
    const bool cls = data.train.task == Task::SequenceClassification;
    const std::string ext = cls ? ".jsonl" : ".conll";
    const std::pair<const Corpus*, const char*> splits[] = {{&data.train, "train"}, {&data.dev, "dev"}, {&data.test, "test"}};
    for (const auto& [corpus, name] : splits) {
        if (cls) {
            write_jsonl_classification(*corpus, dir / (std::string(name) + ext));
        } else {
            write_conll_tagging(*corpus, dir / (std::string(name) + ext));
        }
    }
    json langs = json::array();
    for (const auto& l : data.languages) {
        langs.push_back(json{{"lang_id", l.lang_id},
                             {"block_begin", l.block_begin},
                             {"block_end", l.block_end},
                             {"anchor_ratio", l.anchor_ratio},
                             {"permutation_seed", l.permutation_seed}});
    }
    std::ofstream(dir / "languages.json") << json{{"vocab_size", data.vocab_size}, {"languages", langs}}.dump(2) << '\n';
}

// ---- stages ---------------------------------------------------------------

namespace {

std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
    std::uint32_t w[2];
    seq.generate(w, w + 2);
    return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
}

class StageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename F>
auto stage(const std::string& name, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError("stage '" + name + "' failed: " + e.what());
    }
}

}  // namespace

ScenarioSplits scenario_splits(const ExperimentSpec& spec, const ScenarioData& data) {
    ScenarioSplits r;
    const bool cross = spec.scenario == Scenario::ZsclSeen || spec.scenario == Scenario::ZsclEnglish ||
                       spec.scenario == Scenario::EnglishOnlyTeacher;
    if (!cross) {
        r.teacher_train = r.student_train = data.train;
        r.teacher_dev = r.student_dev = data.dev;
        r.test = data.test;
        return r;
    }
    std::set<std::string> all;
    for (const Corpus* c : {&data.train, &data.dev, &data.test})
        for (const auto& l : c->languages()) all.insert(l);
    LanguagePartition part;
    try {
        part = partition_languages({all.begin(), all.end()}, spec.partition.unseen_fraction, spec.partition.seed,
                                   spec.partition.english);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("partition: ") + e.what());
    }
    const std::set<std::string> english{part.english_analogue};
    const auto& teacher_langs = spec.scenario == Scenario::EnglishOnlyTeacher ? english : part.seen;
    const auto& student_langs = spec.scenario == Scenario::ZsclSeen ? part.seen : english;
    r.teacher_train = filter_corpus(data.train, teacher_langs);
    r.teacher_dev = filter_corpus(data.dev, teacher_langs);
    r.student_train = filter_corpus(data.train, student_langs);
    r.student_dev = filter_corpus(data.dev, student_langs);
    r.test = filter_corpus(data.test, part.unseen);
    for (const Corpus* c : {&r.teacher_train, &r.teacher_dev, &r.student_train, &r.student_dev, &r.test}) {
        if (c->empty()) throw ConfigError("partition leaves an empty split");
    }
    r.partition = part;
    return r;
}

namespace {

std::vector<int> gold_labels(const Corpus& c) {
    std::vector<int> g;
    for (const auto& ex : c.examples) g.push_back(ex.labels.at(0));
    return g;
}

json baseline_json(const Corpus& test) {
    auto score = [&](const Corpus& c) {
        if (c.task == Task::SequenceClassification) return majority_baseline(gold_labels(c)).score;
        return random_tagging_baseline(c.tag_sequences(), c.tag_names, 0, 30).score;
    };
    json per_lang = json::object();
    for (const auto& l : test.languages()) per_lang[l] = score(filter_corpus(test, {l}));
    return json{{"kind", test.task == Task::SequenceClassification ? "majority" : "random-30"},
                {"score", score(test)},
                {"per_language", per_lang}};
}

json eval_json(const EncoderModel& model, const Corpus& test) {
    json per_lang = json::object();
    for (const auto& l : test.languages()) per_lang[l] = evaluate(model, filter_corpus(test, {l})).score;
    return json{{"test", evaluate(model, test)}, {"per_language", per_lang}};
}

json manifest_of(const Corpus& c) { return json(language_counts(c)); }

std::string fraction_tag(double f) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << f;
    std::string s = os.str();
    while (s.size() > 1 && s.back() == '0') s.pop_back();
    if (s.back() == '.') s.push_back('0');
    return s;
}

struct Stats {
    double mean = 0.0, std = 0.0;
};

Stats stats(const std::vector<double>& xs) {
    Stats s;
    if (xs.empty()) return s;
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double acc = 0.0;
        for (double x : xs) acc += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(acc / static_cast<double>(xs.size() - 1));
    }
    return s;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

struct CurveSink {
    std::vector<std::string> rows;
    void add(const TrainRun& run, const std::string& series) {
        std::ostringstream os;
        os << std::setprecision(17);
        for (const auto& [step, b] : run.loss_curve) os << step << ',' << b.l_overall << ',' << series << "/l_overall\n";
        for (const auto& [step, rep] : run.dev_curve) os << step << ',' << rep.score << ',' << series << "/dev\n";
        rows.push_back(os.str());
    }
};

}  // namespace

PretrainRun pretrain_base(const ExperimentSpec& spec, const ScenarioData& data) {
    const ModelConfig cfg = resolve_model_config(spec.teacher_cfg, data);
    const Corpus pretext = build_pretext(spec, data);
    return make_base(cfg, pretext, spec.pretrain);
}

TeacherResult train_teacher(const ExperimentSpec& spec, const ScenarioData& data, const EncoderModel* base,
                            std::uint64_t seed) {
    const ModelConfig cfg = resolve_model_config(spec.teacher_cfg, data);
    const ScenarioSplits r = scenario_splits(spec, data);
    EncoderModel fresh = init_random(cfg, derive(seed, 0x7eac));
    TeacherResult out;
    if (spec.teacher_init == InitKind::FromBase) {
        if (!base) throw ConfigError("train_teacher: from-base teacher needs a base checkpoint");
        if (!(base->config == cfg)) throw ConfigError("base checkpoint config does not match teacher_cfg");
        out.model = base->clone();
        // Each seed gets its own task head on top of the shared base.
        out.model.head_w = fresh.head_w;
        out.model.head_b = fresh.head_b;
    } else {
        out.model = fresh;
    }
    TrainConfig tc = spec.teacher_train;
    tc.seed = derive(seed, 0x7ea1);
    tc.kd_enabled = false;
    out.run = train(out.model, nullptr, r.teacher_train, r.teacher_dev, tc);
    out.model = out.run.best;
    return out;
}

namespace {

}  // namespace

json evaluation_report(const EncoderModel& model, const Corpus& test) { return eval_json(model, test); }

StudentResult train_student(const ExperimentSpec& spec, const Variant& v, const ModelConfig& student_cfg,
                            const EncoderModel& teacher, const EncoderModel* base, const Corpus& train_set,
                            const Corpus& dev_set, const Corpus& test, std::uint64_t seed) {
    const std::string name = v.label();
    EncoderModel student = stage("student-init " + name, [&] {
        EncoderModel scratch = init_random(student_cfg, derive(seed, 0x57d));
        if (v.init == InitKind::FromScratch) return scratch;
        if (v.init == InitKind::FromTeacher) {
            return copy_weights(teacher, scratch, build_copy_plan(teacher.config, student_cfg));
        }
        if (!base) throw ConfigError("from-base student needs a base checkpoint");
        CopyPlan plan = build_copy_plan(base->config, student_cfg);
        plan.copy_head = false;
        return copy_weights(*base, scratch, plan);
    });
    TrainConfig sc = spec.student_train;
    sc.seed = derive(seed, 0x57a1);
    sc.kd_enabled = v.kd;
    StudentResult out;
    out.run = stage("student-train " + name,
                    [&] { return train(student, v.kd ? &teacher : nullptr, train_set, dev_set, sc); });
    out.report = stage("student-eval " + name, [&] { return eval_json(out.run.best, test); });
    out.report["seed"] = seed;
    out.report["best_dev"] = out.run.best_dev;
    out.report["best_step"] = out.run.best_step;
    out.report["steps"] = out.run.steps;
    out.report["first_loss"] =
        out.run.loss_curve.empty() ? json(nullptr) : json(out.run.loss_curve.front().second.l_overall);
    return out;
}

namespace {

struct SeedResult {
    json teacher;
    std::vector<json> students;                     // per variant (non-subsets)
    std::vector<std::vector<json>> fraction_students;  // [fraction][variant]
    json zero_shot;
    std::vector<std::pair<std::string, std::string>> logs;  // relative path, csv content
    CurveSink curves;
};

std::string log_csv(const TrainRun& run, const fs::path& scratch_dir, const std::string& name) {
    const fs::path tmp = scratch_dir / (name + ".tmp");
    write_train_log(run, tmp);
    std::ifstream in(tmp);
    std::stringstream ss;
    ss << in.rdbuf();
    in.close();
    fs::remove(tmp);
    return ss.str();
}

json aggregate(const std::vector<json>& per_seed) {
    std::vector<double> xs;
    for (const auto& e : per_seed) xs.push_back(e.at("test").at("score").get<double>());
    const Stats st = stats(xs);
    json per_lang = json::object();
    if (!per_seed.empty()) {
        for (const auto& [lang, _] : per_seed.front().at("per_language").items()) {
            std::vector<double> ls;
            for (const auto& e : per_seed) ls.push_back(e.at("per_language").at(lang).get<double>());
            per_lang[lang] = stats(ls).mean;
        }
    }
    return json{{"mean", st.mean}, {"std", st.std}, {"per_language_mean", per_lang}, {"per_seed", per_seed}};
}

std::string iso_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

}  // namespace

json run_scenario(const ExperimentSpec& spec) {
    const auto started = std::chrono::steady_clock::now();
    const std::string started_iso = iso_now();
    const std::vector<Variant> variants = effective_variants(spec);

    const ScenarioData data = stage("data", [&] { return build_data(spec); });
    const ScenarioSplits r = scenario_splits(spec, data);
    const ModelConfig teacher_cfg = resolve_model_config(spec.teacher_cfg, data);
    const ModelConfig student_cfg = resolve_model_config(spec.student_cfg, data);

    const bool needs_copy = spec.scenario == Scenario::ZeroShotCopy ||
                            std::any_of(variants.begin(), variants.end(),
                                        [](const Variant& v) { return v.init != InitKind::FromScratch; });
    const bool needs_kd = std::any_of(variants.begin(), variants.end(), [](const Variant& v) { return v.kd; });
    try {
        if (needs_copy) build_copy_plan(teacher_cfg, student_cfg);
        if (needs_kd) {
            layer_map(student_cfg.n_layers, teacher_cfg.n_layers);
            if (teacher_cfg.n_heads != student_cfg.n_heads) {
                throw IncompatibleConfig("distillation needs equal head counts");
            }
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("teacher/student configs: ") + e.what());
    }

    const fs::path out_dir = spec.output_dir;
    fs::create_directories(out_dir / "logs");
    fs::create_directories(out_dir / "checkpoints");
    const std::string hash = spec_hash(spec);

    // Base model: shared by every seed, cached by the inputs it depends on.
    const bool needs_base = spec.teacher_init == InitKind::FromBase ||
                            std::any_of(variants.begin(), variants.end(),
                                        [](const Variant& v) { return v.init == InitKind::FromBase; });
    std::optional<EncoderModel> base;
    json base_info = nullptr;
    if (needs_base) {
        if (spec.base_checkpoint) {
            base = stage("base-load", [&] { return load_checkpoint(*spec.base_checkpoint); });
            if (!(base->config == teacher_cfg)) throw ConfigError("base_checkpoint config does not match teacher_cfg");
            base_info = json{{"source", "checkpoint"}, {"fingerprint", hex64(base->fingerprint())}};
        } else {
            const json key{{"teacher_cfg", teacher_cfg},
                           {"data", data_json(spec.data)},
                           {"pretext", canonical_spec(spec).at("pretext")},
                           {"pretrain", spec.pretrain}};
            const std::string key_hash = hex64(fnv1a(key.dump()));
            const fs::path ck = out_dir / "checkpoints" / "base.ck";
            const fs::path meta = out_dir / "checkpoints" / "base.json";
            json cached;
            if (fs::exists(ck) && fs::exists(meta)) {
                std::ifstream in(meta);
                cached = json::parse(in, nullptr, false);
            }
            if (cached.is_object() && cached.value("key", "") == key_hash) {
                base = stage("base-load", [&] { return load_checkpoint(ck); });
                base_info = cached.at("info");
            } else {
                PretrainRun pr = stage("pretrain-base", [&] { return pretrain_base(spec, data); });
                base = pr.base;
                save_checkpoint(*base, ck);
                base_info = json{{"source", "pretext"},
                                 {"steps", pr.loss_curve.size()},
                                 {"mlm_loss_first", pr.loss_curve.empty() ? 0.0 : pr.loss_curve.front().second},
                                 {"mlm_loss_last", pr.loss_curve.empty() ? 0.0 : pr.loss_curve.back().second},
                                 {"fingerprint", hex64(base->fingerprint())}};
                write_text(meta, json{{"key", key_hash}, {"info", base_info}}.dump(2) + "\n");
                std::ostringstream os;
                os << "step,mlm_loss\n" << std::setprecision(17);
                for (const auto& [s, l] : pr.loss_curve) os << s << ',' << l << '\n';
                write_text(out_dir / "logs" / "base.csv", os.str());
            }
        }
    }
    const EncoderModel* base_ptr = base ? &*base : nullptr;

    // Subsets are drawn once and shared by every seed.
    std::vector<Corpus> subsets;
    if (spec.scenario == Scenario::Subsets) {
        for (std::size_t i = 0; i < spec.fractions.size(); ++i) {
            subsets.push_back(stratified_subset(r.student_train, spec.fractions[i], derive(spec.partition.seed, 0x5b + i)));
        }
    }

    std::vector<SeedResult> results(spec.seeds.size());
    std::vector<std::exception_ptr> errors(spec.seeds.size());
    auto run_seed = [&](std::size_t si) {
        try {
            const std::uint64_t seed = spec.seeds[si];
            SeedResult& res = results[si];
            const std::string prefix = "seed" + std::to_string(seed);
            TeacherResult teacher = stage("teacher (seed " + std::to_string(seed) + ")",
                                          [&] { return train_teacher(spec, data, base_ptr, seed); });
            const std::uint64_t teacher_hash = teacher.model.fingerprint();
            save_checkpoint(teacher.model, out_dir / "checkpoints" / ("teacher_" + prefix + ".ck"));
            res.teacher = eval_json(teacher.model, r.test);
            res.teacher["seed"] = seed;
            res.teacher["best_dev"] = teacher.run.best_dev;
            res.teacher["best_step"] = teacher.run.best_step;
            res.teacher["steps"] = teacher.run.steps;
            res.teacher["fingerprint"] = hex64(teacher_hash);
            res.logs.emplace_back("logs/" + prefix + "_teacher.csv", log_csv(teacher.run, out_dir / "logs", prefix + "_teacher"));
            res.curves.add(teacher.run, prefix + "/teacher");

            if (spec.scenario == Scenario::ZeroShotCopy) {
                res.zero_shot = stage("zero-shot-copy (seed " + std::to_string(seed) + ")", [&] {
                    const EvalReport rep = zero_shot_eval(teacher.model, student_cfg, r.test, derive(seed, 0x57d));
                    const CopyPlan plan = build_copy_plan(teacher.model.config, student_cfg);
                    const EncoderModel copied = copy_weights(teacher.model, init_random(student_cfg, derive(seed, 0x57d)), plan);
                    json e = eval_json(copied, r.test);
                    e["test"] = rep;
                    e["seed"] = seed;
                    e["student_steps"] = 0;
                    return e;
                });
            }

            auto one = [&](const Variant& v, const Corpus& train_set, const std::string& tag) {
                StudentResult o = train_student(spec, v, student_cfg, teacher.model, base_ptr, train_set,
                                                r.student_dev, r.test, seed);
                const std::string series = (tag.empty() ? "" : tag + "/") + prefix + "/" + v.label();
                std::string file = series;
                std::replace(file.begin(), file.end(), '/', '_');
                res.logs.emplace_back("logs/" + file + ".csv", log_csv(o.run, out_dir / "logs", file));
                res.curves.add(o.run, series);
                if (spec.scenario != Scenario::Subsets) {
                    save_checkpoint(o.run.best, out_dir / "checkpoints" / (prefix + "_" + v.label() + ".ck"));
                }
                o.report["loss_curve_ref"] = "curves.csv#" + series;
                return o;
            };

            if (spec.scenario == Scenario::Subsets) {
                for (std::size_t fi = 0; fi < spec.fractions.size(); ++fi) {
                    std::vector<StudentResult> outs;
                    for (const auto& v : variants) outs.push_back(one(v, subsets[fi], "f" + fraction_tag(spec.fractions[fi])));
                    // Threshold: half of the from-scratch run's first logged loss.
                    std::optional<double> tau;
                    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
                        if (variants[vi].init == InitKind::FromScratch && !variants[vi].kd && !outs[vi].run.loss_curve.empty()) {
                            tau = 0.5 * outs[vi].run.loss_curve.front().second.l_overall;
                        }
                    }
                    std::vector<json> entries;
                    for (auto& o : outs) {
                        if (tau) {
                            const auto s = steps_to_threshold(o.run, *tau, spec.student_train.smoothing_window);
                            o.report["threshold"] = *tau;
                            o.report["steps_to_threshold"] = s ? json(*s) : json(nullptr);
                        }
                        entries.push_back(std::move(o.report));
                    }
                    res.fraction_students.push_back(std::move(entries));
                }
            } else {
                for (const auto& v : variants) res.students.push_back(one(v, r.student_train, "").report);
            }
            if (teacher.model.fingerprint() != teacher_hash) {
                throw StageError("teacher parameters changed during student training");
            }
        } catch (...) {
            errors[si] = std::current_exception();
        }
    };

    {
        const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(spec.threads), spec.seeds.size());
        std::mutex mu;
        std::size_t next = 0;
        auto worker = [&] {
            for (;;) {
                std::size_t si;
                {
                    std::lock_guard<std::mutex> lock(mu);
                    if (next >= spec.seeds.size()) return;
                    si = next++;
                }
                run_seed(si);
            }
        };
        if (workers <= 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
            for (auto& t : pool) t.join();
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    // Aggregation in seed order.
    for (const auto& res : results) {
        for (const auto& [rel, text] : res.logs) write_text(out_dir / rel, text);
    }
    {
        std::string curves = "step,value,series\n";
        for (const auto& res : results)
            for (const auto& chunk : res.curves.rows) curves += chunk;
        write_text(out_dir / "curves.csv", curves);
    }

    json manifest{{"teacher_train", manifest_of(r.teacher_train)},
                  {"teacher_dev", manifest_of(r.teacher_dev)},
                  {"student_train", manifest_of(r.student_train)},
                  {"student_dev", manifest_of(r.student_dev)},
                  {"test", manifest_of(r.test)}};
    if (needs_base && !spec.base_checkpoint) {
        manifest["pretext_unlabeled"] = manifest_of(build_pretext(spec, data));
    }

    json report{{"schema_version", kSchemaVersion},
                {"tool", "kdlab"},
                {"tool_version", kToolVersion},
                {"config_hash", hash},
                {"scenario", to_string(spec.scenario)},
                {"spec", canonical_spec(spec)},
                {"seeds", spec.seeds},
                {"metric", data.test.task == Task::SequenceClassification ? "macro_f1" : "span_f1"},
                {"teacher_config", teacher_cfg},
                {"student_config", student_cfg},
                {"baseline", baseline_json(r.test)},
                {"manifest", manifest},
                {"base", base_info},
                {"curves", "curves.csv"}};

    if (r.partition) {
        std::size_t leaked = 0;
        for (const Corpus* c : {&r.teacher_train, &r.teacher_dev, &r.student_train, &r.student_dev}) {
            for (const auto& ex : c->examples) leaked += r.partition->unseen.count(ex.lang);
        }
        report["partition"] = json{{"seen", r.partition->seen},
                                   {"unseen", r.partition->unseen},
                                   {"english_analogue", r.partition->english_analogue}};
        report["leakage_check"] = json{{"unseen_examples_in_train_dev", leaked}, {"ok", leaked == 0}};
    }

    std::vector<json> teacher_entries;
    for (const auto& res : results) teacher_entries.push_back(res.teacher);
    report["teacher"] = aggregate(teacher_entries);

    if (spec.scenario == Scenario::ZeroShotCopy) {
        std::vector<json> zs;
        for (const auto& res : results) zs.push_back(res.zero_shot);
        report["zero_shot_copy"] = aggregate(zs);
        report["zero_shot_copy"]["student_steps"] = 0;
    }

    auto student_block = [&](auto&& per_variant_entries) {
        json students = json::array();
        for (std::size_t vi = 0; vi < variants.size(); ++vi) {
            json cell = aggregate(per_variant_entries(vi));
            cell["variant"] = variants[vi].label();
            cell["init"] = to_string(variants[vi].init);
            cell["kd"] = variants[vi].kd;
            students.push_back(std::move(cell));
        }
        return students;
    };

    if (spec.scenario == Scenario::Subsets) {
        fs::create_directories(out_dir / "reports");
        json fractions = json::array();
        for (std::size_t fi = 0; fi < spec.fractions.size(); ++fi) {
            json students = student_block([&](std::size_t vi) {
                std::vector<json> xs;
                for (const auto& res : results) xs.push_back(res.fraction_students[fi][vi]);
                return xs;
            });
            for (auto& cell : students) {
                std::vector<double> steps;
                bool all = true;
                for (const auto& e : cell.at("per_seed")) {
                    if (e.contains("steps_to_threshold") && !e.at("steps_to_threshold").is_null()) {
                        steps.push_back(e.at("steps_to_threshold").get<double>());
                    } else {
                        all = false;
                    }
                }
                cell["steps_to_threshold_mean"] = all && !steps.empty() ? json(stats(steps).mean) : json(nullptr);
            }
            const std::string tag = fraction_tag(spec.fractions[fi]);
            json entry{{"fraction", spec.fractions[fi]},
                       {"train_examples", subsets[fi].size()},
                       {"train_manifest", manifest_of(subsets[fi])},
                       {"students", students},
                       {"report", "reports/fraction_" + tag + ".json"}};
            json single = report;
            single["fraction"] = entry;
            write_text(out_dir / "reports" / ("fraction_" + tag + ".json"), single.dump(2) + "\n");
            fractions.push_back(std::move(entry));
        }
        report["fractions"] = fractions;
    } else {
        report["students"] = student_block([&](std::size_t vi) {
            std::vector<json> xs;
            for (const auto& res : results) xs.push_back(res.students[vi]);
            return xs;
        });
    }

    write_text(out_dir / "metrics.json", report.dump(2) + "\n");
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    write_text(out_dir / "run_meta.json", json{{"started", started_iso},
                                               {"finished", iso_now()},
                                               {"wall_seconds", wall},
                                               {"threads", spec.threads},
                                               {"config_hash", hash}}
                                                  .dump(2) +
                                              "\n");
    return report;
}

// ---- comparison -----------------------------------------------------------

json compare_reports(const std::vector<json>& reports) {
    if (reports.empty()) throw ConfigError("compare: no reports");
    for (const auto& r : reports) {
        if (!r.contains("spec") || !r.contains("seeds")) throw ConfigError("compare: not a kdlab metrics report");
        if (r.at("spec").at("data") != reports.front().at("spec").at("data") ||
            r.at("seeds") != reports.front().at("seeds")) {
            throw ConfigError("compare: reports differ in data spec or seeds");
        }
    }
    auto cells_of = [](const json& r) {
        std::vector<json> cells;
        auto add = [&](const json& students, const std::string& prefix) {
            for (const auto& s : students) {
                cells.push_back(json{{"cell", prefix + s.at("variant").get<std::string>()},
                                     {"mean", s.at("mean")},
                                     {"std", s.at("std")}});
            }
        };
        if (r.contains("students")) add(r.at("students"), "");
        if (r.contains("fractions")) {
            for (const auto& f : r.at("fractions")) add(f.at("students"), "f" + fraction_tag(f.at("fraction").get<double>()) + "/");
        }
        if (r.contains("zero_shot_copy")) {
            cells.push_back(json{{"cell", "zero-shot-copy"},
                                 {"mean", r.at("zero_shot_copy").at("mean")},
                                 {"std", r.at("zero_shot_copy").at("std")}});
        }
        return cells;
    };
    // Table rows in the order from-scratch, +KD, from-teacher, +KD, then the rest.
    auto rank = [](const std::string& cell) {
        static const std::vector<std::string> order{"from-scratch", "from-scratch+kd", "from-teacher", "from-teacher+kd",
                                                    "from-base", "from-base+kd", "zero-shot-copy"};
        const std::string tail = cell.substr(cell.find('/') == std::string::npos ? 0 : cell.rfind('/') + 1);
        const auto it = std::find(order.begin(), order.end(), tail);
        return static_cast<int>(it - order.begin());
    };

    json table = json::array();
    std::map<std::string, double> first_mean;
    for (std::size_t ri = 0; ri < reports.size(); ++ri) {
        auto cells = cells_of(reports[ri]);
        std::stable_sort(cells.begin(), cells.end(), [&](const json& a, const json& b) {
            const auto ca = a.at("cell").get<std::string>(), cb = b.at("cell").get<std::string>();
            const auto pa = ca.substr(0, ca.rfind('/') == std::string::npos ? 0 : ca.rfind('/'));
            const auto pb = cb.substr(0, cb.rfind('/') == std::string::npos ? 0 : cb.rfind('/'));
            if (pa != pb) return pa < pb;
            return rank(ca) < rank(cb);
        });
        for (auto& c : cells) {
            c["report"] = ri;
            c["scenario"] = reports[ri].at("scenario");
            const auto name = c.at("cell").get<std::string>();
            if (!first_mean.count(name)) first_mean[name] = c.at("mean").get<double>();
            table.push_back(c);
        }
    }

    json across = json::array();
    for (const auto& c : table) {
        const auto name = c.at("cell").get<std::string>();
        across.push_back(json{{"report", c.at("report")},
                              {"cell", name},
                              {"delta_vs_first", c.at("mean").get<double>() - first_mean.at(name)}});
    }
    json pairwise = json::array();
    std::vector<std::string> names;
    for (const auto& c : table) {
        const auto n = c.at("cell").get<std::string>();
        if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
    }
    for (std::size_t a = 0; a < names.size(); ++a) {
        for (std::size_t b = a + 1; b < names.size(); ++b) {
            pairwise.push_back(json{{"a", names[a]}, {"b", names[b]}, {"delta", first_mean[names[b]] - first_mean[names[a]]}});
        }
    }

    json flags = json::array();
    auto flag = [&](const std::string& prefix, const std::string& hi, const std::string& lo, double margin) {
        if (!first_mean.count(prefix + hi) || !first_mean.count(prefix + lo)) return;
        const double delta = first_mean[prefix + hi] - first_mean[prefix + lo];
        std::string claim = prefix + hi + " > " + prefix + lo;
        if (margin > 0.0) claim = prefix + hi + " - " + prefix + lo + " >= " + fraction_tag(margin);
        flags.push_back(json{{"claim", claim}, {"delta", delta}, {"holds", margin > 0.0 ? delta >= margin : delta > 0.0}});
    };
    std::set<std::string> prefixes;
    for (const auto& n : names) prefixes.insert(n.rfind('/') == std::string::npos ? "" : n.substr(0, n.rfind('/') + 1));
    for (const auto& p : prefixes) {
        flag(p, "from-teacher+kd", "from-teacher", 0.0);
        flag(p, "from-teacher", "from-scratch+kd", 0.0);
        flag(p, "from-scratch+kd", "from-scratch", 0.0);
        flag(p, "from-teacher", "from-scratch+kd", 0.05);
        flag(p, "from-teacher", "from-base", 0.0);
        flag(p, "from-base", "from-scratch", 0.0);
    }
    return json{{"schema_version", kSchemaVersion},
                {"cells", table},
                {"across_reports", across},
                {"pairwise", pairwise},
                {"ordering_flags", flags}};
}

std::string format_comparison(const json& cmp) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << std::left << std::setw(8) << "report" << std::setw(28) << "cell" << std::right << std::setw(10) << "mean"
       << std::setw(10) << "std" << '\n';
    for (const auto& c : cmp.at("cells")) {
        os << std::left << std::setw(8) << c.at("report").get<int>() << std::setw(28) << c.at("cell").get<std::string>()
           << std::right << std::setw(10) << 100.0 * c.at("mean").get<double>() << std::setw(10)
           << 100.0 * c.at("std").get<double>() << '\n';
    }
    for (const auto& f : cmp.at("ordering_flags")) {
        os << (f.at("holds").get<bool>() ? "[holds]  " : "[fails]  ") << f.at("claim").get<std::string>()
           << "  (delta " << 100.0 * f.at("delta").get<double>() << ")\n";
    }
    return os.str();
}

}  // namespace kdlab
