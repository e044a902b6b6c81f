// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Declarative experiment scenarios and their JSON reports.
//
// A scenario run (per seed): train a teacher (from the pretext-pretrained
// base, or from random weights), initialize each configured student variant,
// train it with or without distillation, and evaluate the best-on-dev
// snapshot on the scenario's test partition. Metric reports are a pure
// function of the ExperimentSpec; wall-clock data goes to a separate run_meta.json.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "kdlab/data.hpp"
#include "kdlab/model.hpp"
#include "kdlab/train.hpp"

namespace kdlab {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

// Invalid or inconsistent experiment configuration (CLI exit code 2).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class Scenario { AllLangs, ZsclSeen, ZsclEnglish, EnglishOnlyTeacher, ZeroShotCopy, Subsets };
std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& name);

enum class InitKind { FromScratch, FromBase, FromTeacher };
std::string to_string(InitKind k);
InitKind init_from_string(const std::string& name);

struct Variant {
    InitKind init = InitKind::FromTeacher;
    bool kd = false;
    std::string label() const;  // e.g. "from-teacher+kd"
    bool operator==(const Variant&) const = default;
};

struct DataFiles {
    std::filesystem::path train, dev, test;
    std::string format = "jsonl";  // or "conll"
    int vocab_size = 0;            // 0 = max token id + 2
};

struct DataSpec {
    std::optional<GeneratorParams> generator;  // n_per_lang is the train count per language
    int dev_per_lang = 60;
    int test_per_lang = 200;
    std::optional<DataFiles> files;
};

// Overrides applied to the task generator to build the unlabeled pretext corpus.
// Topics are always balanced there, whatever the task's class_weights.
struct PretextSpec {
    int n_per_lang = 400;
    double anchor_ratio = 0.7;
    int keywords_per_seq = -1;  // -1 = keep the task value
    int off_class_keywords = -1;
    std::uint64_t seed = 101;
};

struct PartitionSpec {
    double unseen_fraction = 0.25;
    std::uint64_t seed = 7;
    std::optional<std::string> english;
};

struct ExperimentSpec {
    Scenario scenario = Scenario::AllLangs;
    DataSpec data;
    PretextSpec pretext;
    PartitionSpec partition;
    nlohmann::json teacher_cfg = nlohmann::json::object();  // partial ModelConfig; data fields filled in
    nlohmann::json student_cfg = nlohmann::json::object();
    InitKind teacher_init = InitKind::FromBase;
    std::vector<Variant> variants;  // defaults per scenario when empty
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::vector<double> fractions{0.01, 0.05, 0.10, 0.20, 1.0};
    TrainConfig teacher_train;
    TrainConfig student_train;
    PretrainConfig pretrain;
    std::optional<std::filesystem::path> base_checkpoint;
    std::filesystem::path output_dir = "kdlab-out";
    int threads = 1;
};

// Parses and validates; throws ConfigError (unknown keys included).
ExperimentSpec parse_spec(const nlohmann::json& j);
ExperimentSpec load_spec(const std::filesystem::path& path);
// Canonical form used for hashing: every field, defaults filled in, without
// output_dir and threads (they do not change results).
nlohmann::json canonical_spec(const ExperimentSpec& spec);
std::string spec_hash(const ExperimentSpec& spec);

std::vector<Variant> effective_variants(const ExperimentSpec& spec);

// Generated or loaded splits plus the languages they cover.
struct ScenarioData {
    Corpus train, dev, test;
    std::vector<LanguageSpec> languages;  // empty for file data
    int vocab_size = 0;
    int seq_len = 0;
};

ScenarioData build_data(const ExperimentSpec& spec);
Corpus build_pretext(const ExperimentSpec& spec, const ScenarioData& data);
ModelConfig resolve_model_config(const nlohmann::json& partial, const ScenarioData& data);

// Who trains and who is tested on which languages.
struct ScenarioSplits {
    Corpus teacher_train, teacher_dev, student_train, student_dev, test;
    std::optional<LanguagePartition> partition;  // cross-lingual scenarios only
};
ScenarioSplits scenario_splits(const ExperimentSpec& spec, const ScenarioData& data);

// Runs the scenario, writes metrics.json, run_meta.json, curves.csv and
// per-run logs below spec.output_dir and returns the metrics document.
nlohmann::json run_scenario(const ExperimentSpec& spec);

// Table of mean/std per (init, kd) cell across reports, pairwise deltas and
// expected-ordering flags computed from means. Throws ConfigError when the
// reports do not share data spec and seeds.
nlohmann::json compare_reports(const std::vector<nlohmann::json>& reports);
std::string format_comparison(const nlohmann::json& comparison);

// Lower-level stages, also exposed as CLI subcommands.
PretrainRun pretrain_base(const ExperimentSpec& spec, const ScenarioData& data);
struct TeacherResult {
    EncoderModel model;
    TrainRun run;
};
TeacherResult train_teacher(const ExperimentSpec& spec, const ScenarioData& data, const EncoderModel* base,
                            std::uint64_t seed);

struct StudentResult {
    TrainRun run;
    nlohmann::json report;  // test score, per-language scores, best dev
};
StudentResult train_student(const ExperimentSpec& spec, const Variant& variant, const ModelConfig& student_cfg,
                            const EncoderModel& teacher, const EncoderModel* base, const Corpus& train_set,
                            const Corpus& dev_set, const Corpus& test, std::uint64_t seed);

nlohmann::json evaluation_report(const EncoderModel& model, const Corpus& test);

// Writes `data` as train/dev/test files plus languages.json into dir.
void write_dataset(const ScenarioData& data, const std::filesystem::path& dir);

std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);

}  // namespace kdlab
