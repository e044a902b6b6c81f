// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// kdlab command line: data generation, single stages and full scenarios.
// Exit codes: 0 success, 2 invalid configuration or arguments, 1 runtime failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kdlab/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kdlab;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string output_dir;
    int threads = 0;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed-override", c.seed, "run a single seed instead of the configured list");
    cmd->add_option("--output-dir", c.output_dir, "output directory (overrides the config)");
    cmd->add_option("--threads", c.threads, "worker threads for independent seeds")->check(CLI::PositiveNumber);
}

ExperimentSpec load(const Common& c) {
    ExperimentSpec spec = load_spec(c.config);
    if (c.seed) spec.seeds = {*c.seed};
    if (!c.output_dir.empty()) spec.output_dir = c.output_dir;
    if (c.threads > 0) spec.threads = c.threads;
    return spec;
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

EncoderModel load_model(const std::string& path) {
    try {
        return load_checkpoint(path);
    } catch (const std::exception& e) {
        throw ConfigError("cannot load checkpoint " + path + ": " + e.what());
    }
}

std::optional<EncoderModel> base_for(const ExperimentSpec& spec, const std::string& base_path) {
    if (!base_path.empty()) return load_model(base_path);
    if (spec.base_checkpoint) return load_model(spec.base_checkpoint->string());
    return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kdlab: knowledge-distillation lab for small encoders"};
    app.set_version_flag("--version", std::string("kdlab ") + kToolVersion);
    app.require_subcommand(1);

    Common c;
    std::string teacher_path, base_path, checkpoint_path, json_out;
    std::vector<std::string> reports;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus of a config");
    add_common(gen, c);
    auto* pre = app.add_subcommand("pretrain-base", "pretrain the base encoder on the pretext corpus");
    add_common(pre, c);
    auto* teach = app.add_subcommand("train-teacher", "fine-tune the teacher");
    add_common(teach, c);
    teach->add_option("--base", base_path, "base checkpoint")->check(CLI::ExistingFile);
    auto* dist = app.add_subcommand("distill", "train the configured student variant against a teacher");
    add_common(dist, c);
    dist->add_option("--teacher", teacher_path, "teacher checkpoint")->required()->check(CLI::ExistingFile);
    dist->add_option("--base", base_path, "base checkpoint (from-base students)")->check(CLI::ExistingFile);
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the scenario test split");
    add_common(ev, c);
    ev->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required()->check(CLI::ExistingFile);
    auto* zs = app.add_subcommand("zero-shot-copy", "copy the teacher into the student and evaluate without training");
    add_common(zs, c);
    zs->add_option("--teacher", teacher_path, "teacher checkpoint")->required()->check(CLI::ExistingFile);
    auto* exp = app.add_subcommand("experiment", "run a whole scenario over all seeds and variants");
    add_common(exp, c);
    auto* cmp = app.add_subcommand("compare", "tabulate metrics.json reports side by side");
    cmp->add_option("reports", reports, "metrics.json files")->required()->check(CLI::ExistingFile);
    cmp->add_option("--json", json_out, "also write the comparison as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*cmp) {
            std::vector<json> docs;
            for (const auto& r : reports) {
                std::ifstream in(r);
                json j = json::parse(in, nullptr, false);
                if (j.is_discarded()) throw ConfigError("compare: " + r + " is not valid JSON");
                docs.push_back(std::move(j));
            }
            const json result = compare_reports(docs);
            std::cout << format_comparison(result);
            if (!json_out.empty()) write_json(json_out, result);
            return 0;
        }

        const ExperimentSpec spec = load(c);
        const fs::path out = spec.output_dir;

        if (*exp) {
            const json report = run_scenario(spec);
            std::cout << "wrote " << (out / "metrics.json").string() << " (config " << report.at("config_hash").get<std::string>()
                      << ")\n";
            return 0;
        }

        const ScenarioData data = build_data(spec);
        if (*gen) {
            write_dataset(data, out / "data");
            std::cout << "wrote " << data.train.size() << '/' << data.dev.size() << '/' << data.test.size()
                      << " examples to " << (out / "data").string() << '\n';
            return 0;
        }
        if (*pre) {
            const PretrainRun run = pretrain_base(spec, data);
            fs::create_directories(out / "checkpoints");
            save_checkpoint(run.base, out / "checkpoints" / "base.ck");
            json curve = json::array();
            for (const auto& [step, loss] : run.loss_curve) curve.push_back({step, loss});
            write_json(out / "pretrain.json", json{{"config_hash", spec_hash(spec)}, {"mlm_loss", curve}});
            std::cout << "wrote " << (out / "checkpoints" / "base.ck").string() << '\n';
            return 0;
        }

        const ModelConfig student_cfg = resolve_model_config(spec.student_cfg, data);
        const ScenarioSplits splits = scenario_splits(spec, data);
        const std::uint64_t seed = spec.seeds.front();
        const std::string tag = "seed" + std::to_string(seed);

        if (*teach) {
            const auto base = base_for(spec, base_path);
            if (spec.teacher_init == InitKind::FromBase && !base) {
                throw ConfigError("train-teacher: from-base teacher needs --base or base_checkpoint");
            }
            const TeacherResult t = train_teacher(spec, data, base ? &*base : nullptr, seed);
            fs::create_directories(out / "checkpoints");
            fs::create_directories(out / "logs");
            save_checkpoint(t.model, out / "checkpoints" / ("teacher_" + tag + ".ck"));
            write_train_log(t.run, out / "logs" / (tag + "_teacher.csv"));
            json report = evaluation_report(t.model, splits.test);
            report["best_dev"] = t.run.best_dev;
            report["best_step"] = t.run.best_step;
            report["seed"] = seed;
            write_json(out / ("teacher_" + tag + ".json"), report);
            std::cout << "teacher test " << report.at("test").at("score").get<double>() << '\n';
            return 0;
        }

        const EncoderModel teacher = load_model(teacher_path.empty() ? checkpoint_path : teacher_path);
        if (*zs) {
            json report = evaluation_report(teacher, splits.test);
            const EvalReport rep = zero_shot_eval(teacher, student_cfg, splits.test, seed);
            report["test"] = rep;
            report["student_steps"] = 0;
            write_json(out / "zero_shot_copy.json", report);
            std::cout << "zero-shot copy test " << rep.score << '\n';
            return 0;
        }
        if (*ev) {
            const json report = evaluation_report(teacher, splits.test);
            std::cout << report.dump(2) << '\n';
            return 0;
        }
        if (*dist) {
            const auto variants = effective_variants(spec);
            if (variants.empty()) throw ConfigError("distill: the config names no student variant");
            const Variant v = variants.front();
            const auto base = base_for(spec, base_path);
            if (v.init == InitKind::FromBase && !base) {
                throw ConfigError("distill: from-base student needs --base or base_checkpoint");
            }
            const StudentResult r = train_student(spec, v, student_cfg, teacher, base ? &*base : nullptr,
                                                  splits.student_train, splits.student_dev, splits.test, seed);
            fs::create_directories(out / "checkpoints");
            fs::create_directories(out / "logs");
            save_checkpoint(r.run.best, out / "checkpoints" / (tag + "_" + v.label() + ".ck"));
            write_train_log(r.run, out / "logs" / (tag + "_" + v.label() + ".csv"));
            json report = r.report;
            report["variant"] = v.label();
            write_json(out / (tag + "_" + v.label() + ".json"), report);
            std::cout << v.label() << " test " << report.at("test").at("score").get<double>() << '\n';
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
