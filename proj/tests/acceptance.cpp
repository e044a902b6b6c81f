// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. `acceptance --criterion N` runs one criterion, no
// argument runs all of them. Each criterion prints one PASS/FAIL line
// (preceded by detail lines) and the exit code is nonzero on any FAIL.
// Work files go to ./acceptance-work (override with KDLAB_ACCEPTANCE_DIR).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kdlab/experiment.hpp"
#include "kdlab/init.hpp"

using namespace kdlab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Check {
    bool ok = true;
    void expect(bool cond, const std::string& what) {
        std::cout << "  [" << (cond ? "ok" : "FAILED") << "] " << what << '\n';
        ok = ok && cond;
    }
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

std::string sci(double v) {
    std::ostringstream os;
    os << std::scientific << std::setprecision(2) << v;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path work_dir() {
    const char* env = std::getenv("KDLAB_ACCEPTANCE_DIR");
    const fs::path p = env ? fs::path(env) : fs::current_path() / "acceptance-work";
    fs::create_directories(p);
    return p;
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    return json::parse(in);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ModelConfig toy_config(int layers, int d) {
    ModelConfig c;
    c.n_layers = layers;
    c.n_heads = 2;
    c.hidden_dim = d;
    c.ffn_dim = 2 * d;
    c.vocab_size = 32;
    c.max_seq_len = 8;
    c.n_classes = 3;
    return c;
}

std::vector<std::vector<int>> random_batch(std::mt19937_64& rng, int n, int len, int vocab) {
    std::uniform_int_distribution<int> tok(1, vocab - 1);
    std::vector<std::vector<int>> b(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(len)));
    for (auto& s : b) {
        s[0] = 0;
        for (int i = 1; i < len; ++i) s[static_cast<std::size_t>(i)] = tok(rng);
    }
    return b;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = u(rng);
    return Tensor::from(std::move(shape), std::move(v), true);
}

// ---- shared experiment plumbing ------------------------------------------

// Loads a shipped config, points it at the work dir and a cached base model.
ExperimentSpec prepare(const std::string& config_name, const std::string& run_name) {
    const fs::path src = fs::path(KDLAB_SOURCE_DIR) / "configs" / config_name;
    ExperimentSpec spec = load_spec(src);
    const fs::path work = work_dir();
    spec.output_dir = work / run_name;
    const json canon = canonical_spec(spec);
    const json key{{"teacher_cfg", canon.at("teacher_cfg")},
                   {"data", canon.at("data")},
                   {"pretext", canon.at("pretext")},
                   {"pretrain", canon.at("pretrain")},
                   {"tool", kToolVersion}};
    const fs::path base = work / ("base-" + hex64(fnv1a(key.dump())) + ".ck");
    if (!fs::exists(base)) {
        const auto t0 = std::chrono::steady_clock::now();
        const ScenarioData data = build_data(spec);
        const PretrainRun run = pretrain_base(spec, data);
        save_checkpoint(run.base, base.string() + ".tmp");
        fs::rename(base.string() + ".tmp", base);
        std::cout << "  pretrained shared base " << base.filename().string() << " in " << fmt(seconds_since(t0), 1)
                  << " s\n";
    } else {
        std::cout << "  reusing shared base " << base.filename().string() << '\n';
    }
    spec.base_checkpoint = base;
    fs::remove_all(spec.output_dir);
    return spec;
}

const json& cell(const json& students, const std::string& variant) {
    for (const auto& s : students)
        if (s.at("variant") == variant) return s;
    throw std::runtime_error("report has no variant " + variant);
}

double mean_of(const json& students, const std::string& variant) {
    return cell(students, variant).at("mean").get<double>();
}

// ---- criteria ------------------------------------------------------------

bool criterion_1() {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    struct Op {
        const char* name;
        Shape shape;
        std::function<Tensor(const Tensor&, std::mt19937_64&)> f;
    };
    const std::vector<int> targets{2, 0};
    const std::vector<int> rows{1, 0, 1};
    const std::vector<Op> ops{
        {"matmul", {3, 4}, [](const Tensor& a, std::mt19937_64& r) {
             const Tensor b = random_tensor({4, 2}, r);
             return sum(mul(matmul(a, b), matmul(a, b)));
         }},
        {"bmm", {2, 3, 4}, [](const Tensor& a, std::mt19937_64& r) {
             const Tensor b = random_tensor({2, 4, 3}, r);
             return sum(mul(bmm(a, b), bmm(a, b)));
         }},
        {"bmm_nt", {2, 3, 4}, [](const Tensor& a, std::mt19937_64&) { return sum(mul(bmm_nt(a, a), bmm_nt(a, a))); }},
        {"add/sub/mul", {2, 4}, [](const Tensor& a, std::mt19937_64& r) {
             const Tensor b = random_tensor({2, 4}, r);
             return sum(mul(add(a, b), sub(a, b)));
         }},
        {"scale/add_scalar", {5}, [](const Tensor& a, std::mt19937_64&) {
             return sum(mul(scale(a, -0.7), add_scalar(a, 0.4)));
         }},
        {"add_row", {3, 4}, [](const Tensor& a, std::mt19937_64& r) {
             const Tensor b = random_tensor({4}, r);
             return sum(mul(add_row(a, b), add_row(a, b)));
         }},
        {"gelu", {2, 5}, [](const Tensor& a, std::mt19937_64&) { return sum(mul(gelu(a), a)); }},
        {"softmax", {3, 5}, [](const Tensor& a, std::mt19937_64& r) {
             const Tensor w = random_tensor({3, 5}, r);
             return sum(mul(softmax(a), w));
         }},
        {"layer_norm", {3, 6}, [](const Tensor& a, std::mt19937_64& r) {
             const Tensor g = random_tensor({6}, r, 0.5, 1.5);
             const Tensor b = random_tensor({6}, r);
             const Tensor w = random_tensor({3, 6}, r);
             return sum(mul(layer_norm(a, g, b), w));
         }},
        {"gather_rows", {3, 4}, [&rows](const Tensor& a, std::mt19937_64&) {
             return sum(mul(gather_rows(a, rows), gather_rows(a, rows)));
         }},
        {"reshape/split/merge_heads", {4, 4}, [](const Tensor& a, std::mt19937_64& r) {
             const Tensor w = random_tensor({4, 4}, r);
             const Tensor h = split_heads(reshape(a, {4, 4}), 2, 2, 2);
             return sum(mul(merge_heads(scale(h, 1.3), 2, 2, 2), w));
         }},
        {"mean", {2, 3}, [](const Tensor& a, std::mt19937_64&) { return mean(mul(a, a)); }},
        {"mse", {2, 3}, [](const Tensor& a, std::mt19937_64& r) { return mse(a, random_tensor({2, 3}, r)); }},
        {"cross_entropy", {2, 3}, [&targets](const Tensor& a, std::mt19937_64&) { return cross_entropy(a, targets); }},
    };
    for (const auto& op : ops) {
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            std::mt19937_64 rng(7919 * (trial + 1));
            const Tensor x = random_tensor(op.shape, rng);
            std::mt19937_64 frng(trial);
            const auto state = frng;
            worst = std::max(worst, grad_check(
                                        [&](const Tensor& a) {
                                            std::mt19937_64 r = state;
                                            return op.f(a, r);
                                        },
                                        x));
        }
        c.expect(worst < 1e-4, std::string("primitive ") + op.name + ": worst rel-err over 100 trials " +
                                   sci(worst) + " < 1e-4");
    }

    const EncoderModel teacher = init_random(toy_config(4, 16), 11);
    const EncoderModel student = init_random(toy_config(2, 8), 12);
    const ProjectionParams proj = ProjectionParams::for_configs(student.config, teacher.config);
    std::mt19937_64 rng(13);
    const auto batch = random_batch(rng, 3, 6, 32);
    const std::vector<int> gold{0, 2, 1};
    ForwardTrace t_trace;
    {
        NoGradGuard g;
        t_trace = forward_batch(teacher, batch);
    }
    auto loss = [&] {
        return overall_loss(forward_batch(student, batch), &t_trace, gold, layer_map(2, 4), proj, true).total;
    };
    double worst = 0.0;
    for (const auto& [name, p] : student.named_parameters()) worst = std::max(worst, grad_check(loss, p));
    worst = std::max({worst, grad_check(loss, proj.hidden), grad_check(loss, proj.embedding)});
    c.expect(worst < 1e-3, "L_overall (2-layer d=8 student, 4-layer d=16 teacher): worst rel-err " + sci(worst) +
                               " < 1e-3");
    const double secs = seconds_since(t0);
    c.expect(secs < 60.0, "runtime " + fmt(secs, 1) + " s < 60 s");
    return c.ok;
}

bool criterion_2() {
    Check c;
    const EncoderModel teacher = init_random(toy_config(2, 8), 21);
    const EncoderModel student =
        copy_weights(teacher, init_random(toy_config(2, 8), 22), build_copy_plan(teacher.config, teacher.config));
    std::mt19937_64 rng(23);
    std::uniform_int_distribution<int> len(2, 8);
    bool zero = true, identical = true;
    for (int i = 0; i < 100; ++i) {
        const auto batch = random_batch(rng, 1, len(rng), 32);
        const std::vector<int> gold{i % 3};
        const ForwardTrace ts = forward_batch(teacher, batch);
        const ForwardTrace ss = forward_batch(student, batch);
        const KdLossBreakdown b = overall_loss(ss, &ts, gold, layer_map(2, 2), ProjectionParams{}, true).breakdown;
        zero = zero && b.l_att == 0.0 && b.l_hid == 0.0 && b.l_embd == 0.0 && b.l_pred == 0.0;
        identical = identical && std::equal(ts.logits.values().begin(), ts.logits.values().end(),
                                            ss.logits.values().begin(), ss.logits.values().end());
    }
    c.expect(zero, "l_att = l_hid = l_embd = l_pred = 0 exactly on 100 random inputs");
    c.expect(identical, "student logits bit-identical to the teacher on 100 random inputs");
    return c.ok;
}

bool criterion_3() {
    Check c;
    c.expect(slice_indices(4, 2) == std::vector<int>{0, 2}, "slice_indices(4,2) = [0,2]");
    std::vector<std::pair<int, int>> expected;
    for (int i = 1; i <= 6; ++i) expected.emplace_back(i, 2 * i);
    c.expect(layer_map(6, 12).pairs == expected, "layer_map(6,12) = (i,2i) for i=1..6");
    c.expect(build_copy_plan(toy_config(12, 8), toy_config(6, 8)).layer_pairs == expected,
             "copy plan for 12->6 layers pairs (i,2i)");
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<int> pick(1, 12);
    bool slices_ok = true, maps_ok = true;
    for (int trial = 0; trial < 1000; ++trial) {
        const int ds = pick(rng), dt = ds * pick(rng);
        const auto idx = slice_indices(dt, ds);
        slices_ok = slices_ok && static_cast<int>(idx.size()) == ds;
        for (std::size_t j = 0; j < idx.size(); ++j) {
            slices_ok = slices_ok && idx[j] >= 0 && idx[j] < dt && (j == 0 || idx[j] > idx[j - 1]);
        }
        const int ns = pick(rng), nt = ns * pick(rng);
        const auto pairs = layer_map(ns, nt).pairs;
        maps_ok = maps_ok && static_cast<int>(pairs.size()) == ns;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const auto [s, t] = pairs[i];
            maps_ok = maps_ok && s == static_cast<int>(i) + 1 && t >= 1 && t <= nt && t == s * (nt / ns) &&
                      (i == 0 || t > pairs[i - 1].second);
        }
    }
    c.expect(slices_ok, "1000 random divisible widths: slice indices monotone and in range");
    c.expect(maps_ok, "1000 random divisible depths: layer pairs monotone and in range");
    return c.ok;
}

bool criterion_4() {
    Check c;
    const std::vector<int> g1{0, 0, 1, 1}, p1{0, 1, 1, 1};
    const double m = macro_f1(g1, p1).score;
    c.expect(std::abs(m - (2.0 / 3.0 + 0.8) / 2.0) < 1e-12, "macro_f1([0,0,1,1],[0,1,1,1]) = " + fmt(m, 6));
    c.expect(macro_f1(g1, g1).score == 1.0, "macro_f1(gold, gold) = 1");
    const std::vector<std::string> tags{"B-PER", "I-PER", "O", "B-LOC"};
    c.expect(extract_spans(tags) == std::set<Span>{{"PER", 0, 1}, {"LOC", 3, 3}},
             "spans of [B-PER,I-PER,O,B-LOC] = {(PER,0,1),(LOC,3,3)}");
    const std::vector<std::string> stray{"I-PER"};
    c.expect(extract_spans(stray) == std::set<Span>{{"PER", 0, 0}}, "lenient [I-PER] -> {(PER,0,0)}");
    const EvalReport half = span_f1({tags}, {{"B-PER", "I-PER", "B-ORG", "O"}});
    c.expect(half.precision == 0.5 && half.recall == 0.5 && half.score == 0.5, "1 of 2 found, 1 spurious -> P=R=F1=0.5");
    c.expect(span_f1({tags}, {{"O", "O", "O", "O"}}).score == 0.0, "all-O prediction -> 0");
    const std::vector<int> binary{0, 1, 0, 1, 1, 0};
    const double mb = majority_baseline(binary).score;
    c.expect(std::abs(mb - 1.0 / 3.0) < 1e-9, "majority baseline, balanced binary gold: " + fmt(mb, 12));
    const std::vector<int> three{0, 1, 2, 0, 1, 2, 0, 1, 2};
    const double m3 = majority_baseline(three).score;
    c.expect(std::abs(m3 - 1.0 / 3.0) < 1e-9,
             "majority baseline, balanced 3-class gold: " + fmt(m3, 12) + " vs required 1/3 +- 1e-9");
    return c.ok;
}

bool criterion_5() {
    Check c;
    const ExperimentSpec spec = prepare("cls_small_all_langs.json", "c5-all-langs");
    const auto t0 = std::chrono::steady_clock::now();
    const json r = run_scenario(spec);
    const double secs = seconds_since(t0);
    const auto& s = r.at("students");
    const double tkd = mean_of(s, "from-teacher+kd"), t = mean_of(s, "from-teacher");
    const double skd = mean_of(s, "from-scratch+kd"), sc = mean_of(s, "from-scratch");
    std::cout << "  teacher " << fmt(r.at("teacher").at("mean").get<double>()) << ", from-teacher+kd " << fmt(tkd)
              << ", from-teacher " << fmt(t) << ", from-scratch+kd " << fmt(skd) << ", from-scratch " << fmt(sc)
              << " (test macro-F1 means over " << r.at("seeds").size() << " seeds)\n";
    c.expect(tkd > t && t > skd && skd > sc, "from-teacher+kd > from-teacher > from-scratch+kd > from-scratch");
    c.expect(t - skd >= 0.05, "from-teacher - from-scratch+kd = " + fmt(100 * (t - skd), 2) + " points >= 5");
    c.expect(secs < 20 * 60, "scenario runtime " + fmt(secs / 60, 1) + " min < 20 min");
    return c.ok;
}

bool criterion_6() {
    Check c;
    const json seen = run_scenario(prepare("cls_small_zscl_seen.json", "c6-zscl-seen"));
    const double base = seen.at("baseline").at("score").get<double>();
    const double t = mean_of(seen.at("students"), "from-teacher");
    const double sc = mean_of(seen.at("students"), "from-scratch");
    std::cout << "  zscl-seen unseen-language macro-F1: baseline " << fmt(base) << ", from-teacher " << fmt(t)
              << ", from-scratch " << fmt(sc) << '\n';
    c.expect(t - base >= 0.10, "zscl-seen from-teacher exceeds baseline by " + fmt(100 * (t - base), 2) + " >= 10 points");
    c.expect(std::abs(sc - base) <= 0.05,
             "zscl-seen from-scratch within " + fmt(100 * std::abs(sc - base), 2) + " <= 5 points of baseline");
    const json en = run_scenario(prepare("cls_small_zscl_english.json", "c6-zscl-english"));
    const double base_en = en.at("baseline").at("score").get<double>();
    const double t_en = mean_of(en.at("students"), "from-teacher");
    std::cout << "  zscl-english: baseline " << fmt(base_en) << ", from-teacher " << fmt(t_en) << '\n';
    c.expect(t_en > base_en, "zscl-english from-teacher above baseline");
    return c.ok;
}

bool criterion_7() {
    Check c;
    const json r = run_scenario(prepare("cls_large_zero_shot_copy.json", "c7-zero-shot-copy"));
    const double base = r.at("baseline").at("score").get<double>();
    const auto& zs = r.at("zero_shot_copy").at("per_seed");
    const auto& ft = cell(r.at("students"), "from-teacher").at("per_seed");
    c.expect(zs.size() == 3 && ft.size() == 3, "3 seeds");
    for (std::size_t i = 0; i < zs.size() && i < ft.size(); ++i) {
        const double z = zs[i].at("test").at("score").get<double>();
        const double f = ft[i].at("test").at("score").get<double>();
        c.expect(base < z && z < f, "seed " + std::to_string(zs[i].at("seed").get<int>()) + ": baseline " + fmt(base) +
                                        " < zero-shot copy " + fmt(z) + " < fine-tuned " + fmt(f));
    }
    return c.ok;
}

bool criterion_8() {
    Check c;
    const json r = run_scenario(prepare("cls_small_subsets.json", "c8-subsets"));
    auto at_least = [](const json& a, const json& b) {
        const double ma = a.at("mean").get<double>(), mb = b.at("mean").get<double>();
        const double tol = std::max(a.at("std").get<double>(), b.at("std").get<double>());
        return ma >= mb || mb - ma <= tol;
    };
    auto mean_steps = [](const json& s) {
        double total = 0.0;
        for (const auto& e : s.at("per_seed")) {
            const auto& v = e.at("steps_to_threshold");
            if (v.is_null()) return std::numeric_limits<double>::infinity();
            total += v.get<double>();
        }
        return total / static_cast<double>(s.at("per_seed").size());
    };
    for (const auto& f : r.at("fractions")) {
        const auto& s = f.at("students");
        const json &t = cell(s, "from-teacher"), &b = cell(s, "from-base"), &sc = cell(s, "from-scratch");
        const std::string tag = fmt(100 * f.at("fraction").get<double>(), 0) + "%";
        std::cout << "  " << tag << ": from-teacher " << fmt(t.at("mean").get<double>()) << "+-"
                  << fmt(t.at("std").get<double>()) << ", from-base " << fmt(b.at("mean").get<double>()) << "+-"
                  << fmt(b.at("std").get<double>()) << ", from-scratch " << fmt(sc.at("mean").get<double>()) << "+-"
                  << fmt(sc.at("std").get<double>()) << "; steps to threshold " << fmt(mean_steps(t), 1) << " / "
                  << fmt(mean_steps(b), 1) << " / " << fmt(mean_steps(sc), 1) << '\n';
        c.expect(at_least(t, b) && at_least(b, sc), tag + ": from-teacher >= from-base >= from-scratch (ties within 1 std)");
        c.expect(mean_steps(t) <= mean_steps(b) && mean_steps(t) <= mean_steps(sc),
                 tag + ": from-teacher reaches the loss threshold in the fewest steps");
    }
    return c.ok;
}

json tiny_spec(const std::string& scenario) {
    json j{{"scenario", scenario},
           {"data",
            {{"generator",
              {{"n_langs", 4}, {"n_per_lang", 12}, {"seq_len", 6}, {"keywords_per_class", 2}, {"filler_symbols", 4},
               {"seed", 5}}},
             {"dev_per_lang", 6},
             {"test_per_lang", 6}}},
           {"pretext", {{"n_per_lang", 8}}},
           {"teacher_cfg", {{"n_layers", 2}, {"hidden_dim", 8}}},
           {"student_cfg", {{"n_layers", 1}, {"hidden_dim", 8}}},
           {"seeds", {1, 2}},
           {"fractions", {0.5, 1.0}},
           {"teacher_train", {{"epochs", 1}, {"batch_size", 8}, {"lr", 1e-3}}},
           {"student_train", {{"epochs", 1}, {"batch_size", 8}, {"lr", 1e-3}, {"eval_steps", 2}}},
           {"pretrain", {{"epochs", 1}, {"batch_size", 8}}}};
    if (scenario == "zero-shot-copy") j["variants"] = json::array({{{"init", "from-teacher"}, {"kd", false}}});
    return j;
}

bool criterion_9() {
    Check c;
    for (const char* scenario :
         {"all-langs", "zscl-seen", "zscl-english", "english-only-teacher", "zero-shot-copy", "subsets"}) {
        std::string first;
        bool same = true;
        for (int rep = 0; rep < 2; ++rep) {
            json j = tiny_spec(scenario);
            const fs::path out = work_dir() / ("c9-" + std::string(scenario) + "-" + std::to_string(rep));
            fs::remove_all(out);
            j["output_dir"] = out.string();
            j["threads"] = rep + 1;
            run_scenario(parse_spec(j));
            std::string bytes = slurp(out / "metrics.json");
            if (rep == 0) first = std::move(bytes);
            else same = !first.empty() && bytes == first;
        }
        c.expect(same, std::string(scenario) + ": metrics.json byte-identical across two runs (1 and 2 threads)");
    }
    return c.ok;
}

bool criterion_10() {
    Check c;
    for (const char* scenario : {"zscl-seen", "zscl-english", "english-only-teacher"}) {
        json j = tiny_spec(scenario);
        j["data"]["generator"]["n_langs"] = 8;
        j["seeds"] = {1};
        const fs::path out = work_dir() / ("c10-" + std::string(scenario));
        fs::remove_all(out);
        j["output_dir"] = out.string();
        run_scenario(parse_spec(j));
        const json r = read_json(out / "metrics.json");
        std::set<std::string> unseen;
        for (const auto& u : r.at("partition").at("unseen")) unseen.insert(u.get<std::string>());
        std::size_t leaked = 0, train_dev_examples = 0;
        for (const char* split : {"teacher_train", "teacher_dev", "student_train", "student_dev"}) {
            for (const auto& [lang, n] : r.at("manifest").at(split).items()) {
                train_dev_examples += n.get<std::size_t>();
                if (unseen.count(lang)) leaked += n.get<std::size_t>();
            }
        }
        bool test_only_unseen = true;
        for (const auto& [lang, _] : r.at("manifest").at("test").items()) test_only_unseen &= unseen.count(lang) > 0;
        c.expect(!unseen.empty() && leaked == 0 && train_dev_examples > 0 &&
                     r.at("leakage_check").at("unseen_examples_in_train_dev") == 0,
                 std::string(scenario) + ": 0 of " + std::to_string(train_dev_examples) +
                     " train/dev examples come from the " + std::to_string(unseen.size()) + " unseen languages");
        c.expect(test_only_unseen, std::string(scenario) + ": test manifest holds unseen languages only");
    }
    return c.ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kdlab acceptance suite"};
    int only = 0;
    app.add_option("--criterion", only, "run a single criterion (1-10)")->check(CLI::Range(1, 10));
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<const char*, bool (*)()>> criteria{
        {"autodiff gradient checks", criterion_1},
        {"self-distillation is exactly zero", criterion_2},
        {"slicing and layer-mapping oracles", criterion_3},
        {"metric oracles", criterion_4},
        {"initialization dominates distillation (all languages)", criterion_5},
        {"zero-shot cross-lingual transfer", criterion_6},
        {"zero-shot weight copy", criterion_7},
        {"data efficiency and convergence", criterion_8},
        {"determinism", criterion_9},
        {"leakage guard", criterion_10},
    };
    bool all_ok = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (only != 0 && only != n) continue;
        std::cout << "criterion " << n << ": " << criteria[i].first << '\n';
        bool ok = false;
        try {
            ok = criteria[i].second();
        } catch (const std::exception& e) {
            std::cout << "  error: " << e.what() << '\n';
        }
        std::cout << (ok ? "PASS" : "FAIL") << " criterion " << n << ": " << criteria[i].first << '\n' << std::flush;
        all_ok = all_ok && ok;
    }
    return all_ok ? 0 : 1;
}
