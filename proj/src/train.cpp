// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

#include "kdlab/init.hpp"

namespace kdlab {

// ---- AdamW ----------------------------------------------------------------

OptimizerState make_optimizer(const std::vector<Tensor>& params, const AdamWConfig& config) {
    OptimizerState s;
    s.config = config;
    for (const auto& p : params) {
        s.m.emplace_back(p.size(), 0.0);
        s.v.emplace_back(p.size(), 0.0);
    }
    return s;
}

void adamw_step(const std::vector<Tensor>& params, OptimizerState& state, std::optional<double> lr,
                const std::vector<std::string>* names) {
    if (params.size() != state.m.size() || params.size() != state.v.size()) {
        throw std::invalid_argument("adamw_step: optimizer state was built for " + std::to_string(state.m.size()) +
                                    " parameters, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].size() != params[i].size()) {
            throw std::invalid_argument("adamw_step: moment shape mismatch for parameter " + std::to_string(i));
        }
        for (double g : params[i].grad()) {
            if (!std::isfinite(g)) {
                const std::string who = names && i < names->size() ? (*names)[i] : "#" + std::to_string(i);
                throw NonFiniteGradient("non-finite gradient in parameter " + who + " at optimizer step " +
                                        std::to_string(state.t + 1));
            }
        }
    }
    const auto& c = state.config;
    const double rate = lr.value_or(c.lr);
    ++state.t;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor p = params[i];
        auto theta = p.mutable_values();
        const auto grad = p.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double g = grad.empty() ? 0.0 : grad[j];
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            theta[j] -= rate * (m_hat / (std::sqrt(v_hat) + c.eps)) + rate * c.weight_decay * theta[j];
        }
    }
}

// ---- configs --------------------------------------------------------------

namespace {

void reject_unknown(const nlohmann::json& j, const nlohmann::json& known, const std::string& what) {
    if (!j.is_object()) throw std::invalid_argument(what + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw std::invalid_argument(what + ": unknown key '" + key + "'");
    }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void to_json(nlohmann::json& j, const TrainConfig& c) {
    const auto& w = c.distill.weights;
    j = nlohmann::json{{"epochs", c.epochs},
                       {"max_steps", c.max_steps},
                       {"batch_size", c.batch_size},
                       {"lr", c.adam.lr},
                       {"beta1", c.adam.beta1},
                       {"beta2", c.adam.beta2},
                       {"eps", c.adam.eps},
                       {"weight_decay", c.adam.weight_decay},
                       {"linear_decay", c.linear_decay},
                       {"dropout", c.dropout},
                       {"eval_steps", c.eval_steps},
                       {"seed", c.seed},
                       {"kd_enabled", c.kd_enabled},
                       {"attention_target",
                        c.distill.attention == AttentionTarget::PreSoftmax ? "pre-softmax" : "post-softmax"},
                       {"loss_weights",
                        {{"att", w.att}, {"hid", w.hid}, {"embd", w.embd}, {"pred", w.pred}, {"clf", w.clf}}},
                       {"smoothing_window", c.smoothing_window}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    reject_unknown(j, nlohmann::json(TrainConfig{}), "train config");
    read(j, "epochs", c.epochs);
    read(j, "max_steps", c.max_steps);
    read(j, "batch_size", c.batch_size);
    read(j, "lr", c.adam.lr);
    read(j, "beta1", c.adam.beta1);
    read(j, "beta2", c.adam.beta2);
    read(j, "eps", c.adam.eps);
    read(j, "weight_decay", c.adam.weight_decay);
    read(j, "linear_decay", c.linear_decay);
    read(j, "dropout", c.dropout);
    read(j, "eval_steps", c.eval_steps);
    read(j, "seed", c.seed);
    read(j, "kd_enabled", c.kd_enabled);
    read(j, "smoothing_window", c.smoothing_window);
    if (j.contains("attention_target")) {
        const auto t = j.at("attention_target").get<std::string>();
        if (t == "pre-softmax") {
            c.distill.attention = AttentionTarget::PreSoftmax;
        } else if (t == "post-softmax") {
            c.distill.attention = AttentionTarget::PostSoftmax;
        } else {
            throw std::invalid_argument("train config: attention_target must be pre-softmax or post-softmax");
        }
    }
    if (j.contains("loss_weights")) {
        const auto& w = j.at("loss_weights");
        reject_unknown(w, nlohmann::json{{"att", 0}, {"hid", 0}, {"embd", 0}, {"pred", 0}, {"clf", 0}},
                       "loss_weights");
        auto& lw = c.distill.weights;
        read(w, "att", lw.att);
        read(w, "hid", lw.hid);
        read(w, "embd", lw.embd);
        read(w, "pred", lw.pred);
        read(w, "clf", lw.clf);
    }
    if (c.epochs < 0 || c.max_steps < 0 || c.batch_size < 1 || c.eval_steps < 0 || c.smoothing_window < 1) {
        throw std::invalid_argument("train config: epochs/max_steps/eval_steps must be >= 0, batch_size and "
                                    "smoothing_window >= 1");
    }
    if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw std::invalid_argument("train config: dropout must lie in [0,1)");
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},       {"max_steps", c.max_steps}, {"batch_size", c.batch_size},
                       {"lr", c.adam.lr},          {"beta1", c.adam.beta1},    {"beta2", c.adam.beta2},
                       {"eps", c.adam.eps},        {"weight_decay", c.adam.weight_decay},
                       {"mask_prob", c.mask_prob}, {"dropout", c.dropout},     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
    reject_unknown(j, nlohmann::json(PretrainConfig{}), "pretrain config");
    read(j, "epochs", c.epochs);
    read(j, "max_steps", c.max_steps);
    read(j, "batch_size", c.batch_size);
    read(j, "lr", c.adam.lr);
    read(j, "beta1", c.adam.beta1);
    read(j, "beta2", c.adam.beta2);
    read(j, "eps", c.adam.eps);
    read(j, "weight_decay", c.adam.weight_decay);
    read(j, "mask_prob", c.mask_prob);
    read(j, "dropout", c.dropout);
    read(j, "seed", c.seed);
    if (c.epochs < 0 || c.max_steps < 0 || c.batch_size < 1) {
        throw std::invalid_argument("pretrain config: epochs/max_steps must be >= 0 and batch_size >= 1");
    }
    if (!(c.mask_prob > 0.0 && c.mask_prob <= 1.0)) {
        throw std::invalid_argument("pretrain config: mask_prob must lie in (0,1]");
    }
}

// ---- batching and evaluation ----------------------------------------------

namespace {

// Batches hold sequences of one length only. With an rng the example order
// and the batch order are both shuffled.
std::vector<std::vector<std::size_t>> make_batches(const Corpus& corpus, int batch_size, std::mt19937_64* rng) {
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (rng) std::shuffle(order.begin(), order.end(), *rng);
    std::map<std::size_t, std::vector<std::size_t>> by_len;
    for (auto i : order) by_len[corpus.examples[i].tokens.size()].push_back(i);
    std::vector<std::vector<std::size_t>> batches;
    const auto bs = static_cast<std::size_t>(batch_size);
    for (auto& [_, idx] : by_len) {
        for (std::size_t s = 0; s < idx.size(); s += bs) {
            batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s),
                                 idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + bs)));
        }
    }
    if (rng) std::shuffle(batches.begin(), batches.end(), *rng);
    return batches;
}

std::vector<std::vector<int>> batch_tokens(const Corpus& corpus, const std::vector<std::size_t>& idx) {
    std::vector<std::vector<int>> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(corpus.examples[i].tokens);
    return out;
}

std::vector<int> batch_gold(const Corpus& corpus, const std::vector<std::size_t>& idx) {
    std::vector<int> gold;
    for (auto i : idx) {
        const auto& labels = corpus.examples[i].labels;
        gold.insert(gold.end(), labels.begin(), labels.end());
    }
    return gold;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(salt)};
    std::uint32_t w[2];
    seq.generate(w, w + 2);
    return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
}

}  // namespace

std::vector<std::vector<int>> predict_corpus(const EncoderModel& model, const Corpus& corpus) {
    std::vector<std::vector<int>> out(corpus.size());
    for (const auto& idx : make_batches(corpus, 64, nullptr)) {
        const auto tokens = batch_tokens(corpus, idx);
        auto preds = predict_batch(model, tokens);
        for (std::size_t b = 0; b < idx.size(); ++b) out[idx[b]] = std::move(preds[b]);
    }
    return out;
}

EvalReport evaluate(const EncoderModel& model, const Corpus& corpus) {
    if (corpus.empty()) throw std::invalid_argument("evaluate: empty corpus");
    const auto preds = predict_corpus(model, corpus);
    if (corpus.task == Task::SequenceClassification) {
        std::vector<int> gold, pred;
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            gold.push_back(corpus.examples[i].labels.at(0));
            pred.push_back(preds[i].at(0));
        }
        return macro_f1(gold, pred);
    }
    auto names = [&](const std::vector<int>& ids) {
        std::vector<std::string> tags;
        for (int id : ids) tags.push_back(corpus.tag_names.at(static_cast<std::size_t>(id)));
        return tags;
    };
    std::vector<std::vector<std::string>> gold, pred;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        gold.push_back(names(corpus.examples[i].labels));
        pred.push_back(names(preds[i]));
    }
    return span_f1(gold, pred);
}

// ---- training loop --------------------------------------------------------

TrainRun train(EncoderModel& student, const EncoderModel* teacher, const Corpus& train_set, const Corpus& dev_set,
               const TrainConfig& config) {
    if (train_set.empty()) throw std::invalid_argument("train: empty training corpus");
    if (dev_set.empty()) throw std::invalid_argument("train: empty dev corpus");
    if (config.kd_enabled != (teacher != nullptr)) {
        throw std::invalid_argument("train: a teacher must be given exactly when kd_enabled is set");
    }
    if (config.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");

    LayerMap map;
    ProjectionParams proj;
    if (teacher) {
        const auto& t = teacher->config;
        const auto& s = student.config;
        if (t.task != s.task || t.n_classes != s.n_classes || t.vocab_size != s.vocab_size) {
            throw IncompatibleConfig("train: teacher and student disagree on task, classes or vocabulary");
        }
        if (t.n_heads != s.n_heads) {
            throw IncompatibleConfig("train: attention distillation needs equal head counts (teacher " +
                                     std::to_string(t.n_heads) + ", student " + std::to_string(s.n_heads) + ")");
        }
        map = layer_map(s.n_layers, t.n_layers);
        proj = ProjectionParams::for_configs(s, t);
    }

    student.set_requires_grad(true);
    std::vector<Tensor> params;
    std::vector<std::string> names;
    for (auto& [name, p] : student.named_parameters()) {
        params.push_back(p);
        names.push_back(name);
    }
    if (proj.hidden.defined()) {
        params.push_back(proj.hidden);
        names.push_back("proj.hidden");
        params.push_back(proj.embedding);
        names.push_back("proj.embedding");
    }
    OptimizerState opt = make_optimizer(params, config.adam);

    std::mt19937_64 shuffle_rng(derive_seed(config.seed, 1));
    std::mt19937_64 dropout_rng(derive_seed(config.seed, 2));
    const ForwardOptions fwd{config.dropout, &dropout_rng};

    TrainRun run;
    run.seed = config.seed;
    auto eval_now = [&](int step) {
        EvalReport rep = evaluate(student, dev_set);
        const double score = rep.score;
        run.dev_curve.emplace_back(step, std::move(rep));
        if (run.dev_curve.size() == 1 || score > run.best_dev) {
            run.best_dev = score;
            run.best_step = step;
            run.best = student.clone();
        }
    };
    eval_now(0);

    const auto n_batches = make_batches(train_set, config.batch_size, nullptr).size();
    long total = static_cast<long>(n_batches) * config.epochs;
    if (config.max_steps > 0) total = std::min<long>(total, config.max_steps);

    int step = 0;
    int last_eval = 0;
    for (int epoch = 0; epoch < config.epochs && step < total; ++epoch) {
        for (const auto& idx : make_batches(train_set, config.batch_size, &shuffle_rng)) {
            if (step >= total) break;
            ++step;
            const auto tokens = batch_tokens(train_set, idx);
            const auto gold = batch_gold(train_set, idx);
            for (auto& p : params) p.zero_grad();

            ForwardTrace t_trace;
            if (teacher) {
                NoGradGuard guard;
                t_trace = forward_batch(*teacher, tokens);
            }
            const ForwardTrace s_trace = forward_batch(student, tokens, fwd);
            const KdLoss loss = overall_loss(s_trace, teacher ? &t_trace : nullptr, gold, map, proj,
                                             config.kd_enabled, config.distill);
            if (!std::isfinite(loss.breakdown.l_overall)) {
                throw NonFiniteGradient("train: non-finite loss at step " + std::to_string(step));
            }
            loss.total.backward();
            double lr = config.adam.lr;
            if (config.linear_decay) lr *= 1.0 - static_cast<double>(step - 1) / static_cast<double>(total);
            adamw_step(params, opt, lr, &names);
            run.loss_curve.emplace_back(step, loss.breakdown);

            if (config.eval_steps > 0 && step % config.eval_steps == 0) {
                eval_now(step);
                last_eval = step;
            }
        }
        if (config.eval_steps == 0 && last_eval != step) {
            eval_now(step);
            last_eval = step;
        }
    }
    if (last_eval != step) eval_now(step);
    run.steps = step;
    for (auto& p : params) p.zero_grad();
    return run;
}

std::optional<int> steps_to_threshold(const TrainRun& run, double tau, int window) {
    if (window < 1) throw std::invalid_argument("steps_to_threshold: window must be >= 1");
    const auto& curve = run.loss_curve;
    double acc = 0.0;
    for (std::size_t i = 0; i < curve.size(); ++i) {
        acc += curve[i].second.l_overall;
        if (i >= static_cast<std::size_t>(window)) acc -= curve[i - static_cast<std::size_t>(window)].second.l_overall;
        const auto n = std::min<std::size_t>(i + 1, static_cast<std::size_t>(window));
        if (acc / static_cast<double>(n) <= tau) return curve[i].first;
    }
    return std::nullopt;
}

EvalReport zero_shot_eval(const EncoderModel& teacher, const ModelConfig& student_cfg, const Corpus& corpus,
                          std::uint64_t seed) {
    const CopyPlan plan = build_copy_plan(teacher.config, student_cfg);
    const EncoderModel student = copy_weights(teacher, init_random(student_cfg, seed), plan);
    return evaluate(student, corpus);
}

// ---- masked-token pretraining ---------------------------------------------

PretrainRun make_base(const ModelConfig& cfg, const Corpus& corpus, const PretrainConfig& config) {
    if (corpus.empty()) throw std::invalid_argument("make_base: empty corpus");
    if (config.batch_size < 1) throw std::invalid_argument("make_base: batch_size must be >= 1");
    cfg.validate();

    PretrainRun out;
    out.base = init_random(cfg, derive_seed(config.seed, 10));
    EncoderModel& model = out.base;
    model.set_requires_grad(true);

    // Output layer over the vocabulary, Glorot-uniform like the task head.
    const auto d = static_cast<std::size_t>(cfg.hidden_dim);
    const auto V = static_cast<std::size_t>(cfg.vocab_size);
    std::mt19937_64 init_rng(derive_seed(config.seed, 11));
    const double limit = std::sqrt(6.0 / static_cast<double>(d + V));
    std::uniform_real_distribution<double> uni(-limit, limit);
    std::vector<double> w(d * V);
    for (auto& x : w) x = uni(init_rng);
    Tensor mlm_w = Tensor::from({d, V}, std::move(w), true);
    Tensor mlm_b = Tensor::zeros({V}, true);

    std::vector<Tensor> params;
    std::vector<std::string> names;
    for (auto& [name, p] : model.named_parameters()) {
        if (name.rfind("head.", 0) == 0) continue;
        params.push_back(p);
        names.push_back(name);
    }
    params.push_back(mlm_w);
    names.push_back("mlm.w");
    params.push_back(mlm_b);
    names.push_back("mlm.b");
    OptimizerState opt = make_optimizer(params, config.adam);

    std::mt19937_64 shuffle_rng(derive_seed(config.seed, 12));
    std::mt19937_64 mask_rng(derive_seed(config.seed, 13));
    std::mt19937_64 dropout_rng(derive_seed(config.seed, 14));
    std::bernoulli_distribution coin(config.mask_prob);
    const ForwardOptions fwd{config.dropout, &dropout_rng};

    int step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (const auto& idx : make_batches(corpus, config.batch_size, &shuffle_rng)) {
            if (config.max_steps > 0 && step >= config.max_steps) break;
            auto tokens = batch_tokens(corpus, idx);
            const std::size_t T = tokens.front().size();
            std::vector<int> rows, targets, candidates;
            for (std::size_t b = 0; b < tokens.size(); ++b) {
                for (std::size_t t = 0; t < T; ++t) {
                    if (tokens[b][t] == kClsToken) continue;
                    const int flat = static_cast<int>(b * T + t);
                    candidates.push_back(flat);
                    if (coin(mask_rng)) rows.push_back(flat);
                }
            }
            if (candidates.empty()) continue;
            if (rows.empty()) {
                std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
                rows.push_back(candidates[pick(mask_rng)]);
            }
            for (int r : rows) {
                auto& tok = tokens[static_cast<std::size_t>(r) / T][static_cast<std::size_t>(r) % T];
                targets.push_back(tok);
                tok = kMaskToken;
            }

            ++step;
            for (auto& p : params) p.zero_grad();
            const ForwardTrace trace = forward_batch(model, tokens, fwd);
            const Tensor h = gather_rows(trace.final_hidden(), rows);
            const Tensor loss = cross_entropy(add_row(matmul(h, mlm_w), mlm_b), targets);
            if (!std::isfinite(loss.item())) {
                throw NonFiniteGradient("make_base: non-finite loss at step " + std::to_string(step));
            }
            loss.backward();
            adamw_step(params, opt, std::nullopt, &names);
            out.loss_curve.emplace_back(step, loss.item());
        }
        if (config.max_steps > 0 && step >= config.max_steps) break;
    }
    model.zero_grad();
    return out;
}

// ---- logs -----------------------------------------------------------------

void write_train_log(const TrainRun& run, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << std::setprecision(17);
    std::map<int, double> dev;
    for (const auto& [step, rep] : run.dev_curve) dev[step] = rep.score;
    out << "step,l_att,l_hid,l_embd,l_pred,l_kd,l_clf,l_overall,dev\n";
    if (dev.count(0)) out << "0,,,,,,,," << dev[0] << '\n';
    for (const auto& [step, b] : run.loss_curve) {
        out << step << ',' << b.l_att << ',' << b.l_hid << ',' << b.l_embd << ',' << b.l_pred << ',' << b.l_kd << ','
            << b.l_clf << ',' << b.l_overall << ',';
        if (auto it = dev.find(step); it != dev.end()) out << it->second;
        out << '\n';
    }
}

}  // namespace kdlab
