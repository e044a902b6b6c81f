// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdlab/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace kdlab {

std::string to_string(Task task) {
    return task == Task::SequenceClassification ? "sequence-classification" : "token-classification";
}

Task task_from_string(const std::string& name) {
    if (name == "sequence-classification" || name == "classification") return Task::SequenceClassification;
    if (name == "token-classification" || name == "tagging") return Task::TokenClassification;
    throw std::invalid_argument("unknown task '" + name + "'");
}

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1) throw std::invalid_argument(std::string("model config: ") + name + " must be >= 1");
    };
    positive(n_layers, "n_layers");
    positive(n_heads, "n_heads");
    positive(hidden_dim, "hidden_dim");
    positive(ffn_dim, "ffn_dim");
    positive(vocab_size, "vocab_size");
    positive(max_seq_len, "max_seq_len");
    positive(n_classes, "n_classes");
    if (hidden_dim % n_heads != 0) {
        throw std::invalid_argument("model config: hidden_dim " + std::to_string(hidden_dim) +
                                    " not divisible by n_heads " + std::to_string(n_heads));
    }
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
    j = nlohmann::json{{"n_layers", cfg.n_layers},     {"n_heads", cfg.n_heads},
                       {"hidden_dim", cfg.hidden_dim}, {"ffn_dim", cfg.ffn_dim},
                       {"vocab_size", cfg.vocab_size}, {"max_seq_len", cfg.max_seq_len},
                       {"n_classes", cfg.n_classes},   {"task", to_string(cfg.task)}};
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
    static const char* known[] = {"n_layers",   "n_heads",     "hidden_dim", "ffn_dim",
                                  "vocab_size", "max_seq_len", "n_classes",  "task"};
    for (const auto& [key, _] : j.items()) {
        if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
            throw std::invalid_argument("model config: unknown key '" + key + "'");
        }
    }
    auto get = [&](const char* key, int& out) {
        if (j.contains(key)) out = j.at(key).get<int>();
    };
    get("n_layers", cfg.n_layers);
    get("n_heads", cfg.n_heads);
    get("hidden_dim", cfg.hidden_dim);
    get("ffn_dim", cfg.ffn_dim);
    get("vocab_size", cfg.vocab_size);
    get("max_seq_len", cfg.max_seq_len);
    get("n_classes", cfg.n_classes);
    if (j.contains("task")) cfg.task = task_from_string(j.at("task").get<std::string>());
}

std::size_t parameter_count(const ModelConfig& cfg) {
    const std::size_t d = cfg.hidden_dim, f = cfg.ffn_dim;
    const std::size_t per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d;
    return static_cast<std::size_t>(cfg.vocab_size) * d + static_cast<std::size_t>(cfg.max_seq_len) * d +
           cfg.n_layers * per_layer + d * cfg.n_classes + cfg.n_classes;
}

// ---- parameters -----------------------------------------------------------

namespace {

template <typename Fn>
void for_each_layer_param(const LayerParams& l, const std::string& prefix, Fn&& fn) {
    fn(prefix + "attn.q", l.q);
    fn(prefix + "attn.q.bias", l.q_bias);
    fn(prefix + "attn.k", l.k);
    fn(prefix + "attn.k.bias", l.k_bias);
    fn(prefix + "attn.v", l.v);
    fn(prefix + "attn.v.bias", l.v_bias);
    fn(prefix + "attn.o", l.o);
    fn(prefix + "attn.o.bias", l.o_bias);
    fn(prefix + "ffn.w1", l.w1);
    fn(prefix + "ffn.w1.bias", l.w1_bias);
    fn(prefix + "ffn.w2", l.w2);
    fn(prefix + "ffn.w2.bias", l.w2_bias);
    fn(prefix + "norm.attn.gamma", l.attn_norm_gamma);
    fn(prefix + "norm.attn.beta", l.attn_norm_beta);
    fn(prefix + "norm.ffn.gamma", l.ffn_norm_gamma);
    fn(prefix + "norm.ffn.beta", l.ffn_norm_beta);
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> EncoderModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("emb.tok", tok_embedding);
    out.emplace_back("emb.pos", pos_embedding);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        for_each_layer_param(layers[i], "layer." + std::to_string(i) + ".",
                             [&](std::string name, const Tensor& t) { out.emplace_back(std::move(name), t); });
    }
    out.emplace_back("head.w", head_w);
    out.emplace_back("head.b", head_b);
    return out;
}

std::vector<Tensor> EncoderModel::parameters() const {
    std::vector<Tensor> out;
    for (auto& [_, t] : named_parameters()) out.push_back(t);
    return out;
}

Tensor EncoderModel::parameter(const std::string& name) const {
    for (auto& [n, t] : named_parameters()) {
        if (n == name) return t;
    }
    throw std::out_of_range("no parameter named '" + name + "'");
}

EncoderModel EncoderModel::clone() const {
    EncoderModel m;
    m.config = config;
    m.tok_embedding = tok_embedding.clone();
    m.pos_embedding = pos_embedding.clone();
    m.layers.reserve(layers.size());
    for (const auto& l : layers) {
        m.layers.push_back({l.q.clone(), l.q_bias.clone(), l.k.clone(), l.k_bias.clone(), l.v.clone(),
                            l.v_bias.clone(), l.o.clone(), l.o_bias.clone(), l.w1.clone(), l.w1_bias.clone(),
                            l.w2.clone(), l.w2_bias.clone(), l.attn_norm_gamma.clone(),
                            l.attn_norm_beta.clone(), l.ffn_norm_gamma.clone(), l.ffn_norm_beta.clone()});
    }
    m.head_w = head_w.clone();
    m.head_b = head_b.clone();
    return m;
}

void EncoderModel::zero_grad() {
    for (auto& t : parameters()) t.zero_grad();
}

void EncoderModel::set_requires_grad(bool flag) {
    for (auto& t : parameters()) t.set_requires_grad(flag);
}

std::uint64_t EncoderModel::fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, t] : named_parameters()) {
        mix(name.data(), name.size());
        for (auto d : t.shape()) mix(&d, sizeof d);
        mix(t.values().data(), t.size() * sizeof(double));
    }
    return h;
}

EncoderModel init_random(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> emb_dist(0.0, 0.02);
    auto glorot = [&rng](std::size_t in, std::size_t out) {
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<double> v(in * out);
        for (auto& x : v) x = dist(rng);
        return Tensor::from({in, out}, std::move(v), true);
    };
    auto normal = [&](std::size_t rows, std::size_t cols) {
        std::vector<double> v(rows * cols);
        for (auto& x : v) x = emb_dist(rng);
        return Tensor::from({rows, cols}, std::move(v), true);
    };
    auto zeros = [](std::size_t n) { return Tensor::zeros({n}, true); };
    auto ones = [](std::size_t n) { return Tensor::full({n}, 1.0, true); };

    const std::size_t d = cfg.hidden_dim, f = cfg.ffn_dim;
    EncoderModel m;
    m.config = cfg;
    m.tok_embedding = normal(cfg.vocab_size, d);
    m.pos_embedding = normal(cfg.max_seq_len, d);
    for (int i = 0; i < cfg.n_layers; ++i) {
        LayerParams l;
        l.q = glorot(d, d);
        l.q_bias = zeros(d);
        l.k = glorot(d, d);
        l.k_bias = zeros(d);
        l.v = glorot(d, d);
        l.v_bias = zeros(d);
        l.o = glorot(d, d);
        l.o_bias = zeros(d);
        l.w1 = glorot(d, f);
        l.w1_bias = zeros(f);
        l.w2 = glorot(f, d);
        l.w2_bias = zeros(d);
        l.attn_norm_gamma = ones(d);
        l.attn_norm_beta = zeros(d);
        l.ffn_norm_gamma = ones(d);
        l.ffn_norm_beta = zeros(d);
        m.layers.push_back(std::move(l));
    }
    m.head_w = glorot(d, cfg.n_classes);
    m.head_b = zeros(cfg.n_classes);
    return m;
}

// ---- forward --------------------------------------------------------------

namespace {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_row(matmul(x, w), b); }

Tensor maybe_dropout(const Tensor& x, const ForwardOptions& opts) {
    if (opts.dropout <= 0.0) return x;
    if (!opts.rng) throw std::invalid_argument("forward: dropout requires an rng");
    return dropout(x, opts.dropout, *opts.rng);
}

}  // namespace

ForwardTrace forward_batch(const EncoderModel& model, std::span<const std::vector<int>> batch,
                           const ForwardOptions& opts) {
    const auto& cfg = model.config;
    if (batch.empty()) throw DimensionError("forward: empty batch");
    const std::size_t B = batch.size();
    const std::size_t T = batch.front().size();
    if (T == 0) throw DimensionError("forward: empty sequence");
    if (T > static_cast<std::size_t>(cfg.max_seq_len)) {
        throw DimensionError("forward: sequence length " + std::to_string(T) + " exceeds max_seq_len " +
                             std::to_string(cfg.max_seq_len));
    }
    std::vector<int> flat;
    std::vector<int> positions;
    flat.reserve(B * T);
    positions.reserve(B * T);
    for (const auto& seq : batch) {
        if (seq.size() != T) throw DimensionError("forward: sequences in a batch must share a length");
        for (std::size_t t = 0; t < T; ++t) {
            const int id = seq[t];
            if (id < 0 || id >= cfg.vocab_size) {
                throw std::out_of_range("forward: token id " + std::to_string(id) + " outside vocabulary of " +
                                        std::to_string(cfg.vocab_size));
            }
            flat.push_back(id);
            positions.push_back(static_cast<int>(t));
        }
    }

    const std::size_t H = cfg.n_heads;
    const double score_scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));

    ForwardTrace trace;
    trace.batch = B;
    trace.seq_len = T;
    trace.embedding = add(gather_rows(model.tok_embedding, flat), gather_rows(model.pos_embedding, positions));
    Tensor x = maybe_dropout(trace.embedding, opts);

    for (const auto& layer : model.layers) {
        const Tensor q = split_heads(linear(x, layer.q, layer.q_bias), B, T, H);
        const Tensor k = split_heads(linear(x, layer.k, layer.k_bias), B, T, H);
        const Tensor v = split_heads(linear(x, layer.v, layer.v_bias), B, T, H);
        Tensor scores = scale(bmm_nt(q, k), score_scale);
        Tensor probs = softmax(scores);
        const Tensor ctx = merge_heads(bmm(probs, v), B, T, H);
        const Tensor attn_out = maybe_dropout(linear(ctx, layer.o, layer.o_bias), opts);
        x = layer_norm(add(x, attn_out), layer.attn_norm_gamma, layer.attn_norm_beta);
        const Tensor ffn = linear(gelu(linear(x, layer.w1, layer.w1_bias)), layer.w2, layer.w2_bias);
        x = layer_norm(add(x, maybe_dropout(ffn, opts)), layer.ffn_norm_gamma, layer.ffn_norm_beta);
        trace.attn_scores.push_back(std::move(scores));
        trace.attn_probs.push_back(std::move(probs));
        trace.hidden.push_back(x);
    }

    if (cfg.task == Task::SequenceClassification) {
        std::vector<int> first(B);
        for (std::size_t b = 0; b < B; ++b) first[b] = static_cast<int>(b * T);
        trace.logits = linear(gather_rows(x, first), model.head_w, model.head_b);
    } else {
        trace.logits = linear(x, model.head_w, model.head_b);
    }
    return trace;
}

ForwardTrace forward(const EncoderModel& model, std::span<const int> tokens, const ForwardOptions& opts) {
    const std::vector<std::vector<int>> batch{std::vector<int>(tokens.begin(), tokens.end())};
    ForwardTrace trace = forward_batch(model, batch, opts);
    if (model.config.task == Task::SequenceClassification) {
        trace.logits = reshape(trace.logits, {static_cast<std::size_t>(model.config.n_classes)});
    }
    return trace;
}

int argmax(std::span<const double> row) {
    if (row.empty()) throw DimensionError("argmax: empty row");
    std::size_t best = 0;
    for (std::size_t i = 1; i < row.size(); ++i) {
        if (row[i] > row[best]) best = i;
    }
    return static_cast<int>(best);
}

std::vector<std::vector<int>> predict_batch(const EncoderModel& model, std::span<const std::vector<int>> batch) {
    NoGradGuard no_grad;
    const ForwardTrace trace = forward_batch(model, batch);
    const std::size_t C = model.config.n_classes;
    const auto logits = trace.logits.values();
    std::vector<std::vector<int>> out(batch.size());
    const std::size_t rows_per_seq = model.config.task == Task::SequenceClassification ? 1 : trace.seq_len;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        for (std::size_t r = 0; r < rows_per_seq; ++r) {
            out[b].push_back(argmax(logits.subspan((b * rows_per_seq + r) * C, C)));
        }
    }
    return out;
}

std::vector<int> predict(const EncoderModel& model, std::span<const int> tokens) {
    const std::vector<std::vector<int>> batch{std::vector<int>(tokens.begin(), tokens.end())};
    return predict_batch(model, batch).front();
}

// ---- checkpoints ----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'K', 'D', 'L', 'A', 'B', 'C', 'K', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian hosts");

void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void write_str(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is) {
    const auto n = read_u64(is);
    if (n > (1u << 26)) throw std::runtime_error("checkpoint: implausible string length");
    std::string s(n, '\0');
    if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw std::runtime_error("checkpoint: truncated file");
    return s;
}

}  // namespace

void save_checkpoint(const EncoderModel& model, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
    os.write(kMagic, sizeof kMagic);
    write_str(os, nlohmann::json(model.config).dump());
    const auto params = model.named_parameters();
    write_u64(os, params.size());
    for (const auto& [name, t] : params) {
        write_str(os, name);
        write_u64(os, t.rank());
        for (auto d : t.shape()) write_u64(os, d);
        os.write(reinterpret_cast<const char*>(t.values().data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

EncoderModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
    char magic[sizeof kMagic];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw std::runtime_error("checkpoint: " + path.string() + " is not a kdlab checkpoint");
    }
    const ModelConfig cfg = nlohmann::json::parse(read_str(is)).get<ModelConfig>();
    EncoderModel model = init_random(cfg, 0);
    std::map<std::string, Tensor> by_name;
    for (auto& [name, t] : model.named_parameters()) by_name.emplace(name, t);

    const auto count = read_u64(is);
    if (count != by_name.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string name = read_str(is);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint: unexpected parameter '" + name + "'");
        Shape shape(read_u64(is));
        for (auto& d : shape) d = read_u64(is);
        Tensor& t = it->second;
        if (shape != t.shape()) {
            throw std::runtime_error("checkpoint: parameter '" + name + "' has shape " + shape_str(shape) +
                                     ", config expects " + shape_str(t.shape()));
        }
        auto dst = t.mutable_values();
        if (!is.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * sizeof(double)))) {
            throw std::runtime_error("checkpoint: truncated data for '" + name + "'");
        }
    }
    return model;
}

}  // namespace kdlab
