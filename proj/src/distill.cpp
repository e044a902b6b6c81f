// Copyright (c) 2026 The kdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdlab/distill.hpp"

#include "kdlab/init.hpp"

namespace kdlab {

LayerMap layer_map(int n_student, int n_teacher) {
    if (n_student < 1 || n_teacher < 1) throw std::invalid_argument("layer_map: layer counts must be >= 1");
    if (n_teacher % n_student != 0) {
        throw IncompatibleConfig("layer_map: teacher layers " + std::to_string(n_teacher) +
                                 " not a multiple of student layers " + std::to_string(n_student));
    }
    LayerMap map;
    const int ratio = n_teacher / n_student;
    for (int i = 1; i <= n_student; ++i) map.pairs.emplace_back(i, i * ratio);
    return map;
}

std::vector<Tensor> ProjectionParams::parameters() const {
    std::vector<Tensor> out;
    if (hidden.defined()) out.push_back(hidden);
    if (embedding.defined()) out.push_back(embedding);
    return out;
}

namespace {

Tensor selection_matrix(int d_student, int d_teacher) {
    const auto idx = slice_indices(d_teacher, d_student);
    std::vector<double> w(static_cast<std::size_t>(d_student) * d_teacher, 0.0);
    for (int j = 0; j < d_student; ++j) w[static_cast<std::size_t>(j) * d_teacher + idx[j]] = 1.0;
    return Tensor::from({static_cast<std::size_t>(d_student), static_cast<std::size_t>(d_teacher)}, std::move(w), true);
}

const std::vector<Tensor>& attention_tensors(const ForwardTrace& t, AttentionTarget target) {
    return target == AttentionTarget::PreSoftmax ? t.attn_scores : t.attn_probs;
}

const Tensor& layer_at(const std::vector<Tensor>& layers, int one_based, const char* what) {
    if (one_based < 1 || static_cast<std::size_t>(one_based) > layers.size()) {
        throw DimensionError(std::string(what) + ": layer " + std::to_string(one_based) + " not in trace of " +
                             std::to_string(layers.size()) + " layers");
    }
    return layers[static_cast<std::size_t>(one_based - 1)];
}

Tensor project(const Tensor& x, const Tensor& w) { return w.defined() ? matmul(x, w) : x; }

}  // namespace

ProjectionParams ProjectionParams::for_configs(const ModelConfig& student, const ModelConfig& teacher) {
    ProjectionParams p;
    if (student.hidden_dim != teacher.hidden_dim) {
        p.hidden = selection_matrix(student.hidden_dim, teacher.hidden_dim);
        p.embedding = selection_matrix(student.hidden_dim, teacher.hidden_dim);
    }
    return p;
}

ProjectionParams ProjectionParams::zeros(const ModelConfig& student, const ModelConfig& teacher) {
    ProjectionParams p;
    if (student.hidden_dim != teacher.hidden_dim) {
        const Shape s{static_cast<std::size_t>(student.hidden_dim), static_cast<std::size_t>(teacher.hidden_dim)};
        p.hidden = Tensor::zeros(s, true);
        p.embedding = Tensor::zeros(s, true);
    }
    return p;
}

Tensor attention_loss(const ForwardTrace& student, const ForwardTrace& teacher, const LayerMap& map,
                      AttentionTarget target) {
    const auto& s_layers = attention_tensors(student, target);
    const auto& t_layers = attention_tensors(teacher, target);
    if (map.pairs.empty()) throw std::invalid_argument("attention_loss: empty layer map");
    Tensor total;
    for (const auto& [i, k] : map.pairs) {
        const Tensor& a_s = layer_at(s_layers, i, "attention_loss");
        const Tensor& a_t = layer_at(t_layers, k, "attention_loss");
        if (a_s.shape() != a_t.shape()) {
            throw DimensionError("attention_loss: head/sequence mismatch " + shape_str(a_s.shape()) + " vs " +
                                 shape_str(a_t.shape()));
        }
        // Every head has the same number of entries, so the mean over the
        // stacked heads equals the mean of the per-head MSEs.
        Tensor term = mse(a_s, a_t);
        total = total.defined() ? add(total, term) : term;
    }
    return scale(total, 1.0 / static_cast<double>(map.pairs.size()));
}

Tensor hidden_loss(const ForwardTrace& student, const ForwardTrace& teacher, const LayerMap& map,
                   const ProjectionParams& proj) {
    if (map.pairs.empty()) throw std::invalid_argument("hidden_loss: empty layer map");
    Tensor total;
    for (const auto& [i, k] : map.pairs) {
        const Tensor h_s = project(layer_at(student.hidden, i, "hidden_loss"), proj.hidden);
        Tensor term = mse(h_s, layer_at(teacher.hidden, k, "hidden_loss"));
        total = total.defined() ? add(total, term) : term;
    }
    return scale(total, 1.0 / static_cast<double>(map.pairs.size()));
}

Tensor embedding_loss(const ForwardTrace& student, const ForwardTrace& teacher, const ProjectionParams& proj) {
    return mse(project(student.embedding, proj.embedding), teacher.embedding);
}

Tensor prediction_loss(const ForwardTrace& student, const ForwardTrace& teacher) {
    if (student.logits.shape() != teacher.logits.shape()) {
        throw DimensionError("prediction_loss: logits " + shape_str(student.logits.shape()) + " vs " +
                             shape_str(teacher.logits.shape()));
    }
    return mse(student.logits, teacher.logits);
}

Tensor classification_loss(const ForwardTrace& student, std::span<const int> gold) {
    Tensor logits = student.logits;
    if (logits.rank() == 1) logits = reshape(logits, {1, logits.dim(0)});
    return cross_entropy(logits, gold);
}

KdLoss overall_loss(const ForwardTrace& student, const ForwardTrace* teacher, std::span<const int> gold,
                    const LayerMap& map, const ProjectionParams& proj, bool kd_enabled, const DistillOptions& opts) {
    KdLoss out;
    const Tensor clf = classification_loss(student, gold);
    out.breakdown.l_clf = clf.item();
    if (!kd_enabled) {
        out.total = opts.weights.clf == 1.0 ? clf : scale(clf, opts.weights.clf);
        out.breakdown.l_overall = out.total.item();
        return out;
    }
    if (!teacher) throw std::invalid_argument("overall_loss: distillation requires a teacher trace");

    const auto& w = opts.weights;
    auto weighted = [](const Tensor& t, double k) { return k == 1.0 ? t : scale(t, k); };
    const Tensor att = attention_loss(student, *teacher, map, opts.attention);
    const Tensor hid = hidden_loss(student, *teacher, map, proj);
    const Tensor embd = embedding_loss(student, *teacher, proj);
    const Tensor pred = prediction_loss(student, *teacher);
    const Tensor kd = add(add(add(weighted(att, w.att), weighted(hid, w.hid)), weighted(embd, w.embd)),
                          weighted(pred, w.pred));
    out.total = add(kd, weighted(clf, w.clf));

    auto& b = out.breakdown;
    b.l_att = att.item();
    b.l_hid = hid.item();
    b.l_embd = embd.item();
    b.l_pred = pred.item();
    b.l_kd = kd.item();
    b.l_overall = out.total.item();
    return out;
}

}  // namespace kdlab
