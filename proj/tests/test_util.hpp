#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mepo/datastream.hpp"
#include "mepo/linalg.hpp"
#include "mepo/net.hpp"
#include "mepo/rng.hpp"

namespace mepo::testing {

inline DenseMatrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
    DenseMatrix m(rows, cols);
    for (double& v : m.data()) v = scale * rng.uniform(-1.0, 1.0);
    return m;
}

/// A·Aᵀ + shift·I, symmetric positive definite for shift > 0.
inline DenseMatrix random_spd(std::size_t n, Rng& rng, double shift = 0.1) {
    DenseMatrix a = random_matrix(n, n, rng);
    DenseMatrix s = matmul(a, transpose(a));
    for (std::size_t i = 0; i < n; ++i) s(i, i) += shift;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j) s(j, i) = s(i, j);
    return s;
}

inline double relative_frobenius(const DenseMatrix& got, const DenseMatrix& want) {
    return frobenius_norm(got - want) / frobenius_norm(want);
}

inline double relative_error(double got, double want) {
    const double scale = std::max(std::abs(got), std::abs(want));
    return scale == 0.0 ? 0.0 : std::abs(got - want) / scale;
}

/// Relative error with an absolute floor, for gradient comparisons where
/// individual components can be near zero.
inline double grad_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Textbook covariance: (Σ x xᵀ − N·m mᵀ)/(N−1) in long double.
inline DenseMatrix oracle_covariance(const std::vector<FeatVec>& rows) {
    const std::size_t d = rows.front().size();
    const long double n = static_cast<long double>(rows.size());
    std::vector<long double> mean(d, 0.0L);
    for (const auto& r : rows)
        for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
    for (auto& m : mean) m /= n;
    DenseMatrix cov(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            long double s = 0.0L;
            for (const auto& r : rows) s += static_cast<long double>(r[i]) * r[j];
            cov(i, j) = static_cast<double>((s - n * mean[i] * mean[j]) / (n - 1.0L));
        }
    return cov;
}

/// Every structural promise of a generated stream, checked by enumeration.
/// Returns a description of each violation; empty when the stream is sound.
inline std::vector<std::string> stream_violations(const LabeledDataset& data, const SiBlurryConfig& cfg,
                                                  std::size_t batch_size, const TaskStream& stream) {
    std::vector<std::string> bad;
    const std::size_t classes = data.class_count;
    const std::size_t tasks = cfg.tasks;
    if (stream.tasks.size() != tasks) bad.push_back("task count");

    std::vector<int> kind(classes, 0);  // 1 disjoint, 2 blurry
    for (std::size_t c : stream.disjoint_classes) kind.at(c) += 1;
    for (std::size_t c : stream.blurry_classes) kind.at(c) += 2;
    for (std::size_t c = 0; c < classes; ++c)
        if (kind[c] != 1 && kind[c] != 2) bad.push_back("class " + std::to_string(c) + " not in exactly one pool");
    const auto want_disjoint = static_cast<std::size_t>(std::llround(cfg.m * static_cast<double>(classes)));
    if (stream.disjoint_classes.size() != want_disjoint) bad.push_back("disjoint pool size");

    // counts[c][t]: samples of class c placed in task t.
    std::vector<std::vector<std::size_t>> counts(classes, std::vector<std::size_t>(tasks, 0));
    std::vector<int> seen(data.samples.size(), 0);
    for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
        const StreamTask& task = stream.tasks[t];
        if (task.id != t) bad.push_back("task id order");
        ClassMask labels;
        for (std::size_t b = 0; b < task.batches.size(); ++b) {
            const StreamBatch& batch = task.batches[b];
            const std::size_t size = batch.samples.size();
            if (size == 0 || size > batch_size || (b + 1 < task.batches.size() && size != batch_size))
                bad.push_back("batch size in task " + std::to_string(t));
            if (batch.sample_indices.size() != size) bad.push_back("index list length");
            for (std::size_t i = 0; i < size && i < batch.sample_indices.size(); ++i) {
                const std::size_t idx = batch.sample_indices[i];
                if (idx >= data.samples.size()) {
                    bad.push_back("index out of range");
                    continue;
                }
                seen[idx] += 1;
                const Sample& s = batch.samples[i];
                if (s.label != data.samples[idx].label || s.x != data.samples[idx].x) bad.push_back("sample payload");
                counts[s.label][t] += 1;
                labels.push_back(s.label);
            }
        }
        std::sort(labels.begin(), labels.end());
        labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
        if (labels != task.labels) bad.push_back("label set of task " + std::to_string(t));
    }
    for (int s : seen)
        if (s != 1) {
            bad.push_back("sample not placed exactly once");
            break;
        }

    std::vector<std::size_t> disjoint_per_task(tasks, 0);
    for (std::size_t c = 0; c < classes; ++c) {
        std::size_t total = 0, occupied = 0;
        for (std::size_t t = 0; t < tasks; ++t) {
            total += counts[c][t];
            occupied += counts[c][t] > 0 ? 1 : 0;
        }
        const std::size_t home = stream.home_task.at(c);
        if (kind[c] == 1) {
            if (occupied != 1 || counts[c][home] != total) bad.push_back("disjoint class " + std::to_string(c) + " split");
            disjoint_per_task[home] += 1;
        } else if (kind[c] == 2 && tasks >= 2) {
            const double want = (1.0 - cfg.n) * static_cast<double>(total);
            if (std::abs(static_cast<double>(counts[c][home]) - want) > 1.0)
                bad.push_back("blurry class " + std::to_string(c) + " home share");
        }
    }
    if (cfg.m > 0.0 && stream.disjoint_classes.size() >= tasks)
        for (std::size_t t = 0; t < tasks; ++t)
            if (disjoint_per_task[t] == 0) bad.push_back("task " + std::to_string(t) + " has no disjoint class");
    return bad;
}

inline std::vector<double*> layer_params(Layer& layer) {
    std::vector<double*> out;
    for (double& v : layer.weight.data()) out.push_back(&v);
    for (double& v : layer.bias) out.push_back(&v);
    return out;
}

inline std::vector<const double*> layer_params(const Layer& layer) {
    std::vector<const double*> out;
    for (const double& v : layer.weight.data()) out.push_back(&v);
    for (const double& v : layer.bias) out.push_back(&v);
    return out;
}

/// Compares analytic gradients of the batch loss with central differences
/// for every trainable parameter; returns the worst error. With use_adapter
/// the head and adapter are checked, otherwise the head and backbone.
inline double worst_gradient_error(MlpModel model, const std::vector<Sample>& batch, const ClassMask& mask,
                                   bool use_adapter) {
    Gradients grads;
    batch_loss_and_gradients(model, batch, &mask, use_adapter, grads);
    const double h = 1e-5;
    double worst = 0.0;
    auto check_layer = [&](Layer& param, const Layer& grad) {
        auto ps = layer_params(param);
        auto gs = layer_params(grad);
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const double saved = *ps[i];
            *ps[i] = saved + h;
            const double up = batch_loss(model, batch, &mask, use_adapter);
            *ps[i] = saved - h;
            const double down = batch_loss(model, batch, &mask, use_adapter);
            *ps[i] = saved;
            worst = std::max(worst, grad_error(*gs[i], (up - down) / (2 * h)));
        }
    };
    check_layer(model.head, grads.head);
    if (use_adapter) {
        check_layer(*model.adapter, *grads.adapter);
    } else {
        for (std::size_t l = 0; l < model.backbone.size(); ++l) check_layer(model.backbone[l], grads.backbone[l]);
    }
    return worst;
}

}  // namespace mepo::testing
