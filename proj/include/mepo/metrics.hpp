#pragma once

// Anytime-accuracy logs and the GCL summary metrics.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "mepo/net.hpp"

namespace mepo {

struct EvalRecord {
    std::size_t samples_seen = 0;
    ClassMask seen_classes;
    double anytime_accuracy = 0.0;

    friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

struct EvalLog {
    std::vector<EvalRecord> records;
    /// task_history[t]: accuracy on task t's home classes at every
    /// evaluation since task t started; the last entry is the final one.
    std::vector<std::vector<double>> task_history;

    /// samples_seen strictly increasing, accuracies in [0, 1].
    void validate() const;

    friend bool operator==(const EvalLog&, const EvalLog&) = default;
};

/// Mean anytime accuracy. Uniformly spaced records use the plain mean;
/// otherwise the trapezoidal integral over samples_seen divided by the span.
double compute_auc(const EvalLog& log);

/// Predicts one label per sample under `mask`.
using BatchPredictor = std::function<std::vector<std::size_t>(std::span<const Sample>, const ClassMask&)>;

double accuracy(const BatchPredictor& predict, std::span<const Sample> test, const ClassMask& mask);

/// Accuracy over the full label set.
double compute_last(const BatchPredictor& predict, std::span<const Sample> test, std::size_t class_count);
double compute_last(const MlpModel& model, std::span<const Sample> test, bool use_adapter);

/// Mean over tasks of max(0, peak − final).
double compute_forgetting(const std::vector<std::vector<double>>& task_history);

/// Header "samples_seen,seen_class_count,anytime_accuracy"; LF endings;
/// accuracies printed with 17 significant digits.
void write_eval_csv(std::ostream& out, const EvalLog& log);

}  // namespace mepo
