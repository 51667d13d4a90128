#include "mepo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "mepo/error.hpp"

namespace mepo {

void EvalLog::validate() const {
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (!(r.anytime_accuracy >= 0.0 && r.anytime_accuracy <= 1.0))
            throw Error(ErrorKind::ConfigError, "accuracy outside [0, 1]");
        if (i > 0 && r.samples_seen <= records[i - 1].samples_seen)
            throw Error(ErrorKind::ConfigError, "samples_seen must be strictly increasing");
    }
}

double compute_auc(const EvalLog& log) {
    if (log.records.empty()) throw Error(ErrorKind::EmptyLog, "no evaluation records");
    log.validate();
    const auto& r = log.records;
    // Offsets from the first value keep a constant series exact.
    const double base = r.front().anytime_accuracy;
    if (r.size() == 1) return base;

    const std::size_t step = r[1].samples_seen - r[0].samples_seen;
    bool uniform = true;
    for (std::size_t i = 1; i < r.size(); ++i) uniform = uniform && (r[i].samples_seen - r[i - 1].samples_seen == step);

    if (uniform) {
        double sum = 0.0;
        for (const auto& rec : r) sum += rec.anytime_accuracy - base;
        return base + sum / static_cast<double>(r.size());
    }
    double area = 0.0;
    for (std::size_t i = 1; i < r.size(); ++i) {
        const double width = static_cast<double>(r[i].samples_seen - r[i - 1].samples_seen);
        area += 0.5 * width * ((r[i].anytime_accuracy - base) + (r[i - 1].anytime_accuracy - base));
    }
    const double span = static_cast<double>(r.back().samples_seen - r.front().samples_seen);
    return base + area / span;
}

double accuracy(const BatchPredictor& predict, std::span<const Sample> test, const ClassMask& mask) {
    if (test.empty()) throw Error(ErrorKind::EmptyTestSet, "no test samples");
    const auto predicted = predict(test, mask);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) correct += predicted[i] == test[i].label ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

double compute_last(const BatchPredictor& predict, std::span<const Sample> test, std::size_t class_count) {
    return accuracy(predict, test, full_mask(class_count));
}

double compute_last(const MlpModel& model, std::span<const Sample> test, bool use_adapter) {
    BatchPredictor predict = [&](std::span<const Sample> batch, const ClassMask& mask) {
        std::vector<std::size_t> out;
        out.reserve(batch.size());
        for (const auto& s : batch) out.push_back(mepo::predict(model, s.x, mask, use_adapter));
        return out;
    };
    return compute_last(predict, test, model.class_count());
}

double compute_forgetting(const std::vector<std::vector<double>>& task_history) {
    if (task_history.empty()) throw Error(ErrorKind::MissingRecords, "no tasks in the accuracy table");
    double total = 0.0;
    for (const auto& history : task_history) {
        if (history.empty()) throw Error(ErrorKind::MissingRecords, "task without accuracy records");
        const double peak = *std::max_element(history.begin(), history.end());
        total += std::max(0.0, peak - history.back());
    }
    return total / static_cast<double>(task_history.size());
}

void write_eval_csv(std::ostream& out, const EvalLog& log) {
    const auto old_precision = out.precision(std::numeric_limits<double>::max_digits10);
    out << "samples_seen,seen_class_count,anytime_accuracy\n";
    for (const auto& r : log.records) out << r.samples_seen << ',' << r.seen_classes.size() << ',' << r.anytime_accuracy << '\n';
    out.precision(old_precision);
}

}  // namespace mepo
