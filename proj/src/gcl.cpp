#include "mepo/gcl.hpp"

#include <algorithm>
#include <optional>

#include "mepo/error.hpp"
#include "mepo/rng.hpp"

namespace mepo {

namespace {

std::vector<double> trainable_values(const MlpModel& model) {
    std::vector<double> out = flatten_layers(std::span<const Layer>(&*model.adapter, 1));
    const auto head = flatten_layers(std::span<const Layer>(&model.head, 1));
    out.insert(out.end(), head.begin(), head.end());
    return out;
}

std::vector<double> trainable_grads(const Gradients& grads) {
    std::vector<double> out = flatten_layers(std::span<const Layer>(&*grads.adapter, 1));
    const auto head = flatten_layers(std::span<const Layer>(&grads.head, 1));
    out.insert(out.end(), head.begin(), head.end());
    return out;
}

void set_trainable(MlpModel& model, std::span<const double> values) {
    const std::size_t adapter_size = parameter_count(std::span<const Layer>(&*model.adapter, 1));
    unflatten_layers(std::span<Layer>(&*model.adapter, 1), values.first(adapter_size));
    unflatten_layers(std::span<Layer>(&model.head, 1), values.subspan(adapter_size));
}

void merge_labels(ClassMask& mask, std::span<const Sample> batch) {
    for (const auto& s : batch) mask.push_back(s.label);
    std::sort(mask.begin(), mask.end());
    mask.erase(std::unique(mask.begin(), mask.end()), mask.end());
}

/// Head inputs for a batch of raw features: the α-blend with the aligned
/// features when alignment applies, otherwise the features themselves.
struct HeadInputs {
    std::vector<FeatVec> values;
    std::optional<AlignedBatch> aligned;
};

HeadInputs head_inputs(std::vector<FeatVec> features, const CovRef* ref, const AlignConfig& cfg, bool& fell_back) {
    fell_back = false;
    HeadInputs out;
    if (ref == nullptr || cfg.alpha == 0.0) {
        out.values = std::move(features);
        return out;
    }
    try {
        out.aligned = align_batch(features, *ref, cfg);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::NotPositiveDefinite && e.kind() != ErrorKind::BatchTooSmall) throw;
        fell_back = true;
        out.values = std::move(features);
        return out;
    }
    out.values.reserve(features.size());
    for (std::size_t i = 0; i < features.size(); ++i)
        out.values.push_back(combine_features(features[i], out.aligned->features[i], cfg.alpha));
    return out;
}

}  // namespace

std::string to_string(MaskPolicy p) { return p == MaskPolicy::Seen ? "seen" : "batch"; }

MaskPolicy parse_mask_policy(const std::string& tag) {
    if (tag == "seen") return MaskPolicy::Seen;
    if (tag == "batch") return MaskPolicy::Batch;
    throw Error(ErrorKind::ConfigError, "unknown mask policy '" + tag + "'");
}

void GclConfig::validate() const {
    align.validate();
    if (!(lr >= 0.0)) throw Error(ErrorKind::ConfigError, "GCL learning rate must be >= 0");
    if (eval_interval_batches == 0 || eval_batch_size == 0) throw Error(ErrorKind::ConfigError, "GCL intervals must be >= 1");
}

GclState make_gcl_state(const MlpModel& backbone, std::size_t class_count, const GclConfig& cfg) {
    GclState state;
    state.model = backbone;
    Rng rng(derive_seed(cfg.seed, "gcl-head"));
    reset_head(state.model, class_count, rng);
    attach_zero_adapter(state.model);
    state.optimizer = OptimizerState::adam(cfg.lr);
    return state;
}

double gcl_train_step(GclState& state, std::span<const Sample> batch, const CovRef* ref, const GclConfig& cfg) {
    if (batch.empty()) throw Error(ErrorKind::EmptyDataset, "empty GCL batch");
    MlpModel& model = state.model;
    if (!model.adapter) throw Error(ErrorKind::ConfigError, "GCL step requires an adapter");
    for (const auto& s : batch)
        if (s.label >= model.class_count()) throw Error(ErrorKind::LabelOutOfRange, "label beyond head size");

    merge_labels(state.seen, batch);
    ClassMask mask;
    if (cfg.mask_policy == MaskPolicy::Seen) {
        mask = state.seen;
    } else {
        merge_labels(mask, batch);
    }

    std::vector<ForwardResult> passes;
    std::vector<FeatVec> features;
    passes.reserve(batch.size());
    for (const auto& s : batch) {
        passes.push_back(forward(model, s.x, true));
        features.push_back(passes.back().feature);
    }
    bool fell_back = false;
    HeadInputs inputs = head_inputs(std::move(features), ref, cfg.align, fell_back);
    if (fell_back) ++state.fallback_count;

    Gradients grads = zero_gradients(model, true);
    double total = 0.0;
    const double alpha = cfg.align.alpha;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const FeatVec logits = head_logits(model, inputs.values[i]);
        const LossResult lr = masked_ce_loss(logits, batch[i].label, mask);
        total += lr.loss;
        accumulate_head(grads, inputs.values[i], lr.grad_logits);
        FeatVec grad_feature = head_input_gradient(model, lr.grad_logits);
        if (inputs.aligned) {
            const FeatVec through_map = alignment_transpose_apply(*inputs.aligned, *ref, grad_feature);
            for (std::size_t j = 0; j < grad_feature.size(); ++j)
                grad_feature[j] = alpha * through_map[j] + (1.0 - alpha) * grad_feature[j];
        }
        accumulate_backbone(model, passes[i].cache, grad_feature, true, grads);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    std::vector<double> g = trainable_grads(grads);
    for (double& v : g) v *= inv;
    std::vector<double> params = trainable_values(model);
    optimizer_step(state.optimizer, params, g);
    set_trainable(model, params);

    state.samples_trained += batch.size();
    ++state.steps;
    return total * inv;
}

BatchPredictor make_predictor(const MlpModel& model, const CovRef* ref, const GclConfig& cfg) {
    const CovRef* eval_ref = cfg.align_at_eval ? ref : nullptr;
    const bool use_adapter = model.adapter.has_value();
    const std::size_t chunk = cfg.eval_batch_size;
    const AlignConfig align = cfg.align;
    return [&model, eval_ref, use_adapter, chunk, align](std::span<const Sample> samples, const ClassMask& mask) {
        std::vector<std::size_t> out;
        out.reserve(samples.size());
        for (std::size_t start = 0; start < samples.size(); start += chunk) {
            const auto part = samples.subspan(start, std::min(chunk, samples.size() - start));
            std::vector<FeatVec> features;
            features.reserve(part.size());
            for (const auto& s : part) features.push_back(extract_feature(model, s.x, use_adapter));
            bool fell_back = false;
            const HeadInputs inputs = head_inputs(std::move(features), eval_ref, align, fell_back);
            for (const auto& v : inputs.values) out.push_back(argmax_masked(head_logits(model, v), mask));
        }
        return out;
    };
}

GclResult run_gcl(const TaskStream& stream, const MlpModel& backbone, const CovRef* ref, const LabeledDataset& test_set,
                  const GclConfig& cfg) {
    cfg.validate();
    if (test_set.samples.empty()) throw Error(ErrorKind::EmptyTestSet, "GCL run needs a test split");
    if (backbone.input_dim() != test_set.input_dim || stream.class_count != test_set.class_count)
        throw Error(ErrorKind::DimensionMismatch, "stream, test split and backbone disagree");
    if (ref != nullptr && ref->feature_dim != backbone.feature_dim())
        throw Error(ErrorKind::DimensionMismatch, "reference geometry has a different feature dimension");

    // Fixed evaluation order so aligned evaluation batches mix classes.
    std::vector<Sample> test = test_set.samples;
    Rng order_rng(derive_seed(cfg.seed, "eval-order"));
    order_rng.shuffle(std::span<Sample>(test));

    GclState state = make_gcl_state(backbone, stream.class_count, cfg);
    GclResult result;
    const std::size_t task_count = stream.tasks.size();
    result.log.task_history.assign(task_count, {});

    auto evaluate = [&](std::size_t current_task) {
        const BatchPredictor predict = make_predictor(state.model, ref, cfg);
        std::vector<Sample> visible;
        for (const auto& s : test)
            if (std::binary_search(state.seen.begin(), state.seen.end(), s.label)) visible.push_back(s);
        if (visible.empty()) return;
        const auto predicted = predict(visible, state.seen);
        std::size_t correct = 0;
        std::vector<std::size_t> task_correct(task_count, 0), task_total(task_count, 0);
        for (std::size_t i = 0; i < visible.size(); ++i) {
            const bool hit = predicted[i] == visible[i].label;
            correct += hit ? 1 : 0;
            const std::size_t home = stream.home_task[visible[i].label];
            task_total[home] += 1;
            task_correct[home] += hit ? 1 : 0;
        }
        result.log.records.push_back(EvalRecord{state.samples_trained, state.seen,
                                                static_cast<double>(correct) / static_cast<double>(visible.size())});
        for (std::size_t t = 0; t <= current_task; ++t)
            if (task_total[t] > 0)
                result.log.task_history[t].push_back(static_cast<double>(task_correct[t]) /
                                                     static_cast<double>(task_total[t]));
    };

    const std::size_t total_batches = stream.batch_count();
    std::size_t done = 0;
    for (const auto& task : stream.tasks) {
        for (const auto& batch : task.batches) {
            gcl_train_step(state, batch.samples, ref, cfg);
            ++done;
            if (done % cfg.eval_interval_batches == 0 || done == total_batches) evaluate(task.id);
        }
    }

    auto& history = result.log.task_history;
    history.erase(std::remove_if(history.begin(), history.end(), [](const auto& h) { return h.empty(); }), history.end());
    result.fallback_count = state.fallback_count;
    result.a_last = compute_last(make_predictor(state.model, ref, cfg), test, stream.class_count);
    result.model = std::move(state.model);
    return result;
}

}  // namespace mepo
