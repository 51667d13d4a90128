#pragma once

// Online GCL phase: the backbone stays frozen, a zero-initialized adapter
// on its last layer and a fresh head train with Adam, one step per stream
// batch. With a reference geometry, head inputs are the α-blend of raw and
// covariance-aligned features.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "mepo/datastream.hpp"
#include "mepo/meta_cov.hpp"
#include "mepo/metrics.hpp"
#include "mepo/net.hpp"

namespace mepo {

enum class MaskPolicy {
    Seen,   ///< classes seen so far in the stream
    Batch,  ///< classes present in the current batch
};

std::string to_string(MaskPolicy p);
MaskPolicy parse_mask_policy(const std::string& tag);

struct GclConfig {
    AlignConfig align;
    double lr = 5e-3;
    MaskPolicy mask_policy = MaskPolicy::Seen;
    std::size_t eval_interval_batches = 2;
    std::size_t eval_batch_size = 64;
    /// Align test batches the same way as training batches.
    bool align_at_eval = true;
    std::uint64_t seed = 0;

    void validate() const;
};

struct GclState {
    MlpModel model;
    OptimizerState optimizer;
    ClassMask seen;
    std::size_t fallback_count = 0;
    std::size_t samples_trained = 0;
    std::size_t steps = 0;
};

/// Copies the backbone, installs a seeded head over `class_count` classes and
/// a zero adapter, and sets up Adam.
GclState make_gcl_state(const MlpModel& backbone, std::size_t class_count, const GclConfig& cfg);

/// One update of adapter and head on `batch`. Returns the batch loss before
/// the update. Batches that cannot be aligned (fewer than two samples or a
/// covariance that stays indefinite) train on raw features and bump
/// fallback_count. Alignment statistics are treated as constants in the
/// backward pass.
double gcl_train_step(GclState& state, std::span<const Sample> batch, const CovRef* ref, const GclConfig& cfg);

/// Batched predictions with the model's current adapter and head.
BatchPredictor make_predictor(const MlpModel& model, const CovRef* ref, const GclConfig& cfg);

struct GclResult {
    EvalLog log;
    MlpModel model;
    std::size_t fallback_count = 0;
    double a_last = 0.0;
};

/// Single pass over the stream. Every eval_interval_batches batches (and
/// after the final batch) records the accuracy on the test samples of
/// seen classes, predicting among seen classes.
GclResult run_gcl(const TaskStream& stream, const MlpModel& backbone, const CovRef* ref, const LabeledDataset& test_set,
                  const GclConfig& cfg);

}  // namespace mepo
