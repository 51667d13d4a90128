#pragma once

// Reference geometry from pretraining classes and per-batch covariance
// alignment (whitening by the batch factor, recoloring by the reference
// factor).

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mepo/datastream.hpp"
#include "mepo/linalg.hpp"
#include "mepo/net.hpp"

namespace mepo {

inline constexpr double kDefaultEpsilon = 1e-4;

struct CovRef {
    std::vector<std::size_t> class_ids;
    std::vector<FeatVec> prototypes;
    FeatVec global_mean;
    DenseMatrix sigma_pre;
    /// cholesky(sigma_pre, epsilon)
    DenseMatrix l_pre;
    double epsilon = kDefaultEpsilon;
    std::size_t feature_dim = 0;
};

/// Class prototypes under the frozen backbone (no adapter), their mean, and
/// their (C−1)-normalized covariance with its regularized Cholesky factor.
/// Every class of `ref_data` must have at least one sample.
CovRef build_cov_ref(const MlpModel& backbone, const LabeledDataset& ref_data, double epsilon = kDefaultEpsilon);

enum class MeanPolicy {
    PreserveBatchMean,  ///< f̂ = M·(f − f̄) + f̄
    Raw,                ///< f̂ = M·f
};

std::string to_string(MeanPolicy p);
MeanPolicy parse_mean_policy(const std::string& tag);

struct AlignConfig {
    double alpha = 0.5;
    double epsilon = kDefaultEpsilon;
    MeanPolicy mean_policy = MeanPolicy::PreserveBatchMean;

    void validate() const;
};

/// Result of aligning one batch. The map is M = L_pre·L_cur⁻¹, kept in
/// factored form.
struct AlignedBatch {
    std::vector<FeatVec> features;
    FeatVec batch_mean;
    DenseMatrix l_cur;
};

/// Throws BatchTooSmall for fewer than two features, NotPositiveDefinite if
/// the batch covariance cannot be factored even with cfg.epsilon.
AlignedBatch align_batch(std::span<const FeatVec> features, const CovRef& ref, const AlignConfig& cfg);

/// Mᵀ·g for the map of an aligned batch (backprop with batch statistics
/// held constant).
FeatVec alignment_transpose_apply(const AlignedBatch& aligned, const CovRef& ref, std::span<const double> g);

/// alpha·f_hat + (1−alpha)·f; the endpoints return copies of f / f_hat.
FeatVec combine_features(std::span<const double> f, std::span<const double> f_hat, double alpha);

/// Header "covref <feature_dim> <class_count> <epsilon>", a "class_ids" line,
/// then prototypes, global mean (1×D), sigma_pre and l_pre as matrices.
void write_cov_ref(std::ostream& out, const CovRef& ref);
CovRef read_cov_ref(std::istream& in);

}  // namespace mepo
