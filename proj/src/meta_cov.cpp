#include "mepo/meta_cov.hpp"

#include <istream>
#include <limits>
#include <ostream>

#include "mepo/error.hpp"

namespace mepo {

CovRef build_cov_ref(const MlpModel& backbone, const LabeledDataset& ref_data, double epsilon) {
    if (ref_data.class_count < 2) throw Error(ErrorKind::TooFewClasses, "reference set needs at least two classes");
    const auto groups = ref_data.indices_by_class();
    CovRef ref;
    ref.epsilon = epsilon;
    ref.feature_dim = backbone.feature_dim();
    for (std::size_t c = 0; c < groups.size(); ++c) {
        if (groups[c].empty()) throw Error(ErrorKind::InsufficientSamples, "reference class without samples");
        FeatVec mu(ref.feature_dim, 0.0);
        for (std::size_t i : groups[c]) {
            const FeatVec f = extract_feature(backbone, ref_data.samples[i].x, false);
            for (std::size_t j = 0; j < mu.size(); ++j) mu[j] += f[j];
        }
        for (double& v : mu) v /= static_cast<double>(groups[c].size());
        ref.class_ids.push_back(c);
        ref.prototypes.push_back(std::move(mu));
    }
    Covariance stats = sample_covariance(ref.prototypes);
    ref.global_mean = std::move(stats.mean);
    ref.sigma_pre = std::move(stats.cov);
    ref.l_pre = cholesky(ref.sigma_pre, epsilon);
    return ref;
}

std::string to_string(MeanPolicy p) { return p == MeanPolicy::PreserveBatchMean ? "preserve-batch-mean" : "raw"; }

MeanPolicy parse_mean_policy(const std::string& tag) {
    if (tag == "preserve-batch-mean") return MeanPolicy::PreserveBatchMean;
    if (tag == "raw") return MeanPolicy::Raw;
    throw Error(ErrorKind::ConfigError, "unknown mean policy '" + tag + "'");
}

void AlignConfig::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::ConfigError, "alpha must lie in [0, 1]");
    if (!(epsilon >= 0.0)) throw Error(ErrorKind::ConfigError, "epsilon must be >= 0");
}

AlignedBatch align_batch(std::span<const FeatVec> features, const CovRef& ref, const AlignConfig& cfg) {
    if (features.size() < 2) throw Error(ErrorKind::BatchTooSmall, "alignment needs at least two features");
    for (const auto& f : features)
        if (f.size() != ref.feature_dim) throw Error(ErrorKind::DimensionMismatch, "feature dim differs from reference");

    Covariance stats = sample_covariance(features);
    AlignedBatch out;
    out.l_cur = cholesky(stats.cov, cfg.epsilon);
    out.batch_mean = std::move(stats.mean);

    // Columns are (centered) features; one triangular solve for the batch.
    const std::size_t dim = ref.feature_dim;
    const bool centered = cfg.mean_policy == MeanPolicy::PreserveBatchMean;
    DenseMatrix columns(dim, features.size());
    for (std::size_t i = 0; i < features.size(); ++i)
        for (std::size_t j = 0; j < dim; ++j) columns(j, i) = features[i][j] - (centered ? out.batch_mean[j] : 0.0);
    const DenseMatrix recolored = matmul(ref.l_pre, solve_lower_triangular(out.l_cur, columns));

    out.features.assign(features.size(), FeatVec(dim));
    for (std::size_t i = 0; i < features.size(); ++i)
        for (std::size_t j = 0; j < dim; ++j)
            out.features[i][j] = recolored(j, i) + (centered ? out.batch_mean[j] : 0.0);
    return out;
}

FeatVec alignment_transpose_apply(const AlignedBatch& aligned, const CovRef& ref, std::span<const double> g) {
    // (L_pre·L_cur⁻¹)ᵀ·g = L_cur⁻ᵀ·(L_preᵀ·g)
    return solve_lower_transposed(aligned.l_cur, matvec_transposed(ref.l_pre, g));
}

FeatVec combine_features(std::span<const double> f, std::span<const double> f_hat, double alpha) {
    if (f.size() != f_hat.size()) throw Error(ErrorKind::DimensionMismatch, "feature vectors differ in length");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::ConfigError, "alpha must lie in [0, 1]");
    if (alpha == 0.0) return FeatVec(f.begin(), f.end());
    if (alpha == 1.0) return FeatVec(f_hat.begin(), f_hat.end());
    FeatVec out(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = alpha * f_hat[i] + (1.0 - alpha) * f[i];
    return out;
}

void write_cov_ref(std::ostream& out, const CovRef& ref) {
    const auto old_precision = out.precision(std::numeric_limits<double>::max_digits10);
    out << "covref " << ref.feature_dim << ' ' << ref.prototypes.size() << ' ' << ref.epsilon << '\n';
    out << "class_ids";
    for (std::size_t id : ref.class_ids) out << ' ' << id;
    out << '\n';
    out.precision(old_precision);
    DenseMatrix protos(ref.prototypes.size(), ref.feature_dim);
    for (std::size_t c = 0; c < ref.prototypes.size(); ++c)
        for (std::size_t j = 0; j < ref.feature_dim; ++j) protos(c, j) = ref.prototypes[c][j];
    write_matrix(out, protos);
    write_matrix(out, DenseMatrix(1, ref.feature_dim, ref.global_mean));
    write_matrix(out, ref.sigma_pre);
    write_matrix(out, ref.l_pre);
}

CovRef read_cov_ref(std::istream& in) {
    std::string word;
    CovRef ref;
    std::size_t classes = 0;
    if (!(in >> word >> ref.feature_dim >> classes >> ref.epsilon) || word != "covref")
        throw Error(ErrorKind::ParseError, "malformed covref header");
    if (!(in >> word) || word != "class_ids") throw Error(ErrorKind::ParseError, "covref missing class_ids");
    ref.class_ids.resize(classes);
    for (auto& id : ref.class_ids)
        if (!(in >> id)) throw Error(ErrorKind::ParseError, "truncated class_ids");
    const DenseMatrix protos = read_matrix(in);
    const DenseMatrix mean = read_matrix(in);
    ref.sigma_pre = read_matrix(in);
    ref.l_pre = read_matrix(in);
    const std::size_t d = ref.feature_dim;
    if (protos.rows() != classes || protos.cols() != d || mean.rows() != 1 || mean.cols() != d ||
        ref.sigma_pre.rows() != d || ref.sigma_pre.cols() != d || ref.l_pre.rows() != d || ref.l_pre.cols() != d)
        throw Error(ErrorKind::ParseError, "covref tensor shapes disagree with header");
    for (std::size_t c = 0; c < classes; ++c) ref.prototypes.emplace_back(protos.row(c).begin(), protos.row(c).end());
    ref.global_mean.assign(mean.data().begin(), mean.data().end());
    return ref;
}

}  // namespace mepo
