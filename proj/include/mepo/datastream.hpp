#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "mepo/linalg.hpp"
#include "mepo/net.hpp"

namespace mepo {

struct LabeledDataset {
    std::vector<Sample> samples;
    std::size_t class_count = 0;
    std::size_t input_dim = 0;

    /// Every label < class_count, every class populated, every x of input_dim.
    void validate() const;
    /// Sample indices grouped by class, in dataset order.
    std::vector<std::vector<std::size_t>> indices_by_class() const;

    friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

/// Isotropic Gaussian clusters; centers are standard-normal draws.
struct GaussianClusters {
    std::vector<FeatVec> centers;
    double spread = 1.0;
};

GaussianClusters make_clusters(std::size_t class_count, std::size_t input_dim, double spread, std::uint64_t seed);

/// Class-major samples x = center + spread·z, z ~ N(0, I).
LabeledDataset sample_clusters(const GaussianClusters& clusters, std::size_t samples_per_class, std::uint64_t seed);

/// make_clusters + sample_clusters with seeds derived from `seed`.
LabeledDataset gen_gaussian_dataset(std::size_t class_count, std::size_t samples_per_class, std::size_t input_dim,
                                    double cluster_spread, std::uint64_t seed);

/// Random subset of `per_class` samples of every class; labels unchanged.
LabeledDataset subsample_per_class(const LabeledDataset& data, std::size_t per_class, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Si-Blurry stream

struct SiBlurryConfig {
    double m = 0.5;  ///< disjoint class ratio
    double n = 0.1;  ///< blurry sample ratio
    std::size_t tasks = 5;
    std::uint64_t seed = 0;

    void validate() const;
};

struct StreamBatch {
    std::vector<Sample> samples;
    /// Position of each sample in the source dataset.
    std::vector<std::size_t> sample_indices;
};

struct StreamTask {
    std::size_t id = 0;
    std::vector<StreamBatch> batches;
    /// Y_t: labels that occur in this task.
    ClassMask labels;
};

struct TaskStream {
    std::vector<StreamTask> tasks;
    ClassMask disjoint_classes;
    ClassMask blurry_classes;
    /// home_task[c]: the task that owns class c (the only task for a
    /// disjoint class, the majority task for a blurry one).
    std::vector<std::size_t> home_task;
    std::size_t class_count = 0;

    std::size_t sample_count() const;
    std::size_t batch_count() const;
};

/// Splits classes into round(m·|Y|) disjoint classes, spread over tasks with
/// seeded non-uniform weights (each task gets one when there are enough),
/// and blurry classes, which keep round((1−n)·N) samples in a random home
/// task and scatter the rest uniformly over the other tasks. Each task is
/// shuffled and cut into batches of batch_size; the last batch may be short.
TaskStream make_siblurry_stream(const LabeledDataset& data, const SiBlurryConfig& cfg, std::size_t batch_size);

/// One line per sample: "task_id batch_id class_id sample_index".
void write_manifest(std::ostream& out, const TaskStream& stream);

// ---------------------------------------------------------------------------
// Pseudo task sequences for meta-refinement

struct PseudoSequence {
    /// Sequential pseudo tasks. Labels are local indices into meta_classes.
    std::vector<std::vector<Sample>> tasks;
    std::vector<Sample> joint_set;
    /// meta_classes[local] = class id in the source dataset.
    std::vector<std::size_t> meta_classes;
    double split_ratio = 0.3;

    ClassMask task_labels(std::size_t t) const;
};

/// Draws class_count_meta classes without replacement and samples_per_class
/// samples of each. Per class, round(gamma·samples_per_class) samples go to
/// the joint set; the rest follow their class into one of t_prime
/// near-equal disjoint pseudo tasks.
PseudoSequence sample_pseudo_sequence(const LabeledDataset& pre, std::size_t class_count_meta,
                                      std::size_t samples_per_class, double gamma, std::size_t t_prime,
                                      std::uint64_t seed);

}  // namespace mepo
