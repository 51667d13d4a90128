#pragma once

// Meta-refinement of a pretrained backbone over pseudo task sequences:
// sequential SGD through the pseudo tasks, one joint pass over the held-out
// set, then a Reptile-style blend towards the result.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mepo/datastream.hpp"
#include "mepo/net.hpp"

namespace mepo {

struct MepoConfig {
    std::size_t meta_epochs = 20;
    std::size_t tasks_per_epoch = 5;
    double eta_theta = 1e-3;
    double eta_psi = 1e-2;
    double eta_meta = 1.0;
    double gamma = 0.3;
    std::size_t class_count_meta = 20;
    std::size_t samples_per_class_meta = 80;
    std::size_t inner_batch_size = 16;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Visits the tasks in order, one pass each, one SGD step per mini-batch
/// (backbone at eta_theta, head at eta_psi).
MlpModel inner_loop(MlpModel model, std::span<const std::vector<Sample>> tasks, double eta_theta, double eta_psi,
                    std::size_t batch_size);

/// One SGD pass over the joint set with the same rates.
MlpModel outer_loop(MlpModel model, std::span<const Sample> joint_set, double eta_theta, double eta_psi,
                    std::size_t batch_size);

/// The sampled pseudo sequence and fresh head used by meta-epoch `epoch`
/// (0-based). Deterministic in (cfg.seed, epoch).
struct MetaEpochSetup {
    PseudoSequence sequence;
    Layer head;
};

MetaEpochSetup meta_epoch_setup(const LabeledDataset& pre, std::size_t feature_dim, const MepoConfig& cfg,
                                std::size_t epoch);

struct MetaRefineResult {
    /// Refined backbone; the head of the input model is passed through.
    MlpModel model;
    /// Mean joint-set loss after each epoch's outer pass.
    std::vector<double> joint_losses;
};

MetaRefineResult meta_refine(const MlpModel& theta0, const LabeledDataset& pre, const MepoConfig& cfg);

}  // namespace mepo
