#pragma once

// Experiment orchestration: configuration, the pretrain → refine → covref →
// gcl → theory stages (in memory and file-backed), and the ablation sweep.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mepo/datastream.hpp"
#include "mepo/gcl.hpp"
#include "mepo/meta_cov.hpp"
#include "mepo/meta_rep.hpp"
#include "mepo/net.hpp"
#include "mepo/theory.hpp"

namespace mepo {

struct DataConfig {
    std::size_t input_dim = 16;
    std::size_t pretrain_classes = 30;
    std::size_t pretrain_samples_per_class = 100;
    std::size_t downstream_classes = 20;
    std::size_t downstream_train_per_class = 500;
    std::size_t downstream_test_per_class = 40;
    double cluster_spread = 1.0;
};

struct ModelConfig {
    std::vector<std::size_t> hidden{128};
    std::size_t feature_dim = 96;
};

struct PretrainConfig {
    std::size_t epochs = 30;
    double lr = 0.05;
    std::size_t batch_size = 32;
};

struct CovRefConfig {
    double epsilon = kDefaultEpsilon;
    /// Reference samples per pretraining class; 0 uses all of them.
    std::size_t samples_per_class = 50;
};

struct GclStageConfig {
    double m = 0.5;
    double n = 0.1;
    std::size_t tasks = 5;
    std::size_t batch_size = 64;
    double lr = 5e-3;
    double alpha = 0.5;
    MaskPolicy mask_policy = MaskPolicy::Seen;
    MeanPolicy mean_policy = MeanPolicy::PreserveBatchMean;
    std::size_t eval_interval_batches = 2;
    bool align_at_eval = true;
};

struct TheoryConfig {
    std::vector<double> etas{1e-1, 1e-2, 1e-3, 1e-4};
    /// Each probe task holds probe_classes / 2 pretraining classes.
    std::size_t probe_classes = 10;
    std::size_t probe_samples_per_class = 20;
    /// Full-batch head-only SGD steps fitting the probe head before the
    /// gaps are measured (same initialization for every backbone).
    std::size_t probe_head_steps = 100;
    double probe_head_lr = 0.5;
};

struct SweepConfig {
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    /// Extra α values run for the full-MePo cell.
    std::vector<double> alphas{};
    /// Worker threads; 0 picks the hardware concurrency.
    std::size_t threads = 0;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    DataConfig data;
    ModelConfig model;
    PretrainConfig pretrain;
    // Larger step sizes than the library defaults: with eta_psi = 1e-2 the
    // head barely moves in the inner loop and the backbone update is noise.
    MepoConfig refine = [] {
        MepoConfig c;
        c.eta_theta = 1e-2;
        c.eta_psi = 0.3;
        return c;
    }();
    CovRefConfig covref;
    GclStageConfig gcl;
    TheoryConfig theory;
    SweepConfig sweep;
    bool meta_rep = true;
    bool meta_cov = true;
    std::string out_dir = "out";

    void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Keys absent from `doc` keep their defaults; unknown keys are a ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

/// 16 hex digits of FNV-1a over the compact JSON of the resolved config.
std::string config_hash(const ExperimentConfig& cfg);
std::string hex64(std::uint64_t value);

// ---------------------------------------------------------------------------
// In-memory stages. Every stage seed is derive_seed(cfg.seed, <stage label>).

struct Datasets {
    LabeledDataset pretrain;
    LabeledDataset downstream_train;
    LabeledDataset downstream_test;
};

/// Pretraining classes and a disjoint set of new downstream classes (fresh
/// centers); the downstream test split shares the train split's centers.
Datasets make_datasets(const ExperimentConfig& cfg);

struct PretrainOutcome {
    MlpModel model;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double train_accuracy = 0.0;
};

/// Joint supervised training of backbone and head on the pretraining set
/// (minibatch SGD, reshuffled every epoch).
PretrainOutcome run_pretrain(const ExperimentConfig& cfg, const LabeledDataset& pretrain);

MetaRefineResult run_refine(const ExperimentConfig& cfg, const MlpModel& theta0, const LabeledDataset& pretrain);

CovRef run_covref(const ExperimentConfig& cfg, const MlpModel& backbone, const LabeledDataset& pretrain);

struct GclMetrics {
    double a_auc = 0.0;
    double a_last = 0.0;
    double forgetting = 0.0;
    std::size_t fallback_count = 0;
};

struct GclOutcome {
    GclResult result;
    GclMetrics metrics;
};

GclConfig make_gcl_config(const ExperimentConfig& cfg);
TaskStream make_stream(const ExperimentConfig& cfg, const Datasets& data);

/// One GCL run on the downstream stream. `ref` null disables alignment.
GclOutcome run_gcl_stage(const ExperimentConfig& cfg, const MlpModel& backbone, const CovRef* ref, const Datasets& data);

/// Two disjoint probe tasks from the pretraining classes with a probe head
/// fitted on both tasks; gaps are measured on the backbone of `backbone`.
struct GapProbe {
    std::vector<Sample> task_a;
    std::vector<Sample> task_b;
    std::size_t classes = 0;
};

GapProbe make_gap_probe(const ExperimentConfig& cfg, const LabeledDataset& pretrain);
GapResult run_gap_probe(const ExperimentConfig& cfg, const MlpModel& backbone, const GapProbe& probe);

/// Everything one seed produces, shared by the four ablation cells.
struct SeedArtifacts {
    Datasets data;
    PretrainOutcome pretrain;
    MetaRefineResult refine;
    CovRef ref_theta0;
    CovRef ref_refined;
};

/// Runs pretrain, refine and both reference geometries. The refine stage is
/// skipped (refine.model = theta0) when `with_refine` is false.
SeedArtifacts prepare_seed(const ExperimentConfig& cfg, bool with_refine = true);

/// Picks backbone and reference according to cfg.meta_rep / cfg.meta_cov.
GclOutcome run_cell(const ExperimentConfig& cfg, const SeedArtifacts& artifacts);

// ---------------------------------------------------------------------------
// File-backed stages (the CLI). Artifacts live in cfg.out_dir:
//   pretrain.ckpt, refine.ckpt, covref_theta0.txt, covref_refined.txt,
//   gcl/<cell>/{metrics.json, eval_log.csv}, theory/{gap.csv, gap.json}.

std::string cell_name(const ExperimentConfig& cfg);

void stage_pretrain(const ExperimentConfig& cfg);
void stage_refine(const ExperimentConfig& cfg);
void stage_covref(const ExperimentConfig& cfg);
/// Returns the directory the metrics were written to.
std::filesystem::path stage_gcl(const ExperimentConfig& cfg);
void stage_theory(const ExperimentConfig& cfg);
/// Full 2×2 flag grid (plus cfg.sweep.alphas on the full cell) for every
/// seed in cfg.sweep.seeds, seeds in parallel. Writes
/// sweep/seed-<s>/<cell>/{metrics.json, eval_log.csv} and sweep/summary.json.
nlohmann::json stage_sweep(const ExperimentConfig& cfg);

/// The metrics document written by stage_gcl and stage_sweep.
nlohmann::json metrics_json(const ExperimentConfig& cfg, const GclMetrics& metrics, const std::string& inputs_hash);

}  // namespace mepo
