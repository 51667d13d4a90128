#include "mepo/meta_rep.hpp"

#include <algorithm>

#include "mepo/error.hpp"
#include "mepo/rng.hpp"

namespace mepo {

namespace {

void sgd_pass(MlpModel& model, std::span<const Sample> samples, double eta_theta, double eta_psi,
              std::size_t batch_size) {
    if (batch_size == 0) throw Error(ErrorKind::InvalidCount, "batch size must be >= 1");
    Gradients grads;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const std::size_t len = std::min(batch_size, samples.size() - start);
        batch_loss_and_gradients(model, samples.subspan(start, len), nullptr, false, grads);
        sgd_update(model, grads, eta_theta, eta_psi);
    }
}

}  // namespace

void MepoConfig::validate() const {
    if (!(eta_theta >= 0.0 && eta_psi >= 0.0)) throw Error(ErrorKind::ConfigError, "learning rates must be >= 0");
    if (!(eta_meta >= 0.0 && eta_meta <= 1.0)) throw Error(ErrorKind::EtaOutOfRange, "eta_meta must lie in [0, 1]");
    if (!(gamma > 0.0 && gamma < 1.0)) throw Error(ErrorKind::ConfigError, "gamma must lie in (0, 1)");
    if (tasks_per_epoch == 0 || inner_batch_size == 0 || class_count_meta == 0 || samples_per_class_meta == 0)
        throw Error(ErrorKind::ConfigError, "meta-refinement counts must be >= 1");
}

MlpModel inner_loop(MlpModel model, std::span<const std::vector<Sample>> tasks, double eta_theta, double eta_psi,
                    std::size_t batch_size) {
    if (tasks.empty()) throw Error(ErrorKind::EmptyDataset, "inner loop needs at least one task");
    for (const auto& task : tasks) sgd_pass(model, task, eta_theta, eta_psi, batch_size);
    return model;
}

MlpModel outer_loop(MlpModel model, std::span<const Sample> joint_set, double eta_theta, double eta_psi,
                    std::size_t batch_size) {
    if (joint_set.empty()) throw Error(ErrorKind::EmptyDataset, "outer loop needs a nonempty joint set");
    sgd_pass(model, joint_set, eta_theta, eta_psi, batch_size);
    return model;
}

MetaEpochSetup meta_epoch_setup(const LabeledDataset& pre, std::size_t feature_dim, const MepoConfig& cfg,
                                std::size_t epoch) {
    MetaEpochSetup setup;
    setup.sequence = sample_pseudo_sequence(pre, cfg.class_count_meta, cfg.samples_per_class_meta, cfg.gamma,
                                            cfg.tasks_per_epoch, derive_seed(cfg.seed, "pseudo-sequence", epoch));
    Rng head_rng(derive_seed(cfg.seed, "meta-head", epoch));
    setup.head = init_layer(feature_dim, cfg.class_count_meta, head_rng);
    return setup;
}

MetaRefineResult meta_refine(const MlpModel& theta0, const LabeledDataset& pre, const MepoConfig& cfg) {
    cfg.validate();
    theta0.validate();
    MetaRefineResult result;
    result.model = theta0;
    result.model.adapter.reset();

    for (std::size_t k = 0; k < cfg.meta_epochs; ++k) {
        MetaEpochSetup setup = meta_epoch_setup(pre, theta0.feature_dim(), cfg, k);
        MlpModel work = result.model;
        work.head = std::move(setup.head);
        work = inner_loop(std::move(work), setup.sequence.tasks, cfg.eta_theta, cfg.eta_psi, cfg.inner_batch_size);
        work = outer_loop(std::move(work), setup.sequence.joint_set, cfg.eta_theta, cfg.eta_psi, cfg.inner_batch_size);
        result.joint_losses.push_back(batch_loss(work, setup.sequence.joint_set, nullptr, false));

        unflatten(result.model, reptile_blend(flatten(result.model), flatten(work), cfg.eta_meta));
    }
    result.model.head = theta0.head;
    result.model.adapter = theta0.adapter;
    return result;
}

}  // namespace mepo
