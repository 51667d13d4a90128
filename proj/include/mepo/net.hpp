#pragma once

// Small tanh MLP with hand-written forward/backward passes.
//
// The backbone is a chain of affine layers, each followed by the activation
// (including the last, so the feature is post-activation). The head is a
// single affine map from the feature to one logit per class. An optional
// additive adapter perturbs the final backbone layer: W_eff = W + dW,
// b_eff = b + db.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mepo/linalg.hpp"
#include "mepo/rng.hpp"

namespace mepo {

enum class Activation { Tanh, Identity };

std::string to_string(Activation a);
Activation parse_activation(const std::string& tag);

/// Affine layer; weight is out_dim × in_dim.
struct Layer {
    DenseMatrix weight;
    FeatVec bias;

    std::size_t in_dim() const { return weight.cols(); }
    std::size_t out_dim() const { return weight.rows(); }

    friend bool operator==(const Layer&, const Layer&) = default;
};

Layer zeros_like(const Layer& layer);

struct MlpModel {
    std::vector<Layer> backbone;
    Layer head;
    std::optional<Layer> adapter;
    Activation activation = Activation::Tanh;

    std::size_t input_dim() const;
    std::size_t feature_dim() const;
    std::size_t class_count() const { return head.out_dim(); }

    /// Throws DimensionMismatch if layer shapes do not chain.
    void validate() const;

    friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

struct Sample {
    FeatVec x;
    std::size_t label = 0;

    friend bool operator==(const Sample&, const Sample&) = default;
};

/// Sorted, duplicate-free set of class ids admitted by the softmax.
using ClassMask = std::vector<std::size_t>;

ClassMask full_mask(std::size_t class_count);

/// Uniform in ±1/sqrt(fan_in) for every weight and bias.
Layer init_layer(std::size_t in_dim, std::size_t out_dim, Rng& rng);

/// dims = {input, hidden..., feature}; at least two entries.
MlpModel make_mlp(std::span<const std::size_t> dims, std::size_t class_count, Rng& rng,
                  Activation activation = Activation::Tanh);

void reset_head(MlpModel& model, std::size_t class_count, Rng& rng);

/// Installs a zero adapter so f_{θ+Δθ} starts equal to f_θ.
void attach_zero_adapter(MlpModel& model);

struct ForwardCache {
    /// activations[i] is the input of backbone layer i; the last entry is
    /// the feature itself.
    std::vector<FeatVec> activations;
    bool used_adapter = false;
};

struct ForwardResult {
    FeatVec feature;
    FeatVec logits;
    ForwardCache cache;
};

ForwardResult forward(const MlpModel& model, std::span<const double> x, bool use_adapter);

FeatVec extract_feature(const MlpModel& model, std::span<const double> x, bool use_adapter);
FeatVec head_logits(const MlpModel& model, std::span<const double> feature);

struct LossResult {
    double loss = 0.0;
    FeatVec grad_logits;
};

/// Cross-entropy with the softmax restricted to `mask`; logits outside the
/// mask receive zero gradient.
LossResult masked_ce_loss(std::span<const double> logits, std::size_t target, const ClassMask& mask);

/// Softmax over the mask; exact zeros elsewhere.
FeatVec masked_softmax(std::span<const double> logits, const ClassMask& mask);

struct Gradients {
    std::vector<Layer> backbone;
    Layer head;
    std::optional<Layer> adapter;
};

/// Zero gradients shaped like `model`. With use_adapter the adapter block
/// is present and the backbone block stays zero.
Gradients zero_gradients(const MlpModel& model, bool use_adapter);

/// Adds ∂L/∂head for one sample whose head input was `head_input`.
void accumulate_head(Gradients& grads, std::span<const double> head_input, std::span<const double> grad_logits);

/// ∂L/∂(head input) = Wᵀ·grad_logits.
FeatVec head_input_gradient(const MlpModel& model, std::span<const double> grad_logits);

/// Backpropagates ∂L/∂feature through the backbone, adding into `grads`.
/// With use_adapter only the adapter block is written.
void accumulate_backbone(const MlpModel& model, const ForwardCache& cache, std::span<const double> grad_feature,
                         bool use_adapter, Gradients& grads);

/// Full single-sample backward pass from logits gradients.
Gradients backward(const MlpModel& model, const ForwardCache& cache, std::span<const double> grad_logits,
                   bool use_adapter);

/// Mean masked cross-entropy over `batch` and its averaged gradients.
/// A null mask means all classes.
double batch_loss_and_gradients(const MlpModel& model, std::span<const Sample> batch, const ClassMask* mask,
                                bool use_adapter, Gradients& grads);

double batch_loss(const MlpModel& model, std::span<const Sample> batch, const ClassMask* mask, bool use_adapter);

/// Plain SGD on backbone (backbone_lr) and head (head_lr).
void sgd_update(MlpModel& model, const Gradients& grads, double backbone_lr, double head_lr);

std::size_t predict(const MlpModel& model, std::span<const double> x, const ClassMask& mask, bool use_adapter);

std::size_t argmax_masked(std::span<const double> logits, const ClassMask& mask);

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { Sgd, Adam };

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::Sgd;
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::size_t step = 0;

    static OptimizerState sgd(double lr);
    static OptimizerState adam(double lr);
};

/// SGD: p -= lr·g. Adam: bias-corrected moments. Moments are sized on the
/// first call and must keep that size afterwards.
void optimizer_step(OptimizerState& state, std::span<double> params, std::span<const double> grads);

// ---------------------------------------------------------------------------
// Flat parameter vectors

/// Backbone parameters in flatten order: for each layer, weight row-major
/// then bias.
struct FlatParams {
    FeatVec values;

    std::size_t size() const { return values.size(); }
    friend bool operator==(const FlatParams&, const FlatParams&) = default;
};

std::vector<double> flatten_layers(std::span<const Layer> layers);
void unflatten_layers(std::span<Layer> layers, std::span<const double> values);
std::size_t parameter_count(std::span<const Layer> layers);

FlatParams flatten(const MlpModel& model);
/// Writes `flat` into the backbone of `model`.
void unflatten(MlpModel& model, const FlatParams& flat);

/// theta_old + eta_meta·(theta_new − theta_old).
FlatParams reptile_blend(const FlatParams& theta_old, const FlatParams& theta_new, double eta_meta);

// ---------------------------------------------------------------------------
// Checkpoints

/// Descriptor line "mlp dims d0 d1 ... classes C activation tanh adapter 0|1",
/// then every tensor (bias as a 1×n matrix) in the matrix text layout:
/// backbone layers in flatten order, head, adapter.
void write_checkpoint(std::ostream& out, const MlpModel& model);
MlpModel read_checkpoint(std::istream& in);

}  // namespace mepo
