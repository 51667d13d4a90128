#include "mepo/net.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "mepo/error.hpp"

namespace mepo {

namespace {

double activate(Activation a, double v) { return a == Activation::Tanh ? std::tanh(v) : v; }

/// Derivative expressed through the activation output.
double activate_grad(Activation a, double out) { return a == Activation::Tanh ? 1.0 - out * out : 1.0; }

FeatVec affine(const Layer& layer, std::span<const double> x) {
    FeatVec y = matvec(layer.weight, x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += layer.bias[i];
    return y;
}

/// Effective final layer when the adapter is active.
Layer merged_final_layer(const MlpModel& model) {
    Layer merged = model.backbone.back();
    const Layer& delta = *model.adapter;
    merged.weight = merged.weight + delta.weight;
    for (std::size_t i = 0; i < merged.bias.size(); ++i) merged.bias[i] += delta.bias[i];
    return merged;
}

bool same_shape(const Layer& a, const Layer& b) {
    return a.weight.rows() == b.weight.rows() && a.weight.cols() == b.weight.cols() && a.bias.size() == b.bias.size();
}

void add_outer(Layer& grad, std::span<const double> delta, std::span<const double> input) {
    for (std::size_t r = 0; r < delta.size(); ++r) {
        const double d = delta[r];
        grad.bias[r] += d;
        if (d == 0.0) continue;
        auto row = grad.weight.row(r);
        for (std::size_t c = 0; c < input.size(); ++c) row[c] += d * input[c];
    }
}

void scale_layer(Layer& layer, double s) {
    for (double& v : layer.weight.data()) v *= s;
    for (double& v : layer.bias) v *= s;
}

void sgd_layer(Layer& p, const Layer& g, double lr) {
    auto pw = p.weight.data();
    auto gw = g.weight.data();
    for (std::size_t i = 0; i < pw.size(); ++i) pw[i] -= lr * gw[i];
    for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] -= lr * g.bias[i];
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "identity"; }

Activation parse_activation(const std::string& tag) {
    if (tag == "tanh") return Activation::Tanh;
    if (tag == "identity") return Activation::Identity;
    throw Error(ErrorKind::ParseError, "unknown activation '" + tag + "'");
}

Layer zeros_like(const Layer& layer) {
    return Layer{DenseMatrix(layer.weight.rows(), layer.weight.cols()), FeatVec(layer.bias.size(), 0.0)};
}

std::size_t MlpModel::input_dim() const { return backbone.empty() ? 0 : backbone.front().in_dim(); }

std::size_t MlpModel::feature_dim() const { return backbone.empty() ? 0 : backbone.back().out_dim(); }

void MlpModel::validate() const {
    if (backbone.empty()) throw Error(ErrorKind::DimensionMismatch, "model has no backbone layers");
    for (std::size_t i = 0; i < backbone.size(); ++i) {
        if (backbone[i].bias.size() != backbone[i].out_dim())
            throw Error(ErrorKind::DimensionMismatch, "bias length differs from layer out-dim");
        if (i > 0 && backbone[i].in_dim() != backbone[i - 1].out_dim())
            throw Error(ErrorKind::DimensionMismatch, "backbone layer dimensions do not chain");
    }
    if (head.in_dim() != feature_dim() || head.bias.size() != head.out_dim())
        throw Error(ErrorKind::DimensionMismatch, "head does not match the feature dimension");
    if (adapter && !same_shape(*adapter, backbone.back()))
        throw Error(ErrorKind::DimensionMismatch, "adapter shape differs from the final backbone layer");
}

ClassMask full_mask(std::size_t class_count) {
    ClassMask mask(class_count);
    for (std::size_t c = 0; c < class_count; ++c) mask[c] = c;
    return mask;
}

Layer init_layer(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    Layer layer{DenseMatrix(out_dim, in_dim), FeatVec(out_dim)};
    for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
    for (double& b : layer.bias) b = rng.uniform(-bound, bound);
    return layer;
}

MlpModel make_mlp(std::span<const std::size_t> dims, std::size_t class_count, Rng& rng, Activation activation) {
    if (dims.size() < 2 || class_count == 0) throw Error(ErrorKind::InvalidCount, "need >= 2 dims and >= 1 class");
    for (std::size_t d : dims)
        if (d == 0) throw Error(ErrorKind::InvalidCount, "zero layer width");
    MlpModel model;
    model.activation = activation;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) model.backbone.push_back(init_layer(dims[i], dims[i + 1], rng));
    model.head = init_layer(dims.back(), class_count, rng);
    return model;
}

void reset_head(MlpModel& model, std::size_t class_count, Rng& rng) {
    model.head = init_layer(model.feature_dim(), class_count, rng);
}

void attach_zero_adapter(MlpModel& model) { model.adapter = zeros_like(model.backbone.back()); }

ForwardResult forward(const MlpModel& model, std::span<const double> x, bool use_adapter) {
    if (x.size() != model.input_dim()) throw Error(ErrorKind::DimensionMismatch, "input dim differs from model");
    if (use_adapter && !model.adapter) throw Error(ErrorKind::StaleCache, "adapter requested but model has none");

    ForwardResult result;
    auto& acts = result.cache.activations;
    acts.reserve(model.backbone.size() + 1);
    acts.emplace_back(x.begin(), x.end());
    const std::size_t last = model.backbone.size() - 1;
    for (std::size_t i = 0; i < model.backbone.size(); ++i) {
        FeatVec z = (i == last && use_adapter) ? affine(merged_final_layer(model), acts.back())
                                              : affine(model.backbone[i], acts.back());
        for (double& v : z) v = activate(model.activation, v);
        acts.push_back(std::move(z));
    }
    result.cache.used_adapter = use_adapter;
    result.feature = acts.back();
    result.logits = affine(model.head, result.feature);
    return result;
}

FeatVec extract_feature(const MlpModel& model, std::span<const double> x, bool use_adapter) {
    return forward(model, x, use_adapter).feature;
}

FeatVec head_logits(const MlpModel& model, std::span<const double> feature) {
    if (feature.size() != model.head.in_dim()) throw Error(ErrorKind::DimensionMismatch, "feature dim differs from head");
    return affine(model.head, feature);
}

FeatVec masked_softmax(std::span<const double> logits, const ClassMask& mask) {
    if (mask.empty()) throw Error(ErrorKind::EmptyMask, "softmax mask is empty");
    double shift = -std::numeric_limits<double>::infinity();
    for (std::size_t c : mask) {
        if (c >= logits.size()) throw Error(ErrorKind::LabelOutOfRange, "mask id beyond logit dimension");
        shift = std::max(shift, logits[c]);
    }
    FeatVec probs(logits.size(), 0.0);
    double total = 0.0;
    for (std::size_t c : mask) {
        probs[c] = std::exp(logits[c] - shift);
        total += probs[c];
    }
    for (std::size_t c : mask) probs[c] /= total;
    return probs;
}

LossResult masked_ce_loss(std::span<const double> logits, std::size_t target, const ClassMask& mask) {
    if (mask.empty()) throw Error(ErrorKind::EmptyMask, "loss mask is empty");
    if (!std::binary_search(mask.begin(), mask.end(), target))
        throw Error(ErrorKind::TargetNotInMask, "target class " + std::to_string(target) + " is not in the mask");

    double shift = -std::numeric_limits<double>::infinity();
    for (std::size_t c : mask) {
        if (c >= logits.size()) throw Error(ErrorKind::LabelOutOfRange, "mask id beyond logit dimension");
        shift = std::max(shift, logits[c]);
    }
    double total = 0.0;
    for (std::size_t c : mask) total += std::exp(logits[c] - shift);
    const double log_norm = shift + std::log(total);

    LossResult out;
    out.loss = log_norm - logits[target];
    out.grad_logits.assign(logits.size(), 0.0);
    for (std::size_t c : mask) out.grad_logits[c] = std::exp(logits[c] - log_norm);
    out.grad_logits[target] -= 1.0;
    return out;
}

Gradients zero_gradients(const MlpModel& model, bool use_adapter) {
    Gradients g;
    g.backbone.reserve(model.backbone.size());
    for (const auto& layer : model.backbone) g.backbone.push_back(zeros_like(layer));
    g.head = zeros_like(model.head);
    if (use_adapter) g.adapter = zeros_like(model.backbone.back());
    return g;
}

void accumulate_head(Gradients& grads, std::span<const double> head_input, std::span<const double> grad_logits) {
    add_outer(grads.head, grad_logits, head_input);
}

FeatVec head_input_gradient(const MlpModel& model, std::span<const double> grad_logits) {
    return matvec_transposed(model.head.weight, grad_logits);
}

void accumulate_backbone(const MlpModel& model, const ForwardCache& cache, std::span<const double> grad_feature,
                         bool use_adapter, Gradients& grads) {
    const std::size_t depth = model.backbone.size();
    if (cache.activations.size() != depth + 1 || cache.used_adapter != use_adapter ||
        cache.activations.back().size() != grad_feature.size() || grads.backbone.size() != depth ||
        (use_adapter && !grads.adapter))
        throw Error(ErrorKind::StaleCache, "forward cache does not match the model");
    for (std::size_t i = 0; i < depth; ++i)
        if (cache.activations[i].size() != model.backbone[i].in_dim())
            throw Error(ErrorKind::StaleCache, "forward cache does not match the model");

    const Layer final_layer = use_adapter ? merged_final_layer(model) : model.backbone.back();
    FeatVec upstream(grad_feature.begin(), grad_feature.end());
    for (std::size_t i = depth; i-- > 0;) {
        const FeatVec& out = cache.activations[i + 1];
        FeatVec delta(out.size());
        for (std::size_t j = 0; j < out.size(); ++j) delta[j] = upstream[j] * activate_grad(model.activation, out[j]);

        if (use_adapter) {
            // Only the adapter trains; nothing below the final layer needs gradients.
            add_outer(*grads.adapter, delta, cache.activations[i]);
            break;
        }
        add_outer(grads.backbone[i], delta, cache.activations[i]);
        if (i > 0) {
            const Layer& layer = (i == depth - 1) ? final_layer : model.backbone[i];
            upstream = matvec_transposed(layer.weight, delta);
        }
    }
}

Gradients backward(const MlpModel& model, const ForwardCache& cache, std::span<const double> grad_logits,
                   bool use_adapter) {
    if (grad_logits.size() != model.class_count())
        throw Error(ErrorKind::StaleCache, "logit gradient does not match head");
    Gradients grads = zero_gradients(model, use_adapter);
    accumulate_head(grads, cache.activations.back(), grad_logits);
    accumulate_backbone(model, cache, head_input_gradient(model, grad_logits), use_adapter, grads);
    return grads;
}

double batch_loss_and_gradients(const MlpModel& model, std::span<const Sample> batch, const ClassMask* mask,
                                bool use_adapter, Gradients& grads) {
    if (batch.empty()) throw Error(ErrorKind::EmptyDataset, "empty batch");
    grads = zero_gradients(model, use_adapter);
    const ClassMask all = mask ? ClassMask{} : full_mask(model.class_count());
    const ClassMask& active = mask ? *mask : all;
    double total = 0.0;
    for (const Sample& s : batch) {
        if (s.label >= model.class_count()) throw Error(ErrorKind::LabelOutOfRange, "label beyond head size");
        ForwardResult fr = forward(model, s.x, use_adapter);
        LossResult lr = masked_ce_loss(fr.logits, s.label, active);
        total += lr.loss;
        accumulate_head(grads, fr.feature, lr.grad_logits);
        accumulate_backbone(model, fr.cache, head_input_gradient(model, lr.grad_logits), use_adapter, grads);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& layer : grads.backbone) scale_layer(layer, inv);
    scale_layer(grads.head, inv);
    if (grads.adapter) scale_layer(*grads.adapter, inv);
    return total * inv;
}

double batch_loss(const MlpModel& model, std::span<const Sample> batch, const ClassMask* mask, bool use_adapter) {
    if (batch.empty()) throw Error(ErrorKind::EmptyDataset, "empty batch");
    const ClassMask all = mask ? ClassMask{} : full_mask(model.class_count());
    const ClassMask& active = mask ? *mask : all;
    double total = 0.0;
    for (const Sample& s : batch) {
        if (s.label >= model.class_count()) throw Error(ErrorKind::LabelOutOfRange, "label beyond head size");
        total += masked_ce_loss(forward(model, s.x, use_adapter).logits, s.label, active).loss;
    }
    return total / static_cast<double>(batch.size());
}

void sgd_update(MlpModel& model, const Gradients& grads, double backbone_lr, double head_lr) {
    if (backbone_lr != 0.0)
        for (std::size_t i = 0; i < model.backbone.size(); ++i) sgd_layer(model.backbone[i], grads.backbone[i], backbone_lr);
    if (head_lr != 0.0) sgd_layer(model.head, grads.head, head_lr);
}

std::size_t argmax_masked(std::span<const double> logits, const ClassMask& mask) {
    if (mask.empty()) throw Error(ErrorKind::EmptyMask, "prediction mask is empty");
    std::size_t best = mask.front();
    for (std::size_t c : mask) {
        if (c >= logits.size()) throw Error(ErrorKind::LabelOutOfRange, "mask id beyond logit dimension");
        if (logits[c] > logits[best]) best = c;
    }
    return best;
}

std::size_t predict(const MlpModel& model, std::span<const double> x, const ClassMask& mask, bool use_adapter) {
    return argmax_masked(forward(model, x, use_adapter).logits, mask);
}

OptimizerState OptimizerState::sgd(double lr) {
    OptimizerState s;
    s.kind = OptimizerKind::Sgd;
    s.lr = lr;
    return s;
}

OptimizerState OptimizerState::adam(double lr) {
    OptimizerState s;
    s.kind = OptimizerKind::Adam;
    s.lr = lr;
    return s;
}

void optimizer_step(OptimizerState& state, std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size()) throw Error(ErrorKind::DimensionMismatch, "params and grads differ in length");
    ++state.step;
    if (state.kind == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= state.lr * grads[i];
        return;
    }
    if (state.first_moment.empty()) {
        state.first_moment.assign(params.size(), 0.0);
        state.second_moment.assign(params.size(), 0.0);
    }
    if (state.first_moment.size() != params.size())
        throw Error(ErrorKind::DimensionMismatch, "optimizer state tracks a different parameter count");
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = state.beta1 * m + (1.0 - state.beta1) * grads[i];
        v = state.beta2 * v + (1.0 - state.beta2) * grads[i] * grads[i];
        const double m_hat = m / c1;
        const double v_hat = v / c2;
        params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
}

std::size_t parameter_count(std::span<const Layer> layers) {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.data().size() + l.bias.size();
    return n;
}

std::vector<double> flatten_layers(std::span<const Layer> layers) {
    std::vector<double> out;
    out.reserve(parameter_count(layers));
    for (const auto& l : layers) {
        out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
        out.insert(out.end(), l.bias.begin(), l.bias.end());
    }
    return out;
}

void unflatten_layers(std::span<Layer> layers, std::span<const double> values) {
    if (values.size() != parameter_count(layers))
        throw Error(ErrorKind::DimensionMismatch, "flat parameter length differs from architecture");
    std::size_t pos = 0;
    for (auto& l : layers) {
        for (double& w : l.weight.data()) w = values[pos++];
        for (double& b : l.bias) b = values[pos++];
    }
}

FlatParams flatten(const MlpModel& model) { return FlatParams{flatten_layers(model.backbone)}; }

void unflatten(MlpModel& model, const FlatParams& flat) { unflatten_layers(model.backbone, flat.values); }

FlatParams reptile_blend(const FlatParams& theta_old, const FlatParams& theta_new, double eta_meta) {
    if (theta_old.size() != theta_new.size()) throw Error(ErrorKind::DimensionMismatch, "parameter vectors differ in length");
    if (!(eta_meta >= 0.0 && eta_meta <= 1.0)) throw Error(ErrorKind::EtaOutOfRange, "eta_meta must lie in [0, 1]");
    if (eta_meta == 0.0) return theta_old;
    if (eta_meta == 1.0) return theta_new;
    FlatParams out = theta_old;
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += eta_meta * (theta_new.values[i] - theta_old.values[i]);
    return out;
}

namespace {

void write_layer(std::ostream& out, const Layer& layer) {
    write_matrix(out, layer.weight);
    write_matrix(out, DenseMatrix(1, layer.bias.size(), layer.bias));
}

Layer read_layer(std::istream& in, std::size_t in_dim, std::size_t out_dim) {
    Layer layer;
    layer.weight = read_matrix(in);
    DenseMatrix bias = read_matrix(in);
    if (layer.weight.rows() != out_dim || layer.weight.cols() != in_dim || bias.rows() != 1 || bias.cols() != out_dim)
        throw Error(ErrorKind::ParseError, "checkpoint tensor shape differs from descriptor");
    layer.bias.assign(bias.data().begin(), bias.data().end());
    return layer;
}

}  // namespace

void write_checkpoint(std::ostream& out, const MlpModel& model) {
    model.validate();
    out << "mlp dims";
    out << ' ' << model.input_dim();
    for (const auto& l : model.backbone) out << ' ' << l.out_dim();
    out << " classes " << model.class_count() << " activation " << to_string(model.activation) << " adapter "
        << (model.adapter ? 1 : 0) << '\n';
    for (const auto& l : model.backbone) write_layer(out, l);
    write_layer(out, model.head);
    if (model.adapter) write_layer(out, *model.adapter);
}

MlpModel read_checkpoint(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::ParseError, "empty checkpoint");
    std::istringstream desc(line);
    std::string word;
    desc >> word;
    if (word != "mlp") throw Error(ErrorKind::ParseError, "checkpoint descriptor must start with 'mlp'");
    desc >> word;
    if (word != "dims") throw Error(ErrorKind::ParseError, "checkpoint descriptor missing dims");
    std::vector<std::size_t> dims;
    while (desc >> word && word != "classes") dims.push_back(std::stoul(word));
    std::size_t classes = 0;
    std::string activation_tag, adapter_word;
    int has_adapter = 0;
    if (!(desc >> classes >> word >> activation_tag >> adapter_word >> has_adapter) || word != "activation" ||
        adapter_word != "adapter" || dims.size() < 2)
        throw Error(ErrorKind::ParseError, "malformed checkpoint descriptor");

    MlpModel model;
    model.activation = parse_activation(activation_tag);
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) model.backbone.push_back(read_layer(in, dims[i], dims[i + 1]));
    model.head = read_layer(in, dims.back(), classes);
    if (has_adapter) model.adapter = read_layer(in, dims[dims.size() - 2], dims.back());
    model.validate();
    return model;
}

}  // namespace mepo
