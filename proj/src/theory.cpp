#include "mepo/theory.hpp"

#include <cmath>
#include <memory>

#include "mepo/error.hpp"

namespace mepo {

namespace {

FeatVec axpy(const FeatVec& x, double a, const FeatVec& y) {
    if (x.size() != y.size()) throw Error(ErrorKind::DimensionMismatch, "vector lengths differ");
    FeatVec out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * y[i];
    return out;
}

FeatVec quadratic_grad(const DenseMatrix& h, const FeatVec& center, const FeatVec& theta) {
    FeatVec d = axpy(theta, -1.0, center);
    return matvec(h, d);
}

}  // namespace

ScalarFn backbone_loss(const MlpModel& model, std::vector<Sample> samples) {
    auto base = std::make_shared<const MlpModel>(model);
    auto data = std::make_shared<const std::vector<Sample>>(std::move(samples));
    return [base, data](const FeatVec& theta) {
        MlpModel m = *base;
        unflatten(m, FlatParams{theta});
        return batch_loss(m, *data, nullptr, false);
    };
}

GradientFn backbone_gradient(const MlpModel& model, std::vector<Sample> samples) {
    auto base = std::make_shared<const MlpModel>(model);
    auto data = std::make_shared<const std::vector<Sample>>(std::move(samples));
    return [base, data](const FeatVec& theta) {
        MlpModel m = *base;
        unflatten(m, FlatParams{theta});
        Gradients g;
        batch_loss_and_gradients(m, *data, nullptr, false, g);
        return flatten_layers(g.backbone);
    };
}

double surrogate_objective(const MlpModel& model, const PseudoSequence& sequence) {
    if (sequence.tasks.empty() || sequence.joint_set.empty())
        throw Error(ErrorKind::EmptyDataset, "surrogate objective needs tasks and a joint set");
    double total = batch_loss(model, sequence.joint_set, nullptr, false);
    for (const auto& task : sequence.tasks) total += batch_loss(model, task, nullptr, false);
    return total;
}

FlatParams surrogate_objective_grad(const MlpModel& model, const PseudoSequence& sequence) {
    if (sequence.tasks.empty() || sequence.joint_set.empty())
        throw Error(ErrorKind::EmptyDataset, "surrogate objective needs tasks and a joint set");
    Gradients g;
    batch_loss_and_gradients(model, sequence.joint_set, nullptr, false, g);
    FeatVec total = flatten_layers(g.backbone);
    for (const auto& task : sequence.tasks) {
        batch_loss_and_gradients(model, task, nullptr, false, g);
        const FeatVec part = flatten_layers(g.backbone);
        for (std::size_t i = 0; i < total.size(); ++i) total[i] += part[i];
    }
    return FlatParams{std::move(total)};
}

FlatParams inner_loop_operator(const MlpModel& model, const PseudoSequence& sequence, double eta) {
    MlpModel m = model;
    Gradients g;
    for (const auto& task : sequence.tasks) {
        batch_loss_and_gradients(m, task, nullptr, false, g);
        sgd_update(m, g, eta, 0.0);
    }
    batch_loss_and_gradients(m, sequence.joint_set, nullptr, false, g);
    sgd_update(m, g, eta, 0.0);
    return flatten(m);
}

FeatVec finite_difference_gradient(const ScalarFn& f, const FeatVec& theta, double h) {
    FeatVec grad(theta.size());
    FeatVec probe = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        probe[i] = theta[i] + h;
        const double up = f(probe);
        probe[i] = theta[i] - h;
        const double down = f(probe);
        probe[i] = theta[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

double sequential_joint_gap(const GapExperiment& exp, double eta) {
    const FeatVec ga = exp.grad_a(exp.theta);
    const FeatVec gb = exp.grad_b(exp.theta);
    const FeatVec after_a = axpy(exp.theta, -eta, ga);
    const FeatVec gb_shifted = exp.grad_b(after_a);
    // θ_seq − θ_joint = η(∇L_B(θ) − ∇L_B(θ − η∇L_A(θ)))
    FeatVec diff(gb.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = eta * (gb[i] - gb_shifted[i]);
    return norm2(diff);
}

GapResult theorem_gap(const GapExperiment& exp) {
    if (exp.etas.size() < 2) throw Error(ErrorKind::ConfigError, "gap experiment needs at least two step sizes");
    for (std::size_t i = 0; i < exp.etas.size(); ++i) {
        if (!(exp.etas[i] > 0.0)) throw Error(ErrorKind::ConfigError, "step sizes must be positive");
        for (std::size_t j = 0; j < i; ++j)
            if (exp.etas[i] == exp.etas[j]) throw Error(ErrorKind::ConfigError, "step sizes must be distinct");
    }
    GapResult result;
    result.etas = exp.etas;
    for (double eta : exp.etas) {
        const double gap = sequential_joint_gap(exp, eta);
        if (!(gap >= 1e-14)) throw Error(ErrorKind::DegenerateGap, "gap below 1e-14; the two losses commute");
        result.gaps.push_back(gap);
    }
    const double n = static_cast<double>(result.etas.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < result.etas.size(); ++i) {
        const double x = std::log(result.etas[i]);
        const double y = std::log(result.gaps[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    result.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    result.intercept = (sy - result.slope * sx) / n;
    return result;
}

GapExperiment quadratic_gap_experiment(FeatVec a, DenseMatrix h_a, FeatVec b, DenseMatrix h_b, FeatVec theta,
                                       std::vector<double> etas) {
    GapExperiment exp;
    exp.grad_a = [a = std::move(a), h_a = std::move(h_a)](const FeatVec& t) { return quadratic_grad(h_a, a, t); };
    exp.grad_b = [b = std::move(b), h_b = std::move(h_b)](const FeatVec& t) { return quadratic_grad(h_b, b, t); };
    exp.theta = std::move(theta);
    exp.etas = std::move(etas);
    return exp;
}

GapExperiment mlp_gap_experiment(const MlpModel& model, std::vector<Sample> task_a, std::vector<Sample> task_b,
                                 std::vector<double> etas) {
    GapExperiment exp;
    exp.grad_a = backbone_gradient(model, std::move(task_a));
    exp.grad_b = backbone_gradient(model, std::move(task_b));
    exp.theta = flatten(model).values;
    exp.etas = std::move(etas);
    return exp;
}

}  // namespace mepo
