#pragma once

// Numerical checks of the first-order analysis of meta-refinement: the
// Reptile expansion of the inner-loop operator and the O(η²) gap between
// two sequential gradient steps and one joint step.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mepo/datastream.hpp"
#include "mepo/linalg.hpp"
#include "mepo/net.hpp"

namespace mepo {

using GradientFn = std::function<FeatVec(const FeatVec& theta)>;
using ScalarFn = std::function<double(const FeatVec& theta)>;

/// Mean cross-entropy of `samples` as a function of the flattened backbone,
/// with the model's head held fixed.
ScalarFn backbone_loss(const MlpModel& model, std::vector<Sample> samples);
GradientFn backbone_gradient(const MlpModel& model, std::vector<Sample> samples);

/// Σ_t L_t(θ) + L_joint(θ) for one pseudo sequence (head fixed).
double surrogate_objective(const MlpModel& model, const PseudoSequence& sequence);

/// Σ_t ∇L_t(θ) + ∇L_joint(θ), every term evaluated at the current θ.
FlatParams surrogate_objective_grad(const MlpModel& model, const PseudoSequence& sequence);

/// F(θ): one full-batch backbone step per pseudo task in order, then one on
/// the joint set, all at rate eta (head fixed).
FlatParams inner_loop_operator(const MlpModel& model, const PseudoSequence& sequence, double eta);

/// Central finite-difference gradient of `f` at `theta`.
FeatVec finite_difference_gradient(const ScalarFn& f, const FeatVec& theta, double h = 1e-5);

struct GapExperiment {
    GradientFn grad_a;
    GradientFn grad_b;
    FeatVec theta;
    std::vector<double> etas;
};

struct GapResult {
    std::vector<double> etas;
    std::vector<double> gaps;
    double slope = 0.0;
    double intercept = 0.0;
};

/// ‖θ_seq − θ_joint‖ for step size eta, where
///   θ_joint = θ − η(∇L_A(θ) + ∇L_B(θ))
///   θ_seq   = θ − η∇L_A(θ) − η∇L_B(θ − η∇L_A(θ)).
double sequential_joint_gap(const GapExperiment& exp, double eta);

/// Gaps for every eta and the least-squares line of log gap on log eta.
/// Throws DegenerateGap if any gap is below 1e-14.
GapResult theorem_gap(const GapExperiment& exp);

/// L_A = ½(θ−a)ᵀH_A(θ−a), L_B = ½(θ−b)ᵀH_B(θ−b).
GapExperiment quadratic_gap_experiment(FeatVec a, DenseMatrix h_a, FeatVec b, DenseMatrix h_b, FeatVec theta,
                                       std::vector<double> etas);

/// Two cross-entropy tasks on the backbone of `model` (head fixed).
GapExperiment mlp_gap_experiment(const MlpModel& model, std::vector<Sample> task_a, std::vector<Sample> task_b,
                                 std::vector<double> etas);

}  // namespace mepo
