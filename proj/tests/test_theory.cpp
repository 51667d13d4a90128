#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mepo/error.hpp"
#include "mepo/theory.hpp"
#include "test_util.hpp"

using namespace mepo;
using mepo::testing::grad_error;
using mepo::testing::random_spd;

namespace {

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an Error");
    return ErrorKind::IoError;
}

double cosine(const FeatVec& a, const FeatVec& b) { return dot(a, b) / (norm2(a) * norm2(b)); }

FeatVec random_vec(std::size_t n, Rng& rng) {
    FeatVec v(n);
    for (double& x : v) x = rng.uniform(-1, 1);
    return v;
}

std::vector<Sample> batch_of(std::size_t n, std::size_t dim, std::size_t classes, Rng& rng) {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < n; ++i) {
        Sample s{FeatVec(dim), rng.index(classes)};
        for (double& v : s.x) v = rng.uniform(-2, 2);
        out.push_back(s);
    }
    return out;
}

MlpModel tiny_mlp(std::uint64_t seed, std::size_t in = 2, std::size_t feat = 2, std::size_t classes = 3) {
    Rng rng(seed);
    const std::size_t dims[] = {in, 4, feat};
    return make_mlp(dims, classes, rng);
}

PseudoSequence tiny_sequence(Rng& rng, std::size_t dim, std::size_t classes) {
    PseudoSequence seq;
    seq.tasks = {batch_of(5, dim, classes, rng), batch_of(4, dim, classes, rng)};
    seq.joint_set = batch_of(6, dim, classes, rng);
    return seq;
}

}  // namespace

TEST_CASE("linear losses commute: zero gap") {
    GapExperiment exp;
    exp.grad_a = [](const FeatVec&) { return FeatVec{1.0, -2.0}; };
    exp.grad_b = [](const FeatVec&) { return FeatVec{0.5, 3.0}; };
    exp.theta = {0.3, 0.7};
    exp.etas = {1e-1, 1e-2, 1e-3};
    for (double eta : exp.etas) CHECK(sequential_joint_gap(exp, eta) == 0.0);
    CHECK(kind_of([&] { theorem_gap(exp); }) == ErrorKind::DegenerateGap);
}

TEST_CASE("quadratic gap by hand: H = I, a = (1, 0), theta = 0, eta = 0.1") {
    // θ_joint = −η(θ−a) − η(θ−b) ; θ_seq differs by η·H_B·η∇L_A = η²(θ−a).
    const GapExperiment exp = quadratic_gap_experiment({1, 0}, DenseMatrix::identity(2), {0, 0},
                                                       DenseMatrix::identity(2), {0, 0}, {0.1, 0.01});
    CHECK(std::abs(sequential_joint_gap(exp, 0.1) - 0.01) <= 1e-12);
}

TEST_CASE("quadratic gap equals eta^2 |H_B grad L_A| exactly") {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.index(6);
        const DenseMatrix ha = random_spd(n, rng), hb = random_spd(n, rng);
        const FeatVec a = random_vec(n, rng), b = random_vec(n, rng), theta = random_vec(n, rng);
        const std::vector<double> etas{1e-1, 3e-2, 1e-2, 1e-3, 1e-4};
        const GapResult r = theorem_gap(quadratic_gap_experiment(a, ha, b, hb, theta, etas));
        FeatVec ga(n);
        for (std::size_t i = 0; i < n; ++i) ga[i] = theta[i] - a[i];
        const double scale = norm2(matvec(hb, matvec(ha, ga)));
        for (std::size_t i = 0; i < etas.size(); ++i)
            CHECK(std::abs(r.gaps[i] - etas[i] * etas[i] * scale) <= 1e-10 * etas[i] * etas[i] * scale + 1e-15);
        CHECK(r.slope == doctest::Approx(2.0).epsilon(1e-6));
        CHECK(r.intercept == doctest::Approx(std::log(scale)).epsilon(1e-6));
    }
}

TEST_CASE("tiny-MLP gap slope lies in [1.9, 2.1]") {
    Rng rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        const MlpModel m = tiny_mlp(10 + trial);
        const GapExperiment exp =
            mlp_gap_experiment(m, batch_of(8, 2, 3, rng), batch_of(8, 2, 3, rng), {1e-1, 1e-2, 1e-3, 1e-4});
        const GapResult r = theorem_gap(exp);
        MESSAGE("slope ", r.slope);
        CHECK(r.slope >= 1.9);
        CHECK(r.slope <= 2.1);
    }
}

TEST_CASE("gap experiment validation") {
    const auto base = [](std::vector<double> etas) {
        return quadratic_gap_experiment({1}, DenseMatrix::identity(1), {0}, DenseMatrix::identity(1), {0}, etas);
    };
    CHECK(kind_of([&] { theorem_gap(base({0.1})); }) == ErrorKind::ConfigError);
    CHECK(kind_of([&] { theorem_gap(base({0.1, -0.01})); }) == ErrorKind::ConfigError);
    CHECK(kind_of([&] { theorem_gap(base({0.1, 0.1})); }) == ErrorKind::ConfigError);
}

TEST_CASE("backbone loss gradient matches finite differences") {
    Rng rng(3);
    const MlpModel m = tiny_mlp(4);
    const auto data = batch_of(7, 2, 3, rng);
    const FeatVec theta = flatten(m).values;
    const FeatVec g = backbone_gradient(m, data)(theta);
    const FeatVec fd = finite_difference_gradient(backbone_loss(m, data), theta);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(grad_error(g[i], fd[i]) <= 1e-6);
}

TEST_CASE("surrogate gradient") {
    Rng rng(5);
    SUBCASE("single task equal to the joint set is twice its gradient") {
        const MlpModel m = tiny_mlp(6);
        PseudoSequence seq;
        seq.joint_set = batch_of(6, 2, 3, rng);
        seq.tasks = {seq.joint_set};
        const FeatVec g = surrogate_objective_grad(m, seq).values;
        const FeatVec single = backbone_gradient(m, seq.joint_set)(flatten(m).values);
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(2.0 * single[i]).epsilon(1e-14));
    }
    SUBCASE("two-parameter model against central differences of the surrogate") {
        Rng init(7);
        const std::size_t dims[] = {1, 1};
        const MlpModel m = make_mlp(dims, 3, init);
        REQUIRE(flatten(m).size() == 2);
        const PseudoSequence seq = tiny_sequence(rng, 1, 3);
        const FeatVec g = surrogate_objective_grad(m, seq).values;
        // Independent scalar: sum of batch losses with the backbone replaced.
        auto j = [&](const FeatVec& theta) {
            MlpModel probe = m;
            unflatten(probe, FlatParams{theta});
            return surrogate_objective(probe, seq);
        };
        const FeatVec theta = flatten(m).values;
        for (std::size_t i = 0; i < 2; ++i) {
            FeatVec up = theta, down = theta;
            up[i] += 1e-6;
            down[i] -= 1e-6;
            const double fd = (j(up) - j(down)) / 2e-6;
            CHECK(grad_error(g[i], fd) <= 1e-6);
        }
    }
    SUBCASE("stationary point of every loss gives a zero gradient") {
        // Zero head weights and biases: logits are constant, the loss does
        // not depend on the backbone at all.
        MlpModel m = tiny_mlp(8);
        m.head = zeros_like(m.head);
        const PseudoSequence seq = tiny_sequence(rng, 2, 3);
        for (double v : surrogate_objective_grad(m, seq).values) CHECK(std::abs(v) <= 1e-10);
    }
    SUBCASE("errors") {
        CHECK(kind_of([&] { surrogate_objective_grad(tiny_mlp(1), PseudoSequence{}); }) == ErrorKind::EmptyDataset);
    }
}

TEST_CASE("Reptile expansion: (F(theta) - theta)/eta tends to minus the surrogate gradient") {
    Rng rng(9);
    for (int trial = 0; trial < 5; ++trial) {
        const MlpModel m = tiny_mlp(20 + trial);
        const PseudoSequence seq = tiny_sequence(rng, 2, 3);
        const double eta = 1e-6;
        const FeatVec theta = flatten(m).values;
        const FeatVec after = inner_loop_operator(m, seq, eta).values;
        FeatVec step(theta.size());
        for (std::size_t i = 0; i < theta.size(); ++i) step[i] = (after[i] - theta[i]) / eta;
        const FeatVec g = surrogate_objective_grad(m, seq).values;
        const double cos = cosine(step, g);
        CHECK(cos <= -0.999);
        // First-order agreement improves as eta shrinks.
        const FeatVec coarse = inner_loop_operator(m, seq, 1e-2).values;
        double err_fine = 0.0, err_coarse = 0.0;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            err_fine = std::max(err_fine, std::abs(step[i] + g[i]));
            err_coarse = std::max(err_coarse, std::abs((coarse[i] - theta[i]) / 1e-2 + g[i]));
        }
        CHECK(err_fine < err_coarse);
    }
}

TEST_CASE("inner-loop operator steps in task order, head fixed") {
    Rng rng(10);
    const MlpModel m = tiny_mlp(30);
    const PseudoSequence seq = tiny_sequence(rng, 2, 3);
    // Hand composition of the same full-batch steps.
    MlpModel work = m;
    for (const auto* part : {&seq.tasks[0], &seq.tasks[1], &seq.joint_set}) {
        const FeatVec theta = flatten(work).values;
        const FeatVec g = backbone_gradient(work, *part)(theta);
        FeatVec next = theta;
        for (std::size_t i = 0; i < next.size(); ++i) next[i] -= 0.05 * g[i];
        unflatten(work, FlatParams{next});
    }
    const FeatVec want = flatten(work).values;
    const FeatVec got = inner_loop_operator(m, seq, 0.05).values;
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-13));
}
