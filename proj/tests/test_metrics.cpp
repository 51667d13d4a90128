#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "mepo/error.hpp"
#include "mepo/metrics.hpp"
#include "mepo/rng.hpp"

using namespace mepo;

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

EvalLog log_of(const std::vector<std::size_t>& seen, const std::vector<double>& acc) {
    EvalLog log;
    for (std::size_t i = 0; i < seen.size(); ++i) log.records.push_back(EvalRecord{seen[i], {0}, acc[i]});
    return log;
}

/// Integral of the piecewise-linear accuracy curve by a fine composite
/// midpoint rule (long double), divided by the span.
double oracle_curve_mean(const std::vector<std::size_t>& seen, const std::vector<double>& acc) {
    long double area = 0.0L;
    const int slices = 1000;
    for (std::size_t i = 1; i < seen.size(); ++i) {
        const long double x0 = seen[i - 1], x1 = seen[i];
        const long double h = (x1 - x0) / slices;
        for (int k = 0; k < slices; ++k) {
            const long double x = x0 + (k + 0.5L) * h;
            const long double t = (x - x0) / (x1 - x0);
            area += h * ((1 - t) * acc[i - 1] + t * acc[i]);
        }
    }
    return static_cast<double>(area / (static_cast<long double>(seen.back()) - seen.front()));
}

}  // namespace

TEST_CASE("A_AUC") {
    SUBCASE("constant accuracy is returned bitwise") {
        CHECK(compute_auc(log_of({2, 4, 6, 8}, {0.8, 0.8, 0.8, 0.8})) == 0.8);
        CHECK(compute_auc(log_of({3, 4, 10, 11, 40}, {0.1, 0.1, 0.1, 0.1, 0.1})) == 0.1);
        Rng rng(1);
        for (int trial = 0; trial < 100; ++trial) {
            const double a = rng.uniform();
            std::vector<std::size_t> seen{1 + rng.index(5)};
            for (int i = 0; i < 10; ++i) seen.push_back(seen.back() + 1 + rng.index(9));
            CHECK(compute_auc(log_of(seen, std::vector<double>(seen.size(), a))) == a);
        }
    }
    SUBCASE("uniform spacing is the plain mean") {
        CHECK(compute_auc(log_of({64, 128, 192}, {0.5, 0.7, 0.9})) == doctest::Approx(0.7).epsilon(1e-15));
    }
    SUBCASE("single record") { CHECK(compute_auc(log_of({5}, {0.25})) == 0.25); }
    SUBCASE("non-uniform spacing matches a quadrature oracle") {
        Rng rng(2);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<std::size_t> seen{rng.index(10)};
            std::vector<double> acc{rng.uniform()};
            for (int i = 0; i < 8; ++i) {
                seen.push_back(seen.back() + 1 + rng.index(50));
                acc.push_back(rng.uniform());
            }
            const double got = compute_auc(log_of(seen, acc));
            CHECK(std::abs(got - oracle_curve_mean(seen, acc)) <= 1e-12);
            CHECK(got >= 0.0);
            CHECK(got <= 1.0);
        }
        CHECK(compute_auc(log_of({0, 1, 3}, {0.0, 1.0, 1.0})) == doctest::Approx((0.5 + 2.0) / 3.0).epsilon(1e-15));
    }
    SUBCASE("errors") {
        CHECK(kind_of([] { compute_auc(EvalLog{}); }) == ErrorKind::EmptyLog);
        CHECK_THROWS_AS(compute_auc(log_of({4, 4}, {0.5, 0.5})), Error);
        CHECK_THROWS_AS(compute_auc(log_of({4, 8}, {0.5, 1.5})), Error);
    }
}

TEST_CASE("A_Last") {
    Rng rng(3);
    std::vector<Sample> test;
    const std::size_t k = 7;
    for (std::size_t i = 0; i < 7000; ++i) test.push_back(Sample{FeatVec{static_cast<double>(i % k)}, i % k});

    SUBCASE("uniform random guessing is near 1/K") {
        Rng guess(4);
        BatchPredictor random_guess = [&](std::span<const Sample> batch, const ClassMask& mask) {
            std::vector<std::size_t> out;
            for (std::size_t i = 0; i < batch.size(); ++i) out.push_back(mask[guess.index(mask.size())]);
            return out;
        };
        const double acc = compute_last(random_guess, test, k);
        const double p = 1.0 / k;
        CHECK(std::abs(acc - p) <= 3.0 * std::sqrt(p * (1 - p) / static_cast<double>(test.size())));
    }
    SUBCASE("a memorizing predictor scores 1") {
        BatchPredictor oracle = [](std::span<const Sample> batch, const ClassMask&) {
            std::vector<std::size_t> out;
            for (const auto& s : batch) out.push_back(s.label);
            return out;
        };
        CHECK(compute_last(oracle, test, k) == 1.0);
    }
    SUBCASE("model overload with a linear read-out of one-hot inputs") {
        Rng init(5);
        const std::size_t dims[] = {3, 3};
        MlpModel m = make_mlp(dims, 3, init, Activation::Identity);
        m.backbone[0] = Layer{DenseMatrix::identity(3), FeatVec(3, 0.0)};
        m.head = Layer{DenseMatrix::identity(3), FeatVec(3, 0.0)};
        std::vector<Sample> onehot;
        for (std::size_t c = 0; c < 3; ++c) {
            FeatVec x(3, 0.0);
            x[c] = 5.0;
            onehot.push_back(Sample{x, c});
        }
        CHECK(compute_last(m, onehot, false) == 1.0);
        onehot[0].label = 2;
        CHECK(compute_last(m, onehot, false) == doctest::Approx(2.0 / 3.0));
    }
    SUBCASE("empty test set") {
        BatchPredictor any = [](std::span<const Sample> b, const ClassMask&) { return std::vector<std::size_t>(b.size()); };
        CHECK(kind_of([&] { compute_last(any, std::vector<Sample>{}, 3); }) == ErrorKind::EmptyTestSet);
    }
}

TEST_CASE("forgetting") {
    CHECK(compute_forgetting({{0.1, 0.4, 0.4, 0.9}, {0.5, 0.6}}) == 0.0);
    CHECK(compute_forgetting({{0.5, 0.9, 0.7, 0.6}, {0.4, 0.4, 0.4}}) == doctest::Approx(0.15).epsilon(1e-14));
    CHECK(kind_of([] { compute_forgetting({}); }) == ErrorKind::MissingRecords);
    CHECK(kind_of([] { compute_forgetting({{0.5}, {}}); }) == ErrorKind::MissingRecords);

    // Brute force: for every pair (i, j ≤ last) the drop from i to the last.
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::vector<double>> table(1 + rng.index(6));
        for (auto& h : table) {
            h.resize(1 + rng.index(8));
            for (double& v : h) v = std::round(rng.uniform() * 20) / 20;
        }
        double total = 0.0;
        for (const auto& h : table) {
            double worst_drop = 0.0;
            for (double v : h) worst_drop = std::max(worst_drop, v - h.back());
            total += worst_drop;
        }
        const double got = compute_forgetting(table);
        CHECK(got == doctest::Approx(total / static_cast<double>(table.size())).epsilon(1e-14));
        CHECK(got >= 0.0);
    }
}

TEST_CASE("evaluation log CSV") {
    EvalLog log = log_of({64, 128}, {0.5, 1.0 / 3.0});
    log.records[1].seen_classes = {0, 3, 4};
    std::ostringstream out;
    write_eval_csv(out, log);
    CHECK(out.str() == "samples_seen,seen_class_count,anytime_accuracy\n64,1,0.5\n128,3,0.33333333333333331\n");
}
