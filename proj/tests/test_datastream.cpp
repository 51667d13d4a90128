#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <map>
#include <set>
#include <sstream>

#include "mepo/datastream.hpp"
#include "mepo/error.hpp"
#include "test_util.hpp"

using namespace mepo;
using mepo::testing::stream_violations;

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

std::string manifest(const TaskStream& stream) {
    std::ostringstream out;
    write_manifest(out, stream);
    return out.str();
}

}  // namespace

TEST_CASE("gaussian dataset generation") {
    SUBCASE("vanishing spread collapses onto the centers") {
        const GaussianClusters clusters = make_clusters(4, 3, 1e-9, 5);
        const LabeledDataset d = sample_clusters(clusters, 6, 6);
        for (const Sample& s : d.samples)
            for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(s.x[j] - clusters.centers[s.label][j]) <= 1e-7);
    }
    SUBCASE("fixed seed is bitwise reproducible") {
        CHECK(gen_gaussian_dataset(5, 20, 4, 0.7, 42) == gen_gaussian_dataset(5, 20, 4, 0.7, 42));
        CHECK(!(gen_gaussian_dataset(5, 20, 4, 0.7, 42) == gen_gaussian_dataset(5, 20, 4, 0.7, 43)));
    }
    SUBCASE("class means within five standard errors of their centers") {
        const double spread = 0.8;
        const GaussianClusters clusters = make_clusters(3, 6, spread, 17);
        const LabeledDataset d = sample_clusters(clusters, 100, 18);
        d.validate();
        CHECK(d.samples.size() == 300);
        const auto groups = d.indices_by_class();
        for (std::size_t c = 0; c < 3; ++c) {
            REQUIRE(groups[c].size() == 100);
            for (std::size_t j = 0; j < 6; ++j) {
                double mean = 0.0;
                for (std::size_t i : groups[c]) mean += d.samples[i].x[j];
                mean /= 100.0;
                CHECK(std::abs(mean - clusters.centers[c][j]) <= 5.0 * spread / 10.0);
            }
        }
    }
    SUBCASE("invalid counts") {
        CHECK(kind_of([] { gen_gaussian_dataset(0, 5, 2, 1.0, 1); }) == ErrorKind::InvalidCount);
        CHECK(kind_of([] { gen_gaussian_dataset(2, 0, 2, 1.0, 1); }) == ErrorKind::InvalidCount);
        CHECK(kind_of([] { gen_gaussian_dataset(2, 5, 0, 1.0, 1); }) == ErrorKind::InvalidCount);
        CHECK(kind_of([] { gen_gaussian_dataset(2, 5, 2, 0.0, 1); }) == ErrorKind::InvalidCount);
    }
    SUBCASE("per-class subsampling keeps labels and draws from the source") {
        const LabeledDataset d = gen_gaussian_dataset(4, 10, 2, 1.0, 3);
        const LabeledDataset s = subsample_per_class(d, 3, 4);
        CHECK(s.samples.size() == 12);
        for (const auto& g : s.indices_by_class()) CHECK(g.size() == 3);
        for (const Sample& x : s.samples) {
            bool found = false;
            for (const Sample& y : d.samples) found = found || (x.x == y.x && x.label == y.label);
            CHECK(found);
        }
    }
}

TEST_CASE("dataset validation") {
    LabeledDataset d = gen_gaussian_dataset(3, 2, 2, 1.0, 1);
    d.samples.back().label = 7;
    CHECK(kind_of([&] { d.validate(); }) == ErrorKind::LabelOutOfRange);
    LabeledDataset missing = gen_gaussian_dataset(3, 2, 2, 1.0, 1);
    missing.class_count = 4;
    CHECK_THROWS_AS(missing.validate(), Error);
}

TEST_CASE("si-blurry boundary cases") {
    const LabeledDataset d = gen_gaussian_dataset(10, 12, 2, 1.0, 9);

    SUBCASE("m = 1 is class-incremental") {
        const SiBlurryConfig cfg{1.0, 0.4, 5, 11};
        const TaskStream s = make_siblurry_stream(d, cfg, 8);
        CHECK(stream_violations(d, cfg, 8, s).empty());
        CHECK(s.blurry_classes.empty());
        CHECK(s.disjoint_classes.size() == 10);
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = i + 1; j < 5; ++j) {
                std::vector<std::size_t> both;
                std::set_intersection(s.tasks[i].labels.begin(), s.tasks[i].labels.end(), s.tasks[j].labels.begin(),
                                      s.tasks[j].labels.end(), std::back_inserter(both));
                CHECK(both.empty());
            }
    }
    SUBCASE("m = 0, n = 0: every class stays home") {
        const SiBlurryConfig cfg{0.0, 0.0, 5, 12};
        const TaskStream s = make_siblurry_stream(d, cfg, 8);
        CHECK(stream_violations(d, cfg, 8, s).empty());
        CHECK(s.disjoint_classes.empty());
        std::size_t label_total = 0;
        for (const auto& t : s.tasks) label_total += t.labels.size();
        CHECK(label_total == 10);
    }
    SUBCASE("m = 0.5, n = 0.1, ten classes, five tasks") {
        const SiBlurryConfig cfg{0.5, 0.1, 5, 13};
        const TaskStream s = make_siblurry_stream(d, cfg, 8);
        CHECK(stream_violations(d, cfg, 8, s).empty());
        CHECK(s.disjoint_classes.size() == 5);
        CHECK(s.sample_count() == d.samples.size());
        // Independent count: 12 samples per class, home keeps round(10.8) = 11.
        std::map<std::pair<std::size_t, std::size_t>, std::size_t> per;
        for (const auto& t : s.tasks)
            for (const auto& b : t.batches)
                for (const auto& x : b.samples) per[{x.label, t.id}] += 1;
        for (std::size_t c : s.blurry_classes) CHECK(per[{c, s.home_task[c]}] == 11);
    }
    SUBCASE("single task") {
        const SiBlurryConfig cfg{0.5, 0.3, 1, 14};
        const TaskStream s = make_siblurry_stream(d, cfg, 7);
        CHECK(stream_violations(d, cfg, 7, s).empty());
        CHECK(s.tasks[0].labels.size() == 10);
        CHECK(s.tasks[0].batches.back().samples.size() == 120 % 7);
    }
    SUBCASE("errors") {
        CHECK(kind_of([&] { make_siblurry_stream(d, SiBlurryConfig{0.5, 0.1, 11, 1}, 8); }) == ErrorKind::TooFewClasses);
        CHECK(kind_of([&] { make_siblurry_stream(LabeledDataset{}, SiBlurryConfig{}, 8); }) == ErrorKind::EmptyDataset);
        CHECK(kind_of([&] { make_siblurry_stream(d, SiBlurryConfig{1.5, 0.1, 5, 1}, 8); }) == ErrorKind::ConfigError);
        CHECK(kind_of([&] { make_siblurry_stream(d, SiBlurryConfig{0.5, -0.1, 5, 1}, 8); }) == ErrorKind::ConfigError);
        CHECK(kind_of([&] { make_siblurry_stream(d, SiBlurryConfig{0.5, 0.1, 0, 1}, 8); }) == ErrorKind::ConfigError);
    }
}

TEST_CASE("si-blurry invariants across seeded configs") {
    Rng rng(77);
    bool saw_overlap = false;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t classes = 2 + rng.index(19);
        const std::size_t tasks = 1 + rng.index(std::min<std::size_t>(classes, 6));
        const LabeledDataset d = gen_gaussian_dataset(classes, 1 + rng.index(30), 2, 1.0, rng.next_u64());
        const SiBlurryConfig cfg{rng.uniform(), rng.uniform(0.0, 0.5), tasks, rng.next_u64()};
        const std::size_t batch = 1 + rng.index(16);
        const TaskStream s = make_siblurry_stream(d, cfg, batch);
        const auto bad = stream_violations(d, cfg, batch, s);
        CHECK_MESSAGE(bad.empty(), "trial ", trial, ": ", bad.empty() ? "" : bad.front());
        CHECK(manifest(s) == manifest(make_siblurry_stream(d, cfg, batch)));
        for (std::size_t c : s.blurry_classes) {
            std::size_t tasks_with_c = 0;
            for (const auto& t : s.tasks) tasks_with_c += std::binary_search(t.labels.begin(), t.labels.end(), c);
            saw_overlap = saw_overlap || tasks_with_c >= 2;
        }
    }
    CHECK(saw_overlap);
}

TEST_CASE("non-uniform task sizes") {
    const LabeledDataset d = gen_gaussian_dataset(40, 5, 2, 1.0, 2);
    std::set<std::size_t> distinct_sizes;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const TaskStream s = make_siblurry_stream(d, SiBlurryConfig{1.0, 0.0, 5, seed}, 64);
        for (const auto& t : s.tasks) {
            CHECK(!t.labels.empty());
            distinct_sizes.insert(t.labels.size());
        }
    }
    CHECK(distinct_sizes.size() >= 3);
}

TEST_CASE("manifest layout") {
    const LabeledDataset d = gen_gaussian_dataset(4, 3, 2, 1.0, 8);
    const TaskStream s = make_siblurry_stream(d, SiBlurryConfig{0.5, 0.1, 2, 3}, 5);
    std::istringstream in(manifest(s));
    std::size_t task, batch, cls, idx, lines = 0;
    std::set<std::size_t> indices;
    while (in >> task >> batch >> cls >> idx) {
        ++lines;
        CHECK(d.samples[idx].label == cls);
        CHECK(task < 2);
        indices.insert(idx);
    }
    CHECK(lines == 12);
    CHECK(indices.size() == 12);
}

TEST_CASE("pseudo task sequences") {
    const LabeledDataset pre = gen_gaussian_dataset(30, 100, 3, 1.0, 4);

    SUBCASE("gamma 0.3 with 100 samples per class") {
        const PseudoSequence seq = sample_pseudo_sequence(pre, 10, 100, 0.3, 5, 1);
        std::vector<std::size_t> joint(10, 0), seq_count(10, 0);
        for (const Sample& s : seq.joint_set) joint.at(s.label) += 1;
        for (const auto& t : seq.tasks)
            for (const Sample& s : t) seq_count.at(s.label) += 1;
        for (std::size_t c = 0; c < 10; ++c) {
            CHECK(joint[c] == 30);
            CHECK(seq_count[c] == 70);
        }
    }
    SUBCASE("ten classes over five tasks") {
        const PseudoSequence seq = sample_pseudo_sequence(pre, 10, 20, 0.3, 5, 2);
        REQUIRE(seq.tasks.size() == 5);
        std::set<std::size_t> all;
        for (std::size_t t = 0; t < 5; ++t) {
            const ClassMask labels = seq.task_labels(t);
            CHECK(labels.size() == 2);
            for (std::size_t c : labels) CHECK(all.insert(c).second);
        }
        CHECK(all.size() == 10);
        std::set<std::size_t> unique_meta(seq.meta_classes.begin(), seq.meta_classes.end());
        CHECK(unique_meta.size() == 10);
    }
    SUBCASE("single pseudo task") {
        const PseudoSequence seq = sample_pseudo_sequence(pre, 4, 10, 0.3, 1, 3);
        REQUIRE(seq.tasks.size() == 1);
        CHECK(seq.tasks[0].size() == 4 * 7);
        CHECK(seq.joint_set.size() == 4 * 3);
        for (const Sample& a : seq.tasks[0])
            for (const Sample& b : seq.joint_set) CHECK(a.x != b.x);
    }
    SUBCASE("samples come from their meta class, without duplication") {
        const PseudoSequence seq = sample_pseudo_sequence(pre, 7, 50, 0.3, 3, 5);
        std::set<std::vector<double>> used;
        auto check_sample = [&](const Sample& s) {
            CHECK(used.insert(s.x).second);
            const std::size_t source = seq.meta_classes.at(s.label);
            bool found = false;
            for (const Sample& p : pre.samples) found = found || (p.label == source && p.x == s.x);
            CHECK(found);
        };
        for (const auto& t : seq.tasks)
            for (const Sample& s : t) check_sample(s);
        for (const Sample& s : seq.joint_set) check_sample(s);
        CHECK(used.size() == 7 * 50);
        const auto sizes = std::vector<std::size_t>{seq.task_labels(0).size(), seq.task_labels(1).size(),
                                                    seq.task_labels(2).size()};
        CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
    }
    SUBCASE("deterministic") {
        const PseudoSequence a = sample_pseudo_sequence(pre, 10, 20, 0.3, 5, 9);
        const PseudoSequence b = sample_pseudo_sequence(pre, 10, 20, 0.3, 5, 9);
        CHECK(a.meta_classes == b.meta_classes);
        REQUIRE(a.joint_set.size() == b.joint_set.size());
        for (std::size_t i = 0; i < a.joint_set.size(); ++i) CHECK(a.joint_set[i].x == b.joint_set[i].x);
    }
    SUBCASE("errors") {
        CHECK(kind_of([&] { sample_pseudo_sequence(pre, 31, 10, 0.3, 5, 1); }) == ErrorKind::InsufficientClasses);
        CHECK(kind_of([&] { sample_pseudo_sequence(pre, 10, 101, 0.3, 5, 1); }) == ErrorKind::InsufficientSamples);
        CHECK(kind_of([&] { sample_pseudo_sequence(pre, 10, 1, 0.3, 5, 1); }) == ErrorKind::InsufficientSamples);
        CHECK(kind_of([&] { sample_pseudo_sequence(pre, 4, 10, 0.3, 5, 1); }) == ErrorKind::ConfigError);
        CHECK(kind_of([&] { sample_pseudo_sequence(pre, 4, 10, 1.0, 2, 1); }) == ErrorKind::ConfigError);
    }
}
