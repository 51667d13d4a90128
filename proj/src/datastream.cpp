#include "mepo/datastream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "mepo/error.hpp"
#include "mepo/rng.hpp"

namespace mepo {

namespace {

std::vector<std::size_t> iota_vec(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

std::size_t round_count(double value) { return static_cast<std::size_t>(std::llround(value)); }

/// Splits `total` items over weights.size() bins proportionally to the
/// weights, every bin receiving at least `floor_each`. Largest remainder,
/// ties to the lower bin.
std::vector<std::size_t> proportional_counts(std::size_t total, std::span<const double> weights, std::size_t floor_each) {
    const std::size_t bins = weights.size();
    std::vector<std::size_t> counts(bins, floor_each);
    const std::size_t rest = total - floor_each * bins;
    const double weight_sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<double> remainders(bins);
    std::size_t assigned = 0;
    for (std::size_t b = 0; b < bins; ++b) {
        const double share = static_cast<double>(rest) * weights[b] / weight_sum;
        const auto whole = static_cast<std::size_t>(std::floor(share));
        counts[b] += whole;
        assigned += whole;
        remainders[b] = share - static_cast<double>(whole);
    }
    std::vector<std::size_t> order = iota_vec(bins);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
    for (std::size_t i = 0; assigned < rest; ++i, ++assigned) counts[order[i % bins]] += 1;
    return counts;
}

}  // namespace

void LabeledDataset::validate() const {
    if (samples.empty() || class_count == 0) throw Error(ErrorKind::EmptyDataset, "dataset has no samples");
    std::vector<bool> present(class_count, false);
    for (const Sample& s : samples) {
        if (s.label >= class_count) throw Error(ErrorKind::LabelOutOfRange, "label beyond class_count");
        if (s.x.size() != input_dim) throw Error(ErrorKind::DimensionMismatch, "sample dimension differs from input_dim");
        present[s.label] = true;
    }
    if (std::find(present.begin(), present.end(), false) != present.end())
        throw Error(ErrorKind::InvalidCount, "a declared class has no samples");
}

std::vector<std::vector<std::size_t>> LabeledDataset::indices_by_class() const {
    std::vector<std::vector<std::size_t>> groups(class_count);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].label >= class_count) throw Error(ErrorKind::LabelOutOfRange, "label beyond class_count");
        groups[samples[i].label].push_back(i);
    }
    return groups;
}

GaussianClusters make_clusters(std::size_t class_count, std::size_t input_dim, double spread, std::uint64_t seed) {
    if (class_count == 0 || input_dim == 0) throw Error(ErrorKind::InvalidCount, "class_count and input_dim must be >= 1");
    if (!(spread > 0.0)) throw Error(ErrorKind::InvalidCount, "cluster spread must be positive");
    Rng rng(seed);
    GaussianClusters clusters;
    clusters.spread = spread;
    clusters.centers.resize(class_count, FeatVec(input_dim));
    for (auto& c : clusters.centers)
        for (double& v : c) v = rng.normal();
    return clusters;
}

LabeledDataset sample_clusters(const GaussianClusters& clusters, std::size_t samples_per_class, std::uint64_t seed) {
    if (samples_per_class == 0 || clusters.centers.empty()) throw Error(ErrorKind::InvalidCount, "need >= 1 sample per class");
    Rng rng(seed);
    LabeledDataset data;
    data.class_count = clusters.centers.size();
    data.input_dim = clusters.centers.front().size();
    data.samples.reserve(data.class_count * samples_per_class);
    for (std::size_t c = 0; c < data.class_count; ++c) {
        for (std::size_t i = 0; i < samples_per_class; ++i) {
            Sample s{clusters.centers[c], c};
            for (double& v : s.x) v += clusters.spread * rng.normal();
            data.samples.push_back(std::move(s));
        }
    }
    return data;
}

LabeledDataset gen_gaussian_dataset(std::size_t class_count, std::size_t samples_per_class, std::size_t input_dim,
                                    double cluster_spread, std::uint64_t seed) {
    if (samples_per_class == 0) throw Error(ErrorKind::InvalidCount, "need >= 1 sample per class");
    auto clusters = make_clusters(class_count, input_dim, cluster_spread, derive_seed(seed, "centers"));
    return sample_clusters(clusters, samples_per_class, derive_seed(seed, "samples"));
}

LabeledDataset subsample_per_class(const LabeledDataset& data, std::size_t per_class, std::uint64_t seed) {
    Rng rng(seed);
    LabeledDataset out;
    out.class_count = data.class_count;
    out.input_dim = data.input_dim;
    for (auto& group : data.indices_by_class()) {
        if (group.size() < per_class) throw Error(ErrorKind::InsufficientSamples, "class has fewer samples than requested");
        rng.shuffle(std::span<std::size_t>(group));
        group.resize(per_class);
        std::sort(group.begin(), group.end());
        for (std::size_t i : group) out.samples.push_back(data.samples[i]);
    }
    return out;
}

void SiBlurryConfig::validate() const {
    if (!(m >= 0.0 && m <= 1.0)) throw Error(ErrorKind::ConfigError, "disjoint class ratio m must lie in [0, 1]");
    if (!(n >= 0.0 && n <= 1.0)) throw Error(ErrorKind::ConfigError, "blurry sample ratio n must lie in [0, 1]");
    if (tasks == 0) throw Error(ErrorKind::ConfigError, "task count must be >= 1");
}

std::size_t TaskStream::sample_count() const {
    std::size_t total = 0;
    for (const auto& t : tasks)
        for (const auto& b : t.batches) total += b.samples.size();
    return total;
}

std::size_t TaskStream::batch_count() const {
    std::size_t total = 0;
    for (const auto& t : tasks) total += t.batches.size();
    return total;
}

TaskStream make_siblurry_stream(const LabeledDataset& data, const SiBlurryConfig& cfg, std::size_t batch_size) {
    cfg.validate();
    if (data.samples.empty()) throw Error(ErrorKind::EmptyDataset, "cannot build a stream from an empty dataset");
    if (batch_size == 0) throw Error(ErrorKind::InvalidCount, "batch size must be >= 1");
    const std::size_t class_count = data.class_count;
    const std::size_t task_count = cfg.tasks;
    if (class_count < task_count) throw Error(ErrorKind::TooFewClasses, "need at least as many classes as tasks");

    Rng rng(cfg.seed);
    TaskStream stream;
    stream.class_count = class_count;
    stream.home_task.assign(class_count, 0);

    std::vector<std::size_t> classes = iota_vec(class_count);
    rng.shuffle(std::span<std::size_t>(classes));
    const std::size_t disjoint_count = std::min(class_count, round_count(cfg.m * static_cast<double>(class_count)));

    // Non-uniform task sizes: normalized uniform weights.
    std::vector<double> weights(task_count);
    for (double& w : weights) w = rng.uniform(0.05, 1.0);

    if (disjoint_count >= task_count) {
        const auto counts = proportional_counts(disjoint_count, weights, 1);
        std::size_t pos = 0;
        for (std::size_t t = 0; t < task_count; ++t)
            for (std::size_t k = 0; k < counts[t]; ++k) stream.home_task[classes[pos++]] = t;
    } else {
        const double weight_sum = std::accumulate(weights.begin(), weights.end(), 0.0);
        for (std::size_t i = 0; i < disjoint_count; ++i) {
            double u = rng.uniform() * weight_sum;
            std::size_t t = 0;
            while (t + 1 < task_count && u >= weights[t]) u -= weights[t++];
            stream.home_task[classes[i]] = t;
        }
    }
    for (std::size_t i = disjoint_count; i < class_count; ++i) stream.home_task[classes[i]] = rng.index(task_count);

    stream.disjoint_classes.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(disjoint_count));
    stream.blurry_classes.assign(classes.begin() + static_cast<std::ptrdiff_t>(disjoint_count), classes.end());
    std::sort(stream.disjoint_classes.begin(), stream.disjoint_classes.end());
    std::sort(stream.blurry_classes.begin(), stream.blurry_classes.end());

    std::vector<std::vector<std::size_t>> pools(task_count);
    auto groups = data.indices_by_class();
    std::vector<bool> is_disjoint(class_count, false);
    for (std::size_t c : stream.disjoint_classes) is_disjoint[c] = true;
    for (std::size_t c = 0; c < class_count; ++c) {
        auto& group = groups[c];
        const std::size_t home = stream.home_task[c];
        if (is_disjoint[c] || task_count == 1) {
            pools[home].insert(pools[home].end(), group.begin(), group.end());
            continue;
        }
        rng.shuffle(std::span<std::size_t>(group));
        const std::size_t keep = round_count((1.0 - cfg.n) * static_cast<double>(group.size()));
        for (std::size_t i = 0; i < group.size(); ++i) {
            std::size_t t = home;
            if (i >= keep) {
                t = rng.index(task_count - 1);
                if (t >= home) ++t;
            }
            pools[t].push_back(group[i]);
        }
    }

    stream.tasks.resize(task_count);
    for (std::size_t t = 0; t < task_count; ++t) {
        auto& pool = pools[t];
        std::sort(pool.begin(), pool.end());
        rng.shuffle(std::span<std::size_t>(pool));
        StreamTask& task = stream.tasks[t];
        task.id = t;
        for (std::size_t start = 0; start < pool.size(); start += batch_size) {
            StreamBatch batch;
            const std::size_t end = std::min(pool.size(), start + batch_size);
            for (std::size_t i = start; i < end; ++i) {
                batch.samples.push_back(data.samples[pool[i]]);
                batch.sample_indices.push_back(pool[i]);
                task.labels.push_back(data.samples[pool[i]].label);
            }
            task.batches.push_back(std::move(batch));
        }
        std::sort(task.labels.begin(), task.labels.end());
        task.labels.erase(std::unique(task.labels.begin(), task.labels.end()), task.labels.end());
    }
    return stream;
}

void write_manifest(std::ostream& out, const TaskStream& stream) {
    for (const auto& task : stream.tasks)
        for (std::size_t b = 0; b < task.batches.size(); ++b) {
            const auto& batch = task.batches[b];
            for (std::size_t i = 0; i < batch.samples.size(); ++i)
                out << task.id << ' ' << b << ' ' << batch.samples[i].label << ' ' << batch.sample_indices[i] << '\n';
        }
}

ClassMask PseudoSequence::task_labels(std::size_t t) const {
    ClassMask labels;
    for (const Sample& s : tasks.at(t)) labels.push_back(s.label);
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    return labels;
}

PseudoSequence sample_pseudo_sequence(const LabeledDataset& pre, std::size_t class_count_meta,
                                      std::size_t samples_per_class, double gamma, std::size_t t_prime,
                                      std::uint64_t seed) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw Error(ErrorKind::ConfigError, "gamma must lie in (0, 1)");
    if (class_count_meta == 0 || t_prime == 0 || t_prime > class_count_meta)
        throw Error(ErrorKind::ConfigError, "need 1 <= t_prime <= class_count_meta");
    if (pre.class_count < class_count_meta) throw Error(ErrorKind::InsufficientClasses, "not enough pretraining classes");
    const std::size_t joint_per_class = round_count(gamma * static_cast<double>(samples_per_class));
    if (joint_per_class == 0 || joint_per_class >= samples_per_class)
        throw Error(ErrorKind::InsufficientSamples, "gamma split leaves the joint or sequential part empty");

    auto groups = pre.indices_by_class();
    Rng rng(seed);
    std::vector<std::size_t> classes = iota_vec(pre.class_count);
    rng.shuffle(std::span<std::size_t>(classes));
    classes.resize(class_count_meta);

    PseudoSequence seq;
    seq.split_ratio = gamma;
    seq.meta_classes = classes;
    seq.tasks.resize(t_prime);

    // Near-equal chunks of the (already shuffled) class list.
    const std::size_t base = class_count_meta / t_prime;
    const std::size_t extra = class_count_meta % t_prime;
    std::size_t local = 0;
    for (std::size_t t = 0; t < t_prime; ++t) {
        const std::size_t size = base + (t < extra ? 1 : 0);
        for (std::size_t k = 0; k < size; ++k, ++local) {
            auto& group = groups[classes[local]];
            if (group.size() < samples_per_class)
                throw Error(ErrorKind::InsufficientSamples, "class has fewer samples than samples_per_class");
            rng.shuffle(std::span<std::size_t>(group));
            for (std::size_t i = 0; i < samples_per_class; ++i) {
                Sample s{pre.samples[group[i]].x, local};
                if (i < joint_per_class)
                    seq.joint_set.push_back(std::move(s));
                else
                    seq.tasks[t].push_back(std::move(s));
            }
        }
        rng.shuffle(std::span<Sample>(seq.tasks[t]));
    }
    rng.shuffle(std::span<Sample>(seq.joint_set));
    return seq;
}

}  // namespace mepo
