#include "mepo/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "mepo/error.hpp"
#include "mepo/metrics.hpp"
#include "mepo/rng.hpp"

namespace mepo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Reads keys of one JSON object into existing defaults and rejects keys it
/// was never asked about.
class ObjectReader {
public:
    ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw Error(ErrorKind::ConfigError, path_ + " must be a JSON object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        if (!obj_.contains(key)) return;
        used_.insert(key);
        try {
            out = obj_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw Error(ErrorKind::ConfigError, path_ + "." + key + ": " + e.what());
        }
    }

    template <typename Enum, typename Parse>
    void get_tag(const char* key, Enum& out, Parse parse) {
        std::string tag;
        if (!obj_.contains(key)) return;
        get(key, tag);
        out = parse(tag);
    }

    const json* child(const char* key) {
        if (!obj_.contains(key)) return nullptr;
        used_.insert(key);
        return &obj_.at(key);
    }

    std::string path(const char* key) const { return path_ + "." + key; }

    void finish() const {
        for (const auto& item : obj_.items())
            if (!used_.count(item.key())) throw Error(ErrorKind::ConfigError, "unknown key " + path_ + "." + item.key());
    }

private:
    const json& obj_;
    std::string path_;
    std::set<std::string> used_;
};

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::MissingArtifact, "missing artifact " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + path.parent_path().string() + ": " + ec.message());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    out << text;
    out.close();
    if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

std::string checkpoint_text(const MlpModel& model) {
    std::ostringstream out;
    write_checkpoint(out, model);
    return out.str();
}

std::string cov_ref_text(const CovRef& ref) {
    std::ostringstream out;
    write_cov_ref(out, ref);
    return out.str();
}

MlpModel load_checkpoint(const fs::path& path) {
    std::istringstream in(read_text(path));
    return read_checkpoint(in);
}

std::string inputs_hash(std::initializer_list<const std::string*> texts) {
    std::string all;
    for (const std::string* t : texts)
        if (t != nullptr) all += *t;
    return hex64(fnv1a(all));
}

std::string gap_csv(const GapResult& r) {
    std::ostringstream out;
    out.precision(std::numeric_limits<double>::max_digits10);
    out << "eta,gap\n";
    for (std::size_t i = 0; i < r.etas.size(); ++i) out << r.etas[i] << ',' << r.gaps[i] << '\n';
    return out.str();
}

std::string eval_csv(const EvalLog& log) {
    std::ostringstream out;
    write_eval_csv(out, log);
    return out.str();
}

std::vector<std::size_t> model_dims(const ExperimentConfig& cfg) {
    std::vector<std::size_t> dims{cfg.data.input_dim};
    dims.insert(dims.end(), cfg.model.hidden.begin(), cfg.model.hidden.end());
    dims.push_back(cfg.model.feature_dim);
    return dims;
}

fs::path backbone_path(const ExperimentConfig& cfg) {
    return fs::path(cfg.out_dir) / (cfg.meta_rep ? "refine.ckpt" : "pretrain.ckpt");
}

fs::path cov_ref_path(const ExperimentConfig& cfg) {
    return fs::path(cfg.out_dir) / (cfg.meta_rep ? "covref_refined.txt" : "covref_theta0.txt");
}

std::string format_alpha(double alpha) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", alpha);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw Error(ErrorKind::ConfigError, what);
    };
    need(data.input_dim >= 1 && data.pretrain_classes >= 2 && data.downstream_classes >= 1, "data counts must be >= 1");
    need(data.pretrain_samples_per_class >= 1 && data.downstream_train_per_class >= 1 &&
             data.downstream_test_per_class >= 1,
         "per-class sample counts must be >= 1");
    need(data.cluster_spread > 0.0, "cluster_spread must be positive");
    need(model.feature_dim >= 1, "feature_dim must be >= 1");
    for (std::size_t h : model.hidden) need(h >= 1, "hidden widths must be >= 1");
    need(pretrain.batch_size >= 1 && pretrain.lr >= 0.0, "pretrain batch_size >= 1 and lr >= 0");
    refine.validate();
    need(covref.epsilon >= 0.0, "covref epsilon must be >= 0");
    SiBlurryConfig{gcl.m, gcl.n, gcl.tasks, 0}.validate();
    need(gcl.batch_size >= 1 && gcl.eval_interval_batches >= 1, "gcl batch_size and eval interval must be >= 1");
    need(gcl.lr >= 0.0, "gcl lr must be >= 0");
    need(gcl.alpha >= 0.0 && gcl.alpha <= 1.0, "alpha must lie in [0, 1]");
    need(theory.etas.size() >= 2, "theory needs at least two step sizes");
    need(theory.probe_classes >= 2 && theory.probe_samples_per_class >= 1, "probe needs >= 2 classes and samples");
    for (double a : sweep.alphas) need(a >= 0.0 && a <= 1.0, "sweep alphas must lie in [0, 1]");
}

json to_json(const ExperimentConfig& c) {
    json doc;
    doc["seed"] = c.seed;
    doc["out_dir"] = c.out_dir;
    doc["meta_rep"] = c.meta_rep;
    doc["meta_cov"] = c.meta_cov;
    doc["data"] = {{"input_dim", c.data.input_dim},
                   {"pretrain_classes", c.data.pretrain_classes},
                   {"pretrain_samples_per_class", c.data.pretrain_samples_per_class},
                   {"downstream_classes", c.data.downstream_classes},
                   {"downstream_train_per_class", c.data.downstream_train_per_class},
                   {"downstream_test_per_class", c.data.downstream_test_per_class},
                   {"cluster_spread", c.data.cluster_spread}};
    doc["model"] = {{"hidden", c.model.hidden}, {"feature_dim", c.model.feature_dim}};
    doc["pretrain"] = {{"epochs", c.pretrain.epochs}, {"lr", c.pretrain.lr}, {"batch_size", c.pretrain.batch_size}};
    doc["refine"] = {{"meta_epochs", c.refine.meta_epochs},
                     {"tasks_per_epoch", c.refine.tasks_per_epoch},
                     {"eta_theta", c.refine.eta_theta},
                     {"eta_psi", c.refine.eta_psi},
                     {"eta_meta", c.refine.eta_meta},
                     {"gamma", c.refine.gamma},
                     {"class_count_meta", c.refine.class_count_meta},
                     {"samples_per_class_meta", c.refine.samples_per_class_meta},
                     {"inner_batch_size", c.refine.inner_batch_size}};
    doc["covref"] = {{"epsilon", c.covref.epsilon}, {"samples_per_class", c.covref.samples_per_class}};
    doc["gcl"] = {{"m", c.gcl.m},
                  {"n", c.gcl.n},
                  {"tasks", c.gcl.tasks},
                  {"batch_size", c.gcl.batch_size},
                  {"lr", c.gcl.lr},
                  {"alpha", c.gcl.alpha},
                  {"mask_policy", to_string(c.gcl.mask_policy)},
                  {"mean_policy", to_string(c.gcl.mean_policy)},
                  {"eval_interval_batches", c.gcl.eval_interval_batches},
                  {"align_at_eval", c.gcl.align_at_eval}};
    doc["theory"] = {{"etas", c.theory.etas},
                     {"probe_classes", c.theory.probe_classes},
                     {"probe_samples_per_class", c.theory.probe_samples_per_class},
                     {"probe_head_steps", c.theory.probe_head_steps},
                     {"probe_head_lr", c.theory.probe_head_lr}};
    doc["sweep"] = {{"seeds", c.sweep.seeds}, {"alphas", c.sweep.alphas}, {"threads", c.sweep.threads}};
    return doc;
}

ExperimentConfig config_from_json(const json& doc) {
    ExperimentConfig c;
    ObjectReader top(doc, "config");
    top.get("seed", c.seed);
    top.get("out_dir", c.out_dir);
    top.get("meta_rep", c.meta_rep);
    top.get("meta_cov", c.meta_cov);
    if (const json* j = top.child("data")) {
        ObjectReader r(*j, top.path("data"));
        r.get("input_dim", c.data.input_dim);
        r.get("pretrain_classes", c.data.pretrain_classes);
        r.get("pretrain_samples_per_class", c.data.pretrain_samples_per_class);
        r.get("downstream_classes", c.data.downstream_classes);
        r.get("downstream_train_per_class", c.data.downstream_train_per_class);
        r.get("downstream_test_per_class", c.data.downstream_test_per_class);
        r.get("cluster_spread", c.data.cluster_spread);
        r.finish();
    }
    if (const json* j = top.child("model")) {
        ObjectReader r(*j, top.path("model"));
        r.get("hidden", c.model.hidden);
        r.get("feature_dim", c.model.feature_dim);
        r.finish();
    }
    if (const json* j = top.child("pretrain")) {
        ObjectReader r(*j, top.path("pretrain"));
        r.get("epochs", c.pretrain.epochs);
        r.get("lr", c.pretrain.lr);
        r.get("batch_size", c.pretrain.batch_size);
        r.finish();
    }
    if (const json* j = top.child("refine")) {
        ObjectReader r(*j, top.path("refine"));
        r.get("meta_epochs", c.refine.meta_epochs);
        r.get("tasks_per_epoch", c.refine.tasks_per_epoch);
        r.get("eta_theta", c.refine.eta_theta);
        r.get("eta_psi", c.refine.eta_psi);
        r.get("eta_meta", c.refine.eta_meta);
        r.get("gamma", c.refine.gamma);
        r.get("class_count_meta", c.refine.class_count_meta);
        r.get("samples_per_class_meta", c.refine.samples_per_class_meta);
        r.get("inner_batch_size", c.refine.inner_batch_size);
        r.finish();
    }
    if (const json* j = top.child("covref")) {
        ObjectReader r(*j, top.path("covref"));
        r.get("epsilon", c.covref.epsilon);
        r.get("samples_per_class", c.covref.samples_per_class);
        r.finish();
    }
    if (const json* j = top.child("gcl")) {
        ObjectReader r(*j, top.path("gcl"));
        r.get("m", c.gcl.m);
        r.get("n", c.gcl.n);
        r.get("tasks", c.gcl.tasks);
        r.get("batch_size", c.gcl.batch_size);
        r.get("lr", c.gcl.lr);
        r.get("alpha", c.gcl.alpha);
        r.get_tag("mask_policy", c.gcl.mask_policy, parse_mask_policy);
        r.get_tag("mean_policy", c.gcl.mean_policy, parse_mean_policy);
        r.get("eval_interval_batches", c.gcl.eval_interval_batches);
        r.get("align_at_eval", c.gcl.align_at_eval);
        r.finish();
    }
    if (const json* j = top.child("theory")) {
        ObjectReader r(*j, top.path("theory"));
        r.get("etas", c.theory.etas);
        r.get("probe_classes", c.theory.probe_classes);
        r.get("probe_samples_per_class", c.theory.probe_samples_per_class);
        r.get("probe_head_steps", c.theory.probe_head_steps);
        r.get("probe_head_lr", c.theory.probe_head_lr);
        r.finish();
    }
    if (const json* j = top.child("sweep")) {
        ObjectReader r(*j, top.path("sweep"));
        r.get("seeds", c.sweep.seeds);
        r.get("alphas", c.sweep.alphas);
        r.get("threads", c.sweep.threads);
        r.finish();
    }
    top.finish();
    c.validate();
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::MissingArtifact, "missing config file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::ConfigError, "config is not valid JSON: " + std::string(e.what()));
    }
    return config_from_json(doc);
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

std::string config_hash(const ExperimentConfig& cfg) { return hex64(fnv1a(to_json(cfg).dump())); }

// ---------------------------------------------------------------------------
// In-memory stages

Datasets make_datasets(const ExperimentConfig& cfg) {
    const DataConfig& d = cfg.data;
    Datasets out;
    out.pretrain = gen_gaussian_dataset(d.pretrain_classes, d.pretrain_samples_per_class, d.input_dim, d.cluster_spread,
                                        derive_seed(cfg.seed, "pretrain-data"));
    const GaussianClusters fresh =
        make_clusters(d.downstream_classes, d.input_dim, d.cluster_spread, derive_seed(cfg.seed, "downstream-centers"));
    out.downstream_train = sample_clusters(fresh, d.downstream_train_per_class, derive_seed(cfg.seed, "downstream-train"));
    out.downstream_test = sample_clusters(fresh, d.downstream_test_per_class, derive_seed(cfg.seed, "downstream-test"));
    return out;
}

PretrainOutcome run_pretrain(const ExperimentConfig& cfg, const LabeledDataset& pretrain) {
    pretrain.validate();
    Rng init(derive_seed(cfg.seed, "init"));
    const auto dims = model_dims(cfg);
    PretrainOutcome out;
    out.model = make_mlp(dims, pretrain.class_count, init);
    out.initial_loss = batch_loss(out.model, pretrain.samples, nullptr, false);

    std::vector<Sample> order = pretrain.samples;
    std::vector<Sample> batch;
    Gradients grads;
    for (std::size_t epoch = 0; epoch < cfg.pretrain.epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, "pretrain-order", epoch));
        rng.shuffle(std::span<Sample>(order));
        for (std::size_t start = 0; start < order.size(); start += cfg.pretrain.batch_size) {
            const std::size_t len = std::min(cfg.pretrain.batch_size, order.size() - start);
            batch_loss_and_gradients(out.model, std::span<const Sample>(order).subspan(start, len), nullptr, false, grads);
            sgd_update(out.model, grads, cfg.pretrain.lr, cfg.pretrain.lr);
        }
    }
    out.final_loss = batch_loss(out.model, pretrain.samples, nullptr, false);
    out.train_accuracy = compute_last(out.model, pretrain.samples, false);
    return out;
}

MetaRefineResult run_refine(const ExperimentConfig& cfg, const MlpModel& theta0, const LabeledDataset& pretrain) {
    MepoConfig mc = cfg.refine;
    mc.seed = derive_seed(cfg.seed, "refine");
    return meta_refine(theta0, pretrain, mc);
}

CovRef run_covref(const ExperimentConfig& cfg, const MlpModel& backbone, const LabeledDataset& pretrain) {
    const std::size_t per_class = cfg.covref.samples_per_class;
    std::size_t smallest = std::numeric_limits<std::size_t>::max();
    for (const auto& g : pretrain.indices_by_class()) smallest = std::min(smallest, g.size());
    if (per_class == 0 || per_class >= smallest) return build_cov_ref(backbone, pretrain, cfg.covref.epsilon);
    return build_cov_ref(backbone, subsample_per_class(pretrain, per_class, derive_seed(cfg.seed, "covref")),
                         cfg.covref.epsilon);
}

GclConfig make_gcl_config(const ExperimentConfig& cfg) {
    GclConfig g;
    g.align.alpha = cfg.gcl.alpha;
    g.align.epsilon = cfg.covref.epsilon;
    g.align.mean_policy = cfg.gcl.mean_policy;
    g.lr = cfg.gcl.lr;
    g.mask_policy = cfg.gcl.mask_policy;
    g.eval_interval_batches = cfg.gcl.eval_interval_batches;
    g.eval_batch_size = cfg.gcl.batch_size;
    g.align_at_eval = cfg.gcl.align_at_eval;
    g.seed = derive_seed(cfg.seed, "gcl");
    return g;
}

TaskStream make_stream(const ExperimentConfig& cfg, const Datasets& data) {
    const SiBlurryConfig sc{cfg.gcl.m, cfg.gcl.n, cfg.gcl.tasks, derive_seed(cfg.seed, "stream")};
    return make_siblurry_stream(data.downstream_train, sc, cfg.gcl.batch_size);
}

GclOutcome run_gcl_stage(const ExperimentConfig& cfg, const MlpModel& backbone, const CovRef* ref, const Datasets& data) {
    const TaskStream stream = make_stream(cfg, data);
    MlpModel frozen = backbone;
    frozen.adapter.reset();
    GclOutcome out;
    out.result = run_gcl(stream, frozen, ref, data.downstream_test, make_gcl_config(cfg));
    out.metrics.a_auc = compute_auc(out.result.log);
    out.metrics.a_last = out.result.a_last;
    out.metrics.forgetting = compute_forgetting(out.result.log.task_history);
    out.metrics.fallback_count = out.result.fallback_count;
    return out;
}

GapProbe make_gap_probe(const ExperimentConfig& cfg, const LabeledDataset& pretrain) {
    const TheoryConfig& t = cfg.theory;
    // Half of each sampled class goes to the (discarded) joint part.
    const PseudoSequence seq = sample_pseudo_sequence(pretrain, t.probe_classes, 2 * t.probe_samples_per_class, 0.5, 2,
                                                      derive_seed(cfg.seed, "gap-probe"));
    return GapProbe{seq.tasks[0], seq.tasks[1], t.probe_classes};
}

GapResult run_gap_probe(const ExperimentConfig& cfg, const MlpModel& backbone, const GapProbe& probe) {
    MlpModel model = backbone;
    model.adapter.reset();
    Rng head_rng(derive_seed(cfg.seed, "probe-head"));
    model.head = init_layer(model.feature_dim(), probe.classes, head_rng);
    std::vector<Sample> both = probe.task_a;
    both.insert(both.end(), probe.task_b.begin(), probe.task_b.end());
    Gradients grads;
    for (std::size_t step = 0; step < cfg.theory.probe_head_steps; ++step) {
        batch_loss_and_gradients(model, both, nullptr, false, grads);
        sgd_update(model, grads, 0.0, cfg.theory.probe_head_lr);
    }
    return theorem_gap(mlp_gap_experiment(model, probe.task_a, probe.task_b, cfg.theory.etas));
}

SeedArtifacts prepare_seed(const ExperimentConfig& cfg, bool with_refine) {
    SeedArtifacts a;
    a.data = make_datasets(cfg);
    a.pretrain = run_pretrain(cfg, a.data.pretrain);
    if (with_refine) {
        a.refine = run_refine(cfg, a.pretrain.model, a.data.pretrain);
    } else {
        a.refine.model = a.pretrain.model;
    }
    a.ref_theta0 = run_covref(cfg, a.pretrain.model, a.data.pretrain);
    a.ref_refined = with_refine ? run_covref(cfg, a.refine.model, a.data.pretrain) : a.ref_theta0;
    return a;
}

GclOutcome run_cell(const ExperimentConfig& cfg, const SeedArtifacts& a) {
    const MlpModel& backbone = cfg.meta_rep ? a.refine.model : a.pretrain.model;
    const CovRef* ref = cfg.meta_cov ? (cfg.meta_rep ? &a.ref_refined : &a.ref_theta0) : nullptr;
    return run_gcl_stage(cfg, backbone, ref, a.data);
}

// ---------------------------------------------------------------------------
// File-backed stages

std::string cell_name(const ExperimentConfig& cfg) {
    return std::string("rep-") + (cfg.meta_rep ? "on" : "off") + "_cov-" + (cfg.meta_cov ? "on" : "off") + "_alpha-" +
           format_alpha(cfg.gcl.alpha);
}

json metrics_json(const ExperimentConfig& cfg, const GclMetrics& m, const std::string& inputs) {
    return json{{"a_auc", m.a_auc},
                {"a_last", m.a_last},
                {"forgetting", m.forgetting},
                {"fallback_count", m.fallback_count},
                {"seed", cfg.seed},
                {"meta_rep", cfg.meta_rep},
                {"meta_cov", cfg.meta_cov},
                {"alpha", cfg.gcl.alpha},
                {"config_hash", config_hash(cfg)},
                {"inputs_hash", inputs},
                {"config", to_json(cfg)}};
}

void stage_pretrain(const ExperimentConfig& cfg) {
    cfg.validate();
    const Datasets data = make_datasets(cfg);
    const PretrainOutcome out = run_pretrain(cfg, data.pretrain);
    const fs::path dir(cfg.out_dir);
    write_text(dir / "pretrain.ckpt", checkpoint_text(out.model));
    const json doc{{"initial_loss", out.initial_loss},
                   {"final_loss", out.final_loss},
                   {"train_accuracy", out.train_accuracy},
                   {"seed", cfg.seed},
                   {"config_hash", config_hash(cfg)},
                   {"config", to_json(cfg)}};
    write_text(dir / "pretrain.json", doc.dump(2) + "\n");
}

void stage_refine(const ExperimentConfig& cfg) {
    cfg.validate();
    const fs::path dir(cfg.out_dir);
    const std::string input = read_text(dir / "pretrain.ckpt");
    std::istringstream in(input);
    const MlpModel theta0 = read_checkpoint(in);
    const Datasets data = make_datasets(cfg);
    const MetaRefineResult out = run_refine(cfg, theta0, data.pretrain);
    write_text(dir / "refine.ckpt", checkpoint_text(out.model));
    const json doc{{"joint_losses", out.joint_losses},
                   {"seed", cfg.seed},
                   {"config_hash", config_hash(cfg)},
                   {"inputs_hash", inputs_hash({&input})},
                   {"config", to_json(cfg)}};
    write_text(dir / "refine.json", doc.dump(2) + "\n");
}

void stage_covref(const ExperimentConfig& cfg) {
    cfg.validate();
    const MlpModel backbone = load_checkpoint(backbone_path(cfg));
    const Datasets data = make_datasets(cfg);
    write_text(cov_ref_path(cfg), cov_ref_text(run_covref(cfg, backbone, data.pretrain)));
}

fs::path stage_gcl(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::string backbone_text = read_text(backbone_path(cfg));
    std::istringstream backbone_in(backbone_text);
    const MlpModel backbone = read_checkpoint(backbone_in);
    std::string ref_text;
    std::optional<CovRef> ref;
    if (cfg.meta_cov) {
        ref_text = read_text(cov_ref_path(cfg));
        std::istringstream ref_in(ref_text);
        ref = read_cov_ref(ref_in);
    }
    const Datasets data = make_datasets(cfg);
    const GclOutcome out = run_gcl_stage(cfg, backbone, ref ? &*ref : nullptr, data);
    const fs::path dir = fs::path(cfg.out_dir) / "gcl" / cell_name(cfg);
    const std::string hash = inputs_hash({&backbone_text, cfg.meta_cov ? &ref_text : nullptr});
    write_text(dir / "metrics.json", metrics_json(cfg, out.metrics, hash).dump(2) + "\n");
    write_text(dir / "eval_log.csv", eval_csv(out.result.log));
    return dir;
}

void stage_theory(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::string backbone_text = read_text(backbone_path(cfg));
    std::istringstream in(backbone_text);
    const MlpModel backbone = read_checkpoint(in);
    const Datasets data = make_datasets(cfg);
    const GapResult r = run_gap_probe(cfg, backbone, make_gap_probe(cfg, data.pretrain));
    const fs::path dir = fs::path(cfg.out_dir) / "theory";
    const std::string tag = cfg.meta_rep ? "refined" : "theta0";
    write_text(dir / ("gap_" + tag + ".csv"), gap_csv(r));
    const json doc{{"slope", r.slope},
                   {"intercept", r.intercept},
                   {"backbone", tag},
                   {"seed", cfg.seed},
                   {"config_hash", config_hash(cfg)},
                   {"inputs_hash", inputs_hash({&backbone_text})},
                   {"config", to_json(cfg)}};
    write_text(dir / ("gap_" + tag + ".json"), doc.dump(2) + "\n");
}

json stage_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto& seeds = cfg.sweep.seeds;
    if (seeds.empty()) throw Error(ErrorKind::ConfigError, "sweep needs at least one seed");

    struct CellResult {
        std::string name;
        ExperimentConfig cfg;
        GclMetrics metrics;
    };
    std::vector<std::vector<CellResult>> results(seeds.size());
    std::vector<std::exception_ptr> failures(seeds.size());
    const fs::path root = fs::path(cfg.out_dir) / "sweep";

    auto run_seed = [&](std::size_t i) {
        ExperimentConfig base = cfg;
        base.seed = seeds[i];
        const SeedArtifacts art = prepare_seed(base);
        const std::string theta0_text = checkpoint_text(art.pretrain.model);
        const std::string refined_text = checkpoint_text(art.refine.model);
        const std::string ref0_text = cov_ref_text(art.ref_theta0);
        const std::string ref1_text = cov_ref_text(art.ref_refined);

        std::vector<ExperimentConfig> cells;
        for (bool rep : {false, true})
            for (bool cov : {false, true}) {
                ExperimentConfig c = base;
                c.meta_rep = rep;
                c.meta_cov = cov;
                cells.push_back(c);
            }
        for (double alpha : cfg.sweep.alphas) {
            if (alpha == base.gcl.alpha) continue;
            ExperimentConfig c = base;
            c.meta_rep = c.meta_cov = true;
            c.gcl.alpha = alpha;
            cells.push_back(c);
        }
        for (const ExperimentConfig& c : cells) {
            const GclOutcome out = run_cell(c, art);
            const std::string& backbone = c.meta_rep ? refined_text : theta0_text;
            const std::string& ref = c.meta_rep ? ref1_text : ref0_text;
            const std::string hash = inputs_hash({&backbone, c.meta_cov ? &ref : nullptr});
            const fs::path dir = root / ("seed-" + std::to_string(c.seed)) / cell_name(c);
            write_text(dir / "metrics.json", metrics_json(c, out.metrics, hash).dump(2) + "\n");
            write_text(dir / "eval_log.csv", eval_csv(out.result.log));
            results[i].push_back(CellResult{cell_name(c), c, out.metrics});
        }
    };

    std::size_t threads = cfg.sweep.threads == 0 ? std::thread::hardware_concurrency() : cfg.sweep.threads;
    threads = std::clamp<std::size_t>(threads, 1, seeds.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < seeds.size(); i = next++) {
            try {
                run_seed(i);
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& f : failures)
        if (f) std::rethrow_exception(f);

    // Aggregate in seed order so the summary does not depend on scheduling.
    json cells = json::array();
    std::map<std::string, std::vector<GclMetrics>> by_cell;
    for (const auto& seed_results : results)
        for (const auto& r : seed_results) {
            cells.push_back({{"seed", r.cfg.seed},
                             {"cell", r.name},
                             {"meta_rep", r.cfg.meta_rep},
                             {"meta_cov", r.cfg.meta_cov},
                             {"alpha", r.cfg.gcl.alpha},
                             {"a_auc", r.metrics.a_auc},
                             {"a_last", r.metrics.a_last},
                             {"forgetting", r.metrics.forgetting}});
            by_cell[r.name].push_back(r.metrics);
        }
    json means = json::object();
    for (const auto& [name, list] : by_cell) {
        double auc = 0, last = 0, forget = 0;
        for (const auto& m : list) {
            auc += m.a_auc;
            last += m.a_last;
            forget += m.forgetting;
        }
        const double n = static_cast<double>(list.size());
        means[name] = {{"a_auc", auc / n}, {"a_last", last / n}, {"forgetting", forget / n}, {"runs", list.size()}};
    }
    json summary{{"cells", cells}, {"means", means}, {"config_hash", config_hash(cfg)}, {"config", to_json(cfg)}};
    write_text(root / "summary.json", summary.dump(2) + "\n");
    return summary;
}

}  // namespace mepo
