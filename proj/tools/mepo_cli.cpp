#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mepo/error.hpp"
#include "mepo/pipeline.hpp"

namespace {

struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> meta_rep;
    std::optional<std::string> meta_cov;
    std::optional<double> alpha;
};

bool parse_switch(const std::string& flag, const std::string& value) {
    if (value == "on") return true;
    if (value == "off") return false;
    throw mepo::Error(mepo::ErrorKind::ConfigError, flag + " must be on or off, got '" + value + "'");
}

mepo::ExperimentConfig resolve(const Overrides& o) {
    mepo::ExperimentConfig cfg = o.config_path.empty() ? mepo::ExperimentConfig{} : mepo::load_config(o.config_path);
    if (o.seed) cfg.seed = *o.seed;
    if (o.out) cfg.out_dir = *o.out;
    if (o.meta_rep) cfg.meta_rep = parse_switch("--meta-rep", *o.meta_rep);
    if (o.meta_cov) cfg.meta_cov = parse_switch("--meta-cov", *o.meta_cov);
    if (o.alpha) cfg.gcl.alpha = *o.alpha;
    cfg.validate();
    return cfg;
}

void error_line(std::string_view kind, const std::string& message) {
    std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Meta post-refinement for general continual learning (synthetic desk-scale pipeline)"};
    app.require_subcommand(1);
    Overrides o;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "JSON experiment config (absent keys take defaults)");
        sub->add_option("--seed", o.seed, "master seed");
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--meta-rep", o.meta_rep, "use the meta-refined backbone (on|off)");
        sub->add_option("--meta-cov", o.meta_cov, "align features to the reference covariance (on|off)");
        sub->add_option("--alpha", o.alpha, "alignment blend in [0, 1]");
    };

    auto* pretrain = app.add_subcommand("pretrain", "train the backbone on the pretraining classes");
    auto* refine = app.add_subcommand("refine", "meta-refine the pretrained backbone");
    auto* covref = app.add_subcommand("covref", "build the reference covariance for the selected backbone");
    auto* gcl = app.add_subcommand("gcl", "run the continual stream and write metrics");
    auto* theory = app.add_subcommand("theory", "measure the sequential-vs-joint gap");
    auto* sweep = app.add_subcommand("sweep", "2x2 ablation grid (plus alphas) over the seed list");
    auto* defaults = app.add_subcommand("defaults", "print the default config as JSON");
    for (auto* sub : {pretrain, refine, covref, gcl, theory, sweep, defaults}) add_common(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        error_line("UsageError", e.what());
        return 2;
    }

    try {
        const mepo::ExperimentConfig cfg = resolve(o);
        if (defaults->parsed()) {
            std::cout << mepo::to_json(cfg).dump(2) << '\n';
        } else if (pretrain->parsed()) {
            mepo::stage_pretrain(cfg);
        } else if (refine->parsed()) {
            mepo::stage_refine(cfg);
        } else if (covref->parsed()) {
            mepo::stage_covref(cfg);
        } else if (gcl->parsed()) {
            std::cout << (mepo::stage_gcl(cfg) / "metrics.json").string() << '\n';
        } else if (theory->parsed()) {
            mepo::stage_theory(cfg);
        } else if (sweep->parsed()) {
            std::cout << mepo::stage_sweep(cfg)["means"].dump(2) << '\n';
        }
    } catch (const mepo::Error& e) {
        error_line(mepo::to_string(e.kind()), e.what());
        return 1;
    } catch (const std::exception& e) {
        error_line("InternalError", e.what());
        return 1;
    }
    return 0;
}
