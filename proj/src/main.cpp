// Command-line front end; talks to the core exclusively through the C API.
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "peftsim/capi.h"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::vector<std::uint64_t> seeds;
    std::size_t jobs = 1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "experiment config file")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", opts.out_dir, "output root (default: config value or $PEFTSIM_OUT)");
    cmd->add_option("--seeds", opts.seeds, "seed list overriding the config")->delimiter(',');
    cmd->add_option("--jobs", opts.jobs, "max parallel worker threads")
        ->check(CLI::Range(std::size_t{1}, std::size_t{256}));
}

// nullptr on failure, with the error already printed
peftsim_config* load_with_overrides(const CommonOpts& opts) {
    peftsim_config* cfg = peftsim_config_load(opts.config_path.c_str());
    if (!cfg) {
        std::fprintf(stderr, "config error: %s\n", peftsim_last_error());
        return nullptr;
    }
    std::string out = opts.out_dir;
    if (out.empty()) {
        const char* env = std::getenv("PEFTSIM_OUT");
        if (env && *env) out = env;
    }
    if (!out.empty() && peftsim_config_set_output_dir(cfg, out.c_str()) != PEFTSIM_OK) {
        std::fprintf(stderr, "config error: %s\n", peftsim_last_error());
        peftsim_config_free(cfg);
        return nullptr;
    }
    if (!opts.seeds.empty() &&
        peftsim_config_set_seeds(cfg, opts.seeds.data(), opts.seeds.size()) != PEFTSIM_OK) {
        std::fprintf(stderr, "config error: %s\n", peftsim_last_error());
        peftsim_config_free(cfg);
        return nullptr;
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"peftsim: deterministic federated fine-tuning simulator"};
    app.require_subcommand(1);

    CommonOpts run_opts, sweep_opts, spectra_opts;
    std::string axis;

    CLI::App* run = app.add_subcommand("run", "federated runs, one report tree per seed");
    add_common(run, run_opts);

    CLI::App* sweep = app.add_subcommand("sweep", "cross-product runs over one config axis");
    add_common(sweep, sweep_opts);
    sweep->add_option("--axis", axis, "lr, heads, alpha, budget_dist or init")->required();

    CLI::App* spectra =
        app.add_subcommand("spectra", "centralized vs federated update-spectrum study");
    add_common(spectra, spectra_opts);

    app.add_subcommand("verify", "run the built-in invariant suite");

    CLI11_PARSE(app, argc, argv);

    int rc = PEFTSIM_ERR_RUNTIME;
    if (run->parsed()) {
        if (peftsim_config* cfg = load_with_overrides(run_opts)) {
            rc = peftsim_run(cfg, run_opts.jobs);
            peftsim_config_free(cfg);
        } else {
            rc = PEFTSIM_ERR_CONFIG;
        }
    } else if (sweep->parsed()) {
        if (peftsim_config* cfg = load_with_overrides(sweep_opts)) {
            rc = peftsim_sweep(cfg, axis.c_str(), sweep_opts.jobs);
            peftsim_config_free(cfg);
        } else {
            rc = PEFTSIM_ERR_CONFIG;
        }
    } else if (spectra->parsed()) {
        if (peftsim_config* cfg = load_with_overrides(spectra_opts)) {
            rc = peftsim_spectra(cfg);
            peftsim_config_free(cfg);
        } else {
            rc = PEFTSIM_ERR_CONFIG;
        }
    } else {
        rc = peftsim_verify();
    }
    return rc;
}
