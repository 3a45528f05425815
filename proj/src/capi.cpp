#include "peftsim/capi.h"

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "peftsim/runner.hpp"

struct peftsim_config {
    peftsim::ExperimentConfig cfg;
};

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& message) { g_last_error = message; }

// Forward runner diagnostics to stderr while keeping them queryable.
int finish(int rc, const std::ostringstream& err) {
    const std::string message = err.str();
    if (!message.empty()) {
        std::cerr << message;
        set_error(message);
    } else if (rc == PEFTSIM_OK) {
        g_last_error.clear();
    }
    return rc;
}

}  // namespace

extern "C" {

peftsim_config* peftsim_config_load(const char* path) {
    if (!path) {
        set_error("config path is null");
        return nullptr;
    }
    try {
        auto* handle = new peftsim_config{peftsim::load_config(path)};
        g_last_error.clear();
        return handle;
    } catch (const std::exception& e) {
        set_error(e.what());
        return nullptr;
    }
}

peftsim_config* peftsim_config_parse(const char* json_text) {
    if (!json_text) {
        set_error("config text is null");
        return nullptr;
    }
    try {
        auto* handle = new peftsim_config{peftsim::parse_config(json_text)};
        g_last_error.clear();
        return handle;
    } catch (const std::exception& e) {
        set_error(e.what());
        return nullptr;
    }
}

void peftsim_config_free(peftsim_config* config) { delete config; }

int peftsim_config_set_output_dir(peftsim_config* config, const char* dir) {
    if (!config || !dir || !*dir) {
        set_error("set_output_dir: null handle or empty directory");
        return PEFTSIM_ERR_CONFIG;
    }
    config->cfg.output_dir = dir;
    return PEFTSIM_OK;
}

int peftsim_config_set_seeds(peftsim_config* config, const uint64_t* seeds, size_t n_seeds) {
    if (!config || !seeds || n_seeds == 0) {
        set_error("set_seeds: null handle or empty seed list");
        return PEFTSIM_ERR_CONFIG;
    }
    config->cfg.seeds.assign(seeds, seeds + n_seeds);
    return PEFTSIM_OK;
}

int peftsim_run(const peftsim_config* config, size_t jobs) {
    if (!config) {
        set_error("run: null config handle");
        return PEFTSIM_ERR_CONFIG;
    }
    std::ostringstream err;
    return finish(peftsim::cmd_run(config->cfg, jobs, std::cout, err), err);
}

int peftsim_sweep(const peftsim_config* config, const char* axis, size_t jobs) {
    if (!config || !axis) {
        set_error("sweep: null config handle or axis");
        return PEFTSIM_ERR_CONFIG;
    }
    std::ostringstream err;
    return finish(peftsim::cmd_sweep(config->cfg, axis, jobs, std::cout, err), err);
}

int peftsim_spectra(const peftsim_config* config) {
    if (!config) {
        set_error("spectra: null config handle");
        return PEFTSIM_ERR_CONFIG;
    }
    std::ostringstream err;
    return finish(peftsim::cmd_spectra(config->cfg, std::cout, err), err);
}

int peftsim_verify(void) {
    std::ostringstream err;
    return finish(peftsim::cmd_verify(std::cout, err), err);
}

const char* peftsim_last_error(void) { return g_last_error.c_str(); }

}  // extern "C"
