#ifndef PEFTSIM_CAPI_H
#define PEFTSIM_CAPI_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Stable C boundary over the simulator core. All entry points return the
 * process-style codes below; failures leave a message retrievable with
 * peftsim_last_error() (thread-local, valid until the next call). */

#define PEFTSIM_OK 0
#define PEFTSIM_ERR_RUNTIME 1
#define PEFTSIM_ERR_CONFIG 2

typedef struct peftsim_config peftsim_config;

/* NULL on failure (unreadable file / invalid config). */
peftsim_config* peftsim_config_load(const char* path);
peftsim_config* peftsim_config_parse(const char* json_text);
void peftsim_config_free(peftsim_config* config);

int peftsim_config_set_output_dir(peftsim_config* config, const char* dir);
int peftsim_config_set_seeds(peftsim_config* config, const uint64_t* seeds, size_t n_seeds);

/* Federated runs, one report tree per seed. jobs = max worker threads. */
int peftsim_run(const peftsim_config* config, size_t jobs);

/* axis: "lr", "heads", "alpha", "budget_dist" or "init". */
int peftsim_sweep(const peftsim_config* config, const char* axis, size_t jobs);

/* Centralized / federated update-spectrum study. */
int peftsim_spectra(const peftsim_config* config);

/* Built-in invariant suite; PEFTSIM_OK iff every invariant holds. */
int peftsim_verify(void);

const char* peftsim_last_error(void);

#ifdef __cplusplus
}
#endif

#endif /* PEFTSIM_CAPI_H */
