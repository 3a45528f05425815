#pragma once

#include <iosfwd>
#include <string>

#include "peftsim/config.hpp"

namespace peftsim {

// Batch entry points behind the CLI. Exit codes: 0 success, 1 runtime or
// invariant failure, 2 config error. All diagnostics go to `err`.

// One federated run per seed; writes records.{csv,jsonl}, config.resolved
// and summary.json under <output_dir>/<strategy>/<seed>/ and prints one
// `strategy seed final_acc` line per seed.
int cmd_run(const ExperimentConfig& config, std::size_t jobs, std::ostream& out,
            std::ostream& err);

// Cross product of one axis (lr, heads, alpha, budget_dist or init) with
// the seed list; one report tree per cell plus a best-cell summary. The lr
// axis falls back to the standard grid when the config lists no values.
int cmd_sweep(const ExperimentConfig& config, const std::string& axis, std::size_t jobs,
              std::ostream& out, std::ostream& err);

// Update-spectrum study: centralized vs federated IID vs federated non-IID
// full fine-tuning to a common target accuracy; writes one spectrum file
// per regime and seed under <output_dir>/spectra/.
int cmd_spectra(const ExperimentConfig& config, std::ostream& out, std::ostream& err);

// Self-contained invariant suite on small instances; prints a pass/fail
// table and returns 0 iff every invariant holds.
int cmd_verify(std::ostream& out, std::ostream& err);

}  // namespace peftsim
