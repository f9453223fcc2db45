#pragma once

// One function per CLI subcommand. Every run writes into its own directory
// under the output root, named by a deterministic id (no timestamps), and
// carries a manifest recording the resolved configuration, inputs, outputs
// and timing. Rerunning a command with the same configuration reproduces
// every output byte for byte; only manifest timestamps move.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tsdr/config.hpp"
#include "tsdr/synth.hpp"
#include "tsdr/theory.hpp"
#include "tsdr/training.hpp"

namespace tsdr::pipeline {

// --- run ids -------------------------------------------------------------------

// data-g<gamma>-s<seed>-<hash8 of the generator keys>
std::string synth_run_id(const config::RunConfig& cfg);
// run-<mode>-g<gamma>-l<lambda>-s<seed>-<hash8 of the full config>
std::string train_run_id(const config::RunConfig& cfg);

// --- synth -----------------------------------------------------------------------

struct SynthOutput {
    std::string dir;
    synth::GenerationCounts counts;
};

SynthOutput run_synth(const config::RunConfig& cfg, const std::string& out_root,
                      std::ostream* log);

// --- train -----------------------------------------------------------------------

struct TrainOutput {
    std::string dir;
    std::string run_id;
    double best_val_auc = 0.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
};

// The generator keys of the effective config (all but the seed) come from the
// dataset's manifest when one is present, so the run id and downstream eval
// rows describe the data actually trained on.
TrainOutput run_train(const config::RunConfig& cfg, const std::string& dataset_dir,
                      const std::string& out_root, std::ostream* log);

// --- eval ------------------------------------------------------------------------

struct EvalRow {
    std::string run_id;
    std::string mode;
    double gamma = 0.0;
    double lambda = 0.0;
    std::uint64_t seed = 0;
    std::string regime; // "observed" | "counterfactual"
    double auc = 0.0;
    double acc = 0.0;
    double rmse = 0.0;
    std::optional<double> true_risk, naive_risk, dr_risk, bias_bound;
};

std::string csv_header();
std::string csv_line(const EvalRow& row);

// regime: "observed", "counterfactual" or "both"; cohort: "test", "val",
// "train" or "all". Writes eval.json + eval-manifest.json into the
// checkpoint directory and returns the rows.
std::vector<EvalRow> run_eval(const std::string& checkpoint_dir,
                              const std::string& dataset_dir, const std::string& regime,
                              const std::string& cohort, std::ostream* log);

// --- sweep -----------------------------------------------------------------------

struct SweepOutput {
    std::string dir;
    std::string csv_path;
    std::vector<EvalRow> rows; // per-run rows only (aggregates are in the CSV)
};

// axis: "gamma" or "lambda". Trains naive and tsdr per (value, seed) over
// shared datasets, evaluates both regimes, and writes per-run rows plus
// mean/std aggregate rows.
SweepOutput run_sweep(const std::string& axis, const std::vector<double>& values,
                      const std::vector<std::uint64_t>& seeds,
                      const config::RunConfig& base, const std::string& out_root,
                      std::ostream* log);

// --- verify ----------------------------------------------------------------------

struct VerifyOptions {
    std::uint64_t seed = 42;
    std::vector<std::string> only; // subset of {"unbiasedness","bias-bound","path-length","naive-bias"}
    bool inject_misspecified = false; // adds a row that must fail (exit-path check)
    std::size_t unbias_trials = 100000;
    std::size_t bias_worlds = 1000;
    std::size_t path_trajectories = 1000;
    std::size_t path_dim = 64;
};

struct VerifyOutput {
    std::string dir;
    theory::Report report;
};

VerifyOutput run_verify(const VerifyOptions& opt, const std::string& out_root,
                        std::ostream* log);

// --- report ----------------------------------------------------------------------

// collects every eval.json under <out_root> into one CSV
struct ReportOutput {
    std::string csv_path;
    std::size_t n_rows = 0;
};

ReportOutput run_report(const std::string& out_root, std::ostream* log);

} // namespace tsdr::pipeline
