#pragma once

// Training loops and loss builders.
//
// Two modes share the data path:
//   naive - mean cross-entropy over logged interactions only
//   tsdr  - per mini-batch, three phases in order: update the imputation
//           model, update the propensity model, then update the backbone on
//           the doubly robust objective over the full (step x concept) grid.
//
// Phase isolation is structural: each phase builds its own tape, and the
// other models enter it only as constant grids, so cross-model gradients
// cannot exist by construction.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tsdr/data.hpp"
#include "tsdr/matrix.hpp"
#include "tsdr/models.hpp"
#include "tsdr/rng.hpp"
#include "tsdr/tape.hpp"

namespace tsdr::train {

struct TrainConfig {
    // sequence handling
    std::size_t max_len = 50;
    std::size_t min_len = 5;

    // optimization
    double lr = 0.001;
    std::size_t batch_size = 64;
    std::size_t max_epochs = 50;
    std::size_t patience = 15; // epochs without val AUC improvement
    std::uint64_t seed = 42;

    // model
    std::size_t dim = 64;
    double dropout = 0.05;
    double p_min = 0.05;

    // objective
    std::string mode = "tsdr";            // "tsdr" | "naive"
    double lambda = 0.5;                  // smoothness weight
    std::string ts_target = "imputation"; // "imputation" | "backbone" | "none"
    bool joint_learning = true;           // false: pre-train psi/omega, freeze
    std::size_t dr_concept_sample = 0;    // 0 = full concept grid
    bool prop_use_kt_state = false;       // condition propensity on backbone state

    void validate() const;
};

// --- prepared batches ----------------------------------------------------------

// Target grids for one batch of observed-view sequences. Row t of each grid
// pairs with prediction step t (predicting sequence step t+2): labels carry
// the next response at its concept's column, obs marks that single cell, and
// both are zero at padded rows.
struct PreparedBatch {
    models::SeqBatch seq;
    std::vector<Matrix> labels; // T-1 grids, B x C
    std::vector<Matrix> obs;    // T-1 grids, B x C, one 1 per real row
    double n_obs = 0.0;         // total observed cells
    double n_cells = 0.0;       // total real grid cells: sum_b (T_b - 1) * C
};

PreparedBatch prepare_batch(const std::vector<const data::StudentSequence*>& seqs,
                            std::size_t n_concepts);

// --- loss builders ---------------------------------------------------------------

struct LossBuild {
    ad::Value loss;
    models::SeqModel::Encoded enc;
};

// mean BCE over observed cells
LossBuild build_naive_loss(ad::Tape& tape, const models::SeqModel& backbone,
                           const PreparedBatch& b, rng::Rng* dropout_rng);

// (1/N) sum[ e_hat + (o/p_hat)(e - e_hat) ] with e_hat and w = o/p_hat given
// as constants; optional smoothness penalty on the backbone trajectory.
// col_weight rescales concept subsampling (empty = full grid).
LossBuild build_dr_loss(ad::Tape& tape, const models::SeqModel& backbone,
                        const PreparedBatch& b, const std::vector<Matrix>& e_hat,
                        const std::vector<Matrix>& w, double smooth_weight,
                        const std::vector<double>& col_weight, rng::Rng* dropout_rng);

// mean BCE of the raw sigmoid head against the observation grid, every real
// cell counted (unobserved cells are negatives)
LossBuild build_propensity_loss(ad::Tape& tape, const models::SeqModel& prop,
                                const PreparedBatch& b, rng::Rng* dropout_rng);

// same objective, but the head reads constant backbone states (only the
// propensity head parameters receive gradients)
LossBuild build_propensity_head_loss(ad::Tape& tape, const models::SeqModel& prop,
                                     const PreparedBatch& b,
                                     const std::vector<Matrix>& kt_states);

// inverse-propensity weighted squared error against constant error targets,
// plus lambda * smoothness on the imputation trajectory
LossBuild build_imputation_loss(ad::Tape& tape, const models::SeqModel& imp,
                                const PreparedBatch& b,
                                const std::vector<Matrix>& e_target,
                                const std::vector<Matrix>& w, double lambda,
                                rng::Rng* dropout_rng);

// mean over students of (1/(T_b-1)) sum_t ||h_t - h_{t-1}||^2, h_0 = initial
ad::Value smoothness_penalty(ad::Tape& tape, const models::SeqModel::Encoded& enc);

// --- constant-grid forwards (values only, no gradients) ---------------------------

// BCE of the backbone's predictions at observed cells, 0 elsewhere
std::vector<Matrix> forward_error_grids(const models::SeqModel& backbone,
                                        const PreparedBatch& b);

// clipped observation propensities over every cell (zero at padded rows)
std::vector<Matrix> forward_phat_grids(const models::SeqModel& prop,
                                       const PreparedBatch& b);
std::vector<Matrix> forward_phat_from_states(const models::SeqModel& prop,
                                             const PreparedBatch& b,
                                             const std::vector<Matrix>& kt_states);

// imputed errors over every cell (zero at padded rows)
std::vector<Matrix> forward_ehat_grids(const models::SeqModel& imp,
                                       const PreparedBatch& b);

// backbone hidden states as plain matrices (for prop_use_kt_state)
std::vector<Matrix> forward_state_grids(const models::SeqModel& backbone,
                                        const PreparedBatch& b);

// --- evaluation helpers ------------------------------------------------------------

struct PooledPreds {
    std::vector<int> labels;
    std::vector<double> scores;
};

// next-step predictions at logged cells, pooled across students
PooledPreds predict_observed(const models::SeqModel& m,
                             const std::vector<const data::StudentSequence*>& seqs,
                             std::size_t batch_size);

// mean squared trajectory step over an eval set (no dropout)
double mean_squared_step(const models::SeqModel& m,
                         const std::vector<const data::StudentSequence*>& seqs,
                         std::size_t batch_size);

// --- training ----------------------------------------------------------------------

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double loss_main = 0.0; // naive or DR objective, mean over batches
    double loss_imp = 0.0;
    double loss_prop = 0.0;
    double val_auc = 0.0;
    double val_acc = 0.0;
    double val_rmse = 0.0;
    bool is_best = false;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    void save_jsonl(const std::string& path, const std::string& run_id) const;
};

struct TrainResult {
    models::SeqModel backbone;
    std::optional<models::SeqModel> propensity;
    std::optional<models::SeqModel> imputation;
    TrainHistory history;
    double best_val_auc = 0.0;
    std::size_t best_epoch = 0;   // 1-based
    std::size_t skipped_batches = 0;
};

// Sequences must already be observed views (every step observed = 1),
// truncated and length-filtered. Deterministic in cfg.seed.
TrainResult train(const TrainConfig& cfg,
                  const std::vector<const data::StudentSequence*>& train_seqs,
                  const std::vector<const data::StudentSequence*>& val_seqs,
                  std::size_t n_concepts, std::ostream* log);

} // namespace tsdr::train
