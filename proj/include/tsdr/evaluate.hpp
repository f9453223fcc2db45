#pragma once

// Model evaluation over the two regimes.
//
// observed       - next-step prediction quality on logged interactions only
// counterfactual - full (step x concept) grid against simulator ground truth,
//                  walking each student's timeline and advancing the model
//                  state only on observed steps
//
// The counterfactual regime also produces the risk-estimator comparison:
// true risk over all cells, the naive observed-only average, and (when the
// auxiliary models are present) the doubly robust estimate with its bounds.

#include <cstddef>
#include <optional>
#include <vector>

#include "tsdr/data.hpp"
#include "tsdr/estimators.hpp"
#include "tsdr/models.hpp"

namespace tsdr::eval {

struct RegimeMetrics {
    double auc = 0.0;
    double acc = 0.0;
    double rmse = 0.0;
    std::size_t n = 0; // scored cells
};

// observed-view sequences in, pooled next-step metrics out
RegimeMetrics eval_observed(const models::SeqModel& backbone,
                            const std::vector<const data::StudentSequence*>& seqs,
                            std::size_t batch_size);

struct CounterfactualResult {
    RegimeMetrics metrics;   // over every grid cell, labels = sampled responses
    double true_risk = 0.0;  // mean error over all cells
    double naive_risk = 0.0; // mean error over observed cells
    // present when propensity + imputation models were supplied
    std::optional<est::RiskReport> dr;
};

// timelines must match the dataset's grids; students restricted to ids
// (empty = all). hypothesis_count/eta feed the concentration term.
CounterfactualResult eval_counterfactual(const data::Dataset& ds,
                                         const std::vector<std::string>& ids,
                                         const models::SeqModel& backbone,
                                         const models::SeqModel* propensity,
                                         const models::SeqModel* imputation,
                                         double hypothesis_count = 1.0,
                                         double eta = 0.05);

} // namespace tsdr::eval
