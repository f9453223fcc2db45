#pragma once

// Prediction-quality metrics over pooled (label, score) pairs.

#include <cstddef>
#include <vector>

namespace tsdr::metrics {

// Rank-based AUC (Mann-Whitney); ties between a positive and a negative
// score count 0.5. Throws std::invalid_argument if labels are all one class
// or the inputs are empty/mismatched.
double auc(const std::vector<int>& labels, const std::vector<double>& scores);

// Fraction of correct predictions at the 0.5 threshold (score >= 0.5 -> 1).
double accuracy(const std::vector<int>& labels, const std::vector<double>& scores);

// Root mean squared error of scores against 0/1 labels.
double rmse(const std::vector<int>& labels, const std::vector<double>& scores);

// Spearman rank correlation (average ranks on ties). Throws on size
// mismatch or fewer than 2 points; returns 0 when either side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

} // namespace tsdr::metrics
