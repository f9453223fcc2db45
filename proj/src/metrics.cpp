#include "tsdr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tsdr::metrics {

namespace {

void check_pairs(const std::vector<int>& labels, const std::vector<double>& scores,
                 const char* who) {
    if (labels.size() != scores.size())
        throw std::invalid_argument(std::string(who) + ": labels and scores differ in length");
    if (labels.empty())
        throw std::invalid_argument(std::string(who) + ": empty input");
    for (const int y : labels) {
        if (y != 0 && y != 1)
            throw std::invalid_argument(std::string(who) + ": labels must be 0 or 1");
    }
}

// average ranks (1-based), ties share the mean of their rank range;
// half-integer ranks are exact in doubles, so downstream sums stay exact
std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });

    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

} // namespace

double auc(const std::vector<int>& labels, const std::vector<double>& scores) {
    check_pairs(labels, scores, "auc");
    std::size_t n_pos = 0;
    for (const int y : labels) n_pos += static_cast<std::size_t>(y);
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("auc: undefined with a single class");

    const std::vector<double> ranks = average_ranks(scores);
    double rank_sum_pos = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == 1) rank_sum_pos += ranks[i];

    const double np = static_cast<double>(n_pos);
    const double nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

double accuracy(const std::vector<int>& labels, const std::vector<double>& scores) {
    check_pairs(labels, scores, "accuracy");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int pred = scores[i] >= 0.5 ? 1 : 0;
        if (pred == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double rmse(const std::vector<int>& labels, const std::vector<double>& scores) {
    check_pairs(labels, scores, "rmse");
    double acc = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double d = scores[i] - static_cast<double>(labels[i]);
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(labels.size()));
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size())
        throw std::invalid_argument("spearman: inputs differ in length");
    if (x.size() < 2)
        throw std::invalid_argument("spearman: need at least 2 points");

    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);
    const double n = static_cast<double>(x.size());

    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;

    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = rx[i] - mx;
        const double dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

} // namespace tsdr::metrics
