#include "tsdr/evaluate.hpp"

#include <stdexcept>
#include <unordered_map>

#include "tsdr/metrics.hpp"
#include "tsdr/training.hpp"

namespace tsdr::eval {

RegimeMetrics eval_observed(const models::SeqModel& backbone,
                            const std::vector<const data::StudentSequence*>& seqs,
                            std::size_t batch_size) {
    const train::PooledPreds preds = train::predict_observed(backbone, seqs, batch_size);
    if (preds.labels.empty())
        throw std::invalid_argument("eval_observed: nothing to score");
    RegimeMetrics m;
    m.n = preds.labels.size();
    m.auc = metrics::auc(preds.labels, preds.scores);
    m.acc = metrics::accuracy(preds.labels, preds.scores);
    m.rmse = metrics::rmse(preds.labels, preds.scores);
    return m;
}

CounterfactualResult eval_counterfactual(const data::Dataset& ds,
                                         const std::vector<std::string>& ids,
                                         const models::SeqModel& backbone,
                                         const models::SeqModel* propensity,
                                         const models::SeqModel* imputation,
                                         double hypothesis_count, double eta) {
    if (ds.grids.empty())
        throw std::invalid_argument("eval_counterfactual: dataset has no ground-truth grid");
    if ((propensity == nullptr) != (imputation == nullptr))
        throw std::invalid_argument(
            "eval_counterfactual: propensity and imputation must come together");

    std::unordered_map<std::string, const data::CounterfactualGrid*> grid_of;
    for (const data::CounterfactualGrid& g : ds.grids) grid_of[g.student_id] = &g;
    std::unordered_map<std::string, const data::PropensityGrid*> prop_of;
    for (const data::PropensityGrid& g : ds.propensities) prop_of[g.student_id] = &g;

    std::vector<const data::StudentSequence*> chosen;
    if (ids.empty()) {
        for (const data::StudentSequence& s : ds.sequences) chosen.push_back(&s);
    } else {
        chosen = data::select_by_id(ds.sequences, ids);
        if (chosen.size() != ids.size())
            throw std::invalid_argument("eval_counterfactual: unknown student id in cohort");
    }
    if (chosen.empty()) throw std::invalid_argument("eval_counterfactual: empty cohort");

    const std::size_t C = ds.n_concepts;
    std::size_t total_rows = 0;
    for (const data::StudentSequence* s : chosen) {
        if (s->size() < 2)
            throw std::invalid_argument("eval_counterfactual: timeline shorter than 2 steps");
        total_rows += s->size() - 1;
    }

    const bool with_dr = propensity != nullptr;
    Matrix e(total_rows, C), o(total_rows, C);
    Matrix e_hat(with_dr ? total_rows : 0, with_dr ? C : 0);
    Matrix p_hat(with_dr ? total_rows : 0, with_dr ? C : 0);
    const bool with_p = !ds.propensities.empty();
    Matrix p(with_p ? total_rows : 0, with_p ? C : 0);

    CounterfactualResult res;
    std::vector<int> labels;
    std::vector<double> scores;
    labels.reserve(total_rows * C);
    scores.reserve(total_rows * C);

    std::size_t row0 = 0;
    for (const data::StudentSequence* s : chosen) {
        const auto git = grid_of.find(s->student_id);
        if (git == grid_of.end())
            throw std::invalid_argument("eval_counterfactual: no grid for student " +
                                        s->student_id);
        const data::CounterfactualGrid& grid = *git->second;
        const std::size_t rows = s->size() - 1;
        if (grid.response.size() != rows || grid.n_concepts != C)
            throw std::invalid_argument("eval_counterfactual: grid shape mismatch for " +
                                        s->student_id);

        const auto bb = backbone.counterfactual_rows(*s);
        std::vector<std::vector<double>> pr, ir;
        if (with_dr) {
            pr = propensity->counterfactual_rows(*s);
            ir = imputation->counterfactual_rows(*s);
        }
        const data::PropensityGrid* pg = nullptr;
        if (with_p) {
            const auto pit = prop_of.find(s->student_id);
            if (pit == prop_of.end())
                throw std::invalid_argument(
                    "eval_counterfactual: no propensity grid for student " + s->student_id);
            pg = pit->second;
            if (pg->p.size() != rows || pg->n_concepts != C)
                throw std::invalid_argument(
                    "eval_counterfactual: propensity grid shape mismatch for " +
                    s->student_id);
        }

        for (std::size_t r = 0; r < rows; ++r) {
            const data::Interaction& target = s->steps[r + 1];
            for (std::size_t c = 0; c < C; ++c) {
                const int resp = grid.response[r][c];
                const double prob = bb[r][c];
                e.at(row0 + r, c) = est::bce_error(resp, prob);
                labels.push_back(resp);
                scores.push_back(prob);
                const bool observed_cell =
                    target.observed == 1 &&
                    static_cast<std::size_t>(target.concept_id) == c;
                o.at(row0 + r, c) = observed_cell ? 1.0 : 0.0;
                if (with_dr) {
                    p_hat.at(row0 + r, c) = pr[r][c];
                    e_hat.at(row0 + r, c) = ir[r][c];
                }
                if (with_p) p.at(row0 + r, c) = pg->p[r][c];
            }
        }
        row0 += rows;
    }

    res.metrics.n = labels.size();
    res.metrics.auc = metrics::auc(labels, scores);
    res.metrics.acc = metrics::accuracy(labels, scores);
    res.metrics.rmse = metrics::rmse(labels, scores);
    res.true_risk = est::true_risk(e);
    res.naive_risk = est::naive_risk(e, o);

    if (with_dr) {
        est::RiskInputs in;
        in.e = std::move(e);
        in.e_hat = std::move(e_hat);
        in.p = std::move(p);
        in.p_hat = std::move(p_hat);
        in.o = std::move(o);
        res.dr = est::risk_report(in, hypothesis_count, eta);
    }
    return res;
}

} // namespace tsdr::eval
