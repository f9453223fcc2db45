#include "tsdr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "tsdr/rng.hpp"

namespace tsdr::synth {

void SynthConfig::validate() const {
    if (n_students == 0) throw std::invalid_argument("synth: n_students must be > 0");
    if (n_questions == 0) throw std::invalid_argument("synth: n_questions must be > 0");
    if (n_concepts == 0) throw std::invalid_argument("synth: n_concepts must be > 0");
    if (n_questions < n_concepts)
        throw std::invalid_argument("synth: need at least one question per concept");
    if (steps_per_student < 2)
        throw std::invalid_argument("synth: steps_per_student must be >= 2");
    if (!(zipf_alpha >= 0.0)) throw std::invalid_argument("synth: zipf_alpha must be >= 0");
    if (!(learn_rate >= 0.0 && learn_rate <= 1.0))
        throw std::invalid_argument("synth: learn_rate must be in [0,1]");
    if (!(guess >= 0.0 && guess < 1.0)) throw std::invalid_argument("synth: guess in [0,1)");
    if (!(slip >= 0.0 && slip < 1.0)) throw std::invalid_argument("synth: slip in [0,1)");
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw std::invalid_argument("synth: gamma must be in [0,1)");
    if (!(mastery_init_lo >= 0.0 && mastery_init_hi <= 1.0 &&
          mastery_init_lo <= mastery_init_hi))
        throw std::invalid_argument("synth: bad mastery init range");
}

std::vector<double> zipf_probs(std::size_t n, double alpha) {
    if (n == 0) throw std::invalid_argument("zipf_probs: n must be > 0");
    std::vector<double> w(n);
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        w[k] = 1.0 / std::pow(static_cast<double>(k + 1), alpha);
        total += w[k];
    }
    for (double& x : w) x /= total;
    return w;
}

double success_prob(double mastery, double guess, double slip) {
    return mastery * (1.0 - slip) + (1.0 - mastery) * guess;
}

double mastery_update(double mastery, int response, double learn_rate) {
    return response == 1 ? mastery + learn_rate * (1.0 - mastery) : mastery;
}

double mnar_skip_prob(double p, double gamma) {
    if (p < 0.25) return gamma * (1.0 - p);
    if (p > 0.75) return gamma * p;
    return 0.0;
}

namespace {

std::string student_name(std::size_t i) {
    std::string digits = std::to_string(i);
    if (digits.size() < 5) digits.insert(0, 5 - digits.size(), '0');
    return "s" + digits;
}

} // namespace

data::Dataset generate_dataset(const SynthConfig& cfg, GenerationCounts* counts) {
    cfg.validate();

    const std::vector<double> zipf = zipf_probs(cfg.n_questions, cfg.zipf_alpha);
    std::vector<double> zipf_cum(zipf.size());
    double running = 0.0;
    for (std::size_t i = 0; i < zipf.size(); ++i) {
        running += zipf[i];
        zipf_cum[i] = running;
    }
    zipf_cum.back() = 1.0; // guard against accumulated rounding

    // question q exercises concept q mod n_concepts; total Zipf mass per concept
    std::vector<double> concept_mass(cfg.n_concepts, 0.0);
    for (std::size_t q = 0; q < cfg.n_questions; ++q)
        concept_mass[q % cfg.n_concepts] += zipf[q];

    data::Dataset ds;
    ds.n_concepts = cfg.n_concepts;
    ds.n_questions = cfg.n_questions;
    GenerationCounts local;

    const std::size_t C = cfg.n_concepts;
    for (std::size_t s = 0; s < cfg.n_students; ++s) {
        rng::Rng rng = rng::Rng::substream(cfg.seed, s);
        const std::string sid = student_name(s);

        std::vector<double> mastery(C);
        for (std::size_t c = 0; c < C; ++c)
            mastery[c] = rng.uniform(cfg.mastery_init_lo, cfg.mastery_init_hi);

        data::StudentSequence seq;
        seq.student_id = sid;
        data::CounterfactualGrid grid;
        grid.student_id = sid;
        grid.n_concepts = C;
        data::PropensityGrid prop;
        prop.student_id = sid;
        prop.n_concepts = C;

        std::vector<double> p_all(C);
        std::vector<int> r_all(C);
        for (std::size_t t = 1; t <= cfg.steps_per_student; ++t) {
            const double u = rng.uniform01();
            const std::size_t q = static_cast<std::size_t>(
                std::upper_bound(zipf_cum.begin(), zipf_cum.end(), u) - zipf_cum.begin());
            const std::size_t c = q % C;

            // success probabilities and sampled outcomes for every concept at
            // this moment; the attempted concept's sample is the real response
            for (std::size_t cc = 0; cc < C; ++cc) {
                p_all[cc] = success_prob(mastery[cc], cfg.guess, cfg.slip);
                r_all[cc] = rng.bernoulli(p_all[cc]) ? 1 : 0;
            }
            const double p = p_all[c];
            const int r = r_all[c];

            const double p_skip = mnar_skip_prob(p, cfg.gamma);
            const bool skipped = rng.bernoulli(p_skip);

            if (t >= 2) {
                grid.true_p.push_back(p_all);
                grid.response.push_back(r_all);
                std::vector<double> prow(C);
                for (std::size_t cc = 0; cc < C; ++cc)
                    prow[cc] = concept_mass[cc] *
                               (1.0 - mnar_skip_prob(p_all[cc], cfg.gamma));
                prop.p.push_back(std::move(prow));
            }

            data::Interaction it;
            it.student_id = sid;
            it.t = static_cast<int>(t);
            it.concept_id = static_cast<int>(c);
            it.question_id = static_cast<long long>(q);
            it.response = r;
            it.observed = skipped ? 0 : 1;
            it.true_p = p;
            seq.steps.push_back(std::move(it));

            ++local.n_events;
            if (skipped) {
                ++local.n_skipped;
                if (p >= 0.25 && p <= 0.75) ++local.n_mid_band_skips;
            } else {
                ++local.n_observed;
            }

            if (!skipped || cfg.update_mastery_on_skip)
                mastery[c] = mastery_update(mastery[c], r, cfg.learn_rate);
        }

        ds.sequences.push_back(std::move(seq));
        ds.grids.push_back(std::move(grid));
        ds.propensities.push_back(std::move(prop));
        ++local.n_sequences;
    }

    if (counts != nullptr) *counts = local;
    return ds;
}

} // namespace tsdr::synth
