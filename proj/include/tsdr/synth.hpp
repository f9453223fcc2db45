#pragma once

// Student simulator with a controllable missing-not-at-random observation
// policy. Questions arrive Zipf-distributed; each concept carries a mastery
// level that rises with correct answers; the skip policy censors the log at
// the extremes of the success probability while the middle band always
// survives, so the observed data under-represents exactly the easy and hard
// cells. gamma = 0 reproduces a fully observed log.

#include <cstdint>
#include <vector>

#include "tsdr/data.hpp"

namespace tsdr::synth {

struct SynthConfig {
    std::size_t n_students = 1000;
    std::size_t n_questions = 200;
    std::size_t n_concepts = 20;
    std::size_t steps_per_student = 50;
    double zipf_alpha = 0.8;
    double learn_rate = 0.55;
    double guess = 0.1;
    double slip = 0.05;
    double gamma = 0.0;              // skip-policy strength, [0, 1)
    double mastery_init_lo = 0.0;
    double mastery_init_hi = 0.3;
    bool update_mastery_on_skip = false;
    std::uint64_t seed = 42;

    void validate() const; // throws std::invalid_argument on bad values
};

// Zipf weights over n items: entry k proportional to 1/(k+1)^alpha,
// normalized to sum 1. Throws on n = 0.
std::vector<double> zipf_probs(std::size_t n, double alpha);

// success probability under guess/slip: m*(1-slip) + (1-m)*guess
double success_prob(double mastery, double guess, double slip);

// mastery after answering: correct -> m + learn_rate*(1-m), wrong -> m
double mastery_update(double mastery, int response, double learn_rate);

// skip probability: gamma*(1-p) below 0.25, gamma*p above 0.75, else 0
double mnar_skip_prob(double p, double gamma);

struct GenerationCounts {
    std::size_t n_events = 0;     // total simulated steps
    std::size_t n_observed = 0;
    std::size_t n_skipped = 0;
    std::size_t n_sequences = 0;
    std::size_t n_mid_band_skips = 0; // skips with p in [0.25, 0.75]; must stay 0
};

// Deterministic in config.seed; each student draws from an independent
// substream, so per-student output is invariant to the set of other students.
data::Dataset generate_dataset(const SynthConfig& cfg, GenerationCounts* counts = nullptr);

} // namespace tsdr::synth
