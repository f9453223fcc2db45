#pragma once

// Flat key=value run configuration. One file (or nothing) plus command-line
// overrides resolves to the full parameter set; the canonical sorted form is
// hashed so artifacts can state exactly which configuration produced them.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tsdr/synth.hpp"
#include "tsdr/training.hpp"

namespace tsdr::config {

inline constexpr const char* kVersion = "0.1.0";

using KvMap = std::map<std::string, std::string>;

// '#' starts a comment; blank lines are skipped; each other line is key=value
KvMap load_kv_file(const std::string& path);

// tokens of the form key=value, later tokens win
void apply_overrides(KvMap& kv, const std::vector<std::string>& overrides);

struct RunConfig {
    synth::SynthConfig synth;
    train::TrainConfig train_cfg;

    int n_folds = 5;
    int fold = 0;
    double val_frac = 0.1;

    double variance_hypotheses = 1.0;
    double variance_eta = 0.05;

    // one seed drives generation, splitting and training
    std::uint64_t seed() const { return synth.seed; }
    void set_seed(std::uint64_t s) {
        synth.seed = s;
        train_cfg.seed = s;
    }

    void validate() const;

    // unknown keys are a hard error
    static RunConfig from_kv(const KvMap& kv);
    KvMap to_kv() const; // every key, defaults included

    std::string canonical() const; // sorted key=value lines
    std::string hash() const;      // 16 hex chars over canonical()
};

std::uint64_t fnv1a64(const std::string& s);
std::string fnv1a64_hex(const std::string& s);

// TSDR_OUT_ROOT, or "runs" when unset
std::string resolve_out_root();

// UTC wall-clock, ISO 8601
std::string timestamp_utc();

} // namespace tsdr::config
