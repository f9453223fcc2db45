#pragma once

// Recurrent sequence models. One architecture serves three roles that differ
// only in their output head:
//   backbone    - sigmoid head, predicts next-step success per concept
//   propensity  - sigmoid head clipped below at p_min, predicts observation
//   imputation  - softplus head, predicts a nonnegative error per concept
//
// Input steps are (concept, response) pairs embedded through a 2C x d table;
// a single gated cell (update + reset gates) carries the state; a d x C head
// scores every concept at once.
//
// Batches hold equal-padded sequences; padded steps are masked so they leave
// the state untouched and contribute nothing to any loss.

#include <cstdint>
#include <string>
#include <vector>

#include "tsdr/adam.hpp"
#include "tsdr/data.hpp"
#include "tsdr/matrix.hpp"
#include "tsdr/rng.hpp"
#include "tsdr/tape.hpp"

namespace tsdr::models {

struct ModelConfig {
    std::size_t n_concepts = 0;
    std::size_t dim = 64;
    double dropout = 0.05; // on the embedding, training mode only
    double p_min = 0.05;   // propensity clip floor

    void validate() const;
};

enum class Head { Sigmoid, SigmoidClipped, Softplus };

// --- batched input -----------------------------------------------------------

struct SeqBatch {
    std::size_t B = 0;
    std::size_t T = 0; // padded length, >= 2
    // step-major, B entries per step
    std::vector<std::vector<std::uint32_t>> embed_idx; // concept + response*C
    std::vector<std::vector<double>> valid;            // 1 real, 0 padding
    std::vector<std::size_t> lengths;                  // true length per student
};

// sequences must be nonempty and at least one must have length >= 2
SeqBatch build_seq_batch(const std::vector<const data::StudentSequence*>& seqs,
                         std::size_t n_concepts);

// --- the model ---------------------------------------------------------------

class SeqModel {
public:
    // init draws from a substream of init_seed; uniform [-1/sqrt(d), 1/sqrt(d)]
    SeqModel(ModelConfig cfg, Head head, std::uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    Head head() const { return head_; }
    ad::ParamStore& params() { return params_; }
    const ad::ParamStore& params() const { return params_; }

    struct Encoded {
        std::vector<ad::Value> leaves; // one per parameter, store order
        std::vector<ad::Value> h;      // h[i] = state after step i+1, i in [0, T-2]
        const SeqBatch* batch = nullptr;
    };

    // trainable registers parameters as gradient leaves; dropout_rng enables
    // embedding dropout (training mode) and must be null in eval mode
    Encoded encode(ad::Tape& tape, const SeqBatch& batch, bool trainable,
                   rng::Rng* dropout_rng) const;

    // head output per encoded state: grid[i] is (B x C), predicting step i+2
    std::vector<ad::Value> predict(ad::Tape& tape, const Encoded& enc) const;

    // raw pre-head scores, same layout as predict
    std::vector<ad::Value> predict_logits(ad::Tape& tape, const Encoded& enc) const;

    // encoder bypass: states come in as constants (one per prediction step),
    // so only the head parameters can receive gradients
    Encoded head_only(ad::Tape& tape, const SeqBatch& batch,
                      const std::vector<Matrix>& states, bool trainable) const;

    // per-student full-timeline predictions for counterfactual evaluation:
    // the state advances only on observed steps; row r predicts step r+2.
    // Returns (T-1) rows of C probabilities.
    std::vector<std::vector<double>> counterfactual_rows(
        const data::StudentSequence& timeline) const;

    // gradient pointers for Adam, store order (null for untouched leaves)
    static std::vector<const Matrix*> grads_of(ad::Tape& tape, const Encoded& enc);

private:
    ad::Value apply_head(ad::Tape& tape, ad::Value logits) const;

    ModelConfig cfg_;
    Head head_;
    ad::ParamStore params_;

    // parameter indices
    std::size_t embed_, wz_, uz_, bz_, wr_, ur_, br_, wn_, un_, bn_, wout_, bout_;
};

// --- checkpoints -------------------------------------------------------------

struct CheckpointEntry {
    std::string name; // e.g. "backbone"
    const ad::ParamStore* store = nullptr;
};

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& models,
                     const std::string& config_hash, const std::string& meta_json);

// Loads parameters into the given stores; missing model, missing parameter,
// or shape mismatch is a hard error. Returns the stored meta_json.
std::string load_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, ad::ParamStore*>>& models,
                            std::string* config_hash = nullptr);

} // namespace tsdr::models
