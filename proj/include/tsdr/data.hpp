#pragma once

// Interaction logs and their derived views.
//
// A sequence may carry the full simulated timeline (skipped steps present
// with observed = 0 and a counterfactual response) or only the surviving log
// entries (real data). Training always consumes the observed view; the
// counterfactual grids keep full-timeline ground truth for evaluation.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace tsdr::data {

struct Interaction {
    std::string student_id;
    int t = 0;               // 1-based step within the student's timeline
    int concept_id = 0;
    long long question_id = 0;
    int response = 0;        // 0/1; counterfactual when observed = 0
    int observed = 1;        // 0/1
    std::optional<double> true_p; // simulator success probability, if known
};

struct StudentSequence {
    std::string student_id;
    std::vector<Interaction> steps; // ordered by t, strictly increasing

    std::size_t size() const { return steps.size(); }
    std::size_t observed_count() const;
    // new sequence keeping only observed steps, t reindexed from 1
    StudentSequence observed_view() const;
};

// Ground truth for every (step, concept) cell of one student's timeline.
// Row index r (0-based) targets timeline step r + 2: row r holds, for each
// concept, the success probability and a sampled counterfactual response at
// the moment step r + 2 happened. A timeline of T steps has T - 1 rows.
struct CounterfactualGrid {
    std::string student_id;
    std::size_t n_concepts = 0;
    std::vector<std::vector<double>> true_p;
    std::vector<std::vector<int>> response;
};

// Ground-truth observation propensity per cell, same row convention.
struct PropensityGrid {
    std::string student_id;
    std::size_t n_concepts = 0;
    std::vector<std::vector<double>> p;
};

struct Dataset {
    std::vector<StudentSequence> sequences;
    std::vector<CounterfactualGrid> grids;        // empty for real data
    std::vector<PropensityGrid> propensities;     // empty for real data
    std::size_t n_concepts = 0;
    std::size_t n_questions = 0;

    bool has_ground_truth() const { return !grids.empty(); }
};

// --- line-delimited JSON files ---------------------------------------------

// One record per line. Malformed lines, non-monotone t, or duplicate
// (student, t) raise std::runtime_error naming the offending line number.
std::vector<StudentSequence> load_interactions(const std::string& path);
void save_interactions(const std::string& path,
                       const std::vector<StudentSequence>& seqs);

std::vector<CounterfactualGrid> load_grids(const std::string& path);
void save_grids(const std::string& path, const std::vector<CounterfactualGrid>& grids);

std::vector<PropensityGrid> load_propensities(const std::string& path);
void save_propensities(const std::string& path,
                       const std::vector<PropensityGrid>& grids);

// Dataset directory layout: interactions.jsonl [+ grid.jsonl,
// propensity.jsonl, manifest.json]. n_concepts/n_questions come from the
// manifest when present, otherwise from the data.
Dataset load_dataset(const std::string& dir);

// --- sequence transforms -----------------------------------------------------

// keep the latest max_len steps, reindex t from 1
void truncate_sequences(std::vector<StudentSequence>& seqs, std::size_t max_len);

// drop sequences shorter than min_len; returns how many were dropped
std::size_t filter_min_length(std::vector<StudentSequence>& seqs, std::size_t min_len);

// --- splits ------------------------------------------------------------------

struct FoldSplit {
    int fold = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;
};

// Student-stratified K-fold with a validation share carved from the
// non-test students. Deterministic in (ids, n_folds, val_frac, seed);
// every student lands in exactly one of train/val/test.
FoldSplit split_students(const std::vector<std::string>& student_ids, int n_folds,
                         int fold, double val_frac, std::uint64_t seed);

std::vector<std::string> student_ids(const std::vector<StudentSequence>& seqs);

// subset of sequences whose id is in ids, preserving sequence order
std::vector<const StudentSequence*> select_by_id(
    const std::vector<StudentSequence>& seqs, const std::vector<std::string>& ids);

} // namespace tsdr::data
