// test_models.cpp
// Sequence model contracts: batch building, init determinism, head behavior
// (including the propensity clip floor), causal counterfactual rollout, and
// checkpoint round trips.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <unistd.h>
#include <vector>

#include "tsdr/evaluate.hpp"
#include "tsdr/models.hpp"
#include "tsdr/synth.hpp"

using namespace tsdr;
namespace fs = std::filesystem;

namespace {

models::ModelConfig tiny_cfg(std::size_t concepts = 4, std::size_t dim = 8) {
    models::ModelConfig mc;
    mc.n_concepts = concepts;
    mc.dim = dim;
    mc.dropout = 0.0;
    mc.p_min = 0.05;
    return mc;
}

data::StudentSequence make_seq(const std::string& id,
                               const std::vector<std::pair<int, int>>& steps,
                               const std::vector<int>& observed = {}) {
    data::StudentSequence s;
    s.student_id = id;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        data::Interaction it;
        it.student_id = id;
        it.t = static_cast<int>(i + 1);
        it.concept_id = steps[i].first;
        it.question_id = static_cast<long long>(i);
        it.response = steps[i].second;
        it.observed = observed.empty() ? 1 : observed[i];
        s.steps.push_back(it);
    }
    return s;
}

void zero_params(models::SeqModel& m) {
    for (std::size_t i = 0; i < m.params().size(); ++i)
        for (double& x : m.params()[i].data) x = 0.0;
}

} // namespace

TEST_CASE("batch building: embedding indices, padding, lengths") {
    const auto a = make_seq("a", {{0, 1}, {2, 0}, {1, 1}});
    const auto b = make_seq("b", {{3, 0}, {3, 1}});
    const models::SeqBatch batch = models::build_seq_batch({&a, &b}, 4);

    CHECK(batch.B == 2);
    CHECK(batch.T == 3);
    CHECK(batch.lengths == std::vector<std::size_t>{3, 2});

    // index = concept + response * C
    CHECK(batch.embed_idx[0][0] == 0 + 1 * 4);
    CHECK(batch.embed_idx[1][0] == 2 + 0 * 4);
    CHECK(batch.embed_idx[2][0] == 1 + 1 * 4);
    CHECK(batch.embed_idx[0][1] == 3 + 0 * 4);
    CHECK(batch.embed_idx[1][1] == 3 + 1 * 4);

    CHECK(batch.valid[0] == std::vector<double>{1.0, 1.0});
    CHECK(batch.valid[1] == std::vector<double>{1.0, 1.0});
    CHECK(batch.valid[2] == std::vector<double>{1.0, 0.0});

    CHECK_THROWS_AS(models::build_seq_batch({}, 4), std::invalid_argument);
    const auto single = make_seq("c", {{0, 1}});
    CHECK_THROWS_AS(models::build_seq_batch({&single}, 4), std::invalid_argument);
}

TEST_CASE("initialization is deterministic in the seed") {
    const auto cfg = tiny_cfg();
    models::SeqModel m1(cfg, models::Head::Sigmoid, 5);
    models::SeqModel m2(cfg, models::Head::Sigmoid, 5);
    models::SeqModel m3(cfg, models::Head::Sigmoid, 6);

    REQUIRE(m1.params().size() == m2.params().size());
    bool any_diff = false;
    for (std::size_t i = 0; i < m1.params().size(); ++i) {
        CHECK(m1.params()[i].data == m2.params()[i].data);
        if (m1.params()[i].data != m3.params()[i].data) any_diff = true;
    }
    CHECK(any_diff);

    // the documented envelope: uniform within +-1/sqrt(dim)
    const double lim = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
    for (std::size_t i = 0; i < m1.params().size(); ++i)
        for (double x : m1.params()[i].data) {
            CHECK(x <= lim);
            CHECK(x >= -lim);
        }
}

TEST_CASE("prediction grids have one row per transition, probabilities in (0,1)") {
    const auto a = make_seq("a", {{0, 1}, {2, 0}, {1, 1}, {3, 0}});
    const auto b = make_seq("b", {{1, 0}, {0, 1}});
    const models::SeqBatch batch = models::build_seq_batch({&a, &b}, 4);

    models::SeqModel m(tiny_cfg(), models::Head::Sigmoid, 1);
    ad::Tape tape;
    const auto enc = m.encode(tape, batch, false, nullptr);
    CHECK(enc.h.size() == batch.T - 1);
    const auto grids = m.predict(tape, enc);
    REQUIRE(grids.size() == batch.T - 1);
    for (const auto& g : grids) {
        const Matrix& v = g.val();
        CHECK(v.rows == 2);
        CHECK(v.cols == 4);
        for (double x : v.data) {
            CHECK(x > 0.0);
            CHECK(x < 1.0);
        }
    }
}

TEST_CASE("clipped head floors the propensity at p_min") {
    const auto a = make_seq("a", {{0, 1}, {1, 0}, {2, 1}});
    const models::SeqBatch batch = models::build_seq_batch({&a}, 4);

    models::SeqModel prop(tiny_cfg(), models::Head::SigmoidClipped, 2);
    zero_params(prop);
    // output bias very negative: raw sigmoid ~ 2e-9, far below the floor
    prop.params()[prop.params().index_of("head.b")] = Matrix(1, 4, -20.0);

    ad::Tape tape;
    const auto grids = prop.predict(tape, prop.encode(tape, batch, false, nullptr));
    for (const auto& g : grids)
        for (double x : g.val().data) CHECK(x == 0.05);

    // and the clip is inactive for moderate logits
    prop.params()[prop.params().index_of("head.b")] = Matrix(1, 4, 0.5);
    ad::Tape tape2;
    const auto grids2 = prop.predict(tape2, prop.encode(tape2, batch, false, nullptr));
    for (const auto& g : grids2)
        for (double x : g.val().data)
            CHECK(x == doctest::Approx(1.0 / (1.0 + std::exp(-0.5))).epsilon(1e-12));
}

TEST_CASE("softplus head outputs are nonnegative") {
    const auto a = make_seq("a", {{0, 1}, {1, 0}, {2, 1}});
    const models::SeqBatch batch = models::build_seq_batch({&a}, 4);
    models::SeqModel imp(tiny_cfg(), models::Head::Softplus, 3);
    zero_params(imp);
    imp.params()[imp.params().index_of("head.b")] = Matrix(1, 4, -20.0);
    ad::Tape tape;
    const auto grids = imp.predict(tape, imp.encode(tape, batch, false, nullptr));
    for (const auto& g : grids)
        for (double x : g.val().data) {
            CHECK(x >= 0.0);
            CHECK(x < 1e-6);
        }
}

TEST_CASE("counterfactual rollout is causal and ignores skipped steps") {
    models::SeqModel m(tiny_cfg(5, 8), models::Head::Sigmoid, 9);

    auto timeline = make_seq(
        "a", {{0, 1}, {1, 0}, {2, 1}, {3, 1}, {4, 0}}, {1, 1, 0, 1, 1});
    const auto rows = m.counterfactual_rows(timeline);
    REQUIRE(rows.size() == timeline.steps.size() - 1);
    for (const auto& row : rows) {
        REQUIRE(row.size() == 5);
        for (double p : row) {
            CHECK(p > 0.0);
            CHECK(p < 1.0);
        }
    }

    // flipping a later response must not change earlier rows
    auto later = timeline;
    later.steps[3].response ^= 1;
    const auto rows2 = m.counterfactual_rows(later);
    CHECK(rows2[0] == rows[0]);
    CHECK(rows2[1] == rows[1]);
    CHECK(rows2[2] == rows[2]); // row 2 predicts step 4, built before it
    CHECK(rows2[3] != rows[3]);

    // flipping an unobserved response changes nothing: the state never saw it
    auto unobserved = timeline;
    unobserved.steps[2].response ^= 1;
    const auto rows3 = m.counterfactual_rows(unobserved);
    for (std::size_t r = 0; r < rows.size(); ++r) CHECK(rows3[r] == rows[r]);
}

TEST_CASE("untrained model scores chance-level AUC on the full grid") {
    synth::SynthConfig sc;
    sc.n_students = 100;
    sc.n_questions = 40;
    sc.n_concepts = 8;
    sc.steps_per_student = 30;
    sc.gamma = 0.5;
    sc.seed = 3;
    const data::Dataset ds = synth::generate_dataset(sc);

    models::SeqModel m(tiny_cfg(8, 16), models::Head::Sigmoid, 77);
    const auto res =
        eval::eval_counterfactual(ds, data::student_ids(ds.sequences), m, nullptr, nullptr);
    CHECK(res.metrics.auc == doctest::Approx(0.5).epsilon(0.04));
    CHECK(res.metrics.auc > 0.48);
    CHECK(res.metrics.auc < 0.52);
}

TEST_CASE("checkpoints round-trip bit for bit") {
    const fs::path path = fs::temp_directory_path() /
                          ("tsdr_ckpt_" + std::to_string(::getpid()) + ".json");

    const auto cfg = tiny_cfg();
    models::SeqModel back(cfg, models::Head::Sigmoid, 1);
    models::SeqModel prop(cfg, models::Head::SigmoidClipped, 2);

    models::save_checkpoint(path.string(),
                            {{"backbone", &back.params()}, {"propensity", &prop.params()}},
                            "deadbeef00000000", R"({"note":"x"})");

    models::SeqModel back2(cfg, models::Head::Sigmoid, 99);
    models::SeqModel prop2(cfg, models::Head::SigmoidClipped, 98);
    std::string hash;
    const std::string meta = models::load_checkpoint(
        path.string(), {{"backbone", &back2.params()}, {"propensity", &prop2.params()}},
        &hash);

    CHECK(hash == "deadbeef00000000");
    CHECK(meta.find("note") != std::string::npos);
    for (std::size_t i = 0; i < back.params().size(); ++i)
        CHECK(back.params()[i].data == back2.params()[i].data);
    for (std::size_t i = 0; i < prop.params().size(); ++i)
        CHECK(prop.params()[i].data == prop2.params()[i].data);

    // asking for a model the file does not hold is a hard error
    models::SeqModel imp(cfg, models::Head::Softplus, 3);
    CHECK_THROWS_AS(
        models::load_checkpoint(path.string(), {{"imputation", &imp.params()}}),
        std::runtime_error);

    // shape mismatch is a hard error
    models::SeqModel wide(tiny_cfg(4, 16), models::Head::Sigmoid, 1);
    CHECK_THROWS_AS(
        models::load_checkpoint(path.string(), {{"backbone", &wide.params()}}),
        std::runtime_error);

    fs::remove(path);
}

TEST_CASE("model config validation") {
    models::ModelConfig mc = tiny_cfg();
    CHECK_NOTHROW(mc.validate());
    mc.n_concepts = 0;
    CHECK_THROWS_AS(mc.validate(), std::invalid_argument);
    mc = tiny_cfg();
    mc.dim = 0;
    CHECK_THROWS_AS(mc.validate(), std::invalid_argument);
    mc = tiny_cfg();
    mc.dropout = 1.0;
    CHECK_THROWS_AS(mc.validate(), std::invalid_argument);
    mc = tiny_cfg();
    mc.p_min = 0.0;
    CHECK_THROWS_AS(mc.validate(), std::invalid_argument);
}
