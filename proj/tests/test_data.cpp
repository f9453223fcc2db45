// test_data.cpp
// JSONL round trips, malformed-input diagnostics, sequence transforms and
// the student split.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <unistd.h>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsdr/data.hpp"

using namespace tsdr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("tsdr_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<data::StudentSequence> tiny_log() {
    data::StudentSequence a;
    a.student_id = "s1";
    a.steps = {
        {"s1", 1, 0, 10, 1, 1, 0.8},
        {"s1", 2, 1, 11, 0, 0, 0.3},
        {"s1", 3, 0, 12, 1, 1, 0.9},
    };
    data::StudentSequence b;
    b.student_id = "s2";
    b.steps = {
        {"s2", 1, 2, 13, 0, 1, std::nullopt},
        {"s2", 2, 2, 14, 1, 1, std::nullopt},
    };
    return {a, b};
}

} // namespace

TEST_CASE("interactions round-trip through jsonl") {
    TempDir tmp;
    const auto seqs = tiny_log();
    data::save_interactions(tmp.file("log.jsonl"), seqs);
    const auto back = data::load_interactions(tmp.file("log.jsonl"));

    REQUIRE(back.size() == 2);
    CHECK(back[0].student_id == "s1");
    CHECK(back[0].steps.size() == 3);
    CHECK(back[1].steps.size() == 2);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[0].steps[i].t == seqs[0].steps[i].t);
        CHECK(back[0].steps[i].concept_id == seqs[0].steps[i].concept_id);
        CHECK(back[0].steps[i].question_id == seqs[0].steps[i].question_id);
        CHECK(back[0].steps[i].response == seqs[0].steps[i].response);
        CHECK(back[0].steps[i].observed == seqs[0].steps[i].observed);
    }
    REQUIRE(back[0].steps[1].true_p.has_value());
    CHECK(*back[0].steps[1].true_p == 0.3);
    CHECK_FALSE(back[1].steps[0].true_p.has_value());
}

TEST_CASE("grids and propensities round-trip") {
    TempDir tmp;
    data::CounterfactualGrid g;
    g.student_id = "s1";
    g.n_concepts = 2;
    g.true_p = {{0.1, 0.9}, {0.4, 0.6}};
    g.response = {{0, 1}, {1, 1}};
    data::save_grids(tmp.file("grid.jsonl"), {g});
    const auto back = data::load_grids(tmp.file("grid.jsonl"));
    REQUIRE(back.size() == 1);
    CHECK(back[0].student_id == "s1");
    CHECK(back[0].n_concepts == 2);
    CHECK(back[0].true_p == g.true_p);
    CHECK(back[0].response == g.response);

    data::PropensityGrid p;
    p.student_id = "s1";
    p.n_concepts = 2;
    p.p = {{1.0, 0.5}, {0.25, 1.0}};
    data::save_propensities(tmp.file("prop.jsonl"), {p});
    const auto pback = data::load_propensities(tmp.file("prop.jsonl"));
    REQUIRE(pback.size() == 1);
    CHECK(pback[0].p == p.p);
}

TEST_CASE("malformed lines are reported with their line number") {
    TempDir tmp;
    {
        std::ofstream f(tmp.file("bad.jsonl"));
        f << R"({"student_id":"s1","t":1,"concept_id":0,"question_id":1,"response":1,"observed":1})"
          << "\n";
        f << "this is not json\n";
    }
    try {
        data::load_interactions(tmp.file("bad.jsonl"));
        FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }

    {
        std::ofstream f(tmp.file("bad2.jsonl"));
        f << R"({"student_id":"s1","t":1,"concept_id":0,"question_id":1,"response":1,"observed":1})"
          << "\n";
        f << R"({"student_id":"s1","t":1,"concept_id":0,"question_id":2,"response":0,"observed":1})"
          << "\n";
    }
    try {
        data::load_interactions(tmp.file("bad2.jsonl"));
        FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
        const std::string what = e.what();
        CHECK(what.find(":2:") != std::string::npos);
        CHECK(what.find("duplicate") != std::string::npos);
    }

    {
        std::ofstream f(tmp.file("bad3.jsonl"));
        f << R"({"student_id":"s1","t":1,"concept_id":0,"question_id":1,"response":2,"observed":1})"
          << "\n";
    }
    CHECK_THROWS_AS(data::load_interactions(tmp.file("bad3.jsonl")), std::runtime_error);

    CHECK_THROWS_AS(data::load_interactions(tmp.file("missing.jsonl")), std::runtime_error);
}

TEST_CASE("observed_view drops skips and reindexes t") {
    const auto seqs = tiny_log();
    const data::StudentSequence v = seqs[0].observed_view();
    REQUIRE(v.steps.size() == 2);
    CHECK(v.steps[0].t == 1);
    CHECK(v.steps[1].t == 2);
    CHECK(v.steps[0].question_id == 10);
    CHECK(v.steps[1].question_id == 12); // the skipped step is gone
    CHECK(seqs[0].observed_count() == 2);
}

TEST_CASE("truncate keeps the latest steps; filter drops short sequences") {
    auto seqs = tiny_log();
    data::truncate_sequences(seqs, 2);
    REQUIRE(seqs[0].steps.size() == 2);
    // latest two steps survive, reindexed from 1
    CHECK(seqs[0].steps[0].question_id == 11);
    CHECK(seqs[0].steps[1].question_id == 12);
    CHECK(seqs[0].steps[0].t == 1);
    CHECK(seqs[0].steps[1].t == 2);

    auto seqs2 = tiny_log();
    const std::size_t dropped = data::filter_min_length(seqs2, 3);
    CHECK(dropped == 1);
    REQUIRE(seqs2.size() == 1);
    CHECK(seqs2[0].student_id == "s1");
}

TEST_CASE("split is a partition with the expected sizes") {
    std::vector<std::string> ids;
    for (int i = 0; i < 100; ++i) ids.push_back("st" + std::to_string(i));

    const data::FoldSplit sp = data::split_students(ids, 5, 0, 0.1, 42);
    CHECK(sp.test_ids.size() == 20);
    CHECK(sp.val_ids.size() == 8); // 10% of the 80 non-test students
    CHECK(sp.train_ids.size() == 72);

    std::set<std::string> all;
    for (const auto& v : {sp.train_ids, sp.val_ids, sp.test_ids})
        for (const auto& id : v) CHECK(all.insert(id).second);
    CHECK(all.size() == 100);

    // deterministic in its inputs
    const data::FoldSplit sp2 = data::split_students(ids, 5, 0, 0.1, 42);
    CHECK(sp2.train_ids == sp.train_ids);
    CHECK(sp2.val_ids == sp.val_ids);
    CHECK(sp2.test_ids == sp.test_ids);

    // different seed, different partition
    const data::FoldSplit sp3 = data::split_students(ids, 5, 0, 0.1, 43);
    CHECK(sp3.test_ids != sp.test_ids);
}

TEST_CASE("folds tile the population") {
    std::vector<std::string> ids;
    for (int i = 0; i < 50; ++i) ids.push_back("st" + std::to_string(i));
    std::set<std::string> test_union;
    for (int fold = 0; fold < 5; ++fold) {
        const data::FoldSplit sp = data::split_students(ids, 5, fold, 0.1, 7);
        for (const auto& id : sp.test_ids) CHECK(test_union.insert(id).second);
    }
    CHECK(test_union.size() == 50);
}

TEST_CASE("select_by_id preserves sequence order") {
    const auto seqs = tiny_log();
    const auto sel = data::select_by_id(seqs, {"s2", "s1"});
    REQUIRE(sel.size() == 2);
    CHECK(sel[0]->student_id == "s1"); // sequence order, not id order
    CHECK(sel[1]->student_id == "s2");
    CHECK(data::select_by_id(seqs, {"nope"}).empty());
}

TEST_CASE("load_dataset reads a directory and its manifest") {
    TempDir tmp;
    data::save_interactions(tmp.file("interactions.jsonl"), tiny_log());
    {
        std::ofstream f(tmp.file("manifest.json"));
        f << R"({"config": {"n_concepts": 9, "n_questions": 77}})";
    }
    const data::Dataset ds = data::load_dataset(tmp.path.string());
    CHECK(ds.sequences.size() == 2);
    CHECK(ds.n_concepts == 9);
    CHECK(ds.n_questions == 77);
    CHECK_FALSE(ds.has_ground_truth());
}
