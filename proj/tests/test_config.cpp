// Key=value configuration: file parsing, override precedence, round trips,
// hash stability, and the shared-seed coupling between generation and training.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "tsdr/config.hpp"

namespace fs = std::filesystem;
using namespace tsdr;

namespace {

struct TempFile {
    fs::path path;
    explicit TempFile(const std::string& text) {
        static int n = 0;
        path = fs::temp_directory_path() /
               ("tsdr_cfg_" + std::to_string(::getpid()) + "_" + std::to_string(n++) + ".cfg");
        std::ofstream out(path);
        out << text;
    }
    ~TempFile() {
        std::error_code ec;
        fs::remove(path, ec);
    }
};

} // namespace

TEST_CASE("kv file parsing skips comments and blank lines, trims whitespace") {
    TempFile f("# run setup\n"
               "\n"
               "students = 25\n"
               "  gamma=0.4   # trailing comment\n"
               "mode=naive\n");
    config::KvMap kv = config::load_kv_file(f.path.string());
    REQUIRE(kv.size() == 3);
    CHECK(kv.at("students") == "25");
    CHECK(kv.at("gamma") == "0.4");
    CHECK(kv.at("mode") == "naive");
}

TEST_CASE("kv file errors: missing file, missing '=', empty key") {
    CHECK_THROWS_AS(config::load_kv_file("no_such_file.cfg"), std::runtime_error);

    TempFile bad("students 25\n");
    CHECK_THROWS_AS(config::load_kv_file(bad.path.string()), std::invalid_argument);

    TempFile empty_key("=5\n");
    CHECK_THROWS_AS(config::load_kv_file(empty_key.path.string()), std::invalid_argument);
}

TEST_CASE("later keys win, in the file and across overrides") {
    TempFile f("gamma=0.1\ngamma=0.2\n");
    config::KvMap kv = config::load_kv_file(f.path.string());
    CHECK(kv.at("gamma") == "0.2");

    config::apply_overrides(kv, {"gamma=0.5", "dim=16", "gamma=0.9"});
    CHECK(kv.at("gamma") == "0.9");
    CHECK(kv.at("dim") == "16");

    CHECK_THROWS_AS(config::apply_overrides(kv, {"notakv"}), std::invalid_argument);
}

TEST_CASE("from_kv applies known keys and rejects unknown or malformed ones") {
    config::KvMap kv{{"students", "33"},   {"gamma", "0.25"}, {"mode", "naive"},
                     {"lambda", "0.75"},   {"dim", "24"},     {"seed", "99"},
                     {"joint_learning", "off"}};
    config::RunConfig c = config::RunConfig::from_kv(kv);
    CHECK(c.synth.n_students == 33);
    CHECK(c.synth.gamma == 0.25);
    CHECK(c.train_cfg.mode == "naive");
    CHECK(c.train_cfg.lambda == 0.75);
    CHECK(c.train_cfg.dim == 24);
    CHECK(c.seed() == 99);
    CHECK_FALSE(c.train_cfg.joint_learning);

    CHECK_THROWS_WITH_AS(config::RunConfig::from_kv({{"studnets", "33"}}),
                         doctest::Contains("unknown key"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(config::RunConfig::from_kv({{"gamma", "fast"}}),
                         doctest::Contains("bad number"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(config::RunConfig::from_kv({{"dim", "8.5"}}),
                         doctest::Contains("bad integer"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(config::RunConfig::from_kv({{"joint_learning", "maybe"}}),
                         doctest::Contains("bad boolean"), std::invalid_argument);
    // values that parse but fail validation
    CHECK_THROWS_AS(config::RunConfig::from_kv({{"gamma", "1.0"}}), std::invalid_argument);
    CHECK_THROWS_AS(config::RunConfig::from_kv({{"mode", "hybrid"}}), std::invalid_argument);
}

TEST_CASE("to_kv then from_kv reproduces the configuration exactly") {
    config::RunConfig c;
    c.synth.n_students = 77;
    c.synth.gamma = 0.625;
    c.synth.zipf_alpha = 0.9;
    c.train_cfg.dim = 48;
    c.train_cfg.lambda = 0.3;
    c.train_cfg.mode = "tsdr";
    c.set_seed(1234);
    c.fold = 2;

    config::RunConfig back = config::RunConfig::from_kv(c.to_kv());
    CHECK(back.canonical() == c.canonical());
    CHECK(back.hash() == c.hash());
    CHECK(back.synth.gamma == c.synth.gamma);
    CHECK(back.train_cfg.dim == c.train_cfg.dim);
    CHECK(back.fold == 2);
}

TEST_CASE("canonical form is sorted, covers every key, and hashes stably") {
    config::RunConfig c;
    c.set_seed(7);
    const std::string canon = c.canonical();

    // one line per to_kv entry, in sorted key order
    config::KvMap kv = c.to_kv();
    std::size_t lines = 0;
    std::string prev_key;
    std::istringstream in(canon);
    std::string line;
    while (std::getline(in, line)) {
        ++lines;
        const std::string key = line.substr(0, line.find('='));
        REQUIRE(kv.count(key) == 1);
        CHECK(prev_key < key);
        prev_key = key;
    }
    CHECK(lines == kv.size());

    // the hash is a pure function of the canonical text
    CHECK(c.hash() == config::fnv1a64_hex(canon));
    CHECK(c.hash().size() == 16);

    config::RunConfig d;
    d.set_seed(7);
    CHECK(d.hash() == c.hash());
    d.train_cfg.lambda += 0.1;
    CHECK(d.hash() != c.hash());
}

TEST_CASE("fnv1a64 matches its reference constants") {
    // standard FNV-1a test vectors
    CHECK(config::fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(config::fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    CHECK(config::fnv1a64_hex("") == "cbf29ce484222325");
}

TEST_CASE("one seed key drives generation and training together") {
    config::RunConfig c;
    c.set_seed(31);
    CHECK(c.synth.seed == 31);
    CHECK(c.train_cfg.seed == 31);
    c.validate();

    // desynchronized seeds are rejected so artifacts can't silently disagree
    c.train_cfg.seed = 32;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("seed mismatch"),
                         std::invalid_argument);
}

TEST_CASE("validate rejects out-of-range split and variance settings") {
    config::RunConfig c;
    c.n_folds = 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.n_folds = 5;
    c.fold = 5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.fold = 0;
    c.val_frac = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.val_frac = 0.1;
    c.variance_hypotheses = 0.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.variance_hypotheses = 1.0;
    c.variance_eta = 1.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.variance_eta = 0.05;
    c.validate();
}

TEST_CASE("out root resolves from the environment with a default") {
    const char* saved = std::getenv("TSDR_OUT_ROOT");
    const std::string saved_val = saved ? saved : "";

    ::setenv("TSDR_OUT_ROOT", "elsewhere/runs", 1);
    CHECK(config::resolve_out_root() == "elsewhere/runs");
    ::unsetenv("TSDR_OUT_ROOT");
    CHECK(config::resolve_out_root() == "runs");

    if (saved) ::setenv("TSDR_OUT_ROOT", saved_val.c_str(), 1);
}
