#include "tsdr/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "json.hpp"

#include "tsdr/rng.hpp"

namespace tsdr::data {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

[[noreturn]] void line_error(const std::string& path, std::size_t line_no,
                             const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    return out;
}

int require_01(const json& j, const char* field, const std::string& path,
               std::size_t line_no) {
    if (!j.contains(field)) line_error(path, line_no, std::string("missing field ") + field);
    const int v = j.at(field).get<int>();
    if (v != 0 && v != 1)
        line_error(path, line_no, std::string(field) + " must be 0 or 1");
    return v;
}

} // namespace

std::size_t StudentSequence::observed_count() const {
    std::size_t n = 0;
    for (const Interaction& s : steps) n += static_cast<std::size_t>(s.observed);
    return n;
}

StudentSequence StudentSequence::observed_view() const {
    StudentSequence out;
    out.student_id = student_id;
    int t = 1;
    for (const Interaction& s : steps) {
        if (s.observed == 1) {
            Interaction c = s;
            c.t = t++;
            out.steps.push_back(std::move(c));
        }
    }
    return out;
}

std::vector<StudentSequence> load_interactions(const std::string& path) {
    std::ifstream in = open_in(path);
    // insertion-ordered by first appearance of each student
    std::vector<StudentSequence> seqs;
    std::map<std::string, std::size_t> index;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            line_error(path, line_no, std::string("bad record: ") + e.what());
        }
        Interaction it;
        try {
            it.student_id = j.at("student_id").get<std::string>();
            it.t = j.at("t").get<int>();
            it.concept_id = j.at("concept_id").get<int>();
            it.question_id = j.at("question_id").get<long long>();
        } catch (const json::exception& e) {
            line_error(path, line_no, std::string("bad record: ") + e.what());
        }
        it.response = require_01(j, "response", path, line_no);
        it.observed = require_01(j, "observed", path, line_no);
        if (j.contains("true_p")) it.true_p = j.at("true_p").get<double>();
        if (it.t < 1) line_error(path, line_no, "t must be >= 1");
        if (it.concept_id < 0) line_error(path, line_no, "concept_id must be >= 0");

        auto [pos, inserted] = index.try_emplace(it.student_id, seqs.size());
        if (inserted) {
            seqs.emplace_back();
            seqs.back().student_id = it.student_id;
        }
        StudentSequence& seq = seqs[pos->second];
        if (!seq.steps.empty()) {
            if (it.t == seq.steps.back().t)
                line_error(path, line_no, "duplicate step t=" + std::to_string(it.t) +
                                              " for student " + it.student_id);
            if (it.t < seq.steps.back().t)
                line_error(path, line_no, "non-monotone t for student " + it.student_id);
        }
        seq.steps.push_back(std::move(it));
    }
    return seqs;
}

void save_interactions(const std::string& path,
                       const std::vector<StudentSequence>& seqs) {
    std::ofstream out = open_out(path);
    for (const StudentSequence& seq : seqs) {
        for (const Interaction& s : seq.steps) {
            ojson j;
            j["student_id"] = s.student_id;
            j["t"] = s.t;
            j["concept_id"] = s.concept_id;
            j["question_id"] = s.question_id;
            j["response"] = s.response;
            j["observed"] = s.observed;
            if (s.true_p.has_value()) j["true_p"] = *s.true_p;
            out << j.dump() << "\n";
        }
    }
}

std::vector<CounterfactualGrid> load_grids(const std::string& path) {
    std::ifstream in = open_in(path);
    std::vector<CounterfactualGrid> grids;
    std::map<std::string, std::size_t> index;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            line_error(path, line_no, std::string("bad record: ") + e.what());
        }
        std::string sid;
        int t = 0;
        std::vector<double> tp;
        std::vector<int> resp;
        try {
            sid = j.at("student_id").get<std::string>();
            t = j.at("t").get<int>();
            tp = j.at("true_p").get<std::vector<double>>();
            resp = j.at("response").get<std::vector<int>>();
        } catch (const json::exception& e) {
            line_error(path, line_no, std::string("bad record: ") + e.what());
        }
        if (tp.size() != resp.size() || tp.empty())
            line_error(path, line_no, "true_p/response arrays disagree");

        auto [pos, inserted] = index.try_emplace(sid, grids.size());
        if (inserted) {
            grids.emplace_back();
            grids.back().student_id = sid;
            grids.back().n_concepts = tp.size();
        }
        CounterfactualGrid& g = grids[pos->second];
        if (tp.size() != g.n_concepts)
            line_error(path, line_no, "concept count changed mid-student");
        if (t != static_cast<int>(g.true_p.size()) + 1)
            line_error(path, line_no, "grid rows must arrive as t = 1,2,...");
        g.true_p.push_back(std::move(tp));
        g.response.push_back(std::move(resp));
    }
    return grids;
}

void save_grids(const std::string& path, const std::vector<CounterfactualGrid>& grids) {
    std::ofstream out = open_out(path);
    for (const CounterfactualGrid& g : grids) {
        for (std::size_t r = 0; r < g.true_p.size(); ++r) {
            ojson j;
            j["student_id"] = g.student_id;
            j["t"] = static_cast<int>(r) + 1;
            j["true_p"] = g.true_p[r];
            j["response"] = g.response[r];
            out << j.dump() << "\n";
        }
    }
}

std::vector<PropensityGrid> load_propensities(const std::string& path) {
    std::ifstream in = open_in(path);
    std::vector<PropensityGrid> grids;
    std::map<std::string, std::size_t> index;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            line_error(path, line_no, std::string("bad record: ") + e.what());
        }
        std::string sid;
        int t = 0;
        std::vector<double> p;
        try {
            sid = j.at("student_id").get<std::string>();
            t = j.at("t").get<int>();
            p = j.at("p").get<std::vector<double>>();
        } catch (const json::exception& e) {
            line_error(path, line_no, std::string("bad record: ") + e.what());
        }
        if (p.empty()) line_error(path, line_no, "empty propensity row");

        auto [pos, inserted] = index.try_emplace(sid, grids.size());
        if (inserted) {
            grids.emplace_back();
            grids.back().student_id = sid;
            grids.back().n_concepts = p.size();
        }
        PropensityGrid& g = grids[pos->second];
        if (p.size() != g.n_concepts)
            line_error(path, line_no, "concept count changed mid-student");
        if (t != static_cast<int>(g.p.size()) + 1)
            line_error(path, line_no, "propensity rows must arrive as t = 1,2,...");
        g.p.push_back(std::move(p));
    }
    return grids;
}

void save_propensities(const std::string& path,
                       const std::vector<PropensityGrid>& grids) {
    std::ofstream out = open_out(path);
    for (const PropensityGrid& g : grids) {
        for (std::size_t r = 0; r < g.p.size(); ++r) {
            ojson j;
            j["student_id"] = g.student_id;
            j["t"] = static_cast<int>(r) + 1;
            j["p"] = g.p[r];
            out << j.dump() << "\n";
        }
    }
}

Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset ds;
    const fs::path base(dir);
    const fs::path inter = base / "interactions.jsonl";
    if (!fs::exists(inter))
        throw std::runtime_error("dataset directory has no interactions.jsonl: " + dir);
    ds.sequences = load_interactions(inter.string());

    const fs::path gridp = base / "grid.jsonl";
    if (fs::exists(gridp)) ds.grids = load_grids(gridp.string());
    const fs::path propp = base / "propensity.jsonl";
    if (fs::exists(propp)) ds.propensities = load_propensities(propp.string());

    const fs::path manp = base / "manifest.json";
    if (fs::exists(manp)) {
        std::ifstream in = open_in(manp.string());
        json man = json::parse(in);
        if (man.contains("config")) {
            const json& c = man["config"];
            if (c.contains("n_concepts")) ds.n_concepts = c["n_concepts"].get<std::size_t>();
            if (c.contains("n_questions")) ds.n_questions = c["n_questions"].get<std::size_t>();
        }
    }
    if (ds.n_concepts == 0) {
        long long max_c = -1;
        for (const StudentSequence& s : ds.sequences)
            for (const Interaction& it : s.steps)
                max_c = std::max<long long>(max_c, it.concept_id);
        ds.n_concepts = static_cast<std::size_t>(max_c + 1);
    }
    if (ds.n_questions == 0) {
        long long max_q = -1;
        for (const StudentSequence& s : ds.sequences)
            for (const Interaction& it : s.steps)
                max_q = std::max<long long>(max_q, it.question_id);
        ds.n_questions = static_cast<std::size_t>(max_q + 1);
    }

    if (!ds.grids.empty() && ds.grids.size() != ds.sequences.size())
        throw std::runtime_error("dataset grids do not cover every student: " + dir);
    return ds;
}

void truncate_sequences(std::vector<StudentSequence>& seqs, std::size_t max_len) {
    if (max_len == 0) throw std::invalid_argument("truncate_sequences: max_len must be > 0");
    for (StudentSequence& s : seqs) {
        if (s.steps.size() > max_len)
            s.steps.erase(s.steps.begin(),
                          s.steps.begin() + static_cast<std::ptrdiff_t>(s.steps.size() - max_len));
        int t = 1;
        for (Interaction& it : s.steps) it.t = t++;
    }
}

std::size_t filter_min_length(std::vector<StudentSequence>& seqs, std::size_t min_len) {
    const std::size_t before = seqs.size();
    seqs.erase(std::remove_if(seqs.begin(), seqs.end(),
                              [&](const StudentSequence& s) {
                                  return s.steps.size() < min_len;
                              }),
               seqs.end());
    return before - seqs.size();
}

FoldSplit split_students(const std::vector<std::string>& ids, int n_folds, int fold,
                         double val_frac, std::uint64_t seed) {
    if (n_folds < 2) throw std::invalid_argument("split_students: n_folds must be >= 2");
    if (fold < 0 || fold >= n_folds)
        throw std::invalid_argument("split_students: fold out of range");
    if (!(val_frac >= 0.0 && val_frac < 1.0))
        throw std::invalid_argument("split_students: val_frac must be in [0,1)");
    if (ids.size() < static_cast<std::size_t>(n_folds))
        throw std::invalid_argument("split_students: fewer students than folds");
    {
        std::set<std::string> uniq(ids.begin(), ids.end());
        if (uniq.size() != ids.size())
            throw std::invalid_argument("split_students: duplicate student ids");
    }

    std::vector<std::string> order = ids;
    rng::Rng r = rng::Rng::substream(seed, 0xF01Du);
    r.shuffle(order);

    // contiguous chunks of the shuffled order; sizes differ by at most one
    const std::size_t n = order.size();
    const std::size_t base = n / static_cast<std::size_t>(n_folds);
    const std::size_t extra = n % static_cast<std::size_t>(n_folds);
    std::size_t start = 0;
    std::size_t test_begin = 0, test_end = 0;
    for (int f = 0; f < n_folds; ++f) {
        const std::size_t len = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
        if (f == fold) {
            test_begin = start;
            test_end = start + len;
        }
        start += len;
    }

    FoldSplit out;
    out.fold = fold;
    out.seed = seed;
    out.test_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(test_begin),
                        order.begin() + static_cast<std::ptrdiff_t>(test_end));

    std::vector<std::string> rest;
    rest.reserve(n - (test_end - test_begin));
    for (std::size_t i = 0; i < n; ++i)
        if (i < test_begin || i >= test_end) rest.push_back(order[i]);

    const std::size_t n_val = static_cast<std::size_t>(
        std::llround(val_frac * static_cast<double>(rest.size())));
    out.val_ids.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
    out.train_ids.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());
    return out;
}

std::vector<std::string> student_ids(const std::vector<StudentSequence>& seqs) {
    std::vector<std::string> ids;
    ids.reserve(seqs.size());
    for (const StudentSequence& s : seqs) ids.push_back(s.student_id);
    return ids;
}

std::vector<const StudentSequence*> select_by_id(
    const std::vector<StudentSequence>& seqs, const std::vector<std::string>& ids) {
    std::set<std::string> want(ids.begin(), ids.end());
    std::vector<const StudentSequence*> out;
    for (const StudentSequence& s : seqs)
        if (want.count(s.student_id) > 0) out.push_back(&s);
    return out;
}

} // namespace tsdr::data
