#include "tsdr/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tsdr::config {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::pair<std::string, std::string> split_kv(const std::string& line, const char* where) {
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument(std::string(where) + ": expected key=value, got '" +
                                    line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
        throw std::invalid_argument(std::string(where) + ": empty key in '" + line + "'");
    return {std::move(key), std::move(val)};
}

double parse_double(const std::string& key, const std::string& val) {
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(val, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad number for " + key + ": '" + val + "'");
    }
    if (used != val.size())
        throw std::invalid_argument("config: bad number for " + key + ": '" + val + "'");
    return x;
}

std::uint64_t parse_uint(const std::string& key, const std::string& val) {
    std::size_t used = 0;
    unsigned long long x = 0;
    try {
        x = std::stoull(val, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad integer for " + key + ": '" + val + "'");
    }
    if (used != val.size())
        throw std::invalid_argument("config: bad integer for " + key + ": '" + val + "'");
    return static_cast<std::uint64_t>(x);
}

long long parse_int(const std::string& key, const std::string& val) {
    std::size_t used = 0;
    long long x = 0;
    try {
        x = std::stoll(val, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad integer for " + key + ": '" + val + "'");
    }
    if (used != val.size())
        throw std::invalid_argument("config: bad integer for " + key + ": '" + val + "'");
    return x;
}

bool parse_bool(const std::string& key, const std::string& val) {
    if (val == "1" || val == "true" || val == "on") return true;
    if (val == "0" || val == "false" || val == "off") return false;
    throw std::invalid_argument("config: bad boolean for " + key + ": '" + val + "'");
}

std::string fmt_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

} // namespace

KvMap load_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config: " + path);
    KvMap kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto [key, val] = split_kv(line, (path + ":" + std::to_string(lineno)).c_str());
        kv[key] = val;
    }
    return kv;
}

void apply_overrides(KvMap& kv, const std::vector<std::string>& overrides) {
    for (const std::string& tok : overrides) {
        auto [key, val] = split_kv(tok, "override");
        kv[key] = val;
    }
}

void RunConfig::validate() const {
    synth.validate();
    train_cfg.validate();
    if (n_folds < 2) throw std::invalid_argument("config: n_folds must be >= 2");
    if (fold < 0 || fold >= n_folds)
        throw std::invalid_argument("config: fold must be in [0, n_folds)");
    if (!(val_frac > 0.0 && val_frac < 1.0))
        throw std::invalid_argument("config: val_frac must be in (0,1)");
    if (!(variance_hypotheses >= 1.0))
        throw std::invalid_argument("config: variance_hypotheses must be >= 1");
    if (!(variance_eta > 0.0 && variance_eta < 1.0))
        throw std::invalid_argument("config: variance_eta must be in (0,1)");
    if (synth.seed != train_cfg.seed)
        throw std::invalid_argument("config: seed mismatch (use the shared seed key)");
}

RunConfig RunConfig::from_kv(const KvMap& kv) {
    RunConfig c;
    for (const auto& [key, val] : kv) {
        if (key == "students") c.synth.n_students = parse_uint(key, val);
        else if (key == "questions") c.synth.n_questions = parse_uint(key, val);
        else if (key == "concepts") c.synth.n_concepts = parse_uint(key, val);
        else if (key == "steps") c.synth.steps_per_student = parse_uint(key, val);
        else if (key == "zipf_alpha") c.synth.zipf_alpha = parse_double(key, val);
        else if (key == "learn_rate") c.synth.learn_rate = parse_double(key, val);
        else if (key == "guess") c.synth.guess = parse_double(key, val);
        else if (key == "slip") c.synth.slip = parse_double(key, val);
        else if (key == "gamma") c.synth.gamma = parse_double(key, val);
        else if (key == "mastery_lo") c.synth.mastery_init_lo = parse_double(key, val);
        else if (key == "mastery_hi") c.synth.mastery_init_hi = parse_double(key, val);
        else if (key == "update_mastery_on_skip")
            c.synth.update_mastery_on_skip = parse_bool(key, val);
        else if (key == "seed") c.set_seed(parse_uint(key, val));
        else if (key == "max_len") c.train_cfg.max_len = parse_uint(key, val);
        else if (key == "min_len") c.train_cfg.min_len = parse_uint(key, val);
        else if (key == "lr") c.train_cfg.lr = parse_double(key, val);
        else if (key == "batch_size") c.train_cfg.batch_size = parse_uint(key, val);
        else if (key == "max_epochs") c.train_cfg.max_epochs = parse_uint(key, val);
        else if (key == "patience") c.train_cfg.patience = parse_uint(key, val);
        else if (key == "dim") c.train_cfg.dim = parse_uint(key, val);
        else if (key == "dropout") c.train_cfg.dropout = parse_double(key, val);
        else if (key == "p_min") c.train_cfg.p_min = parse_double(key, val);
        else if (key == "mode") c.train_cfg.mode = val;
        else if (key == "lambda") c.train_cfg.lambda = parse_double(key, val);
        else if (key == "ts_target") c.train_cfg.ts_target = val;
        else if (key == "joint_learning") c.train_cfg.joint_learning = parse_bool(key, val);
        else if (key == "dr_concept_sample")
            c.train_cfg.dr_concept_sample = parse_uint(key, val);
        else if (key == "prop_use_kt_state")
            c.train_cfg.prop_use_kt_state = parse_bool(key, val);
        else if (key == "n_folds") c.n_folds = static_cast<int>(parse_int(key, val));
        else if (key == "fold") c.fold = static_cast<int>(parse_int(key, val));
        else if (key == "val_frac") c.val_frac = parse_double(key, val);
        else if (key == "variance_hypotheses")
            c.variance_hypotheses = parse_double(key, val);
        else if (key == "variance_eta") c.variance_eta = parse_double(key, val);
        else throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

KvMap RunConfig::to_kv() const {
    KvMap kv;
    kv["students"] = std::to_string(synth.n_students);
    kv["questions"] = std::to_string(synth.n_questions);
    kv["concepts"] = std::to_string(synth.n_concepts);
    kv["steps"] = std::to_string(synth.steps_per_student);
    kv["zipf_alpha"] = fmt_double(synth.zipf_alpha);
    kv["learn_rate"] = fmt_double(synth.learn_rate);
    kv["guess"] = fmt_double(synth.guess);
    kv["slip"] = fmt_double(synth.slip);
    kv["gamma"] = fmt_double(synth.gamma);
    kv["mastery_lo"] = fmt_double(synth.mastery_init_lo);
    kv["mastery_hi"] = fmt_double(synth.mastery_init_hi);
    kv["update_mastery_on_skip"] = synth.update_mastery_on_skip ? "1" : "0";
    kv["seed"] = std::to_string(synth.seed);
    kv["max_len"] = std::to_string(train_cfg.max_len);
    kv["min_len"] = std::to_string(train_cfg.min_len);
    kv["lr"] = fmt_double(train_cfg.lr);
    kv["batch_size"] = std::to_string(train_cfg.batch_size);
    kv["max_epochs"] = std::to_string(train_cfg.max_epochs);
    kv["patience"] = std::to_string(train_cfg.patience);
    kv["dim"] = std::to_string(train_cfg.dim);
    kv["dropout"] = fmt_double(train_cfg.dropout);
    kv["p_min"] = fmt_double(train_cfg.p_min);
    kv["mode"] = train_cfg.mode;
    kv["lambda"] = fmt_double(train_cfg.lambda);
    kv["ts_target"] = train_cfg.ts_target;
    kv["joint_learning"] = train_cfg.joint_learning ? "1" : "0";
    kv["dr_concept_sample"] = std::to_string(train_cfg.dr_concept_sample);
    kv["prop_use_kt_state"] = train_cfg.prop_use_kt_state ? "1" : "0";
    kv["n_folds"] = std::to_string(n_folds);
    kv["fold"] = std::to_string(fold);
    kv["val_frac"] = fmt_double(val_frac);
    kv["variance_hypotheses"] = fmt_double(variance_hypotheses);
    kv["variance_eta"] = fmt_double(variance_eta);
    return kv;
}

std::string RunConfig::canonical() const {
    std::ostringstream out;
    for (const auto& [key, val] : to_kv()) out << key << "=" << val << "\n";
    return out.str();
}

std::string RunConfig::hash() const { return fnv1a64_hex(canonical()); }

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string fnv1a64_hex(const std::string& s) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(s)));
    return buf;
}

std::string resolve_out_root() {
    const char* env = std::getenv("TSDR_OUT_ROOT");
    if (env != nullptr && env[0] != '\0') return env;
    return "runs";
}

std::string timestamp_utc() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace tsdr::config
