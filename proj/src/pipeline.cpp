#include "tsdr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string_view>
#include <tuple>

#include "json.hpp"

#include "tsdr/data.hpp"
#include "tsdr/evaluate.hpp"
#include "tsdr/models.hpp"

namespace tsdr::pipeline {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using json = nlohmann::json;

namespace {

std::string fmt_short(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", x);
    return buf;
}

std::string fmt_full(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::string hash8(const std::string& s) { return config::fnv1a64_hex(s).substr(0, 8); }

// Artifacts reference each other relative to the output root whenever they
// live under it, so a rerun into a different root still produces identical
// bytes and a moved root stays self-consistent.
std::string portable_path(const fs::path& p, const fs::path& root) {
    std::error_code ec;
    const fs::path rel = fs::relative(p, root, ec);
    if (ec || rel.empty()) return p.string();
    const std::string s = rel.string();
    if (s.rfind("..", 0) == 0) return p.string();
    return s;
}

constexpr const char* kGeneratorKeys[] = {
    "concepts",  "gamma", "guess",    "learn_rate", "mastery_hi",
    "mastery_lo", "questions", "seed", "slip",      "steps",
    "students",  "update_mastery_on_skip", "zipf_alpha",
};

// generator-relevant keys only, so a dataset id is stable across training
// parameter changes
std::string synth_canonical(const config::RunConfig& cfg) {
    const config::KvMap kv = cfg.to_kv();
    std::ostringstream out;
    for (const char* k : kGeneratorKeys) out << k << "=" << kv.at(k) << "\n";
    return out.str();
}

// A dataset's manifest is the record of the generator settings that produced
// it. Training only consumes the finished data, so the effective config
// adopts those values; run ids, manifests and eval rows then describe the
// data actually trained on even when the config file was written for a
// different grid point. The seed stays the caller's: it drives the fold
// split and the optimizer, not the generator rerun.
void adopt_generator_config(config::RunConfig& cfg, const fs::path& dataset_dir) {
    std::ifstream in(dataset_dir / "manifest.json");
    if (!in) return; // bare data directory: keep the caller's settings
    const json j = json::parse(in);
    if (!j.contains("config")) return;
    const json& c = j["config"];
    config::KvMap kv = cfg.to_kv();
    for (const char* k : kGeneratorKeys) {
        if (std::string_view(k) == "seed") continue;
        if (c.contains(k) && c[k].is_string()) kv[k] = c[k].get<std::string>();
    }
    cfg = config::RunConfig::from_kv(kv);
}

struct Manifest {
    std::string subcommand;
    const config::RunConfig* cfg = nullptr;
    ojson extra = ojson::object();
    std::map<std::string, std::size_t> config_numbers; // merged into "config"
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::string started;
    std::string finished;

    void write(const fs::path& file) const {
        ojson j;
        j["subcommand"] = subcommand;
        j["code_version"] = config::kVersion;
        if (cfg != nullptr) {
            j["seed"] = cfg->seed();
            j["config_hash"] = cfg->hash();
            ojson c = ojson::object();
            for (const auto& [k, v] : cfg->to_kv()) c[k] = v;
            for (const auto& [k, v] : config_numbers) c[k] = v;
            j["config"] = std::move(c);
        }
        for (const auto& item : extra.items()) j[item.key()] = item.value();
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        j["started"] = started;
        j["finished"] = finished;
        std::ofstream out(file, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write manifest: " + file.string());
        out << j.dump(2) << "\n";
    }
};

// observed views ready for training: truncate, then drop the too-short
std::vector<data::StudentSequence> training_views(const data::Dataset& ds,
                                                  const train::TrainConfig& tc,
                                                  std::size_t* dropped) {
    std::vector<data::StudentSequence> views;
    views.reserve(ds.sequences.size());
    for (const data::StudentSequence& s : ds.sequences) views.push_back(s.observed_view());
    data::truncate_sequences(views, tc.max_len);
    const std::size_t n = data::filter_min_length(views, tc.min_len);
    if (dropped != nullptr) *dropped = n;
    return views;
}

} // namespace

std::string synth_run_id(const config::RunConfig& cfg) {
    return "data-g" + fmt_short(cfg.synth.gamma) + "-s" + std::to_string(cfg.seed()) +
           "-" + hash8(synth_canonical(cfg));
}

std::string train_run_id(const config::RunConfig& cfg) {
    return "run-" + cfg.train_cfg.mode + "-g" + fmt_short(cfg.synth.gamma) + "-l" +
           fmt_short(cfg.train_cfg.lambda) + "-s" + std::to_string(cfg.seed()) + "-" +
           hash8(cfg.canonical());
}

// --- synth -----------------------------------------------------------------------

SynthOutput run_synth(const config::RunConfig& cfg, const std::string& out_root,
                      std::ostream* log) {
    cfg.validate();
    const std::string id = synth_run_id(cfg);
    const fs::path dir = fs::path(out_root) / id;
    fs::create_directories(dir);

    Manifest man;
    man.subcommand = "synth";
    man.cfg = &cfg;
    man.config_numbers["n_concepts"] = cfg.synth.n_concepts;
    man.config_numbers["n_questions"] = cfg.synth.n_questions;
    man.extra["run_id"] = id;
    man.started = config::timestamp_utc();
    man.write(dir / "manifest.json");

    SynthOutput out;
    out.dir = dir.string();
    const data::Dataset ds = synth::generate_dataset(cfg.synth, &out.counts);
    data::save_interactions((dir / "interactions.jsonl").string(), ds.sequences);
    data::save_grids((dir / "grid.jsonl").string(), ds.grids);
    data::save_propensities((dir / "propensity.jsonl").string(), ds.propensities);

    man.extra["counts"] = {
        {"events", out.counts.n_events},         {"observed", out.counts.n_observed},
        {"skipped", out.counts.n_skipped},       {"sequences", out.counts.n_sequences},
        {"mid_band_skips", out.counts.n_mid_band_skips},
    };
    man.outputs = {"interactions.jsonl", "grid.jsonl", "propensity.jsonl"};
    man.finished = config::timestamp_utc();
    man.write(dir / "manifest.json");

    if (log != nullptr)
        *log << id << ": " << out.counts.n_sequences << " students, "
             << out.counts.n_observed << " observed / " << out.counts.n_events
             << " events (" << out.counts.n_skipped << " skipped)\n";
    return out;
}

// --- train -----------------------------------------------------------------------

TrainOutput run_train(const config::RunConfig& caller_cfg, const std::string& dataset_dir,
                      const std::string& out_root, std::ostream* log) {
    config::RunConfig cfg = caller_cfg;
    adopt_generator_config(cfg, dataset_dir);
    cfg.validate();
    const data::Dataset ds = data::load_dataset(dataset_dir);
    if (ds.n_concepts != cfg.synth.n_concepts)
        throw std::runtime_error("train: dataset has " + std::to_string(ds.n_concepts) +
                                 " concepts, config says " +
                                 std::to_string(cfg.synth.n_concepts));

    const std::string id = train_run_id(cfg);
    const fs::path dir = fs::path(out_root) / id;
    fs::create_directories(dir);

    Manifest man;
    man.subcommand = "train";
    man.cfg = &cfg;
    man.extra["run_id"] = id;
    man.inputs = {portable_path(dataset_dir, out_root)};
    man.started = config::timestamp_utc();
    man.write(dir / "manifest.json");

    std::size_t dropped = 0;
    const std::vector<data::StudentSequence> views =
        training_views(ds, cfg.train_cfg, &dropped);
    if (log != nullptr && dropped > 0)
        *log << id << ": dropped " << dropped << " sequences shorter than "
             << cfg.train_cfg.min_len << " observed steps\n";

    const data::FoldSplit split = data::split_students(
        data::student_ids(ds.sequences), cfg.n_folds, cfg.fold, cfg.val_frac, cfg.seed());
    const auto train_ptrs = data::select_by_id(views, split.train_ids);
    const auto val_ptrs = data::select_by_id(views, split.val_ids);

    const train::TrainResult tr =
        train::train(cfg.train_cfg, train_ptrs, val_ptrs, ds.n_concepts, log);

    ojson meta;
    meta["run_id"] = id;
    meta["mode"] = cfg.train_cfg.mode;
    meta["dataset"] = portable_path(dataset_dir, out_root);
    meta["fold"] = cfg.fold;
    meta["n_folds"] = cfg.n_folds;
    meta["best_epoch"] = tr.best_epoch;
    meta["best_val_auc"] = tr.best_val_auc;
    meta["epochs"] = tr.history.epochs.size();
    meta["skipped_batches"] = tr.skipped_batches;

    std::vector<models::CheckpointEntry> entries{{"backbone", &tr.backbone.params()}};
    if (tr.propensity) entries.push_back({"propensity", &tr.propensity->params()});
    if (tr.imputation) entries.push_back({"imputation", &tr.imputation->params()});
    models::save_checkpoint((dir / "checkpoint.json").string(), entries, cfg.hash(),
                            meta.dump());
    tr.history.save_jsonl((dir / "history.jsonl").string(), id);

    man.outputs = {"checkpoint.json", "history.jsonl"};
    man.finished = config::timestamp_utc();
    man.write(dir / "manifest.json");

    TrainOutput out;
    out.dir = dir.string();
    out.run_id = id;
    out.best_val_auc = tr.best_val_auc;
    out.best_epoch = tr.best_epoch;
    out.epochs_run = tr.history.epochs.size();
    if (log != nullptr)
        *log << id << ": best val AUC " << tr.best_val_auc << " at epoch "
             << tr.best_epoch << " (" << out.epochs_run << " epochs)\n";
    return out;
}

// --- eval ------------------------------------------------------------------------

std::string csv_header() {
    return "run_id,mode,gamma,lambda,seed,regime,auc,acc,rmse,true_risk,naive_risk,"
           "dr_risk,bias_bound";
}

std::string csv_line(const EvalRow& r) {
    auto opt = [](const std::optional<double>& v) {
        return v ? fmt_full(*v) : std::string();
    };
    std::ostringstream out;
    out << r.run_id << "," << r.mode << "," << fmt_full(r.gamma) << ","
        << fmt_full(r.lambda) << "," << r.seed << "," << r.regime << ","
        << fmt_full(r.auc) << "," << fmt_full(r.acc) << "," << fmt_full(r.rmse) << ","
        << opt(r.true_risk) << "," << opt(r.naive_risk) << "," << opt(r.dr_risk) << ","
        << opt(r.bias_bound);
    return out.str();
}

namespace {

ojson row_to_json(const EvalRow& r) {
    ojson j;
    j["run_id"] = r.run_id;
    j["mode"] = r.mode;
    j["gamma"] = r.gamma;
    j["lambda"] = r.lambda;
    j["seed"] = r.seed;
    j["regime"] = r.regime;
    j["auc"] = r.auc;
    j["acc"] = r.acc;
    j["rmse"] = r.rmse;
    if (r.true_risk) j["true_risk"] = *r.true_risk;
    if (r.naive_risk) j["naive_risk"] = *r.naive_risk;
    if (r.dr_risk) j["dr_risk"] = *r.dr_risk;
    if (r.bias_bound) j["bias_bound"] = *r.bias_bound;
    return j;
}

EvalRow row_from_json(const json& j) {
    EvalRow r;
    r.run_id = j.at("run_id").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.gamma = j.at("gamma").get<double>();
    r.lambda = j.at("lambda").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.regime = j.at("regime").get<std::string>();
    r.auc = j.at("auc").get<double>();
    r.acc = j.at("acc").get<double>();
    r.rmse = j.at("rmse").get<double>();
    if (j.contains("true_risk")) r.true_risk = j["true_risk"].get<double>();
    if (j.contains("naive_risk")) r.naive_risk = j["naive_risk"].get<double>();
    if (j.contains("dr_risk")) r.dr_risk = j["dr_risk"].get<double>();
    if (j.contains("bias_bound")) r.bias_bound = j["bias_bound"].get<double>();
    return r;
}

} // namespace

std::vector<EvalRow> run_eval(const std::string& checkpoint_dir,
                              const std::string& dataset_dir, const std::string& regime,
                              const std::string& cohort, std::ostream* log) {
    if (regime != "observed" && regime != "counterfactual" && regime != "both")
        throw std::invalid_argument("eval: regime must be observed, counterfactual or both");
    if (cohort != "test" && cohort != "val" && cohort != "train" && cohort != "all")
        throw std::invalid_argument("eval: cohort must be test, val, train or all");

    const fs::path cp_dir(checkpoint_dir);
    std::ifstream man_in(cp_dir / "manifest.json");
    if (!man_in)
        throw std::runtime_error("eval: no manifest.json in " + checkpoint_dir);
    const json man = json::parse(man_in);
    if (!man.contains("config"))
        throw std::runtime_error("eval: manifest has no config: " + checkpoint_dir);

    config::KvMap kv;
    for (const auto& item : man["config"].items())
        kv[item.key()] = item.value().get<std::string>();
    const config::RunConfig cfg = config::RunConfig::from_kv(kv);
    if (man.contains("config_hash") &&
        man["config_hash"].get<std::string>() != cfg.hash())
        throw std::runtime_error("eval: manifest config hash mismatch in " +
                                 checkpoint_dir);

    // no --dataset: fall back to the one the checkpoint was trained on
    std::string ds_dir = dataset_dir;
    if (ds_dir.empty()) {
        if (!man.contains("inputs") || man["inputs"].empty())
            throw std::invalid_argument(
                "eval: no dataset given and the checkpoint manifest lists none");
        ds_dir = man["inputs"][0].get<std::string>();
        if (fs::path(ds_dir).is_relative())
            ds_dir = (cp_dir.parent_path() / ds_dir).string();
    }

    const data::Dataset ds = data::load_dataset(ds_dir);
    if (ds.n_concepts != cfg.synth.n_concepts)
        throw std::runtime_error("eval: dataset/config concept count mismatch");

    const bool is_tsdr = cfg.train_cfg.mode == "tsdr";
    models::ModelConfig mc;
    mc.n_concepts = ds.n_concepts;
    mc.dim = cfg.train_cfg.dim;
    mc.dropout = cfg.train_cfg.dropout;
    mc.p_min = cfg.train_cfg.p_min;

    models::SeqModel backbone(mc, models::Head::Sigmoid, 1);
    std::optional<models::SeqModel> prop, imp;
    std::vector<std::pair<std::string, ad::ParamStore*>> stores{
        {"backbone", &backbone.params()}};
    if (is_tsdr) {
        prop.emplace(mc, models::Head::SigmoidClipped, 2);
        imp.emplace(mc, models::Head::Softplus, 3);
        stores.push_back({"propensity", &prop->params()});
        stores.push_back({"imputation", &imp->params()});
    }
    std::string cp_hash;
    const std::string meta_str =
        models::load_checkpoint((cp_dir / "checkpoint.json").string(), stores, &cp_hash);
    if (cp_hash != cfg.hash())
        throw std::runtime_error("eval: checkpoint config hash mismatch in " +
                                 checkpoint_dir);
    const json meta = json::parse(meta_str);
    const std::string run_id =
        meta.contains("run_id") ? meta["run_id"].get<std::string>()
                                : cp_dir.filename().string();

    Manifest eman;
    eman.subcommand = "eval";
    eman.cfg = &cfg;
    eman.extra["run_id"] = run_id;
    eman.extra["regime"] = regime;
    eman.extra["cohort"] = cohort;
    const fs::path eval_root = cp_dir.parent_path();
    eman.inputs = {portable_path(checkpoint_dir, eval_root),
                   portable_path(ds_dir, eval_root)};
    eman.started = config::timestamp_utc();
    eman.write(cp_dir / "eval-manifest.json");

    const data::FoldSplit split = data::split_students(
        data::student_ids(ds.sequences), cfg.n_folds, cfg.fold, cfg.val_frac, cfg.seed());
    std::vector<std::string> ids;
    if (cohort == "test") ids = split.test_ids;
    else if (cohort == "val") ids = split.val_ids;
    else if (cohort == "train") ids = split.train_ids;
    else ids = data::student_ids(ds.sequences);

    EvalRow base;
    base.run_id = run_id;
    base.mode = cfg.train_cfg.mode;
    base.gamma = cfg.synth.gamma;
    base.lambda = cfg.train_cfg.lambda;
    base.seed = cfg.seed();

    std::vector<EvalRow> rows;
    if (regime == "observed" || regime == "both") {
        std::vector<data::StudentSequence> views;
        for (const data::StudentSequence* s : data::select_by_id(ds.sequences, ids))
            views.push_back(s->observed_view());
        data::truncate_sequences(views, cfg.train_cfg.max_len);
        data::filter_min_length(views, 2);
        if (views.empty())
            throw std::runtime_error("eval: cohort has no scorable observed sequences");
        std::vector<const data::StudentSequence*> ptrs;
        for (const data::StudentSequence& s : views) ptrs.push_back(&s);
        const eval::RegimeMetrics m =
            eval::eval_observed(backbone, ptrs, cfg.train_cfg.batch_size);
        EvalRow r = base;
        r.regime = "observed";
        r.auc = m.auc;
        r.acc = m.acc;
        r.rmse = m.rmse;
        rows.push_back(r);
    }
    if (regime == "counterfactual" || regime == "both") {
        if (!ds.has_ground_truth())
            throw std::runtime_error(
                "eval: counterfactual regime needs a ground-truth grid (synthetic data)");
        const eval::CounterfactualResult cf = eval::eval_counterfactual(
            ds, ids, backbone, is_tsdr ? &*prop : nullptr, is_tsdr ? &*imp : nullptr,
            cfg.variance_hypotheses, cfg.variance_eta);
        EvalRow r = base;
        r.regime = "counterfactual";
        r.auc = cf.metrics.auc;
        r.acc = cf.metrics.acc;
        r.rmse = cf.metrics.rmse;
        r.true_risk = cf.true_risk;
        r.naive_risk = cf.naive_risk;
        if (cf.dr) {
            r.dr_risk = cf.dr->dr_risk;
            if (cf.dr->has_ground_truth) r.bias_bound = cf.dr->bias_bound;
        }
        rows.push_back(r);
    }

    ojson out;
    out["run_id"] = run_id;
    out["manifest"] = "eval-manifest.json";
    out["checkpoint"] = portable_path(checkpoint_dir, eval_root);
    out["dataset"] = portable_path(ds_dir, eval_root);
    out["cohort"] = cohort;
    ojson jrows = ojson::array();
    for (const EvalRow& r : rows) jrows.push_back(row_to_json(r));
    out["rows"] = std::move(jrows);
    {
        std::ofstream f(cp_dir / "eval.json", std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write eval.json in " + checkpoint_dir);
        f << out.dump(2) << "\n";
    }

    eman.outputs = {"eval.json"};
    eman.finished = config::timestamp_utc();
    eman.write(cp_dir / "eval-manifest.json");

    if (log != nullptr)
        for (const EvalRow& r : rows)
            *log << run_id << " " << r.regime << ": auc " << r.auc << " acc " << r.acc
                 << " rmse " << r.rmse << "\n";
    return rows;
}

// --- sweep -----------------------------------------------------------------------

namespace {

// reuse an artifact directory when its manifest proves the same configuration
bool reusable(const fs::path& dir, const std::string& want_hash,
              const std::string& required_file) {
    if (!fs::exists(dir / "manifest.json") || !fs::exists(dir / required_file))
        return false;
    std::ifstream in(dir / "manifest.json");
    if (!in) return false;
    json man = json::parse(in, nullptr, false);
    if (man.is_discarded() || !man.contains("config_hash")) return false;
    return man["config_hash"].get<std::string>() == want_hash;
}

struct Agg {
    double gamma = 0.0, lambda = 0.0; // from the first member row
    std::vector<double> auc, acc, rmse, true_r, naive_r, dr_r, bias_b;
};

void agg_push(Agg& a, const EvalRow& r) {
    if (a.auc.empty()) {
        a.gamma = r.gamma;
        a.lambda = r.lambda;
    }
    a.auc.push_back(r.auc);
    a.acc.push_back(r.acc);
    a.rmse.push_back(r.rmse);
    if (r.true_risk) a.true_r.push_back(*r.true_risk);
    if (r.naive_risk) a.naive_r.push_back(*r.naive_risk);
    if (r.dr_risk) a.dr_r.push_back(*r.dr_risk);
    if (r.bias_bound) a.bias_b.push_back(*r.bias_bound);
}

double vec_mean(const std::vector<double>& v) {
    double s = 0.0;
    for (const double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double vec_sd(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = vec_mean(v);
    double ss = 0.0;
    for (const double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string agg_cell(const std::vector<double>& v, std::size_t expected, bool sd) {
    if (v.empty() || v.size() != expected) return "";
    return fmt_full(sd ? vec_sd(v) : vec_mean(v));
}

} // namespace

SweepOutput run_sweep(const std::string& axis, const std::vector<double>& values,
                      const std::vector<std::uint64_t>& seeds,
                      const config::RunConfig& base, const std::string& out_root,
                      std::ostream* log) {
    if (axis != "gamma" && axis != "lambda")
        throw std::invalid_argument("sweep: axis must be gamma or lambda");
    if (values.empty()) throw std::invalid_argument("sweep: no values");
    if (seeds.empty()) throw std::invalid_argument("sweep: no seeds");

    // sweep id covers everything that shapes its outputs
    std::ostringstream ident;
    ident << axis;
    for (const double v : values) ident << "," << fmt_full(v);
    for (const std::uint64_t s : seeds) ident << "," << s;
    ident << ";" << base.canonical();
    const std::string sweep_id = "sweep-" + axis + "-" + hash8(ident.str());
    const fs::path dir = fs::path(out_root) / sweep_id;
    fs::create_directories(dir);

    config::RunConfig cfg0 = base; // manifests show the base configuration
    Manifest man;
    man.subcommand = "sweep";
    man.cfg = &cfg0;
    man.extra["run_id"] = sweep_id;
    man.extra["axis"] = axis;
    man.extra["values"] = values;
    man.extra["seeds"] = seeds;
    man.started = config::timestamp_utc();
    man.write(dir / "manifest.json");

    SweepOutput out;
    out.dir = dir.string();

    const char* modes[] = {"naive", "tsdr"};
    // (mode, value, regime) -> aggregate accumulators, insertion-ordered
    std::vector<std::tuple<std::string, double, std::string>> agg_keys;
    std::map<std::string, Agg> aggs;
    auto agg_key = [](const std::string& mode, double value, const std::string& regime) {
        return mode + "|" + fmt_full(value) + "|" + regime;
    };

    for (const std::uint64_t seed : seeds) {
        for (const double value : values) {
            config::RunConfig cfg = base;
            cfg.set_seed(seed);
            if (axis == "gamma") cfg.synth.gamma = value;
            else cfg.train_cfg.lambda = value;

            // one dataset per (gamma, seed), shared by both modes; the id
            // hashes the generator keys, so an existing dir is the same data
            const fs::path ds_dir = fs::path(out_root) / synth_run_id(cfg);
            if (fs::exists(ds_dir / "interactions.jsonl")) {
                if (log != nullptr) *log << "reusing dataset " << ds_dir.string() << "\n";
            } else {
                run_synth(cfg, out_root, log);
            }

            for (const char* mode : modes) {
                config::RunConfig rc = cfg;
                rc.train_cfg.mode = mode;
                if (rc.train_cfg.mode == "naive") {
                    // lambda and the auxiliary-model knobs do not reach the
                    // naive objective; normalize them so the run id collapses
                    rc.train_cfg.lambda = 0.0;
                    rc.train_cfg.ts_target = "imputation";
                    rc.train_cfg.joint_learning = true;
                    rc.train_cfg.dr_concept_sample = 0;
                    rc.train_cfg.prop_use_kt_state = false;
                }
                const fs::path run_dir = fs::path(out_root) / train_run_id(rc);
                if (reusable(run_dir, rc.hash(), "checkpoint.json")) {
                    if (log != nullptr)
                        *log << "reusing checkpoint " << run_dir.string() << "\n";
                } else {
                    run_train(rc, ds_dir.string(), out_root, log);
                }
                const std::vector<EvalRow> rows =
                    run_eval(run_dir.string(), ds_dir.string(), "both", "test", log);
                for (const EvalRow& r : rows) {
                    out.rows.push_back(r);
                    const std::string key = agg_key(mode, value, r.regime);
                    if (aggs.find(key) == aggs.end())
                        agg_keys.emplace_back(mode, value, r.regime);
                    agg_push(aggs[key], r);
                }
            }
        }
    }

    const fs::path csv = dir / "sweep.csv";
    {
        std::ofstream f(csv, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + csv.string());
        f << csv_header() << "\n";
        for (const EvalRow& r : out.rows) f << csv_line(r) << "\n";
        // aggregate rows: seed column empty, run_id names the statistic
        const std::size_t n = seeds.size();
        for (const auto& [mode, value, regime] : agg_keys) {
            const Agg& a = aggs[agg_key(mode, value, regime)];
            for (const bool sd : {false, true}) {
                f << (sd ? "agg-std" : "agg-mean") << "," << mode << ",";
                f << fmt_full(a.gamma) << "," << fmt_full(a.lambda);
                f << ",," << regime << "," << agg_cell(a.auc, n, sd) << ","
                  << agg_cell(a.acc, n, sd) << "," << agg_cell(a.rmse, n, sd) << ","
                  << agg_cell(a.true_r, n, sd) << "," << agg_cell(a.naive_r, n, sd)
                  << "," << agg_cell(a.dr_r, n, sd) << "," << agg_cell(a.bias_b, n, sd)
                  << "\n";
            }
        }
    }

    man.outputs = {"sweep.csv"};
    man.finished = config::timestamp_utc();
    man.write(dir / "manifest.json");

    out.csv_path = csv.string();
    if (log != nullptr)
        *log << sweep_id << ": " << out.rows.size() << " run rows -> " << out.csv_path
             << "\n";
    return out;
}

// --- verify ----------------------------------------------------------------------

VerifyOutput run_verify(const VerifyOptions& opt, const std::string& out_root,
                        std::ostream* log) {
    const std::set<std::string> known{"unbiasedness", "bias-bound", "path-length",
                                      "naive-bias"};
    for (const std::string& o : opt.only)
        if (known.find(o) == known.end())
            throw std::invalid_argument("verify: unknown check '" + o + "'");
    auto selected = [&](const char* name) {
        return opt.only.empty() ||
               std::find(opt.only.begin(), opt.only.end(), name) != opt.only.end();
    };

    const std::string id = "verify-s" + std::to_string(opt.seed);
    const fs::path dir = fs::path(out_root) / id;
    fs::create_directories(dir);

    Manifest man;
    man.subcommand = "verify";
    man.extra["run_id"] = id;
    man.extra["seed"] = opt.seed;
    man.extra["only"] = opt.only;
    man.extra["inject_misspecified"] = opt.inject_misspecified;
    man.started = config::timestamp_utc();
    man.write(dir / "manifest.json");

    VerifyOutput out;
    out.dir = dir.string();
    if (selected("unbiasedness"))
        theory::verify_unbiasedness(out.report, opt.seed, opt.unbias_trials);
    if (selected("bias-bound"))
        theory::verify_bias_bound(out.report, opt.bias_worlds, opt.seed);
    if (selected("path-length"))
        theory::verify_path_length(out.report, opt.path_trajectories, opt.path_dim,
                                   opt.seed);
    if (selected("naive-bias")) {
        theory::NaiveBiasProfile profile = theory::NaiveBiasProfile::quick();
        theory::verify_naive_bias(out.report, profile, log);
    }
    if (opt.inject_misspecified)
        theory::inject_misspecified_failure(out.report, opt.seed);

    out.report.save((dir / "report.txt").string());
    man.outputs = {"report.txt"};
    man.finished = config::timestamp_utc();
    man.write(dir / "manifest.json");

    if (log != nullptr) out.report.print(*log);
    return out;
}

// --- report ----------------------------------------------------------------------

ReportOutput run_report(const std::string& out_root, std::ostream* log) {
    std::vector<fs::path> eval_files;
    if (fs::exists(out_root)) {
        for (const auto& entry : fs::recursive_directory_iterator(out_root)) {
            if (entry.is_regular_file() && entry.path().filename() == "eval.json")
                eval_files.push_back(entry.path());
        }
    }
    std::sort(eval_files.begin(), eval_files.end());

    std::vector<EvalRow> rows;
    for (const fs::path& p : eval_files) {
        std::ifstream in(p);
        if (!in) continue;
        json j = json::parse(in, nullptr, false);
        if (j.is_discarded() || !j.contains("rows")) continue;
        for (const json& r : j["rows"]) rows.push_back(row_from_json(r));
    }

    const fs::path dir = fs::path(out_root) / "report";
    fs::create_directories(dir);

    Manifest man;
    man.subcommand = "report";
    man.extra["run_id"] = "report";
    for (const fs::path& p : eval_files)
        man.inputs.push_back(portable_path(p, out_root));
    man.started = config::timestamp_utc();
    man.write(dir / "manifest.json");

    const fs::path csv = dir / "report.csv";
    {
        std::ofstream f(csv, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + csv.string());
        f << csv_header() << "\n";
        for (const EvalRow& r : rows) f << csv_line(r) << "\n";
    }

    man.outputs = {"report.csv"};
    man.finished = config::timestamp_utc();
    man.write(dir / "manifest.json");

    ReportOutput out;
    out.csv_path = csv.string();
    out.n_rows = rows.size();
    if (log != nullptr)
        *log << "report: " << out.n_rows << " rows -> " << out.csv_path << "\n";
    return out;
}

} // namespace tsdr::pipeline
