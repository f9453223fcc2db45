// tsdr: command-line front end.
//
//   synth    generate a synthetic dataset (one directory per gamma)
//   train    fit a model on a dataset and write a checkpoint
//   eval     score a checkpoint (observed and/or counterfactual regime)
//   sweep    grid over gamma or lambda, training + evaluating per cell
//   verify   run the numerical self-checks on the estimator machinery
//   report   collect every eval result under the output root into one CSV
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 a verification
// check failed.

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "tsdr/config.hpp"
#include "tsdr/pipeline.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_root;
};

// config file first, then --set overrides, then dedicated flags (appended
// last so they win over both)
tsdr::config::RunConfig resolve_config(const CommonOpts& common,
                                       const std::vector<std::string>& flag_overrides) {
    tsdr::config::KvMap kv;
    if (!common.config_path.empty()) kv = tsdr::config::load_kv_file(common.config_path);
    tsdr::config::apply_overrides(kv, common.overrides);
    tsdr::config::apply_overrides(kv, flag_overrides);
    return tsdr::config::RunConfig::from_kv(kv);
}

void add_common(CLI::App* cmd, CommonOpts& common) {
    cmd->add_option("--config", common.config_path, "key=value configuration file");
    cmd->add_option("--set", common.overrides,
                    "override a configuration key, e.g. --set students=500 (repeatable)");
    cmd->add_option("--out-root", common.out_root,
                    "artifact directory (default: $TSDR_OUT_ROOT or ./runs)");
}

std::string out_root_of(const CommonOpts& common) {
    return common.out_root.empty() ? tsdr::config::resolve_out_root() : common.out_root;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"knowledge-tracing lab: simulator, training and estimator checks"};
    app.require_subcommand(1);

    // ---- synth ----
    CommonOpts synth_common;
    std::vector<double> synth_gammas;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(synth, synth_common);
    synth->add_option("--gamma", synth_gammas,
                      "skip-pressure values; one dataset directory per value");

    // ---- train ----
    CommonOpts train_common;
    std::string train_dataset, train_mode, train_ts_target;
    double train_lambda = -1.0;
    std::int64_t train_seed = -1;
    bool train_no_joint = false;
    CLI::App* train = app.add_subcommand("train", "train a model on a dataset");
    add_common(train, train_common);
    train->add_option("--dataset", train_dataset, "dataset directory from synth")->required();
    train->add_option("--mode", train_mode, "naive or tsdr");
    train->add_option("--lambda", train_lambda, "temporal smoothness weight");
    train->add_option("--ts-on", train_ts_target, "smoothness target: imputation or backbone");
    train->add_option("--seed", train_seed, "training seed");
    train->add_flag("--no-joint", train_no_joint,
                    "pre-train propensity/imputation models, then freeze them");

    // ---- eval ----
    CommonOpts eval_common;
    std::string eval_checkpoint, eval_dataset;
    std::string eval_regime = "both";
    std::string eval_cohort = "test";
    CLI::App* eval = app.add_subcommand("eval", "score a checkpoint");
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint directory from train")
        ->required();
    eval->add_option("--dataset", eval_dataset, "dataset directory (defaults to the one trained on)");
    eval->add_option("--regime", eval_regime, "observed, counterfactual or both")
        ->check(CLI::IsMember({"observed", "counterfactual", "both"}));
    eval->add_option("--cohort", eval_cohort, "test, val, train or all")
        ->check(CLI::IsMember({"test", "val", "train", "all"}));
    eval->add_option("--out-root", eval_common.out_root,
                     "artifact directory (default: $TSDR_OUT_ROOT or ./runs)");

    // ---- sweep ----
    CommonOpts sweep_common;
    std::string sweep_axis = "gamma";
    std::vector<double> sweep_values;
    std::vector<std::uint64_t> sweep_seeds;
    CLI::App* sweep = app.add_subcommand("sweep", "train + evaluate over a parameter grid");
    add_common(sweep, sweep_common);
    sweep->add_option("--axis", sweep_axis, "gamma or lambda")
        ->check(CLI::IsMember({"gamma", "lambda"}));
    sweep->add_option("--values", sweep_values, "grid values (defaults per axis)");
    sweep->add_option("--seeds", sweep_seeds, "seeds, one full grid per seed (default 42)");

    // ---- verify ----
    CommonOpts verify_common;
    tsdr::pipeline::VerifyOptions vopt;
    CLI::App* verify = app.add_subcommand("verify", "run the numerical self-checks");
    verify->add_option("--seed", vopt.seed, "seed for the randomized checks");
    verify->add_option("--only", vopt.only,
                       "run a subset: unbiasedness, bias-bound, path-length, naive-bias");
    verify->add_flag("--inject-misspecified", vopt.inject_misspecified,
                     "append a deliberately broken check that must fail");
    verify->add_option("--trials", vopt.unbias_trials, "Monte Carlo draws per unbiasedness arm");
    verify->add_option("--worlds", vopt.bias_worlds, "random worlds for the bias bound");
    verify->add_option("--trajectories", vopt.path_trajectories,
                       "random trajectories for the path-length bound");
    verify->add_option("--dim", vopt.path_dim, "state dimension for the path-length bound");
    verify->add_option("--out-root", verify_common.out_root,
                       "artifact directory (default: $TSDR_OUT_ROOT or ./runs)");

    // ---- report ----
    CommonOpts report_common;
    CLI::App* report = app.add_subcommand("report", "collect eval results into one CSV");
    report->add_option("--out-root", report_common.out_root,
                       "artifact directory (default: $TSDR_OUT_ROOT or ./runs)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) {
            tsdr::config::RunConfig base = resolve_config(synth_common, {});
            if (synth_gammas.empty()) synth_gammas.push_back(base.synth.gamma);
            for (double g : synth_gammas) {
                tsdr::config::RunConfig cfg = base;
                cfg.synth.gamma = g;
                cfg.validate();
                tsdr::pipeline::SynthOutput out =
                    tsdr::pipeline::run_synth(cfg, out_root_of(synth_common), &std::cout);
                std::cout << "dataset " << out.dir << "\n";
            }
            return 0;
        }

        if (train->parsed()) {
            std::vector<std::string> flags;
            if (!train_mode.empty()) flags.push_back("mode=" + train_mode);
            if (train_lambda >= 0.0) flags.push_back("lambda=" + fmt(train_lambda));
            if (!train_ts_target.empty()) flags.push_back("ts_target=" + train_ts_target);
            if (train_seed >= 0) flags.push_back("seed=" + std::to_string(train_seed));
            if (train_no_joint) flags.push_back("joint_learning=0");
            tsdr::config::RunConfig cfg = resolve_config(train_common, flags);
            cfg.validate();
            tsdr::pipeline::TrainOutput out = tsdr::pipeline::run_train(
                cfg, train_dataset, out_root_of(train_common), &std::cout);
            std::cout << "checkpoint " << out.dir << "\n";
            return 0;
        }

        if (eval->parsed()) {
            std::vector<tsdr::pipeline::EvalRow> rows = tsdr::pipeline::run_eval(
                eval_checkpoint, eval_dataset, eval_regime, eval_cohort, &std::cout);
            std::cout << tsdr::pipeline::csv_header() << "\n";
            for (const auto& r : rows) std::cout << tsdr::pipeline::csv_line(r) << "\n";
            return 0;
        }

        if (sweep->parsed()) {
            tsdr::config::RunConfig base = resolve_config(sweep_common, {});
            base.validate();
            if (sweep_values.empty()) {
                if (sweep_axis == "gamma")
                    sweep_values = {0.0, 0.2, 0.4, 0.6, 0.8, 0.999};
                else
                    sweep_values = {0.0, 0.1, 0.3, 0.5, 0.7, 1.0, 2.0};
            }
            if (sweep_seeds.empty()) sweep_seeds = {42};
            tsdr::pipeline::SweepOutput out = tsdr::pipeline::run_sweep(
                sweep_axis, sweep_values, sweep_seeds, base, out_root_of(sweep_common),
                &std::cout);
            std::cout << "sweep " << out.csv_path << "\n";
            return 0;
        }

        if (verify->parsed()) {
            tsdr::pipeline::VerifyOutput out =
                tsdr::pipeline::run_verify(vopt, out_root_of(verify_common), &std::cout);
            return out.report.all_pass() ? 0 : 3;
        }

        if (report->parsed()) {
            tsdr::pipeline::ReportOutput out =
                tsdr::pipeline::run_report(out_root_of(report_common), &std::cout);
            std::cout << "report " << out.csv_path << " (" << out.n_rows << " rows)\n";
            return 0;
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    return 1;
}
