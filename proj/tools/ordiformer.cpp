#include "ordiformer/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace ordiformer;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> align;
    std::optional<std::string> head;
};

void add_config_flags(CLI::App* cmd, Common& c, bool model_flags) {
    cmd->add_option("--config", c.config, "INI config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.sets, "Override one config key, section.key=value");
    cmd->add_option("--seed", c.seed, "Seed override");
    if (model_flags) {
        cmd->add_option("--align", c.align, "Alignment mode")->check(CLI::IsMember({"off", "contrastive", "kl_distill"}));
        cmd->add_option("--head", c.head, "Ordinal head")->check(CLI::IsMember({"shared", "independent", "ce"}));
    }
}

RunConfig build_config(const Common& c, const char* seed_key) {
    ConfigMap values = c.config.empty() ? ConfigMap{} : read_config_map(c.config);
    for (const auto& s : c.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
        values[s.substr(0, eq)] = s.substr(eq + 1);
    }
    if (c.seed) values[seed_key] = std::to_string(*c.seed);
    if (c.align) values["align.mode"] = *c.align;
    if (c.head) values["model.head"] = *c.head;
    return run_config_from_map(values);
}

bool parse_on_off(const std::string& s) {
    if (s == "on") return true;
    if (s == "off") return false;
    throw ConfigError("--tta expects on or off");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Ordinal grading with CORAL heads, prompt alignment and TTA ensembles"};
    app.require_subcommand(1);

    Common synth_c;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    add_config_flags(synth, synth_c, false);
    synth->add_option("--out", synth_out, "Output directory")->required();

    Common train_c;
    std::string train_data, train_out;
    auto* train = app.add_subcommand("train", "Cross-validated training");
    add_config_flags(train, train_c, true);
    train->add_option("--data", train_data, "Dataset directory")->required();
    train->add_option("--out", train_out, "Run directory")->required();

    std::string cal_run, cal_data, cal_out, cal_tta = "on";
    auto* calibrate = app.add_subcommand("calibrate", "Tune the decision threshold on pooled validation logits");
    calibrate->add_option("--run", cal_run, "Run directory with fold checkpoints")->required();
    calibrate->add_option("--data", cal_data, "Dataset the run was trained on")->required();
    calibrate->add_option("--out", cal_out, "Output directory (default: run directory)");
    calibrate->add_option("--tta", cal_tta, "on|off")->check(CLI::IsMember({"on", "off"}));

    std::string ev_run, ev_data, ev_out, ev_mode = "ensemble", ev_combine = "logit_mean", ev_tta = "on";
    std::optional<double> ev_tau;
    std::optional<int> ev_fold;
    std::vector<int> ev_members;
    auto* eval = app.add_subcommand("eval", "Evaluate checkpoints on a dataset");
    eval->add_option("--run", ev_run, "Run directory")->required();
    eval->add_option("--data", ev_data, "Evaluation dataset")->required();
    eval->add_option("--out", ev_out, "Report directory")->required();
    eval->add_option("--mode", ev_mode, "single|ensemble")->check(CLI::IsMember({"single", "ensemble"}));
    eval->add_option("--combine", ev_combine, "logit_mean|majority_vote")
        ->check(CLI::IsMember({"logit_mean", "majority_vote"}));
    eval->add_option("--tta", ev_tta, "on|off")->check(CLI::IsMember({"on", "off"}));
    eval->add_option("--tau", ev_tau, "Decision threshold (default: calibration.json)");
    eval->add_option("--fold", ev_fold, "Fold used in single mode");
    eval->add_option("--members", ev_members, "Folds used in ensemble mode")->delimiter(',');

    std::string ex_ckpt, ex_image, ex_out;
    auto* explain = app.add_subcommand("explain", "Attention-rollout saliency for one image");
    explain->add_option("--checkpoint", ex_ckpt, "fold_<k>.json manifest")->required();
    explain->add_option("--image", ex_image, "PGM image")->required();
    explain->add_option("--out", ex_out, "Heatmap PGM path")->required();

    std::string cmp_a, cmp_b, cmp_metric = "val_accuracy";
    auto* compare = app.add_subcommand("compare", "Paired t-test between two per-fold logs");
    compare->add_option("log_a", cmp_a, "First summary CSV")->required();
    compare->add_option("log_b", cmp_b, "Second summary CSV")->required();
    compare->add_option("--metric", cmp_metric, "Column to compare");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : exit_code::config;
    }

    try {
        if (*synth) {
            cmd_synth(build_config(synth_c, "synth.seed"), synth_out, std::cout);
        } else if (*train) {
            cmd_train(build_config(train_c, "train.seed"), train_data, train_out, fold_threads_from_env(), std::cout);
        } else if (*calibrate) {
            cmd_calibrate(cal_run, cal_data, cal_out.empty() ? cal_run : cal_out, parse_on_off(cal_tta), std::cout);
        } else if (*eval) {
            EvalOptions opt;
            opt.mode = parse_eval_mode(ev_mode);
            opt.combine = parse_combine_mode(ev_combine);
            opt.tta = parse_on_off(ev_tta);
            opt.tau = ev_tau;
            opt.fold = ev_fold;
            opt.members = ev_members;
            cmd_eval(ev_run, ev_data, ev_out, opt, std::cout);
        } else if (*explain) {
            cmd_explain(ex_ckpt, ex_image, ex_out, std::cout);
        } else if (*compare) {
            cmd_compare(cmp_a, cmp_b, cmp_metric, std::cout);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return exit_code::ok;
}
