#include "ordiformer/commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <future>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

namespace ordiformer {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const DivergenceError*>(&e) || dynamic_cast<const NumericError*>(&e)) return exit_code::divergence;
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UsageError*>(&e) ||
        dynamic_cast<const DimensionError*>(&e)) {
        return exit_code::config;
    }
    if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const InputError*>(&e) ||
        dynamic_cast<const DegenerateInputError*>(&e) || dynamic_cast<const UndefinedMetricError*>(&e) ||
        dynamic_cast<const fs::filesystem_error*>(&e)) {
        return exit_code::data;
    }
    return exit_code::failure;
}

int fold_threads_from_env() {
    const char* raw = std::getenv("ORDIFORMER_THREADS");
    if (raw == nullptr) return 1;
    try {
        const int n = std::stoi(raw);
        return n > 0 ? n : 1;
    } catch (const std::exception&) {
        throw ConfigError(std::string("ORDIFORMER_THREADS must be a positive integer, got '") + raw + "'");
    }
}

namespace {

std::string fold_name(int k) { return "fold_" + std::to_string(k); }

json read_json(const fs::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + " is not valid JSON: " + e.what());
    }
}

std::map<std::string, std::size_t> index_by_id(const Dataset& data) {
    std::map<std::string, std::size_t> out;
    for (std::size_t i = 0; i < data.samples.size(); ++i) out.emplace(data.samples[i].id, i);
    return out;
}

std::vector<std::size_t> resolve_ids(const json& ids, const std::map<std::string, std::size_t>& index) {
    std::vector<std::size_t> out;
    for (const auto& id : ids) {
        auto it = index.find(id.get<std::string>());
        if (it == index.end()) throw DataError("sample " + id.get<std::string>() + " from splits.json is not in the dataset");
        out.push_back(it->second);
    }
    return out;
}

struct RunFolds {
    json splits;
    int count = 0;
};

RunFolds read_splits(const fs::path& run_dir) {
    const fs::path path = run_dir / "splits.json";
    if (!fs::exists(path)) throw DataError("no splits.json in " + run_dir.string());
    RunFolds out;
    out.splits = read_json(path);
    try {
        out.count = static_cast<int>(out.splits.at("folds").size());
    } catch (const json::exception& e) {
        throw DataError("malformed splits.json: " + std::string(e.what()));
    }
    if (out.count == 0) throw DataError("splits.json lists no folds");
    return out;
}

LoadedCheckpoint load_fold(const fs::path& run_dir, int k) {
    const fs::path manifest = run_dir / (fold_name(k) + ".json");
    if (!fs::exists(manifest)) throw DataError("missing checkpoint for fold " + std::to_string(k) + ": " + manifest.string());
    return load_checkpoint(manifest);
}

void check_grades(const Dataset& data, const ModelConfig& model) {
    int max_label = 0;
    for (const auto& s : data.samples) max_label = std::max(max_label, s.label);
    if (max_label >= model.num_grades) {
        throw ConfigError("dataset has grade " + std::to_string(max_label) + " but the checkpoint predicts " +
                          std::to_string(model.num_grades) + " grades");
    }
    const auto& img = data.samples.front().pixels;
    if (img.rows() != model.image_height() || img.cols() != model.image_width()) {
        throw ConfigError("dataset images are " + std::to_string(img.rows()) + "x" + std::to_string(img.cols()) +
                          " but the checkpoint expects " + std::to_string(model.image_height()) + "x" +
                          std::to_string(model.image_width()));
    }
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

void cmd_synth(const RunConfig& config, const fs::path& out_dir, std::ostream& log) {
    const SynthDataset data = generate(config.synth);
    write_dataset(out_dir, data);
    std::vector<int> counts(static_cast<std::size_t>(config.synth.num_grades), 0);
    for (const auto& s : data.data.samples) ++counts[static_cast<std::size_t>(s.label)];
    log << "wrote " << data.data.samples.size() << " images to " << out_dir.string() << "\n";
    for (std::size_t g = 0; g < counts.size(); ++g) log << "  grade " << g << ": " << counts[g] << "\n";
}

TrainSummary cmd_train(RunConfig config, const fs::path& data_dir, const fs::path& out_dir, int threads,
                       std::ostream& log) {
    const Dataset data = read_dataset(data_dir, config.train.model.num_grades);
    config.train.model.mlp.image_height = static_cast<int>(data.samples.front().pixels.rows());
    config.train.model.mlp.image_width = static_cast<int>(data.samples.front().pixels.cols());
    config.sync();
    config.validate();

    const std::vector<int> labels = data.labels();
    const auto splits = stratified_kfold(labels, config.folds, config.train.seed, config.regime, data.groups);
    std::optional<PromptSet> prompts;
    if (config.train.align.mode != AlignMode::off) {
        prompts = build_prompt_set(config.prompt_source, config.train.model.num_grades, config.prompt_dim,
                                   config.prompt_seed, config.prompt_file);
    }
    const PromptSet* prompt_ptr = prompts ? &*prompts : nullptr;

    std::vector<FoldResult> results(splits.size());
    const std::size_t width = static_cast<std::size_t>(std::max(1, threads));
    for (std::size_t start = 0; start < splits.size(); start += width) {
        const std::size_t stop = std::min(splits.size(), start + width);
        if (stop - start == 1) {
            results[start] = train_fold(data, splits[start], config.train, prompt_ptr);
            continue;
        }
        std::vector<std::future<FoldResult>> pending;
        for (std::size_t f = start; f < stop; ++f) {
            pending.push_back(std::async(std::launch::async, [&, f] {
                return train_fold(data, splits[f], config.train, prompt_ptr);
            }));
        }
        // get() in fold order; the first failing fold's exception propagates
        for (std::size_t f = start; f < stop; ++f) results[f] = pending[f - start].get();
    }

    fs::create_directories(out_dir);
    TrainSummary summary;
    json split_doc = {{"regime", to_string(config.regime)}, {"seed", config.train.seed}, {"folds", json::array()}};
    std::ostringstream csv;
    csv << "fold,best_epoch,epochs_run,early_stopped,val_accuracy,val_macro_f1,val_mae\n";
    for (std::size_t f = 0; f < results.size(); ++f) {
        FoldResult& r = results[f];
        CheckpointInfo info{r.fold_index, r.best_epoch, r.best_score, static_cast<int>(r.log.size()), r.early_stopped};
        save_checkpoint(out_dir / (fold_name(r.fold_index) + ".json"), *r.model, config, info);
        write_text(out_dir / (fold_name(r.fold_index) + "_log.csv"), training_log_csv(r.log));
        auto ids = [&](const std::vector<std::size_t>& rows) {
            json out = json::array();
            for (std::size_t i : rows) out.push_back(data.samples[i].id);
            return out;
        };
        split_doc["folds"].push_back({{"fold", splits[f].fold_index},
                                      {"train", ids(splits[f].train_ids)},
                                      {"val", ids(splits[f].val_ids)},
                                      {"test", ids(splits[f].test_ids)}});
        csv << r.fold_index << ',' << r.best_epoch << ',' << r.log.size() << ',' << (r.early_stopped ? 1 : 0) << ','
            << fmt(r.best.val_accuracy) << ',' << fmt(r.best.val_macro_f1) << ',' << fmt(r.best.val_mae) << '\n';
        summary.folds.push_back(info);
        summary.best.push_back(r.best);
    }
    write_text(out_dir / "splits.json", split_doc.dump(2) + "\n");
    write_text(out_dir / "summary.csv", csv.str());
    write_text(out_dir / "config.ini", to_ini(config));

    log << "fold  best_epoch  val_accuracy  val_macro_f1  val_mae\n";
    for (std::size_t f = 0; f < summary.folds.size(); ++f) {
        log << std::setw(4) << summary.folds[f].fold_index << std::setw(12) << summary.folds[f].best_epoch
            << std::fixed << std::setprecision(4) << std::setw(14) << summary.best[f].val_accuracy << std::setw(14)
            << summary.best[f].val_macro_f1 << std::setw(9) << summary.best[f].val_mae << "\n"
            << std::defaultfloat;
    }
    return summary;
}

CalibrationOutcome cmd_calibrate(const fs::path& run_dir, const fs::path& data_dir, const fs::path& out_dir,
                                 bool use_tta, std::ostream& log) {
    const RunFolds folds = read_splits(run_dir);
    std::vector<LoadedCheckpoint> models;
    for (int k = 0; k < folds.count; ++k) models.push_back(load_fold(run_dir, k));
    const RunConfig& config = models.front().config;
    if (config.train.model.head == HeadMode::ce) {
        throw ConfigError("calibrate: the ce head has no decision threshold to tune");
    }
    const Dataset data = read_dataset(data_dir, config.train.model.num_grades);
    check_grades(data, config.train.model);
    const auto index = index_by_id(data);
    const TtaPolicy policy = use_tta ? config.tta : TtaPolicy::identity_only();

    std::vector<std::string> ids;
    std::vector<int> labels;
    std::vector<Matrix> parts;
    for (int k = 0; k < folds.count; ++k) {
        const auto rows = resolve_ids(folds.splits["folds"][static_cast<std::size_t>(k)].at("val"), index);
        parts.push_back(tta_logits(*models[static_cast<std::size_t>(k)].model, data.images(rows), policy));
        for (std::size_t i : rows) {
            ids.push_back(data.samples[i].id);
            labels.push_back(data.samples[i].label);
        }
    }
    Matrix pooled(static_cast<Eigen::Index>(ids.size()), parts.front().cols());
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        pooled.middleRows(at, p.rows()) = p;
        at += p.rows();
    }

    CalibrationOutcome out;
    out.result = tune_tau(pooled, labels, config.tau_grid);
    out.n_val = ids.size();
    json doc = {{"tau", out.result.tau},
                {"macro_f1", out.result.macro_f1},
                {"n_val", out.n_val},
                {"folds", folds.count},
                {"grid", {{"lo", config.tau_grid.lo}, {"hi", config.tau_grid.hi}, {"step", config.tau_grid.step}}},
                {"tta_views", policy.names()}};
    write_text(out_dir / "calibration.json", doc.dump(2) + "\n");
    write_text(out_dir / "val_logits.csv", logit_dump_csv(ids, labels, pooled));
    log << "tau* = " << std::fixed << std::setprecision(2) << out.result.tau << "  macro-F1 = " << std::setprecision(4)
        << out.result.macro_f1 << "  (n_val = " << out.n_val << ")\n"
        << std::defaultfloat;
    return out;
}

EvalMode parse_eval_mode(const std::string& s) {
    if (s == "single") return EvalMode::single;
    if (s == "ensemble") return EvalMode::ensemble;
    throw ConfigError("unknown eval mode '" + s + "' (expected single|ensemble)");
}

MetricsReport cmd_eval(const fs::path& run_dir, const fs::path& data_dir, const fs::path& out_dir,
                       const EvalOptions& options, std::ostream& log) {
    const RunFolds folds = read_splits(run_dir);
    std::vector<int> chosen;
    if (options.mode == EvalMode::single) {
        if (options.fold) {
            if (*options.fold < 0 || *options.fold >= folds.count) {
                throw ConfigError("--fold " + std::to_string(*options.fold) + " outside 0.." + std::to_string(folds.count - 1));
            }
            chosen.push_back(*options.fold);
        } else {
            int best = -1;
            double best_score = 0.0;
            for (int k = 0; k < folds.count; ++k) {
                const json manifest = read_json(run_dir / (fold_name(k) + ".json"));
                const double score = manifest.at("training").at("best_score").get<double>();
                if (best < 0 || score > best_score) {
                    best = k;
                    best_score = score;
                }
            }
            chosen.push_back(best);
        }
    } else if (!options.members.empty()) {
        chosen = options.members;
        for (int k : chosen) {
            if (k < 0 || k >= folds.count) throw ConfigError("ensemble member " + std::to_string(k) + " does not exist");
        }
    } else {
        for (int k = 0; k < folds.count; ++k) chosen.push_back(k);
    }

    std::vector<LoadedCheckpoint> loaded;
    for (int k : chosen) loaded.push_back(load_fold(run_dir, k));
    const RunConfig& config = loaded.front().config;
    const HeadMode head = config.train.model.head;
    const Dataset data = read_dataset(data_dir, config.train.model.num_grades);
    check_grades(data, config.train.model);

    std::optional<double> tau = options.tau;
    if (head != HeadMode::ce && !tau) {
        const fs::path calib = run_dir / "calibration.json";
        if (!fs::exists(calib)) throw ConfigError("no tau given and no calibration.json in " + run_dir.string());
        tau = read_json(calib).at("tau").get<double>();
    }
    if (head == HeadMode::ce) tau.reset();
    if (tau && !(*tau > 0.0 && *tau < 1.0)) throw ConfigError("tau must lie in (0, 1)");

    const TtaPolicy policy = options.tta ? config.tta : TtaPolicy::identity_only();
    const std::vector<Image> images = [&] {
        std::vector<Image> out;
        for (const auto& s : data.samples) out.push_back(s.pixels);
        return out;
    }();
    const std::vector<int> truth = data.labels();
    std::vector<Matrix> per_member;
    for (auto& m : loaded) {
        std::vector<Model*> one{m.model.get()};
        per_member.push_back(ensemble_logits(one, images, policy));
    }
    const Matrix mean = mean_logits(per_member);
    std::vector<int> pred;
    if (options.combine == CombineMode::majority_vote) {
        std::vector<std::vector<int>> votes;
        for (const auto& z : per_member) votes.push_back(decode_logits(z, head, tau.value_or(0.5)));
        for (std::size_t i = 0; i < truth.size(); ++i) {
            std::vector<int> v;
            for (const auto& member : votes) v.push_back(member[i]);
            pred.push_back(majority_vote(v));
        }
    } else {
        pred = decode_logits(mean, head, tau.value_or(0.5));
    }

    const ConfusionMatrix cm = confusion(truth, pred, config.train.model.num_grades);
    MetricsReport report = classification_metrics(cm);
    try {
        report.macro_auroc = auroc_ovr_macro(class_distributions(mean, head), truth);
    } catch (const UndefinedMetricError&) {
        report.macro_auroc.reset();
    }
    report.accuracy_ci = bootstrap_ci([](auto t, auto p) { return accuracy(t, p); }, truth, pred,
                                      config.bootstrap_samples, config.bootstrap_level, config.bootstrap_seed);
    report.provenance.tau = tau;
    report.provenance.combine = to_string(options.combine);
    for (int k : chosen) report.provenance.members.push_back(fold_name(k));
    report.provenance.tta_views = policy.names();

    std::ostringstream preds;
    preds << "id,label,pred\n";
    for (std::size_t i = 0; i < truth.size(); ++i) preds << data.samples[i].id << ',' << truth[i] << ',' << pred[i] << '\n';
    write_text(out_dir / "report.json", to_json(report).dump(2) + "\n");
    write_text(out_dir / "report.csv", metrics_csv_header(config.train.model.num_grades) + "\n" + metrics_csv_row(report) + "\n");
    write_text(out_dir / "confusion.csv", confusion_csv(cm));
    write_text(out_dir / "predictions.csv", preds.str());

    log << std::fixed << std::setprecision(4) << "n = " << report.n << "  accuracy = " << report.accuracy << " ["
        << report.accuracy_ci->first << ", " << report.accuracy_ci->second << "]  macro-F1 = " << report.macro_f1
        << "  MAE = " << report.mae;
    if (report.macro_auroc) log << "  AUROC = " << *report.macro_auroc;
    log << "\n" << std::defaultfloat;
    return report;
}

Image saliency_heatmap(const Matrix& grid, int height, int width) {
    if (grid.size() == 0) throw InputError("saliency_heatmap: empty grid");
    Image out(height, width);
    const float lo = grid.minCoeff();
    const float hi = grid.maxCoeff();
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const auto gy = static_cast<Eigen::Index>(static_cast<long>(y) * grid.rows() / height);
            const auto gx = static_cast<Eigen::Index>(static_cast<long>(x) * grid.cols() / width);
            out(y, x) = hi > lo ? (grid(gy, gx) - lo) / (hi - lo) : 128.0f / 255.0f;
        }
    }
    return out;
}

ExplainResult cmd_explain(const fs::path& checkpoint, const fs::path& image_path, const fs::path& out_path,
                          std::ostream& log) {
    LoadedCheckpoint ck = load_checkpoint(checkpoint);
    const ModelConfig& mc = ck.config.train.model;
    if (mc.encoder != EncoderKind::patch) {
        throw UsageError("explain needs a patch-encoder checkpoint; this one uses the " + to_string(mc.encoder) + " encoder");
    }
    const Image image = read_pgm(image_path);
    if (image.rows() != mc.image_height() || image.cols() != mc.image_width()) {
        throw ConfigError("image is " + std::to_string(image.rows()) + "x" + std::to_string(image.cols()) +
                          ", checkpoint expects " + std::to_string(mc.image_height()) + "x" +
                          std::to_string(mc.image_width()));
    }
    Tape tape;
    const auto fwd = ck.model->forward(tape, std::span<const Image>(&image, 1));
    const int gh = mc.patch.image_height / mc.patch.patch_size;
    const int gw = mc.patch.image_width / mc.patch.patch_size;
    ExplainResult out;
    out.grid = attention_rollout(fwd.attn_maps.front(), gh, gw);
    out.heatmap = saliency_heatmap(out.grid, static_cast<int>(image.rows()), static_cast<int>(image.cols()));
    write_pgm(out_path, out.heatmap);

    std::ostringstream csv;
    csv.precision(9);
    for (Eigen::Index r = 0; r < out.grid.rows(); ++r) {
        for (Eigen::Index c = 0; c < out.grid.cols(); ++c) csv << (c ? "," : "") << out.grid(r, c);
        csv << '\n';
    }
    fs::path csv_path = out_path;
    csv_path.replace_extension(".csv");
    write_text(csv_path, csv.str());
    log << "wrote " << out_path.string() << " and " << csv_path.string() << "\n";
    return out;
}

std::vector<double> read_csv_column(const fs::path& path, const std::string& metric) {
    std::istringstream in(read_text(path));
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + " is empty");
    std::vector<std::string> header;
    {
        std::istringstream hs(line);
        std::string cell;
        while (std::getline(hs, cell, ',')) header.push_back(cell);
    }
    const auto it = std::find(header.begin(), header.end(), metric);
    if (it == header.end()) throw DataError(path.string() + " has no column '" + metric + "'");
    const auto col = static_cast<std::size_t>(it - header.begin());
    std::vector<double> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() <= col) throw DataError(path.string() + ": short row");
        try {
            out.push_back(std::stod(cells[col]));
        } catch (const std::exception&) {
            throw DataError(path.string() + ": bad value '" + cells[col] + "'");
        }
    }
    return out;
}

TTestResult cmd_compare(const fs::path& log_a, const fs::path& log_b, const std::string& metric, std::ostream& log) {
    const auto a = read_csv_column(log_a, metric);
    const auto b = read_csv_column(log_b, metric);
    if (a.size() != b.size()) {
        throw InputError("compare: " + std::to_string(a.size()) + " folds vs " + std::to_string(b.size()) + " folds");
    }
    const TTestResult r = paired_t_test(a, b);
    log << std::setprecision(6) << "metric " << metric << "  t = " << r.t << "  df = " << r.df << "  p = " << r.p << "\n";
    for (std::size_t i = 0; i < r.differences.size(); ++i) log << "  fold " << i << ": " << r.differences[i] << "\n";
    log << std::defaultfloat;
    return r;
}

}  // namespace ordiformer
