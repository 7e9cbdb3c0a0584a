#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "gtrans/config.hpp"
#include "gtrans/errors.hpp"
#include "gtrans/image_io.hpp"
#include "gtrans/metrics.hpp"
#include "gtrans/scoring.hpp"
#include "gtrans/serialize.hpp"
#include "gtrans/trainer.hpp"

namespace fs = std::filesystem;
using namespace gtrans;

namespace {

struct CommonArgs {
  std::string config = "default";
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "config file path, or 'default'");
  cmd->add_option("--set", args.sets, "dotted-path override, e.g. training.epochs=3");
}

std::string sanitize(const std::string& path) {
  std::string out;
  for (char c : path)
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << text;
}

void apply_lambdas(GTransModel& model, const RunConfig& config) {
  if (config.lambda_source == "unit")
    model.lambdas.assign(config.backbone.critical_layers.size(), 1.0);
  else if (model.lambdas.empty())
    throw DataError("checkpoint carries no calibrated lambdas; run calibrate-lambda first "
                    "or set score.lambda_source=unit");
}

EvaluationReport run_evaluation(GTransModel& model, const RunConfig& config,
                                const std::vector<ImageSample>& test, const std::string& out_dir,
                                bool emit_maps) {
  apply_lambdas(model, config);
  std::vector<AnomalyMap> maps;
  std::vector<PerImageScore> scores;
  CategoryResult result =
      evaluate_category(model, test, config.eval_settings(), emit_maps ? &maps : nullptr, &scores);
  EvaluationReport report;
  report.categories.push_back(result);
  report.fpr_cap = config.fpr_cap;

  fs::create_directories(out_dir);
  std::string cat = result.category;
  write_text(out_dir + "/report-" + cat + ".json", report.to_json());
  write_text(out_dir + "/report-" + cat + ".csv", report.to_csv());
  {
    std::ostringstream os;
    os.precision(17);
    os << "path,label,score\n";
    for (const auto& s : scores) os << s.path << "," << s.label << "," << s.score << "\n";
    write_text(out_dir + "/scores-" + cat + ".csv", os.str());
  }
  if (emit_maps) {
    fs::create_directories(out_dir + "/maps");
    for (size_t i = 0; i < maps.size(); ++i) {
      std::string stem =
          out_dir + "/maps/" + std::to_string(i) + "_" + sanitize(test[i].path);
      write_map_file(stem + ".gtm", maps[i].values);
      write_heatmap_png(stem + "_heatmap.png", maps[i].values);
      write_overlay_png(stem + "_overlay.png", test[i].pixels, maps[i].values);
    }
  }
  return report;
}

int cmd_make_synthetic(const CommonArgs& common, const std::string& out_dir) {
  RunConfig config = RunConfig::load(common.config, common.sets);
  DatasetSplit data = generate_synthetic_dataset(config.dataset.synthetic);
  fs::path base = fs::path(out_dir) / "synthetic";
  fs::create_directories(base / "train" / "good");
  fs::create_directories(base / "test" / "good");
  fs::create_directories(base / "test" / "patch");
  fs::create_directories(base / "ground_truth" / "patch");

  int idx = 0;
  char name[32];
  for (const auto& s : data.train) {
    std::snprintf(name, sizeof(name), "%03d.png", idx++);
    write_image_png((base / "train" / "good" / name).string(), s.pixels);
  }
  for (const auto& s : data.val) {  // the loader re-derives its own split
    std::snprintf(name, sizeof(name), "%03d.png", idx++);
    write_image_png((base / "train" / "good" / name).string(), s.pixels);
  }
  int n_good = 0, n_bad = 0;
  for (const auto& s : data.test) {
    if (s.label == Label::normal) {
      std::snprintf(name, sizeof(name), "%03d.png", n_good++);
      write_image_png((base / "test" / "good" / name).string(), s.pixels);
    } else {
      std::snprintf(name, sizeof(name), "%03d.png", n_bad);
      write_image_png((base / "test" / "patch" / name).string(), s.pixels);
      std::snprintf(name, sizeof(name), "%03d_mask.png", n_bad++);
      write_mask_png((base / "ground_truth" / "patch" / name).string(), s.mask);
    }
  }
  std::cout << "wrote synthetic dataset to " << base.string() << " (" << idx << " train, "
            << n_good << " test-normal, " << n_bad << " test-anomalous)\n";
  return 0;
}

int cmd_train(const CommonArgs& common, std::string out_dir) {
  RunConfig config = RunConfig::load(common.config, common.sets);
  if (out_dir.empty()) out_dir = config.paths.out_dir + "/" + config.category_name();
  fs::create_directories(out_dir);
  std::string snapshot = config.to_json().dump(2);
  write_text(out_dir + "/config.json", snapshot);

  DatasetSplit data = load_dataset(config);
  std::cout << "dataset: " << data.train.size() << " train / " << data.val.size() << " val / "
            << data.test.size() << " test\n";

  GTransModel model = GTransModel::build(config.model_config());
  TrainConfig tc = config.training;
  tc.checkpoint_dir = out_dir;
  tc.checkpoint_stem = "checkpoint-" + config.category_name();
  TrainResult result = train(model, data, tc, config.dataset.preprocess, snapshot);
  result.log.write_csv(out_dir + "/trainlog-" + config.category_name() + ".csv");
  std::cout << "trained " << result.log.rows.size() << " epochs; best val loss "
            << result.best_val_loss << " at epoch " << result.best_epoch << "\n";

  if (!data.val.empty()) {
    LambdaCalibration cal = calibrate_lambda(model, data.val, config.dataset.preprocess);
    model.lambdas = cal.lambdas;
    nlohmann::json lj = {{"lambdas", cal.lambdas}, {"clamped", cal.clamped}};
    write_text(out_dir + "/lambdas-" + config.category_name() + ".json", lj.dump(2));
    for (size_t l = 0; l < cal.clamped.size(); ++l)
      if (cal.clamped[l])
        std::cerr << "warning: lambda for layer " << l << " was clamped\n";
    model.save_checkpoint(result.checkpoint_path, snapshot, result.best_epoch,
                          result.total_steps);
  } else {
    std::cerr << "warning: empty validation split, lambdas not calibrated\n";
  }
  std::cout << "checkpoint: " << result.checkpoint_path << "\n";
  return 0;
}

int cmd_calibrate(const CommonArgs& common, const std::string& checkpoint_path) {
  RunConfig config = RunConfig::load(common.config, common.sets);
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path, config.paths.weight_cache);
  DatasetSplit data = load_dataset(config);
  LambdaCalibration cal = calibrate_lambda(ckpt.model, data.val, config.dataset.preprocess);
  ckpt.model.lambdas = cal.lambdas;
  ckpt.model.save_checkpoint(checkpoint_path, ckpt.run_config_json, ckpt.epoch, ckpt.step);
  nlohmann::json lj = {{"lambdas", cal.lambdas}, {"clamped", cal.clamped}};
  write_text(fs::path(checkpoint_path).parent_path() /
                 ("lambdas-" + config.category_name() + ".json"),
             lj.dump(2));
  std::cout << "lambdas:";
  for (Scalar l : cal.lambdas) std::cout << " " << l;
  std::cout << "\n";
  return 0;
}

int cmd_evaluate(const CommonArgs& common, const std::string& checkpoint_path,
                 std::string out_dir, bool emit_maps) {
  RunConfig config = RunConfig::load(common.config, common.sets);
  if (out_dir.empty()) out_dir = config.paths.out_dir + "/eval-" + config.category_name();
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path, config.paths.weight_cache);
  DatasetSplit data = load_dataset(config);
  fs::create_directories(out_dir);
  write_text(out_dir + "/config.json", config.to_json().dump(2));
  EvaluationReport report = run_evaluation(ckpt.model, config, data.test, out_dir, emit_maps);
  std::cout << report.to_csv();
  return 0;
}

int cmd_ablate(const CommonArgs& common, const std::string& axis, std::string out_file,
               const std::string& checkpoint_path, bool train_variants) {
  if (axis != "layers" && axis != "tfm_depth" && axis != "decoder" && axis != "weights" &&
      axis != "modes")
    throw ConfigError("unknown ablation axis: " + axis +
                      " (expected layers|tfm_depth|decoder|weights|modes)");
  RunConfig config = RunConfig::load(common.config, common.sets);
  if (out_file.empty()) out_file = config.paths.out_dir + "/ablate-" + axis + ".csv";
  fs::path parent = fs::path(out_file).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  DatasetSplit data = load_dataset(config);

  auto train_fresh = [&](const RunConfig& variant) {
    GTransModel model = GTransModel::build(variant.model_config());
    TrainConfig tc = variant.training;
    tc.checkpoint_dir.clear();
    (void)train(model, data, tc, variant.dataset.preprocess);
    if (data.val.empty()) throw DataError("ablate: validation split required for calibration");
    model.lambdas = calibrate_lambda(model, data.val, variant.dataset.preprocess).lambdas;
    return model;
  };

  std::ostringstream csv;
  csv << "variant,image_auroc,pixel_auroc,aupro,n_images\n";
  csv.precision(10);
  auto emit = [&](const std::string& variant, GTransModel& model, const RunConfig& cfg) {
    RunConfig eval_cfg = cfg;
    apply_lambdas(model, eval_cfg);
    CategoryResult r = evaluate_category(model, data.test, eval_cfg.eval_settings());
    csv << variant << "," << r.image_auroc << "," << r.pixel_auroc << "," << r.aupro << ","
        << r.n_images << "\n";
    std::cout << "ablate " << axis << " " << variant << ": image_auroc=" << r.image_auroc
              << " pixel_auroc=" << r.pixel_auroc << " aupro=" << r.aupro << "\n";
  };

  if (axis == "modes" || axis == "weights") {
    GTransModel model = [&] {
      if (!checkpoint_path.empty())
        return std::move(load_checkpoint(checkpoint_path, config.paths.weight_cache).model);
      if (!train_variants)
        throw ConfigError("ablate " + axis + " needs --checkpoint or --train-variants");
      return train_fresh(config);
    }();
    if (axis == "modes") {
      for (CombinationMode mode : all_combination_modes()) {
        RunConfig variant = config;
        variant.score.mode = mode;
        emit(to_string(mode), model, variant);
      }
    } else {
      for (WeightKind w :
           {WeightKind::half, WeightKind::mse, WeightKind::cos, WeightKind::harmonic}) {
        RunConfig variant = config;
        variant.score.weight = w;
        emit(to_string(w), model, variant);
      }
    }
  } else if (axis == "tfm_depth" || axis == "decoder" || axis == "layers") {
    if (!train_variants)
      throw ConfigError("ablate " + axis + " retrains per variant; pass --train-variants");
    if (axis == "tfm_depth") {
      for (int s : {1, 2, 3}) {
        RunConfig variant = config;
        variant.tfm_blocks = s;
        GTransModel model = train_fresh(variant);
        emit("S=" + std::to_string(s), model, variant);
      }
    } else if (axis == "decoder") {
      for (bool use_decoder : {false, true}) {
        RunConfig variant = config;
        variant.tfm_use_decoder = use_decoder;
        GTransModel model = train_fresh(variant);
        emit(use_decoder ? "added_decoder" : "pure_encoder", model, variant);
      }
    } else {
      int stages = Backbone::stage_count(config.backbone.family);
      std::vector<std::vector<int>> subsets = {{1, 2, 3, 4}, {1, 2, 3}, {2, 3, 4}, {2, 3}};
      for (const auto& subset : subsets) {
        if (subset.back() > stages) continue;  // family lacks this stage
        RunConfig variant = config;
        variant.backbone.critical_layers = subset;
        // this sweep fuses by plain addition over whichever layers are tapped
        variant.score.sum_all_layers = true;
        std::string name = "layers=";
        for (size_t i = 0; i < subset.size(); ++i)
          name += (i ? "+" : "") + std::to_string(subset[i]);
        GTransModel model = train_fresh(variant);
        emit(name, model, variant);
      }
    }
  }
  write_text(out_file, csv.str());
  std::cout << "wrote " << out_file << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"guided-transformer anomaly detection pipeline"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, cal_args, ablate_args, synth_args;
  std::string train_out, eval_out, eval_ckpt, cal_ckpt, ablate_axis, ablate_out, ablate_ckpt,
      synth_out = "data";
  bool emit_maps = false, train_variants = false;
  std::string dataset_kind, epochs_short;

  CLI::App* train_cmd = app.add_subcommand("train", "train one category model");
  add_common(train_cmd, train_args);
  train_cmd->add_option("--out", train_out, "run directory (default runs/<category>)");
  train_cmd->add_option("--dataset", dataset_kind, "shortcut for dataset.kind");
  train_cmd->add_option("--epochs", epochs_short, "shortcut for training.epochs");

  CLI::App* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--out", eval_out, "output directory");
  eval_cmd->add_flag("--emit-maps", emit_maps, "write raw maps, heatmaps, and overlays");

  CLI::App* cal_cmd =
      app.add_subcommand("calibrate-lambda", "recalibrate lambdas on the validation split");
  add_common(cal_cmd, cal_args);
  cal_cmd->add_option("--checkpoint", cal_ckpt, "checkpoint file (updated in place)")->required();

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "sweep one ablation axis");
  add_common(ablate_cmd, ablate_args);
  ablate_cmd->add_option("--axis", ablate_axis, "layers|tfm_depth|decoder|weights|modes")
      ->required();
  ablate_cmd->add_option("--out", ablate_out, "output CSV path");
  ablate_cmd->add_option("--checkpoint", ablate_ckpt, "checkpoint for scoring-only axes");
  ablate_cmd->add_flag("--train-variants", train_variants, "train each variant at the configured scale");

  CLI::App* synth_cmd =
      app.add_subcommand("make-synthetic", "materialize the synthetic dataset as files");
  add_common(synth_cmd, synth_args);
  synth_cmd->add_option("--out", synth_out, "dataset root to write into");

  try {
    app.parse(argc, argv);
    if (train_cmd->parsed()) {
      if (!dataset_kind.empty()) train_args.sets.push_back("dataset.kind=" + dataset_kind);
      if (!epochs_short.empty()) train_args.sets.push_back("training.epochs=" + epochs_short);
      return cmd_train(train_args, train_out);
    }
    if (eval_cmd->parsed()) return cmd_evaluate(eval_args, eval_ckpt, eval_out, emit_maps);
    if (cal_cmd->parsed()) return cmd_calibrate(cal_args, cal_ckpt);
    if (ablate_cmd->parsed())
      return cmd_ablate(ablate_args, ablate_axis, ablate_out, ablate_ckpt, train_variants);
    if (synth_cmd->parsed()) return cmd_make_synthetic(synth_args, synth_out);
    return 1;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DivergedError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const MetricError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const InvalidInputError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
