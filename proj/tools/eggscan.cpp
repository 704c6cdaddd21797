#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "eggscan/backend.hpp"
#include "eggscan/config.hpp"
#include "eggscan/eval.hpp"
#include "eggscan/fusion.hpp"
#include "eggscan/manifest.hpp"
#include "eggscan/png_io.hpp"
#include "eggscan/preprocess.hpp"
#include "eggscan/synth.hpp"

namespace fs = std::filesystem;
using namespace eggscan;

namespace {

constexpr const char* kVersion = "1.0.0";

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string manifest_path;
  std::string backend;
  std::string model_path;
  std::string split = "none";  // train | test | none
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold;
  std::optional<double> sigma;
};

// File defaults < config file < command-line flags.
PipelineConfig resolve_config(const CommonArgs& args) {
  PipelineConfig cfg;
  if (!args.config_path.empty()) cfg = load_config(args.config_path);
  if (args.seed) apply_master_seed(cfg, *args.seed);
  if (args.threshold) cfg.fusion.threshold = *args.threshold;
  if (args.sigma) cfg.fusion.sigma = *args.sigma;
  if (!args.backend.empty()) cfg.backend = args.backend;
  cfg.check_valid();
  return cfg;
}

void ensure_out_dir(const std::string& out_dir) {
  if (out_dir.empty()) throw config_error("--out directory is required");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw io_error("cannot create output directory: " + out_dir);
}

// The class of a single-class image; split stratification needs one class
// per manifest entry.
EggClass entry_class(const ManifestEntry& e, std::size_t index) {
  if (e.annotations.empty())
    throw config_error("manifest entry " + std::to_string(index) +
                       " has no annotations; cannot assign a split class");
  const EggClass cls = e.annotations.front().class_label;
  for (const Annotation& a : e.annotations)
    if (a.class_label != cls)
      throw config_error("manifest entry " + std::to_string(index) +
                         " mixes classes; cannot assign a split class");
  return cls;
}

std::vector<std::size_t> select_entries(const DatasetManifest& manifest,
                                        const std::string& split,
                                        const SplitSpec& spec) {
  std::vector<std::size_t> all(manifest.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  if (split == "none") return all;
  if (split != "train" && split != "test")
    throw config_error("--split must be train, test or none");

  std::vector<std::vector<std::size_t>> per_class(kEggClassCount);
  for (std::size_t i = 0; i < manifest.size(); ++i)
    per_class[static_cast<int>(entry_class(manifest[i], i))].push_back(i);
  for (int k = kEggClassCount - 1; k >= 0; --k)
    if (per_class[k].empty()) per_class.erase(per_class.begin() + k);
  const DatasetSplit ds = split_dataset(per_class, spec);
  return split == "train" ? ds.train : ds.test;
}

std::vector<EvalItem> load_items(const DatasetManifest& manifest,
                                 const std::string& manifest_path,
                                 const std::vector<std::size_t>& indices) {
  std::vector<EvalItem> items;
  items.reserve(indices.size());
  for (std::size_t i : indices) {
    EvalItem item;
    item.image =
        read_png(resolve_manifest_path(manifest_path, manifest[i].image_path));
    item.annotations = manifest[i].annotations;
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<TrainingSource> make_sources(const std::vector<EvalItem>& items,
                                         const GridConfig& grid_config) {
  std::vector<TrainingSource> sources;
  sources.reserve(items.size());
  for (const EvalItem& item : items) {
    TrainingSource src;
    src.image = preprocess_image(item.image);
    src.annotations = item.annotations;
    const PatchGrid grid =
        patch_positions(src.image.width, src.image.height, grid_config);
    for (const auto& [pos, label] : label_patches(grid, item.annotations))
      if (label == PatchLabel::BG) src.bg_positions.push_back(pos);
    sources.push_back(std::move(src));
  }
  return sources;
}

BatchClassifier wrap_backend(Backend& backend) {
  return [&backend](const std::vector<ImageBuffer>& patches) {
    return classify_batch(backend, patches);
  };
}

int cmd_synth(const CommonArgs& args, int n) {
  PipelineConfig cfg = resolve_config(args);
  ensure_out_dir(args.out_dir);
  const DatasetManifest manifest = generate_dataset(cfg.synth, n, args.out_dir);
  write_run_json((fs::path(args.out_dir) / "run.json").string(), "synth", cfg,
                 {{"n", n}, {"images", manifest.size()}});
  std::printf("wrote %zu images under %s\n", manifest.size(),
              args.out_dir.c_str());
  return 0;
}

int cmd_prepare(const CommonArgs& args, bool save_preprocessed) {
  PipelineConfig cfg = resolve_config(args);
  if (args.manifest_path.empty()) throw config_error("--manifest is required");
  ensure_out_dir(args.out_dir);
  const DatasetManifest manifest = load_manifest(args.manifest_path);
  const auto indices = select_entries(manifest, args.split, cfg.split);

  std::ofstream labels_out(fs::path(args.out_dir) / "labels.jsonl");
  if (!labels_out) throw io_error("cannot write labels.jsonl");
  std::array<long, 6> totals{};
  static const char* label_names[6] = {"AL", "HD", "FB", "Tn", "BG", "EX"};

  for (std::size_t i : indices) {
    const ImageBuffer raw = read_png(
        resolve_manifest_path(args.manifest_path, manifest[i].image_path));
    const ImageBuffer prepared = preprocess_image(raw);
    if (save_preprocessed) {
      fs::create_directories(fs::path(args.out_dir) / "preprocessed");
      write_png((fs::path(args.out_dir) / "preprocessed" /
                 fs::path(manifest[i].image_path).filename())
                    .string(),
                prepared);
    }
    const PatchGrid grid =
        patch_positions(prepared.width, prepared.height, cfg.grid);
    nlohmann::json patches = nlohmann::json::array();
    for (const auto& [pos, label] :
         label_patches(grid, manifest[i].annotations)) {
      const int li = static_cast<int>(label);
      ++totals[li];
      patches.push_back(
          {{"x", pos.x}, {"y", pos.y}, {"label", label_names[li]}});
    }
    labels_out << nlohmann::json{{"image", manifest[i].image_path},
                                 {"patches", patches}}
                      .dump()
               << "\n";
  }
  if (!labels_out) throw io_error("short write on labels.jsonl");
  labels_out.close();

  nlohmann::json counts;
  for (int k = 0; k < 6; ++k) counts[label_names[k]] = totals[k];
  write_run_json((fs::path(args.out_dir) / "run.json").string(), "prepare", cfg,
                 {{"images", indices.size()}, {"patch_counts", counts}});
  std::printf("labelled %zu images: ", indices.size());
  for (int k = 0; k < 6; ++k)
    std::printf("%s=%ld%s", label_names[k], totals[k], k < 5 ? " " : "\n");
  return 0;
}

int cmd_augment(const CommonArgs& args, int dump_per_class) {
  PipelineConfig cfg = resolve_config(args);
  if (args.manifest_path.empty()) throw config_error("--manifest is required");
  ensure_out_dir(args.out_dir);
  const DatasetManifest manifest = load_manifest(args.manifest_path);
  const auto indices = select_entries(manifest, args.split, cfg.split);
  const auto sources = make_sources(
      load_items(manifest, args.manifest_path, indices), cfg.grid);

  if (dump_per_class > 0)
    fs::create_directories(fs::path(args.out_dir) / "patches");
  std::array<long, kNumClasses> emitted{};
  build_balanced_set_stream(
      sources, cfg.augment,
      [&](const LabeledPatch& lp) {
        const int k = static_cast<int>(lp.label);
        if (dump_per_class > 0 && emitted[k] < dump_per_class) {
          char name[64];
          std::snprintf(name, sizeof(name), "patches/%s_%04ld.png",
                        std::string(class_name(lp.label)).c_str(), emitted[k]);
          write_png((fs::path(args.out_dir) / name).string(), lp.patch);
        }
        ++emitted[k];
      },
      cfg.grid.patch_size);

  nlohmann::json counts;
  for (int k = 0; k < kNumClasses; ++k)
    counts[std::string(class_name(static_cast<EggClass>(k)))] = emitted[k];
  write_run_json((fs::path(args.out_dir) / "run.json").string(), "augment",
                 cfg, {{"images", indices.size()}, {"patch_counts", counts}});
  std::printf("balanced set:");
  for (int k = 0; k < kNumClasses; ++k)
    std::printf(" %s=%ld", std::string(class_name(static_cast<EggClass>(k))).c_str(),
                emitted[k]);
  std::printf("\n");
  return 0;
}

int cmd_train(const CommonArgs& args) {
  PipelineConfig cfg = resolve_config(args);
  if (args.manifest_path.empty()) throw config_error("--manifest is required");
  ensure_out_dir(args.out_dir);
  const DatasetManifest manifest = load_manifest(args.manifest_path);
  const auto indices = select_entries(manifest, args.split, cfg.split);
  const auto sources = make_sources(
      load_items(manifest, args.manifest_path, indices), cfg.grid);

  PreparedSet prepared;
  build_balanced_set_stream(
      sources, cfg.augment,
      [&](const LabeledPatch& lp) {
        prepared.append(lp.patch, lp.label, kReferenceInputSide);
      },
      cfg.grid.patch_size);
  std::printf("training on %zu patches (%d per class)\n", prepared.size(),
              cfg.augment.target_per_class);

  const TrainResult result = train_prepared(prepared, cfg.train);
  for (std::size_t e = 0; e < result.history.epochs.size(); ++e) {
    const EpochStats& st = result.history.epochs[e];
    std::printf(
        "epoch %2zu: train loss %.4f acc %.3f | val loss %.4f acc %.3f%s\n",
        e + 1, st.train_loss, st.train_accuracy, st.val_loss, st.val_accuracy,
        static_cast<int>(e) == result.history.selected_epoch ? "  <- selected"
                                                             : "");
  }

  const std::string model_path =
      (fs::path(args.out_dir) / "model.bin").string();
  save_model(result.model, model_path,
             {cfg.train.seed, result.history.selected_epoch});

  nlohmann::json epochs = nlohmann::json::array();
  for (const EpochStats& st : result.history.epochs)
    epochs.push_back({{"train_loss", st.train_loss},
                      {"train_accuracy", st.train_accuracy},
                      {"val_loss", st.val_loss},
                      {"val_accuracy", st.val_accuracy}});
  std::ofstream hist(fs::path(args.out_dir) / "history.json");
  hist << nlohmann::json{{"epochs", epochs},
                         {"selected_epoch", result.history.selected_epoch}}
              .dump(2)
       << "\n";
  if (!hist) throw io_error("cannot write history.json");

  write_run_json((fs::path(args.out_dir) / "run.json").string(), "train", cfg,
                 {{"patches", prepared.size()},
                  {"selected_epoch", result.history.selected_epoch},
                  {"model", "model.bin"}});
  std::printf("saved %s (epoch %d)\n", model_path.c_str(),
              result.history.selected_epoch + 1);
  return 0;
}

int cmd_detect(const CommonArgs& args, const std::string& image_path,
               bool save_map) {
  PipelineConfig cfg = resolve_config(args);
  if (image_path.empty()) throw config_error("--image is required");
  ensure_out_dir(args.out_dir);

  auto backend = open_backend(cfg.backend, args.model_path);
  const ImageBuffer raw = read_png(image_path);
  const ImageBuffer prepared = preprocess_image(raw);
  const PatchGrid grid =
      patch_positions(prepared.width, prepared.height, cfg.grid);
  std::vector<ImageBuffer> patches;
  patches.reserve(grid.positions.size());
  for (const Position& pos : grid.positions)
    patches.push_back(
        crop_patch(prepared, pos.x, pos.y, grid.config.patch_size));
  const auto probs = classify_batch(*backend, patches);
  const GaussianKernel kernel =
      gaussian_kernel(cfg.grid.patch_size, cfg.fusion.sigma);
  const ProbabilityMap map =
      fuse(grid.positions, probs, kernel, prepared.width, prepared.height);
  const Detection det = predict_image(map, cfg.fusion.threshold);

  write_png((fs::path(args.out_dir) / "overlay.png").string(),
            render_overlay(prepared, map, det));
  nlohmann::json dj = {{"x", det.x},
                       {"y", det.y},
                       {"confidence", det.confidence}};
  dj["class"] = det.label ? nlohmann::json(std::string(class_name(*det.label)))
                          : nlohmann::json(nullptr);
  std::ofstream dout(fs::path(args.out_dir) / "detection.json");
  dout << dj.dump(2) << "\n";
  if (!dout) throw io_error("cannot write detection.json");
  if (save_map)
    save_probability_map((fs::path(args.out_dir) / "map.bin").string(), map);

  write_run_json((fs::path(args.out_dir) / "run.json").string(), "detect", cfg,
                 {{"image", image_path}});
  if (det.label)
    std::printf("%s at (%d, %d), confidence %.3f\n",
                std::string(class_name(*det.label)).c_str(), det.x, det.y,
                det.confidence);
  else
    std::printf("NONE (max egg confidence %.3f)\n", det.confidence);
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& mode_str) {
  PipelineConfig cfg = resolve_config(args);
  if (args.manifest_path.empty()) throw config_error("--manifest is required");
  ensure_out_dir(args.out_dir);
  EvalMode mode;
  if (mode_str == "patch")
    mode = EvalMode::Patch;
  else if (mode_str == "whole-image")
    mode = EvalMode::WholeImage;
  else
    throw config_error("--mode must be patch or whole-image");

  const DatasetManifest manifest = load_manifest(args.manifest_path);
  const auto indices = select_entries(manifest, args.split, cfg.split);
  const auto items = load_items(manifest, args.manifest_path, indices);

  auto backend = open_backend(cfg.backend, args.model_path);
  const EvalResult result =
      evaluate_pipeline(items, wrap_backend(*backend), mode, cfg.grid,
                        cfg.fusion.sigma, cfg.fusion.threshold);

  const std::string model_name =
      cfg.backend == "reference" ? "Reference" : "External";
  const std::string analysis =
      mode == EvalMode::Patch ? "Patch-based" : "Whole-image";
  const std::string results = render_results_table(model_name, analysis,
                                                   result.metrics);
  const std::string precision =
      render_precision_table(model_name, result.metrics);
  const std::string confusion = render_confusion_table(result.matrix);
  std::printf("%s\n%s\n%s", results.c_str(), precision.c_str(),
              confusion.c_str());

  auto write_text = [&](const char* name, const std::string& body) {
    std::ofstream out(fs::path(args.out_dir) / name);
    out << body;
    if (!out) throw io_error(std::string("cannot write ") + name);
  };
  write_text("results_table.txt", results);
  write_text("precision_table.txt", precision);
  write_text("confusion.txt", confusion);

  nlohmann::json report = report_to_json(model_name, analysis, result);
  if (mode == EvalMode::WholeImage) {
    nlohmann::json dets = nlohmann::json::array();
    for (std::size_t i = 0; i < result.detections.size(); ++i) {
      const Detection& det = result.detections[i];
      nlohmann::json dj = {{"image", manifest[indices[i]].image_path},
                           {"x", det.x},
                           {"y", det.y},
                           {"confidence", det.confidence}};
      dj["class"] = det.label
                        ? nlohmann::json(std::string(class_name(*det.label)))
                        : nlohmann::json(nullptr);
      dets.push_back(dj);
    }
    report["detections"] = dets;
  }
  std::ofstream rout(fs::path(args.out_dir) / "report.json");
  rout << report.dump(2) << "\n";
  if (!rout) throw io_error("cannot write report.json");

  write_run_json((fs::path(args.out_dir) / "run.json").string(), "evaluate",
                 cfg, {{"mode", mode_str}, {"images", indices.size()}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"patch-based parasitic egg detection pipeline"};
  app.require_subcommand(1);

  CommonArgs args;
  std::uint64_t seed_value = 0;
  double threshold_value = 0.0, sigma_value = 0.0;

  auto add_common = [&](CLI::App* cmd, bool with_backend = false) {
    cmd->add_option("--config", args.config_path, "JSON config file");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", seed_value, "master seed for all stages")
        ->each([&](const std::string&) { args.seed = seed_value; });
    if (with_backend) {
      cmd->add_option("--backend", args.backend,
                      "classifier backend: reference or cmd:\"...\"");
      cmd->add_option("--model", args.model_path,
                      "model file for the reference backend");
      cmd->add_option("--threshold", threshold_value,
                      "detection confidence threshold")
          ->each([&](const std::string&) { args.threshold = threshold_value; });
      cmd->add_option("--sigma", sigma_value, "Gaussian fusion sigma")
          ->each([&](const std::string&) { args.sigma = sigma_value; });
    }
  };
  auto add_manifest = [&](CLI::App* cmd) {
    cmd->add_option("--manifest", args.manifest_path, "dataset manifest");
    cmd->add_option("--split", args.split,
                    "use the train or test side of the stratified split "
                    "(train|test|none)");
  };

  int synth_n = 4;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth);
  synth->add_option("--n", synth_n, "number of images")->required();

  bool save_preprocessed = false;
  CLI::App* prepare =
      app.add_subcommand("prepare", "preprocess, patch and label a dataset");
  add_common(prepare);
  add_manifest(prepare);
  prepare->add_flag("--save-preprocessed", save_preprocessed,
                    "also write preprocessed images");

  int dump_per_class = 0;
  CLI::App* augment =
      app.add_subcommand("augment", "build the balanced training set");
  add_common(augment);
  add_manifest(augment);
  augment->add_option("--dump", dump_per_class,
                      "write the first N patches per class as PNGs");

  CLI::App* train =
      app.add_subcommand("train", "train the reference classifier");
  add_common(train);
  add_manifest(train);

  std::string image_path;
  bool save_map = false;
  CLI::App* detect =
      app.add_subcommand("detect", "locate and classify the egg in one image");
  add_common(detect, true);
  detect->add_option("--image", image_path, "input PNG")->required();
  detect->add_flag("--save-map", save_map, "also write the probability map");

  std::string mode_str = "patch";
  CLI::App* evaluate =
      app.add_subcommand("evaluate", "score a model against a dataset");
  add_common(evaluate, true);
  add_manifest(evaluate);
  evaluate->add_option("--mode", mode_str, "patch or whole-image");

  CLI::App* version = app.add_subcommand("version", "print the version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (version->parsed()) {
      std::printf("eggscan %s\n", kVersion);
      return 0;
    }
    if (synth->parsed()) return cmd_synth(args, synth_n);
    if (prepare->parsed()) return cmd_prepare(args, save_preprocessed);
    if (augment->parsed()) return cmd_augment(args, dump_per_class);
    if (train->parsed()) return cmd_train(args);
    if (detect->parsed()) return cmd_detect(args, image_path, save_map);
    if (evaluate->parsed()) return cmd_evaluate(args, mode_str);
    std::fprintf(stderr, "no subcommand\n");
    return 1;
  } catch (const backend_error& e) {
    std::fprintf(stderr, "backend error: %s\n", e.what());
    return 2;
  } catch (const io_error& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return 3;
  } catch (const config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const invalid_input& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return 1;
  } catch (const error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
