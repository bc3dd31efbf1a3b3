#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ha2f/config.hpp"
#include "ha2f/errors.hpp"
#include "ha2f/metrics.hpp"
#include "ha2f/trainer.hpp"

namespace fs = std::filesystem;
using namespace ha2f;

namespace {

std::vector<ImagePair> make_synth_split(const ExperimentConfig& cfg, const std::string& split) {
  int begin = 0, count = cfg.data.synth_train;
  if (split == "val") {
    begin = cfg.data.synth_train;
    count = cfg.data.synth_val;
  } else if (split == "test") {
    begin = cfg.data.synth_train + cfg.data.synth_val;
    count = cfg.data.synth_test;
  } else if (split != "train") {
    throw ConfigError("unknown split \"" + split + "\" (expected train/val/test)");
  }
  std::vector<ImagePair> out;
  out.reserve(size_t(count));
  for (int i = 0; i < count; ++i) out.push_back(synth_pair(cfg.data.synth, begin + i));
  return out;
}

std::vector<ImagePair> load_split(const ExperimentConfig& cfg, const std::string& split) {
  if (cfg.data.use_synth) return make_synth_split(cfg, split);
  return load_dataset(cfg.data.root, split);
}

int cmd_synth(const ExperimentConfig& cfg) {
  if (!cfg.data.use_synth) throw ConfigError("synth requires a data.synth section in the config");
  fs::path root = fs::path(cfg.output_dir) / "data";
  int total = 0;
  for (const char* split : {"train", "val", "test"}) {
    std::vector<ImagePair> pairs = make_synth_split(cfg, split);
    for (const ImagePair& p : pairs) write_pair((root / split).string(), p);
    std::cout << split << ": " << pairs.size() << " pairs\n";
    total += int(pairs.size());
  }
  std::cout << "wrote " << total << " pairs under " << root.string() << "\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
  std::vector<ImagePair> train = load_split(cfg, "train"), val = load_split(cfg, "val");

  Ha2fNet net(cfg.backbone, cfg.train.ablation);
  Trainer trainer(net, cfg.train);

  fs::create_directories(cfg.output_dir);
  std::ofstream log(fs::path(cfg.output_dir) / "metrics.ndjson", std::ios::trunc);
  if (!log) throw ConfigError("cannot write metric log under " + cfg.output_dir);

  CheckpointRecord best = trainer.fit(train, val, &log);
  net.restore(best.params);
  std::string ckpt = (fs::path(cfg.output_dir) / "best.ckpt").string();
  save_checkpoint(ckpt, net, cfg.to_json(), best.step);

  std::cout << "best step " << best.step << " val_f1 " << best.val_scores.f1 << " val_iou "
            << best.val_scores.iou << "\n"
            << "checkpoint " << ckpt << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_root, const std::string& split,
             bool viz) {
  LoadedCheckpoint ckpt = read_checkpoint(ckpt_path);
  ExperimentConfig cfg = ExperimentConfig::from_json(ckpt.config_json);
  if (!data_root.empty()) {
    cfg.data.root = data_root;
    cfg.data.use_synth = false;
  }

  Ha2fNet net(cfg.backbone, cfg.train.ablation);
  load_into(net, ckpt);

  std::vector<ImagePair> pairs = load_split(cfg, split);
  for (const ImagePair& p : pairs)
    if (p.a.h != cfg.backbone.input_size || p.a.w != cfg.backbone.input_size)
      throw CompatError("checkpoint expects " + std::to_string(cfg.backbone.input_size) + "x" +
                        std::to_string(cfg.backbone.input_size) + " input but pair " + p.id +
                        " is " + std::to_string(p.a.h) + "x" + std::to_string(p.a.w));

  ConfusionCounts counts;
  fs::path viz_dir = fs::path(ckpt_path).parent_path() / "maps" / split;
  if (viz) fs::create_directories(viz_dir);
  for (const ImagePair& pair : pairs) {
    Tensor a = images_to_tensor({&pair.a}), b = images_to_tensor({&pair.b});
    Tensor logits = net.forward_logits(a, b, /*training=*/false);
    ChangeMap cm = classify(logits, cfg.train.threshold);
    accumulate(cm.mask, pair.label, counts);
    if (viz) {
      RgbImage map = render_error_map(cm.mask, pair.label);
      write_png_rgb8((viz_dir / (pair.id + ".png")).string(), map.h, map.w, map.v);
    }
  }
  std::cout << scores_json(scores(counts), counts) << "\n";
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg) {
  std::vector<ImagePair> train = load_split(cfg, "train"), val = load_split(cfg, "val"),
                         test = load_split(cfg, "test");

  std::vector<AblationRow> rows =
      run_ablation(cfg.backbone, cfg.train, train, val, test, &std::cerr);

  fs::create_directories(cfg.output_dir);
  std::ofstream(fs::path(cfg.output_dir) / "ablation.json", std::ios::trunc)
      << ablation_table_json(rows) << "\n";
  std::ofstream(fs::path(cfg.output_dir) / "ablation.txt", std::ios::trunc)
      << ablation_table_text(rows);
  std::cout << ablation_table_text(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HA2F change detection: synthesize data, train, evaluate, ablate"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, data_root, split = "test";
  bool viz = false;
  uint64_t seed_override = 0;
  bool seed_set = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment JSON")->required();
    cmd->add_option("--seed", seed_override, "override the root seed")
        ->each([&](const std::string&) { seed_set = true; });
  };

  CLI::App* synth = app.add_subcommand("synth", "write a synthetic A/B/label corpus");
  add_common(synth);
  CLI::App* train = app.add_subcommand("train", "train and keep the best checkpoint");
  add_common(train);
  CLI::App* ablate = app.add_subcommand("ablate", "run the 8-row toggle study");
  add_common(ablate);

  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on a split");
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--data", data_root, "corpus root with <split>/{A,B,label}");
  eval->add_option("--split", split, "train/val/test (default test)");
  eval->add_flag("--viz", viz, "write one error-map PNG per pair");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // bad usage is a config-class failure; --help stays 0
  }

  try {
    if (eval->parsed()) return cmd_eval(ckpt_path, data_root, split, viz);
    ExperimentConfig cfg = ExperimentConfig::from_json_file(config_path);
    if (seed_set) cfg.reseed(seed_override);
    if (synth->parsed()) return cmd_synth(cfg);
    if (train->parsed()) return cmd_train(cfg);
    return cmd_ablate(cfg);
  } catch (const CompatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
