#include "ha2f/config.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ha2f/errors.hpp"
#include "ha2f/rng.hpp"

namespace ha2f {

using json = nlohmann::ordered_json;

namespace {

void expect_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& ctx) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key \"" + key + "\" in " + ctx);
  }
}

template <typename T>
void get_to(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for \"") + key + "\": " + e.what());
  }
}

void parse_backbone(const json& j, BackboneConfig& b) {
  expect_keys(j,
              {"input_size", "patch_size", "vit_dim", "vit_depth", "vit_heads", "cnn_channels",
               "fused_channels", "seed"},
              "backbone");
  get_to(j, "input_size", b.input_size);
  get_to(j, "patch_size", b.patch_size);
  get_to(j, "vit_dim", b.vit_dim);
  get_to(j, "vit_depth", b.vit_depth);
  get_to(j, "vit_heads", b.vit_heads);
  if (j.contains("cnn_channels")) {
    std::vector<int> ch;
    get_to(j, "cnn_channels", ch);
    if (ch.size() != 4) throw ConfigError("backbone.cnn_channels must have 4 entries");
    for (int i = 0; i < 4; ++i) b.cnn_channels[i] = ch[size_t(i)];
  }
  get_to(j, "fused_channels", b.fused_channels);
  get_to(j, "seed", b.seed);
}

void parse_train(const json& j, TrainConfig& t) {
  expect_keys(j,
              {"batch_size", "lr0", "betas", "weight_decay", "max_steps", "poly_power",
               "eval_every", "seed", "ablation", "lambda_bce", "lambda_dice", "augment",
               "threshold"},
              "train");
  get_to(j, "batch_size", t.batch_size);
  get_to(j, "lr0", t.lr0);
  if (j.contains("betas")) {
    std::vector<double> betas;
    get_to(j, "betas", betas);
    if (betas.size() != 2) throw ConfigError("train.betas must have 2 entries");
    t.beta1 = betas[0];
    t.beta2 = betas[1];
  }
  get_to(j, "weight_decay", t.weight_decay);
  get_to(j, "max_steps", t.max_steps);
  get_to(j, "poly_power", t.poly_power);
  get_to(j, "eval_every", t.eval_every);
  get_to(j, "seed", t.seed);
  if (j.contains("ablation")) {
    const json& a = j.at("ablation");
    expect_keys(a, {"hafs", "sat", "dfsm"}, "train.ablation");
    get_to(a, "hafs", t.ablation.hafs);
    get_to(a, "sat", t.ablation.sat);
    get_to(a, "dfsm", t.ablation.dfsm);
  }
  get_to(j, "lambda_bce", t.lambda_bce);
  get_to(j, "lambda_dice", t.lambda_dice);
  get_to(j, "augment", t.augment);
  get_to(j, "threshold", t.threshold);
}

void parse_data(const json& j, DataConfig& d) {
  expect_keys(j, {"root", "synth"}, "data");
  bool has_root = j.contains("root"), has_synth = j.contains("synth");
  if (has_root == has_synth)
    throw ConfigError("data must specify exactly one of \"root\" or \"synth\"");
  if (has_root) {
    get_to(j, "root", d.root);
    d.use_synth = false;
    return;
  }
  d.use_synth = true;
  const json& s = j.at("synth");
  expect_keys(s,
              {"size", "n_objects", "change_fraction", "jitter_brightness", "jitter_contrast",
               "noise_sigma", "shift_px", "seed", "counts"},
              "data.synth");
  get_to(s, "size", d.synth.size);
  if (s.contains("n_objects")) {
    std::vector<int> r;
    get_to(s, "n_objects", r);
    if (r.size() != 2) throw ConfigError("data.synth.n_objects must have 2 entries");
    d.synth.n_objects_min = r[0];
    d.synth.n_objects_max = r[1];
  }
  if (s.contains("change_fraction")) {
    std::vector<double> r;
    get_to(s, "change_fraction", r);
    if (r.size() != 2) throw ConfigError("data.synth.change_fraction must have 2 entries");
    d.synth.change_fraction_lo = r[0];
    d.synth.change_fraction_hi = r[1];
  }
  get_to(s, "jitter_brightness", d.synth.jitter_brightness);
  get_to(s, "jitter_contrast", d.synth.jitter_contrast);
  get_to(s, "noise_sigma", d.synth.noise_sigma);
  get_to(s, "shift_px", d.synth.shift_px);
  get_to(s, "seed", d.synth.seed);
  if (s.contains("counts")) {
    std::vector<int> c;
    get_to(s, "counts", c);
    if (c.size() != 3) throw ConfigError("data.synth.counts must be [train, val, test]");
    d.synth_train = c[0];
    d.synth_val = c[1];
    d.synth_test = c[2];
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  backbone.validate();
  train.validate();
  if (data.use_synth) {
    data.synth.validate();
    if (data.synth_train <= 0 || data.synth_val <= 0 || data.synth_test <= 0)
      throw ConfigError("synth split counts must be > 0");
    if (data.synth.size != backbone.input_size)
      throw ConfigError("data.synth.size must equal backbone.input_size");
  } else if (data.root.empty()) {
    throw ConfigError("data.root must not be empty");
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

void ExperimentConfig::reseed(uint64_t root) {
  seed = root;
  backbone.seed = derive_seed(root, "backbone");
  train.seed = derive_seed(root, "train");
  data.synth.seed = derive_seed(root, "synth");
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  expect_keys(j, {"seed", "output_dir", "backbone", "train", "data"}, "config");

  ExperimentConfig cfg;
  get_to(j, "seed", cfg.seed);
  cfg.reseed(cfg.seed);  // derived sub-seeds; explicit ones below override
  get_to(j, "output_dir", cfg.output_dir);
  if (j.contains("backbone")) parse_backbone(j.at("backbone"), cfg.backbone);
  if (j.contains("train")) parse_train(j.at("train"), cfg.train);
  if (j.contains("data"))
    parse_data(j.at("data"), cfg.data);
  else
    throw ConfigError("config requires a \"data\" section");
  if (!j.contains("backbone") || !j.at("backbone").contains("seed"))
    cfg.backbone.seed = derive_seed(cfg.seed, "backbone");
  if (!j.at("data").contains("synth") || !j.at("data").at("synth").contains("seed"))
    cfg.data.synth.seed = derive_seed(cfg.seed, "synth");
  if (!j.contains("train") || !j.at("train").contains("seed"))
    cfg.train.seed = derive_seed(cfg.seed, "train");
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  j["backbone"] = {{"input_size", backbone.input_size},
                   {"patch_size", backbone.patch_size},
                   {"vit_dim", backbone.vit_dim},
                   {"vit_depth", backbone.vit_depth},
                   {"vit_heads", backbone.vit_heads},
                   {"cnn_channels", backbone.cnn_channels},
                   {"fused_channels", backbone.fused_channels},
                   {"seed", backbone.seed}};
  j["train"] = {{"batch_size", train.batch_size},
                {"lr0", train.lr0},
                {"betas", {train.beta1, train.beta2}},
                {"weight_decay", train.weight_decay},
                {"max_steps", train.max_steps},
                {"poly_power", train.poly_power},
                {"eval_every", train.eval_every},
                {"seed", train.seed},
                {"ablation",
                 {{"hafs", train.ablation.hafs}, {"sat", train.ablation.sat}, {"dfsm", train.ablation.dfsm}}},
                {"lambda_bce", train.lambda_bce},
                {"lambda_dice", train.lambda_dice},
                {"augment", train.augment},
                {"threshold", train.threshold}};
  if (data.use_synth)
    j["data"] = {{"synth",
                  {{"size", data.synth.size},
                   {"n_objects", {data.synth.n_objects_min, data.synth.n_objects_max}},
                   {"change_fraction", {data.synth.change_fraction_lo, data.synth.change_fraction_hi}},
                   {"jitter_brightness", data.synth.jitter_brightness},
                   {"jitter_contrast", data.synth.jitter_contrast},
                   {"noise_sigma", data.synth.noise_sigma},
                   {"shift_px", data.synth.shift_px},
                   {"seed", data.synth.seed},
                   {"counts", {data.synth_train, data.synth_val, data.synth_test}}}}};
  else
    j["data"] = {{"root", data.root}};
  return j.dump(2);
}

}  // namespace ha2f
