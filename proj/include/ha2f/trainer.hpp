#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "ha2f/data.hpp"
#include "ha2f/metrics.hpp"
#include "ha2f/model.hpp"
#include "ha2f/rng.hpp"

namespace ha2f {

struct TrainConfig {
  int batch_size = 16;
  double lr0 = 2e-4;
  double beta1 = 0.9, beta2 = 0.99;
  double weight_decay = 1e-4;
  long max_steps = 2000;
  double poly_power = 0.9;
  long eval_every = 100;
  uint64_t seed = 0;
  AblationToggles ablation;
  double lambda_bce = 1.0, lambda_dice = 1.0;
  bool augment = true;
  double threshold = 0.5;

  void validate() const;  // throws ConfigError
};

/// lr0 * (1 - step/max_steps)^poly_power; strictly decreasing for poly_power > 0.
double poly_lr(long step, const TrainConfig& cfg);

struct CheckpointRecord {
  long step = 0;
  ParamSnapshot params;
  Scores val_scores;
  bool is_best = false;
};

/// Adam with decoupled weight decay over every parameter in a store.
class Adam {
 public:
  Adam(nn::ParamStore& store, const TrainConfig& cfg);

  /// Applies accumulated gradients at the given learning rate.
  void step(double lr);
  long t() const { return t_; }

 private:
  nn::ParamStore& store_;
  double beta1_, beta2_, weight_decay_;
  double eps_ = 1e-8;
  long t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

class Trainer {
 public:
  Trainer(Ha2fNet& net, const TrainConfig& cfg);

  /// One optimizer step on a deterministically sampled batch. Returns the loss.
  double train_step(const std::vector<ImagePair>& train);

  /// Full-split evaluation in eval mode (running BN statistics).
  Scores evaluate(const std::vector<ImagePair>& split);

  /// Trains max_steps steps, evaluating every eval_every; appends one JSON
  /// line per evaluation to `log` if non-null. Returns the best checkpoint
  /// (max F1, ties broken by higher IoU then earlier step).
  CheckpointRecord fit(const std::vector<ImagePair>& train, const std::vector<ImagePair>& val,
                       std::ostream* log = nullptr);

  long step() const { return step_; }
  double last_lr() const { return last_lr_; }

 private:
  Ha2fNet& net_;
  TrainConfig cfg_;
  Adam opt_;
  Rng batch_rng_;
  long step_ = 0;
  double last_lr_ = 0.0;
};

struct AblationRow {
  AblationToggles toggles;
  Scores test_scores;
  long long param_count = 0;
};

/// Trains all 8 toggle combinations (off/off/off first, on/on/on last) with
/// identical seeds and data order; each row evaluates its best checkpoint on
/// the test split.
std::vector<AblationRow> run_ablation(const BackboneConfig& bb, const TrainConfig& tc,
                                      const std::vector<ImagePair>& train,
                                      const std::vector<ImagePair>& val,
                                      const std::vector<ImagePair>& test,
                                      std::ostream* progress = nullptr);

/// The 8 rows in table order.
std::vector<AblationToggles> ablation_grid();

/// Batch assembly helpers (inputs carry no gradient).
Tensor images_to_tensor(const std::vector<const Image*>& imgs);
Tensor labels_to_tensor(const std::vector<const BinaryMask*>& masks);

std::string ablation_table_json(const std::vector<AblationRow>& rows);
std::string ablation_table_text(const std::vector<AblationRow>& rows);

}  // namespace ha2f
