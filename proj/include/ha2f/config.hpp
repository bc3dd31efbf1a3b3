#pragma once

#include <string>

#include "ha2f/backbone.hpp"
#include "ha2f/data.hpp"
#include "ha2f/trainer.hpp"

namespace ha2f {

struct DataConfig {
  std::string root;  // A/B/label corpus directory; empty when synthetic
  bool use_synth = false;
  SynthConfig synth;
  int synth_train = 16, synth_val = 8, synth_test = 8;
};

/// One experiment = one JSON file. A single root seed fans out into
/// purpose-labeled sub-seeds unless a section pins its own.
struct ExperimentConfig {
  uint64_t seed = 0;
  std::string output_dir = "out";
  BackboneConfig backbone;
  TrainConfig train;
  DataConfig data;

  void validate() const;
  std::string to_json() const;

  static ExperimentConfig from_json(const std::string& text);       // throws ConfigError
  static ExperimentConfig from_json_file(const std::string& path);  // throws ConfigError

  /// Re-derives sub-seeds from a new root (used by --seed).
  void reseed(uint64_t root);
};

}  // namespace ha2f
