#pragma once

#include <iosfwd>
#include <map>
#include <memory>
#include <string>

#include "ha2f/backbone.hpp"
#include "ha2f/change_head.hpp"
#include "ha2f/dhfcm.hpp"
#include "ha2f/nafrm.hpp"

namespace ha2f {

struct AblationToggles {
  bool hafs = true;
  bool sat = true;
  bool dfsm = true;
};

/// Snapshot of every parameter and buffer, detached from any graph.
using ParamSnapshot = std::map<std::string, std::vector<double>>;

class Ha2fNet {
 public:
  Ha2fNet(const BackboneConfig& cfg, const AblationToggles& toggles);

  /// img1/img2: (N,3,S,S) in [0,1]. Returns (N,1,S,S) logits.
  Tensor forward_logits(const Tensor& img1, const Tensor& img2, bool training);

  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }
  const BackboneConfig& config() const { return cfg_; }
  const AblationToggles& toggles() const { return toggles_; }
  long long param_count() const { return store_.param_count(); }

  ParamSnapshot snapshot() const;           // params + buffers
  void restore(const ParamSnapshot& snap);  // throws CompatError on mismatch

 private:
  BackboneConfig cfg_;
  AblationToggles toggles_;
  nn::ParamStore store_;
  std::unique_ptr<BackboneParams> backbone_;
  std::unique_ptr<DhfcmParams> dhfcm_;
  std::unique_ptr<DecoderParams> decoder_;
};

/// Single-file binary checkpoint with an embedded JSON config copy; contains
/// no timestamps so identical runs write identical bytes.
void save_checkpoint(const std::string& path, const Ha2fNet& net, const std::string& config_json,
                     long long step);

struct LoadedCheckpoint {
  std::string config_json;
  long long step = 0;
  ParamSnapshot state;
};

LoadedCheckpoint read_checkpoint(const std::string& path);

/// Builds the net described by the checkpoint's embedded config and restores
/// its state. `net` must match shapes or CompatError is thrown.
void load_into(Ha2fNet& net, const LoadedCheckpoint& ckpt);

}  // namespace ha2f
