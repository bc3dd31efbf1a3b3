#include "ha2f/model.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "ha2f/errors.hpp"

namespace ha2f {

Ha2fNet::Ha2fNet(const BackboneConfig& cfg, const AblationToggles& toggles)
    : cfg_(cfg), toggles_(toggles), store_(cfg.seed) {
  cfg_.validate();
  backbone_ = std::make_unique<BackboneParams>(store_, cfg_);
  dhfcm_ = std::make_unique<DhfcmParams>(store_, cfg_, toggles_.hafs);
  decoder_ = std::make_unique<DecoderParams>(store_, cfg_,
                                             NafrmToggles{toggles_.sat, toggles_.dfsm});
}

Tensor Ha2fNet::forward_logits(const Tensor& img1, const Tensor& img2, bool training) {
  FeaturePyramid p1 = extract_pyramid(img1, *backbone_, Phase::one, training);
  FeaturePyramid p2 = extract_pyramid(img2, *backbone_, Phase::two, training);
  auto [r1, r2, diffs] = dhfcm_forward(p1, p2, *dhfcm_, training);
  return decode(diffs, *decoder_, NafrmToggles{toggles_.sat, toggles_.dfsm});
}

ParamSnapshot Ha2fNet::snapshot() const {
  ParamSnapshot s;
  for (const auto& [name, t] : store_.params()) s.emplace(name, t.values());
  for (const auto& [name, buf] : store_.buffers()) s.emplace(name, *buf);
  return s;
}

void Ha2fNet::restore(const ParamSnapshot& snap) {
  for (auto& [name, t] : store_.params()) {
    auto it = snap.find(name);
    if (it == snap.end()) throw CompatError("checkpoint missing parameter " + name);
    if (it->second.size() != static_cast<size_t>(t.numel()))
      throw CompatError("parameter " + name + " has " + std::to_string(it->second.size()) +
                        " values in checkpoint, model wants " + std::to_string(t.numel()));
    std::copy(it->second.begin(), it->second.end(), t.data());
  }
  for (const auto& [name, buf] : store_.buffers()) {
    auto it = snap.find(name);
    if (it == snap.end()) throw CompatError("checkpoint missing buffer " + name);
    if (it->second.size() != buf->size())
      throw CompatError("buffer " + name + " size mismatch");
    *buf = it->second;
  }
}

namespace {

constexpr char kMagic[8] = {'H', 'A', '2', 'F', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Ha2fNet& net, const std::string& config_json,
                     long long step) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot write checkpoint to " + path);
  os.write(kMagic, 8);
  write_u32(os, kVersion);
  write_u64(os, static_cast<uint64_t>(step));
  write_u64(os, config_json.size());
  os.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));

  ParamSnapshot snap = net.snapshot();
  write_u64(os, snap.size());
  for (const auto& [name, values] : snap) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, values.size());
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  if (!os) throw ConfigError("short write while saving checkpoint " + path);
}

LoadedCheckpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw CompatError("not a checkpoint file: " + path);
  const uint32_t version = read_u32(is);
  if (version != kVersion)
    throw CompatError("unsupported checkpoint version " + std::to_string(version));
  LoadedCheckpoint out;
  out.step = static_cast<long long>(read_u64(is));
  const uint64_t cfg_len = read_u64(is);
  out.config_json.resize(cfg_len);
  is.read(out.config_json.data(), static_cast<std::streamsize>(cfg_len));
  const uint64_t n = read_u64(is);
  for (uint64_t i = 0; i < n; ++i) {
    const uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint64_t count = read_u64(is);
    std::vector<double> values(count);
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) throw CompatError("truncated checkpoint " + path);
    out.state.emplace(std::move(name), std::move(values));
  }
  return out;
}

void load_into(Ha2fNet& net, const LoadedCheckpoint& ckpt) { net.restore(ckpt.state); }

}  // namespace ha2f
