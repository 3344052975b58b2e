#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "lstrl/backbone.hpp"
#include "lstrl/tensor_io.hpp"

namespace lstrl {

// Model checkpoints are plain named-tensor files: parameter values plus the
// optimizer moments/step counts under an "opt." prefix, and any scalar
// bookkeeping entries the caller adds (e.g. the epoch counter).
template <typename T>
void save_model_state(const std::filesystem::path& path, Model<T>& model,
                      const std::map<std::string, double>& extras = {}) {
  std::map<std::string, DenseTensor<T>> entries;
  for (auto& [name, p] : model.named_params()) {
    entries[name] = p->value;
    entries["opt." + name + ".m"] = p->adam_m;
    entries["opt." + name + ".v"] = p->adam_v;
    entries["opt." + name + ".t"] =
        DenseTensor<T>({1}, static_cast<T>(p->step_count));
  }
  for (const auto& [key, value] : extras)
    entries[key] = DenseTensor<T>({1}, static_cast<T>(value));
  write_checkpoint(path, entries);
}

// Architecture metadata embedded in checkpoints so that eval/inspect rebuild
// exactly the trained variant without repeating configuration flags.
inline std::map<std::string, double> backbone_extras(const BackboneConfig& cfg) {
  std::map<std::string, double> m;
  for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s)
    m["arch.stage" + std::to_string(s + 1)] = double(cfg.stage_channels[s]);
  m["arch.input_h"] = double(cfg.input_h);
  m["arch.input_w"] = double(cfg.input_w);
  m["arch.num_identities"] = double(cfg.num_identities);
  double mae_mask = 0, bme_mask = 0, gran_mask = 0;
  for (std::size_t s : cfg.insert_mae_after) mae_mask += double(1u << s);
  for (std::size_t s : cfg.insert_bme_after) bme_mask += double(1u << s);
  for (int i = 0; i < 4; ++i)
    if (cfg.mae_granularities[i]) gran_mask += double(1u << i);
  m["arch.insert_mae"] = mae_mask;
  m["arch.insert_bme"] = bme_mask;
  m["arch.granularities"] = gran_mask;
  m["arch.manner"] = cfg.bme_manner == MotionManner::local_to_local ? 1 : 0;
  m["arch.direction"] = cfg.bme_direction == MotionDirection::single ? 1 : 0;
  return m;
}

inline BackboneConfig backbone_from_extras(const std::map<std::string, double>& extras) {
  auto need = [&](const std::string& key) {
    auto it = extras.find(key);
    if (it == extras.end())
      throw DataError("checkpoint misses architecture entry '" + key + "'");
    return it->second;
  };
  BackboneConfig cfg;
  cfg.stage_channels.clear();
  for (std::size_t s = 1; s <= 4; ++s)
    cfg.stage_channels.push_back(static_cast<std::size_t>(need("arch.stage" + std::to_string(s))));
  cfg.input_h = static_cast<std::size_t>(need("arch.input_h"));
  cfg.input_w = static_cast<std::size_t>(need("arch.input_w"));
  cfg.num_identities = static_cast<std::size_t>(need("arch.num_identities"));
  const auto mae_mask = static_cast<unsigned>(need("arch.insert_mae"));
  const auto bme_mask = static_cast<unsigned>(need("arch.insert_bme"));
  const auto gran_mask = static_cast<unsigned>(need("arch.granularities"));
  cfg.insert_mae_after.clear();
  cfg.insert_bme_after.clear();
  for (std::size_t s = 1; s <= 4; ++s) {
    if (mae_mask & (1u << s)) cfg.insert_mae_after.insert(s);
    if (bme_mask & (1u << s)) cfg.insert_bme_after.insert(s);
  }
  for (int i = 0; i < 4; ++i) cfg.mae_granularities[i] = (gran_mask & (1u << i)) != 0;
  cfg.bme_manner = need("arch.manner") != 0 ? MotionManner::local_to_local
                                            : MotionManner::global_to_local;
  cfg.bme_direction =
      need("arch.direction") != 0 ? MotionDirection::single : MotionDirection::bi;
  return cfg;
}

// Restores parameters and optimizer state; returns the scalar extras.
template <typename T>
std::map<std::string, double> load_model_state(const std::filesystem::path& path,
                                               Model<T>& model) {
  auto entries = read_checkpoint<T>(path);
  for (auto& [name, p] : model.named_params()) {
    auto take = [&](const std::string& key, DenseTensor<T>& dst) {
      auto it = entries.find(key);
      if (it == entries.end()) throw DataError("checkpoint misses entry '" + key + "'");
      if (it->second.shape != dst.shape)
        throw DataError("checkpoint entry '" + key + "' has shape " +
                        shape_str(it->second.shape) + ", expected " + shape_str(dst.shape));
      dst = std::move(it->second);
      entries.erase(it);
    };
    take(name, p->value);
    take("opt." + name + ".m", p->adam_m);
    take("opt." + name + ".v", p->adam_v);
    auto it = entries.find("opt." + name + ".t");
    if (it == entries.end())
      throw DataError("checkpoint misses entry 'opt." + name + ".t'");
    p->step_count = static_cast<std::uint64_t>(it->second.data.at(0));
    entries.erase(it);
  }
  std::map<std::string, double> extras;
  for (auto& [key, tensor] : entries) {
    if (tensor.size() != 1)
      throw DataError("unexpected non-scalar checkpoint entry '" + key + "'");
    extras[key] = static_cast<double>(tensor.data[0]);
  }
  return extras;
}

}  // namespace lstrl
