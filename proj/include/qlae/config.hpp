#pragma once

#include "qlae/model.hpp"
#include "qlae/world.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace qlae {

nlohmann::json train_config_to_json(const TrainConfig& cfg);

/// Parses a config object, rejecting unknown keys (no silent defaults for
/// misspellings).
TrainConfig train_config_from_json(const nlohmann::json& j);

/// FNV-1a over the canonical serialized config; ties every artifact to the
/// exact configuration that produced it.
std::string config_hash_hex(const TrainConfig& cfg);

/// Synthetic-space descriptor accepted wherever a dataset path would be.
struct SpaceDescriptor {
  std::vector<int> cardinalities;
  std::vector<std::string> names;  // optional; defaults to source_<i>
  int image_size = 16;

  SourceSpace to_space() const;
};

SpaceDescriptor space_descriptor_from_json(const nlohmann::json& j);

/// One experiment: where the data comes from, how to train, how much to
/// evaluate, where outputs go, and which seeds to replicate over.
struct RunConfig {
  std::string data_dir;                        // empty when synthetic is set
  std::optional<SpaceDescriptor> synthetic;
  TrainConfig train;
  long eval_count = 10000;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;
};

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

/// Hyperparameter sweep: one numeric axis over a base run.
struct SweepSpec {
  RunConfig base;
  std::string axis;
  std::vector<double> values;
};

SweepSpec sweep_spec_from_json(const nlohmann::json& j);
SweepSpec load_sweep_spec(const std::string& path);

/// Applies an axis value to a config; throws on unknown axis names.
void apply_axis(TrainConfig& cfg, const std::string& axis, double value);

}  // namespace qlae
