#include "qlae/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace qlae {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& context) {
  if (!j.is_object()) throw std::invalid_argument(context + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) {
      std::string valid;
      for (const auto& k : allowed) valid += (valid.empty() ? "" : ", ") + k;
      throw std::invalid_argument(context + ": unknown key '" + key + "' (valid keys: " + valid +
                                  ")");
    }
  }
}

}  // namespace

json train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["lambda_reconstruct"] = cfg.lambda_reconstruct;
  j["lambda_quantize"] = cfg.lambda_quantize;
  j["lambda_commit"] = cfg.lambda_commit;
  j["batch_size"] = cfg.batch_size;
  j["max_updates"] = cfg.max_updates;
  j["n_z"] = cfg.n_z;
  j["n_v"] = cfg.n_v;
  j["learning_rate"] = cfg.learning_rate;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["epsilon"] = cfg.epsilon;
  j["weight_decay"] = cfg.weight_decay;
  j["quantization"] = cfg.quantization;
  j["global_codebook"] = cfg.global_codebook;
  j["seed"] = cfg.seed;
  j["log_every"] = cfg.log_every;
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  static const std::set<std::string> kKeys = {
      "lambda_reconstruct", "lambda_quantize", "lambda_commit", "batch_size",
      "max_updates",        "n_z",             "n_v",           "learning_rate",
      "beta1",              "beta2",           "epsilon",       "weight_decay",
      "quantization",       "global_codebook", "seed",          "log_every"};
  reject_unknown_keys(j, kKeys, "train config");
  TrainConfig cfg;
  if (j.contains("lambda_reconstruct")) cfg.lambda_reconstruct = j["lambda_reconstruct"].get<double>();
  if (j.contains("lambda_quantize")) cfg.lambda_quantize = j["lambda_quantize"].get<double>();
  if (j.contains("lambda_commit")) cfg.lambda_commit = j["lambda_commit"].get<double>();
  if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
  if (j.contains("max_updates")) cfg.max_updates = j["max_updates"].get<long>();
  if (j.contains("n_z")) cfg.n_z = j["n_z"].get<int>();
  if (j.contains("n_v")) cfg.n_v = j["n_v"].get<int>();
  if (j.contains("learning_rate")) cfg.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("beta1")) cfg.beta1 = j["beta1"].get<double>();
  if (j.contains("beta2")) cfg.beta2 = j["beta2"].get<double>();
  if (j.contains("epsilon")) cfg.epsilon = j["epsilon"].get<double>();
  if (j.contains("weight_decay")) cfg.weight_decay = j["weight_decay"].get<double>();
  if (j.contains("quantization")) cfg.quantization = j["quantization"].get<bool>();
  if (j.contains("global_codebook")) cfg.global_codebook = j["global_codebook"].get<bool>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("log_every")) cfg.log_every = j["log_every"].get<long>();
  cfg.validate();
  return cfg;
}

std::string config_hash_hex(const TrainConfig& cfg) {
  const std::string canonical = train_config_to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

SourceSpace SpaceDescriptor::to_space() const {
  std::vector<std::string> labels = names;
  if (labels.empty()) {
    for (std::size_t i = 0; i < cardinalities.size(); ++i) {
      labels.push_back("source_" + std::to_string(i));
    }
  }
  return SourceSpace(cardinalities, labels);
}

SpaceDescriptor space_descriptor_from_json(const json& j) {
  static const std::set<std::string> kKeys = {"cardinalities", "names", "image_size"};
  reject_unknown_keys(j, kKeys, "space descriptor");
  SpaceDescriptor d;
  if (!j.contains("cardinalities")) {
    throw std::invalid_argument("space descriptor: 'cardinalities' is required");
  }
  d.cardinalities = j["cardinalities"].get<std::vector<int>>();
  if (j.contains("names")) d.names = j["names"].get<std::vector<std::string>>();
  if (j.contains("image_size")) d.image_size = j["image_size"].get<int>();
  return d;
}

RunConfig run_config_from_json(const json& j) {
  static const std::set<std::string> kKeys = {"data", "synthetic", "train", "eval_count", "out",
                                              "seeds"};
  reject_unknown_keys(j, kKeys, "run config");
  RunConfig r;
  if (j.contains("data")) r.data_dir = j["data"].get<std::string>();
  if (j.contains("synthetic")) r.synthetic = space_descriptor_from_json(j["synthetic"]);
  if (r.data_dir.empty() && !r.synthetic) {
    throw std::invalid_argument("run config: set either 'data' or 'synthetic'");
  }
  if (!r.data_dir.empty() && r.synthetic) {
    throw std::invalid_argument("run config: 'data' and 'synthetic' are mutually exclusive");
  }
  if (j.contains("train")) r.train = train_config_from_json(j["train"]);
  if (j.contains("eval_count")) r.eval_count = j["eval_count"].get<long>();
  if (j.contains("out")) r.out_dir = j["out"].get<std::string>();
  if (j.contains("seeds")) r.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  if (r.seeds.empty()) r.seeds = {r.train.seed};
  if (r.eval_count < 2) throw std::invalid_argument("run config: eval_count must be >= 2");
  return r;
}

namespace {
json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config file: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}
}  // namespace

RunConfig load_run_config(const std::string& path) {
  return run_config_from_json(load_json_file(path));
}

SweepSpec sweep_spec_from_json(const json& j) {
  static const std::set<std::string> kKeys = {"base", "axis", "values"};
  reject_unknown_keys(j, kKeys, "sweep spec");
  SweepSpec s;
  if (!j.contains("base") || !j.contains("axis") || !j.contains("values")) {
    throw std::invalid_argument("sweep spec: 'base', 'axis' and 'values' are required");
  }
  s.base = run_config_from_json(j["base"]);
  s.axis = j["axis"].get<std::string>();
  s.values = j["values"].get<std::vector<double>>();
  if (s.values.empty()) throw std::invalid_argument("sweep spec: 'values' must be nonempty");
  TrainConfig probe = s.base.train;
  apply_axis(probe, s.axis, s.values.front());  // validates the axis name
  return s;
}

SweepSpec load_sweep_spec(const std::string& path) {
  return sweep_spec_from_json(load_json_file(path));
}

void apply_axis(TrainConfig& cfg, const std::string& axis, double value) {
  if (axis == "weight_decay") cfg.weight_decay = value;
  else if (axis == "learning_rate") cfg.learning_rate = value;
  else if (axis == "lambda_quantize") cfg.lambda_quantize = value;
  else if (axis == "lambda_commit") cfg.lambda_commit = value;
  else if (axis == "lambda_reconstruct") cfg.lambda_reconstruct = value;
  else if (axis == "n_v") cfg.n_v = static_cast<int>(value);
  else if (axis == "n_z") cfg.n_z = static_cast<int>(value);
  else if (axis == "batch_size") cfg.batch_size = static_cast<int>(value);
  else if (axis == "max_updates") cfg.max_updates = static_cast<long>(value);
  else {
    throw std::invalid_argument(
        "unknown sweep axis '" + axis +
        "' (valid: weight_decay, learning_rate, lambda_quantize, lambda_commit, "
        "lambda_reconstruct, n_v, n_z, batch_size, max_updates)");
  }
}

}  // namespace qlae
