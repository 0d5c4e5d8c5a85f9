#include "qlae/checkpoint.hpp"

#include "qlae/config.hpp"

#include <json.hpp>

#include <bit>
#include <fstream>

namespace qlae {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts are unsupported");

namespace {

void write_payload(const std::filesystem::path& p, const std::vector<const Tensor<float>*>& parts) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  for (const Tensor<float>* t : parts) {
    f.write(reinterpret_cast<const char*>(t->data()),
            static_cast<std::streamsize>(t->numel() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("write failed: " + p.string());
}

void read_payload(const std::filesystem::path& p, const std::vector<Tensor<float>*>& parts) {
  std::size_t total = 0;
  for (const Tensor<float>* t : parts) total += t->numel();
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("missing payload " + p.string());
  if (static_cast<std::size_t>(f.tellg()) != total * sizeof(float)) {
    throw std::runtime_error("payload size mismatch in " + p.string() + ": expected " +
                             std::to_string(total * sizeof(float)) + " bytes");
  }
  f.seekg(0);
  for (Tensor<float>* t : parts) {
    f.read(reinterpret_cast<char*>(t->data()),
           static_cast<std::streamsize>(t->numel() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("read failed: " + p.string());
}

std::vector<std::string> tensor_names(const QlaeModel<float>& m) {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < m.encoder.layer_count(); ++l) {
    names.push_back("encoder.w" + std::to_string(l));
    names.push_back("encoder.b" + std::to_string(l));
  }
  for (std::size_t l = 0; l < m.decoder.layer_count(); ++l) {
    names.push_back("decoder.w" + std::to_string(l));
    names.push_back("decoder.b" + std::to_string(l));
  }
  names.push_back("codebook");
  return names;
}

}  // namespace

void save_checkpoint(const QlaeModel<float>& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto names = tensor_names(m);
  const auto& entries = m.opt.entries();
  if (entries.size() != names.size()) {
    throw std::logic_error("checkpoint: optimizer entry count does not match manifest");
  }
  json meta;
  meta["format_version"] = 1;
  meta["config"] = train_config_to_json(m.cfg);
  meta["config_hash"] = config_hash_hex(m.cfg);
  meta["input_dim"] = m.input_dim;
  meta["hidden"] = m.hidden;
  meta["step"] = m.step;
  meta["opt_step"] = m.opt.step_count();
  meta["rng"] = {{"seed", m.batch_rng.seed()},
                 {"stream", m.batch_rng.stream_id()},
                 {"counter", m.batch_rng.counter()}};
  json manifest = json::array();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    manifest.push_back({{"name", names[i]}, {"shape", entries[i].param->value.shape()}});
  }
  meta["tensors"] = manifest;
  std::ofstream mf(dir / "meta.json");
  if (!mf) throw std::runtime_error("cannot write meta.json in " + dir.string());
  mf << meta.dump(2) << "\n";

  std::vector<const Tensor<float>*> params, ms, vs;
  for (const auto& e : entries) {
    params.push_back(&e.param->value);
    ms.push_back(&e.m);
    vs.push_back(&e.v);
  }
  write_payload(dir / "params.f32", params);
  write_payload(dir / "opt_m.f32", ms);
  write_payload(dir / "opt_v.f32", vs);
}

QlaeModel<float> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "meta.json");
  if (!mf) throw std::runtime_error("missing checkpoint meta.json in " + dir.string());
  json meta;
  try {
    mf >> meta;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed checkpoint meta.json: " + std::string(e.what()));
  }
  try {
    if (meta.at("format_version").get<int>() != 1) {
      throw std::runtime_error("unsupported checkpoint format version");
    }
    const TrainConfig cfg = train_config_from_json(meta.at("config"));
    const std::string stored_hash = meta.at("config_hash").get<std::string>();
    if (config_hash_hex(cfg) != stored_hash) {
      throw std::runtime_error("checkpoint config hash mismatch: stored " + stored_hash +
                               ", recomputed " + config_hash_hex(cfg));
    }
    QlaeModel<float> m = init_model<float>(cfg, meta.at("input_dim").get<int>(),
                                           meta.at("hidden").get<std::vector<int>>());
    m.step = meta.at("step").get<long>();
    m.opt.set_step_count(meta.at("opt_step").get<long>());
    const auto& rng = meta.at("rng");
    m.batch_rng = RngStream(rng.at("seed").get<std::uint64_t>(),
                            rng.at("stream").get<std::uint64_t>(),
                            rng.at("counter").get<std::uint64_t>());

    const auto names = tensor_names(m);
    const json& manifest = meta.at("tensors");
    if (manifest.size() != names.size()) {
      throw std::runtime_error("checkpoint manifest length mismatch");
    }
    auto& entries = m.opt.entries();
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (manifest[i].at("name").get<std::string>() != names[i]) {
        throw std::runtime_error("checkpoint manifest order mismatch at " + names[i]);
      }
      const auto shape = manifest[i].at("shape").get<std::vector<std::size_t>>();
      if (shape != entries[i].param->value.shape()) {
        throw std::runtime_error("checkpoint tensor shape mismatch at " + names[i]);
      }
    }
    std::vector<Tensor<float>*> params, ms, vs;
    for (auto& e : entries) {
      params.push_back(&e.param->value);
      ms.push_back(&e.m);
      vs.push_back(&e.v);
    }
    read_payload(dir / "params.f32", params);
    read_payload(dir / "opt_m.f32", ms);
    read_payload(dir / "opt_v.f32", vs);
    return m;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed checkpoint meta.json: " + std::string(e.what()));
  }
}

}  // namespace qlae
