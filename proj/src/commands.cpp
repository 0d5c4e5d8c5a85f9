#include "qlae/commands.hpp"

#include "qlae/checkpoint.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

namespace qlae {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json step_record(const StepStats& st) {
  json j;
  j["step"] = st.step;
  j["loss_total"] = st.loss_total;
  j["loss_bce"] = st.loss_bce;
  j["loss_quantize"] = st.loss_quantize;
  j["loss_commit"] = st.loss_commit;
  j["psnr"] = finite_or_null(st.psnr);
  return j;
}

}  // namespace

std::size_t cmd_generate_data(const SpaceDescriptor& descriptor, const fs::path& out_dir) {
  const SourceSpace space = descriptor.to_space();
  const Dataset d = build_dataset(space, descriptor.image_size);
  save_dataset(d, out_dir);
  std::string cards;
  for (int c : space.cardinalities) cards += (cards.empty() ? "" : ",") + std::to_string(c);
  std::cout << "wrote " << d.count() << " rows, n_s=" << space.n_s() << ", cardinalities=["
            << cards << "] to " << out_dir.string() << "\n";
  return d.count();
}

Dataset resolve_dataset(const RunConfig& run) {
  if (!run.data_dir.empty()) return load_dataset(run.data_dir);
  return build_dataset(run.synthetic->to_space(), run.synthetic->image_size);
}

std::vector<fs::path> cmd_train(const RunConfig& run) {
  if (run.out_dir.empty()) throw std::invalid_argument("train: output directory required");
  const Dataset data = resolve_dataset(run);
  std::vector<fs::path> checkpoints;
  for (const std::uint64_t seed : run.seeds) {
    TrainConfig cfg = run.train;
    cfg.seed = seed;
    if (cfg.n_z == 0) cfg.n_z = 2 * data.space.n_s();
    const fs::path seed_dir = fs::path(run.out_dir) / ("seed_" + std::to_string(seed));
    fs::create_directories(seed_dir);

    QlaeModel<float> model = init_model<float>(cfg, static_cast<int>(data.pixels_per_image()));
    std::ofstream log(seed_dir / "metrics.jsonl");
    if (!log) throw std::runtime_error("cannot write metrics.jsonl in " + seed_dir.string());
    try {
      train(model, data, [&log](const StepStats& st) { log << step_record(st).dump() << "\n"; });
    } catch (const DivergenceError& e) {
      json diag = step_record(e.stats());
      diag["error"] = e.what();
      std::ofstream df(seed_dir / "diagnostics.json");
      df << diag.dump(2) << "\n";
      throw;
    }
    const fs::path ckpt = seed_dir / "checkpoint";
    save_checkpoint(model, ckpt);
    checkpoints.push_back(ckpt);
  }
  return checkpoints;
}

EvalSample encode_eval_sample(const QlaeModel<float>& model, const Dataset& data,
                              const std::vector<std::size_t>& rows, double* psnr_mean) {
  const std::size_t px = data.pixels_per_image();
  EvalSample sample;
  sample.n_s = data.space.n_s();
  sample.n_z = model.cfg.n_z;
  sample.count = rows.size();
  sample.kind = model.cfg.quantization ? LatentKind::kDiscrete : LatentKind::kContinuous;
  sample.sources.resize(rows.size() * sample.n_s);
  sample.latents.resize(rows.size() * sample.n_z);

  double psnr_acc = 0;
  const std::size_t chunk = 512;
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const std::size_t n = std::min(chunk, rows.size() - start);
    Tensor<float> imgs({n, px});
    for (std::size_t i = 0; i < n; ++i) {
      data.image_into(rows[start + i], imgs.data() + i * px);
      const std::uint8_t* src = data.source_row(rows[start + i]);
      std::copy(src, src + sample.n_s, sample.sources.begin() + (start + i) * sample.n_s);
    }
    const ReconstructResult<float> rec = reconstruct_values(model, imgs);
    for (std::size_t i = 0; i < n; ++i) {
      for (int j = 0; j < sample.n_z; ++j) {
        sample.latents[(start + i) * sample.n_z + j] =
            model.cfg.quantization ? static_cast<float>(rec.indices[i * sample.n_z + j])
                                   : rec.z_c.at(i, j);
      }
      double mse = 0;
      for (std::size_t p = 0; p < px; ++p) {
        const double d = static_cast<double>(rec.probabilities.at(i, p)) -
                         static_cast<double>(imgs.at(i, p));
        mse += d * d;
      }
      mse /= static_cast<double>(px);
      psnr_acc += mse == 0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);
    }
  }
  if (psnr_mean) *psnr_mean = psnr_acc / static_cast<double>(rows.size());
  return sample;
}

namespace {

bool has_constant_source(const EvalSample& s) {
  for (int i = 0; i < s.n_s; ++i) {
    const std::uint8_t first = s.sources[i];
    bool constant = true;
    for (std::size_t r = 1; r < s.count && constant; ++r) {
      constant = s.sources[r * s.n_s + i] == first;
    }
    if (constant) return true;
  }
  return false;
}

EvalOutput write_eval_outputs(const InfoMecResult& result, double psnr_mean, std::uint64_t seed,
                              const std::string& config_hash, long n_eval,
                              const fs::path& out_dir) {
  fs::create_directories(out_dir);
  EvalOutput out;
  out.infom = result.infom;
  out.infoe = result.infoe;
  out.infoc = result.infoc;
  out.psnr_mean = psnr_mean;
  out.n_active = result.n_active;
  out.seed = seed;
  out.config_hash = config_hash;

  json j;
  j["infom"] = result.infom;
  j["infoe"] = result.infoe;
  j["infoc"] = result.infoc;
  j["psnr_mean"] = finite_or_null(psnr_mean);
  j["n_active"] = result.n_active;
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  j["n_eval"] = n_eval;
  j["warnings"] = {{"ksg_skipped_samples", result.report.ksg_skipped},
                   {"ksg_degenerate", result.report.ksg_degenerate},
                   {"infoc_degenerate", result.infoc_degenerate}};
  out.metrics_json = out_dir / "metrics.json";
  std::ofstream jf(out.metrics_json);
  if (!jf) throw std::runtime_error("cannot write " + out.metrics_json.string());
  jf << j.dump(2) << "\n";

  out.nmi_csv = out_dir / "nmi.csv";
  std::ofstream cf(out.nmi_csv);
  if (!cf) throw std::runtime_error("cannot write " + out.nmi_csv.string());
  const NmiReport& rep = result.report;
  for (int jcol = 0; jcol < rep.n_z; ++jcol) {
    cf << (jcol ? "," : "") << (rep.active[jcol] ? 1 : 0);
  }
  cf << "\n";
  for (int i = 0; i < rep.n_s; ++i) {
    for (int jcol = 0; jcol < rep.n_z; ++jcol) {
      cf << (jcol ? "," : "") << format_double(rep.at(i, jcol));
    }
    cf << "\n";
  }
  return out;
}

}  // namespace

EvalOutput cmd_evaluate(const fs::path& checkpoint_dir, const fs::path& data_dir, long n_eval,
                        const fs::path& out_dir, int k) {
  const QlaeModel<float> model = load_checkpoint(checkpoint_dir);
  const Dataset data = load_dataset(data_dir);
  if (static_cast<std::size_t>(model.input_dim) != data.pixels_per_image()) {
    throw std::invalid_argument("evaluate: checkpoint input dim " +
                                std::to_string(model.input_dim) + " does not match dataset images");
  }
  if (n_eval < 2) throw std::invalid_argument("evaluate: n_eval must be >= 2");

  RngStream eval_rng(model.cfg.seed, kEvalStream);
  double psnr_mean = 0;
  EvalSample sample;
  for (int attempt = 0;; ++attempt) {
    const auto rows = eval_rng.draw_choice(data.count(), static_cast<std::size_t>(n_eval), true);
    sample = encode_eval_sample(model, data, rows, &psnr_mean);
    if (!has_constant_source(sample)) break;
    if (attempt == 1) {
      throw std::runtime_error(
          "evaluate: a source column is constant in the drawn sample after one redraw; "
          "increase n_eval or check the dataset");
    }
  }
  const InfoMecResult result = infomec(sample, k);
  return write_eval_outputs(result, psnr_mean, model.cfg.seed, config_hash_hex(model.cfg), n_eval,
                            out_dir);
}

EvalOutput cmd_evaluate_sample(const fs::path& sample_dir, const fs::path& out_dir, int k) {
  const EvalSample sample = load_eval_sample(sample_dir);
  const InfoMecResult result = infomec(sample, k);
  return write_eval_outputs(result, std::numeric_limits<double>::quiet_NaN(), 0, "external",
                            static_cast<long>(sample.count), out_dir);
}

SweepOutputs cmd_sweep(const SweepSpec& spec, int workers) {
  if (spec.base.out_dir.empty()) throw std::invalid_argument("sweep: output directory required");
  const Dataset data = resolve_dataset(spec.base);
  struct Cell {
    double value;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (double v : spec.values) {
    for (std::uint64_t s : spec.base.seeds) cells.push_back({v, s});
  }
  std::vector<SweepRow> rows(cells.size());

  if (workers <= 0) {
    workers = static_cast<int>(std::thread::hardware_concurrency());
    if (workers < 1) workers = 1;
  }
  workers = std::min<int>(workers, static_cast<int>(cells.size()));

  std::atomic<std::size_t> next{0};
  auto run_cell = [&](std::size_t idx) {
    const Cell cell = cells[idx];
    SweepRow& row = rows[idx];
    row.axis_value = cell.value;
    row.seed = cell.seed;
    try {
      TrainConfig cfg = spec.base.train;
      apply_axis(cfg, spec.axis, cell.value);
      cfg.seed = cell.seed;
      if (cfg.n_z == 0) cfg.n_z = 2 * data.space.n_s();

      char val_buf[32];
      std::snprintf(val_buf, sizeof(val_buf), "%g", cell.value);
      const fs::path cell_dir = fs::path(spec.base.out_dir) /
                                (spec.axis + "_" + val_buf) / ("seed_" + std::to_string(cell.seed));
      fs::create_directories(cell_dir);

      QlaeModel<float> model = init_model<float>(cfg, static_cast<int>(data.pixels_per_image()));
      std::ofstream log(cell_dir / "metrics.jsonl");
      train(model, data, [&log](const StepStats& st) { log << step_record(st).dump() << "\n"; });
      save_checkpoint(model, cell_dir / "checkpoint");

      RngStream eval_rng(cfg.seed, kEvalStream);
      const auto draw = eval_rng.draw_choice(data.count(),
                                             static_cast<std::size_t>(spec.base.eval_count), true);
      double psnr_mean = 0;
      const EvalSample sample = encode_eval_sample(model, data, draw, &psnr_mean);
      const InfoMecResult result = infomec(sample);
      write_eval_outputs(result, psnr_mean, cfg.seed, config_hash_hex(cfg), spec.base.eval_count,
                         cell_dir);
      row.infom = result.infom;
      row.infoe = result.infoe;
      row.infoc = result.infoc;
      row.psnr = psnr_mean;
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
  };
  auto worker = [&] {
    for (;;) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= cells.size()) return;
      run_cell(idx);
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  SweepOutputs out;
  out.rows = rows;
  std::stable_sort(out.rows.begin(), out.rows.end(), [](const SweepRow& a, const SweepRow& b) {
    if (a.ok != b.ok) return a.ok;
    return a.infom > b.infom;
  });

  fs::create_directories(spec.base.out_dir);
  out.csv = fs::path(spec.base.out_dir) / "sweep.csv";
  std::ofstream cf(out.csv);
  if (!cf) throw std::runtime_error("cannot write " + out.csv.string());
  cf << spec.axis << ",seed,infom,infoe,infoc,psnr,status\n";
  for (const SweepRow& r : out.rows) {
    if (r.ok) {
      cf << format_double(r.axis_value) << "," << r.seed << "," << format_double(r.infom) << ","
         << format_double(r.infoe) << "," << format_double(r.infoc) << ","
         << format_double(r.psnr) << ",ok\n";
    } else {
      cf << format_double(r.axis_value) << "," << r.seed << ",,,,,failed\n";
    }
  }

  // Best axis value by median InfoM over its seeds.
  double best_value = 0, best_median = -1;
  for (double v : spec.values) {
    std::vector<double> infoms;
    for (const SweepRow& r : rows) {
      if (r.ok && r.axis_value == v) infoms.push_back(r.infom);
    }
    if (infoms.empty()) continue;
    std::sort(infoms.begin(), infoms.end());
    const std::size_t n = infoms.size();
    const double median = n % 2 ? infoms[n / 2] : 0.5 * (infoms[n / 2 - 1] + infoms[n / 2]);
    if (median > best_median) {
      best_median = median;
      best_value = v;
    }
  }
  out.best_axis_value = best_value;
  out.best_median_infom = best_median;
  json best;
  best["axis"] = spec.axis;
  best["value"] = best_value;
  best["median_infom"] = best_median;
  std::ofstream bf(fs::path(spec.base.out_dir) / "best.json");
  bf << best.dump(2) << "\n";
  return out;
}

TraversalMeta cmd_traverse(const fs::path& checkpoint_dir, const fs::path& data_dir,
                           std::size_t image_index, int dim, int n_steps,
                           const fs::path& out_dir) {
  const QlaeModel<float> model = load_checkpoint(checkpoint_dir);
  const Dataset data = load_dataset(data_dir);
  const TraversalResult<float> result = latent_traversal(model, data, image_index, dim, n_steps);
  fs::create_directories(out_dir);
  for (std::size_t t = 0; t < result.frames.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%03zu.rgb", t);
    std::ofstream f(out_dir / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write frame in " + out_dir.string());
    const Tensor<float>& frame = result.frames[t];
    std::vector<std::uint8_t> bytes(frame.numel());
    for (std::size_t i = 0; i < frame.numel(); ++i) {
      bytes[i] = static_cast<std::uint8_t>(
          std::llround(std::clamp(frame[i], 0.0f, 1.0f) * 255.0f));
    }
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  }
  json meta;
  meta["dim"] = result.meta.dim;
  meta["min"] = result.meta.z_min;
  meta["max"] = result.meta.z_max;
  meta["steps"] = result.meta.n_steps;
  meta["inactive"] = result.meta.inactive;
  meta["height"] = data.height;
  meta["width"] = data.width;
  std::ofstream mf(out_dir / "traversal.json");
  mf << meta.dump(2) << "\n";
  return result.meta;
}

}  // namespace qlae
