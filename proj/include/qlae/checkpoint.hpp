#pragma once

#include "qlae/model.hpp"

#include <filesystem>

namespace qlae {

/**
 * Checkpoint directory layout:
 *   meta.json   - format version, config echo, config hash, input dim,
 *                 hidden widths, step counters, rng state, tensor manifest
 *   params.f32  - parameter payloads, raw little-endian float32, in optimizer
 *                 registration order (encoder W/b per layer, decoder W/b per
 *                 layer, codebook)
 *   opt_m.f32   - first-moment payloads, same order
 *   opt_v.f32   - second-moment payloads, same order
 * Round trips are bit-exact; training resumed from a checkpoint matches an
 * uninterrupted run bit for bit.
 */
void save_checkpoint(const QlaeModel<float>& m, const std::filesystem::path& dir);

/// Rebuilds the model from a checkpoint. Refuses checkpoints whose stored
/// config hash does not match the stored config.
QlaeModel<float> load_checkpoint(const std::filesystem::path& dir);

}  // namespace qlae
