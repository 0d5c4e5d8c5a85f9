#pragma once

#include "qlae/rng.hpp"
#include "qlae/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace qlae {

/// Discrete source layout: one cardinality and one label per source.
struct SourceSpace {
  std::vector<int> cardinalities;
  std::vector<std::string> names;

  SourceSpace(std::vector<int> cards, std::vector<std::string> labels);

  int n_s() const { return static_cast<int>(cardinalities.size()); }
  std::uint64_t product() const;

  static SourceSpace default_space();
};

/// One joint assignment of all sources.
struct SourceTuple {
  std::vector<int> values;
};

void validate_tuple(const SourceTuple& s, const SourceSpace& space);

// ---------------------------------------------------------------------------
// Renderer
//
// Sources fill the roles object-x, object-y, object-hue, background-hue in
// order; toy spaces with only two or three sources pin the missing hues to
// palette entry 0. The frame is filled with the background palette color,
// then a filled square of side ceil(H/4) is drawn whose top-left corner is
// the grid position round(value * (extent - side) / (cardinality - 1)).
//
// Palettes are fixed saturated colors with every channel at 0 or 255, so the
// Bernoulli reconstruction targets are exactly realizable and every source
// assignment is recoverable from pixels:
//   object:     red, green, blue, yellow
//   background: cyan, magenta, black, white
// The two palettes are disjoint, so the square never blends into the
// background. Hue cardinalities above 4 are rejected.
// ---------------------------------------------------------------------------

inline constexpr int kRendererSources = 4;
inline constexpr int kMaxHueCardinality = 4;

std::array<std::uint8_t, 3> object_palette(int index);
std::array<std::uint8_t, 3> background_palette(int index);

/// Renders to 8-bit RGB, row-major H x W x 3.
std::vector<std::uint8_t> render(const SourceTuple& s, const SourceSpace& space, int image_size);

/// True for pixels covered by the object square.
std::vector<bool> object_mask(const SourceTuple& s, const SourceSpace& space, int image_size);

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// Immutable collection of (source row, image) pairs. Images are stored as
/// 8-bit channels and dequantized to [0, 1] by /255 where consumed.
struct Dataset {
  SourceSpace space;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> sources;  // count x n_s
  std::vector<std::uint8_t> images;   // count x H x W x 3

  std::size_t count() const { return space.n_s() == 0 ? 0 : sources.size() / space.n_s(); }
  std::size_t pixels_per_image() const { return static_cast<std::size_t>(height) * width * 3; }

  const std::uint8_t* source_row(std::size_t i) const { return sources.data() + i * space.n_s(); }
  const std::uint8_t* image_row(std::size_t i) const { return images.data() + i * pixels_per_image(); }

  template <class T>
  void image_into(std::size_t i, T* out) const {
    const std::uint8_t* px = image_row(i);
    const std::size_t n = pixels_per_image();
    for (std::size_t k = 0; k < n; ++k) out[k] = static_cast<T>(px[k]) / T(255);
  }
};

/// Enumerates the full Cartesian product in odometer order (last source
/// fastest) and renders every row. Refuses products above `row_cap`.
Dataset build_dataset(const SourceSpace& space, int image_size, std::uint64_t row_cap = 1000000);

template <class T>
struct Batch {
  Tensor<T> images;                  // b x (H*W*3), dequantized
  std::vector<std::uint8_t> sources; // b x n_s, for evaluation only
  std::vector<std::size_t> rows;
};

/// b rows drawn uniformly with replacement.
template <class T>
Batch<T> sample_batch(const Dataset& d, RngStream& rng, std::size_t b) {
  if (d.count() == 0) throw std::invalid_argument("sample_batch: empty dataset");
  if (b < 1) throw std::invalid_argument("sample_batch: batch size must be >= 1");
  Batch<T> out;
  out.rows = rng.draw_choice(d.count(), b, /*with_replacement=*/true);
  out.images = Tensor<T>({b, d.pixels_per_image()});
  out.sources.resize(b * d.space.n_s());
  for (std::size_t i = 0; i < b; ++i) {
    d.image_into(out.rows[i], out.images.data() + i * d.pixels_per_image());
    const std::uint8_t* src = d.source_row(out.rows[i]);
    std::copy(src, src + d.space.n_s(), out.sources.begin() + i * d.space.n_s());
  }
  return out;
}

/// Directory layout: meta.json + sources.u8 + images.u8 (raw row-major bytes,
/// little-endian throughout). Round trips are bit-exact.
void save_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace qlae
