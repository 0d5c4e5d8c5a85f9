#include "qlae/world.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts are unsupported");

namespace qlae {

using nlohmann::json;

SourceSpace::SourceSpace(std::vector<int> cards, std::vector<std::string> labels)
    : cardinalities(std::move(cards)), names(std::move(labels)) {
  if (cardinalities.size() < 2) {
    throw std::invalid_argument("SourceSpace: need at least 2 sources");
  }
  if (names.size() != cardinalities.size()) {
    throw std::invalid_argument("SourceSpace: one name per source required");
  }
  for (int c : cardinalities) {
    if (c < 2) throw std::invalid_argument("SourceSpace: every cardinality must be >= 2");
    if (c > 255) throw std::invalid_argument("SourceSpace: cardinalities above 255 unsupported");
  }
}

std::uint64_t SourceSpace::product() const {
  std::uint64_t p = 1;
  for (int c : cardinalities) p *= static_cast<std::uint64_t>(c);
  return p;
}

SourceSpace SourceSpace::default_space() {
  return SourceSpace({8, 8, 4, 4}, {"object_x", "object_y", "object_hue", "background_hue"});
}

void validate_tuple(const SourceTuple& s, const SourceSpace& space) {
  if (static_cast<int>(s.values.size()) != space.n_s()) {
    throw std::invalid_argument("source tuple arity does not match space");
  }
  for (int i = 0; i < space.n_s(); ++i) {
    if (s.values[i] < 0 || s.values[i] >= space.cardinalities[i]) {
      throw std::invalid_argument("source value out of range for '" + space.names[i] + "'");
    }
  }
}

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 4> kObjectPalette = {{
    {255, 0, 0},    // red
    {0, 255, 0},    // green
    {0, 0, 255},    // blue
    {255, 255, 0},  // yellow
}};

constexpr std::array<std::array<std::uint8_t, 3>, 4> kBackgroundPalette = {{
    {0, 255, 255},    // cyan
    {255, 0, 255},    // magenta
    {0, 0, 0},        // black
    {255, 255, 255},  // white
}};

int grid_position(int value, int cardinality, int extent, int side) {
  // Scales the index onto [0, extent - side] so the square stays in frame.
  return static_cast<int>(
      std::llround(static_cast<double>(value) * (extent - side) / (cardinality - 1)));
}

struct SquareRect {
  int row0, col0, side;
};

SquareRect square_rect(const SourceTuple& s, const SourceSpace& space, int image_size) {
  const int side = (image_size + 3) / 4;  // ceil(H/4)
  const int col0 = grid_position(s.values[0], space.cardinalities[0], image_size, side);
  const int row0 = grid_position(s.values[1], space.cardinalities[1], image_size, side);
  return {row0, col0, side};
}

void check_renderable(const SourceSpace& space, int image_size) {
  if (space.n_s() > kRendererSources) {
    throw std::invalid_argument(
        "renderer supports at most 4 sources (x, y, object hue, background hue)");
  }
  for (int i = 2; i < space.n_s(); ++i) {
    if (space.cardinalities[i] > kMaxHueCardinality) {
      throw std::invalid_argument("renderer palettes support hue cardinalities up to 4");
    }
  }
  if (image_size < 4) throw std::invalid_argument("image size must be at least 4");
}

}  // namespace

std::array<std::uint8_t, 3> object_palette(int index) { return kObjectPalette.at(index); }
std::array<std::uint8_t, 3> background_palette(int index) { return kBackgroundPalette.at(index); }

std::vector<std::uint8_t> render(const SourceTuple& s, const SourceSpace& space, int image_size) {
  check_renderable(space, image_size);
  validate_tuple(s, space);
  // Sources fill the roles (x, y, object hue, background hue) in order;
  // spaces with fewer than four sources pin the missing hues to palette 0.
  const auto obj = kObjectPalette[space.n_s() > 2 ? s.values[2] : 0];
  const auto bg = kBackgroundPalette[space.n_s() > 3 ? s.values[3] : 0];
  const auto rect = square_rect(s, space, image_size);

  std::vector<std::uint8_t> img(static_cast<std::size_t>(image_size) * image_size * 3);
  for (int r = 0; r < image_size; ++r) {
    for (int c = 0; c < image_size; ++c) {
      const bool inside = r >= rect.row0 && r < rect.row0 + rect.side && c >= rect.col0 &&
                          c < rect.col0 + rect.side;
      const auto& color = inside ? obj : bg;
      std::uint8_t* px = img.data() + (static_cast<std::size_t>(r) * image_size + c) * 3;
      px[0] = color[0];
      px[1] = color[1];
      px[2] = color[2];
    }
  }
  return img;
}

std::vector<bool> object_mask(const SourceTuple& s, const SourceSpace& space, int image_size) {
  check_renderable(space, image_size);
  validate_tuple(s, space);
  const auto rect = square_rect(s, space, image_size);
  std::vector<bool> mask(static_cast<std::size_t>(image_size) * image_size, false);
  for (int r = rect.row0; r < rect.row0 + rect.side; ++r) {
    for (int c = rect.col0; c < rect.col0 + rect.side; ++c) {
      mask[static_cast<std::size_t>(r) * image_size + c] = true;
    }
  }
  return mask;
}

Dataset build_dataset(const SourceSpace& space, int image_size, std::uint64_t row_cap) {
  const std::uint64_t n = space.product();
  if (n > row_cap) {
    throw std::invalid_argument("build_dataset: full product has " + std::to_string(n) +
                                " rows, above the cap of " + std::to_string(row_cap));
  }
  Dataset d{space, image_size, image_size, {}, {}};
  d.sources.reserve(n * space.n_s());
  d.images.reserve(n * d.pixels_per_image());
  SourceTuple s;
  s.values.assign(space.n_s(), 0);
  for (std::uint64_t row = 0; row < n; ++row) {
    std::uint64_t rem = row;
    for (int i = space.n_s() - 1; i >= 0; --i) {
      s.values[i] = static_cast<int>(rem % space.cardinalities[i]);
      rem /= space.cardinalities[i];
    }
    for (int v : s.values) d.sources.push_back(static_cast<std::uint8_t>(v));
    const auto img = render(s, space, image_size);
    d.images.insert(d.images.end(), img.begin(), img.end());
  }
  return d;
}

namespace {

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + p.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + p.string());
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open for reading: " + p.string());
  const std::streamsize size = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw std::runtime_error("read failed: " + p.string());
  return bytes;
}

}  // namespace

void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json meta;
  meta["version"] = 1;
  meta["n_s"] = d.space.n_s();
  meta["cardinalities"] = d.space.cardinalities;
  meta["names"] = d.space.names;
  meta["height"] = d.height;
  meta["width"] = d.width;
  meta["channels"] = 3;
  meta["count"] = d.count();
  std::ofstream mf(dir / "meta.json");
  if (!mf) throw std::runtime_error("cannot write meta.json in " + dir.string());
  mf << meta.dump(2) << "\n";
  write_bytes(dir / "sources.u8", d.sources);
  write_bytes(dir / "images.u8", d.images);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "meta.json");
  if (!mf) throw std::runtime_error("missing meta.json in " + dir.string());
  json meta;
  try {
    mf >> meta;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed meta.json: " + std::string(e.what()));
  }
  try {
    if (meta.at("version").get<int>() != 1) throw std::runtime_error("unsupported dataset version");
    if (meta.at("channels").get<int>() != 3) throw std::runtime_error("expected 3 channels");
    SourceSpace space(meta.at("cardinalities").get<std::vector<int>>(),
                      meta.at("names").get<std::vector<std::string>>());
    if (meta.at("n_s").get<int>() != space.n_s()) {
      throw std::runtime_error("meta n_s disagrees with cardinalities length");
    }
    Dataset d{space, meta.at("height").get<int>(), meta.at("width").get<int>(), {}, {}};
    const std::size_t count = meta.at("count").get<std::size_t>();
    d.sources = read_bytes(dir / "sources.u8");
    d.images = read_bytes(dir / "images.u8");
    if (d.sources.size() != count * space.n_s()) {
      throw std::runtime_error("sources.u8 size mismatch: expected " +
                               std::to_string(count * space.n_s()) + " bytes, found " +
                               std::to_string(d.sources.size()));
    }
    if (d.images.size() != count * d.pixels_per_image()) {
      throw std::runtime_error("images.u8 size mismatch: expected " +
                               std::to_string(count * d.pixels_per_image()) + " bytes, found " +
                               std::to_string(d.images.size()));
    }
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint8_t* row = d.source_row(i);
      for (int j = 0; j < space.n_s(); ++j) {
        if (row[j] >= space.cardinalities[j]) {
          throw std::runtime_error("source value out of range at row " + std::to_string(i));
        }
      }
    }
    return d;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed meta.json: " + std::string(e.what()));
  }
}

}  // namespace qlae
