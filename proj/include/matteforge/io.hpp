// 8-bit image files (PNG, binary PGM/PPM), dataset manifests and numbered
// frame directories. Values map to [0,1] by /255 on read and round(v*255)
// on write.
#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "matteforge/data.hpp"
#include "matteforge/image.hpp"
#include "matteforge/video.hpp"

namespace matteforge {

namespace fs = std::filesystem;

/// Unreadable, unwritable or malformed files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::string lower_extension(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

// Interleaved bytes <-> planar Image.
inline Image from_interleaved(const std::vector<std::uint8_t>& px, int channels, int h, int w) {
  Image img(channels, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        img.at(c, y, x) = px[(static_cast<std::size_t>(y) * w + x) * channels + c] / 255.0;
      }
    }
  }
  return img;
}

inline std::vector<std::uint8_t> to_interleaved(const Image& img) {
  std::vector<std::uint8_t> px(img.data.size());
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        px[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c] = to_byte(img.at(c, y, x));
      }
    }
  }
  return px;
}

inline Image read_png(const fs::path& path) {
  png_image im{};
  im.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&im, path.string().c_str()) == 0) {
    throw IoError("cannot read PNG " + path.string() + ": " + im.message);
  }
  const bool gray = (im.format & PNG_FORMAT_FLAG_COLOR) == 0;
  im.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int channels = gray ? 1 : 3;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(im));
  if (png_image_finish_read(&im, nullptr, px.data(), 0, nullptr) == 0) {
    png_image_free(&im);
    throw IoError("cannot decode PNG " + path.string() + ": " + im.message);
  }
  return from_interleaved(px, channels, static_cast<int>(im.height), static_cast<int>(im.width));
}

inline void write_png(const fs::path& path, const Image& img) {
  png_image im{};
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(img.width);
  im.height = static_cast<png_uint_32>(img.height);
  im.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const std::vector<std::uint8_t> px = to_interleaved(img);
  if (png_image_write_to_file(&im, path.string().c_str(), 0, px.data(), 0, nullptr) == 0) {
    throw IoError("cannot write PNG " + path.string() + ": " + im.message);
  }
}

inline void skip_pnm_space(std::istream& in) {
  while (true) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

inline Image read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw IoError(path.string() + ": only binary P5/P6 files are supported");
  int w = 0, h = 0, maxval = 0;
  skip_pnm_space(in);
  in >> w;
  skip_pnm_space(in);
  in >> h;
  skip_pnm_space(in);
  in >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval != 255) throw IoError(path.string() + ": malformed header (8-bit only)");
  in.get();
  const int channels = magic == "P5" ? 1 : 3;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (in.gcount() != static_cast<std::streamsize>(px.size())) throw IoError(path.string() + ": truncated pixel data");
  return from_interleaved(px, channels, h, w);
}

inline void write_pnm(const fs::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  const std::vector<std::uint8_t> px = to_interleaved(img);
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

}  // namespace detail

/// Reads .png, .pgm or .ppm into a 1- or 3-channel image.
inline Image read_image(const fs::path& path) {
  const std::string ext = detail::lower_extension(path);
  if (ext == ".png") return detail::read_png(path);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return detail::read_pnm(path);
  throw IoError("unsupported image extension '" + ext + "' for " + path.string());
}

inline void write_image(const fs::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw ShapeError("write_image: expected 1 or 3 channels, got " + std::to_string(img.channels));
  }
  const std::string ext = detail::lower_extension(path);
  if (ext == ".png") return detail::write_png(path, img);
  if (ext == ".pgm" && img.channels == 1) return detail::write_pnm(path, img);
  if (ext == ".ppm" && img.channels == 3) return detail::write_pnm(path, img);
  throw IoError("cannot write a " + std::to_string(img.channels) + "-channel image as '" + ext + "'");
}

template <class Tag>
Grid<Tag> read_grid(const fs::path& path) {
  const Image img = read_image(path);
  if (img.channels != 1) throw ShapeError(path.string() + ": expected a grayscale image");
  Grid<Tag> g(img.height, img.width);
  g.values = img.data;
  return g;
}

inline Matte read_matte(const fs::path& path) { return read_grid<MatteTag>(path); }
inline DepthMap read_depth(const fs::path& path) { return read_grid<DepthTag>(path); }

template <class Tag>
void write_grid(const fs::path& path, const Grid<Tag>& g) {
  Image img(1, g.height, g.width);
  img.data = g.values;
  write_image(path, img);
}

/// Centre square crop of `img`, bilinearly resampled to size x size RGB.
inline Image fit_square(const Image& img, int size) {
  const int side = std::min(img.height, img.width);
  const int y0 = (img.height - side) / 2;
  const int x0 = (img.width - side) / 2;
  Image out(3, size, size);
  const double step = static_cast<double>(side) / size;
  for (int c = 0; c < 3; ++c) {
    const int src_c = img.channels == 1 ? 0 : c;
    for (int y = 0; y < size; ++y) {
      const double sy = std::clamp((y + 0.5) * step - 0.5, 0.0, side - 1.0);
      const int ya = static_cast<int>(sy);
      const int yb = std::min(ya + 1, side - 1);
      const double fy = sy - ya;
      for (int x = 0; x < size; ++x) {
        const double sx = std::clamp((x + 0.5) * step - 0.5, 0.0, side - 1.0);
        const int xa = static_cast<int>(sx);
        const int xb = std::min(xa + 1, side - 1);
        const double fx = sx - xa;
        auto p = [&](int yy, int xx) { return img.at(src_c, y0 + yy, x0 + xx); };
        out.at(c, y, x) = (1 - fy) * ((1 - fx) * p(ya, xa) + fx * p(ya, xb)) + fy * ((1 - fx) * p(yb, xa) + fx * p(yb, xb));
      }
    }
  }
  return out;
}

/// Every .png/.ppm/.pgm in `dir`, in file-name order, fitted to size x size
/// RGB; used as a background pool in place of the procedural one.
inline std::vector<Image> read_backgrounds(const fs::path& dir, int size) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string ext = detail::lower_extension(entry.path());
    if (ext == ".png" || ext == ".ppm" || ext == ".pgm") files.push_back(entry.path());
  }
  if (files.empty()) throw IoError("no images in background directory " + dir.string());
  std::sort(files.begin(), files.end());
  std::vector<Image> pool;
  for (const fs::path& f : files) pool.push_back(fit_square(read_image(f), size));
  return pool;
}

// ---------------------------------------------------------------------------
// dataset manifest
// ---------------------------------------------------------------------------

/// Writes every sample's image, alpha, foreground and background as PNG
/// under `dir` and indexes them in dir/manifest.json.
inline void write_dataset(const fs::path& dir, const std::vector<SyntheticSample>& samples) {
  fs::create_directories(dir);
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::ostringstream id;
    id << "sample_" << std::setw(5) << std::setfill('0') << i;
    const SyntheticSample& s = samples[i];
    const std::string stem = id.str();
    write_image(dir / (stem + "_image.png"), s.image);
    write_grid(dir / (stem + "_alpha.png"), s.alpha_g);
    write_image(dir / (stem + "_fg.png"), s.fg);
    write_image(dir / (stem + "_bg.png"), s.bg);
    rows.push_back({{"id", stem},
                    {"domain", to_string(s.domain_tag)},
                    {"image", stem + "_image.png"},
                    {"alpha", stem + "_alpha.png"},
                    {"fg", stem + "_fg.png"},
                    {"bg", stem + "_bg.png"}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << nlohmann::json{{"version", 1}, {"samples", rows}}.dump(2) << '\n';
}

struct ManifestEntry {
  std::string id;
  DomainTag domain = DomainTag::source;
  fs::path image;
  fs::path alpha;  // empty for unlabeled samples
  fs::path fg;
  fs::path bg;
};

inline std::vector<ManifestEntry> read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no manifest.json in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  std::vector<ManifestEntry> out;
  for (const auto& row : j.at("samples")) {
    ManifestEntry e;
    e.id = row.at("id").get<std::string>();
    e.domain = row.value("domain", std::string("source")) == "shifted" ? DomainTag::shifted : DomainTag::source;
    e.image = dir / row.at("image").get<std::string>();
    if (row.contains("alpha")) e.alpha = dir / row.at("alpha").get<std::string>();
    if (row.contains("fg")) e.fg = dir / row.at("fg").get<std::string>();
    if (row.contains("bg")) e.bg = dir / row.at("bg").get<std::string>();
    out.push_back(std::move(e));
  }
  return out;
}

/// Loads a dataset written by write_dataset. Values are 8-bit quantized, so
/// reloaded samples satisfy the compositing identity only to within 1/255.
inline std::vector<SyntheticSample> read_dataset(const fs::path& dir) {
  std::vector<SyntheticSample> out;
  for (const ManifestEntry& e : read_manifest(dir)) {
    SyntheticSample s;
    s.image = read_image(e.image);
    s.alpha_g = e.alpha.empty() ? Matte(s.image.height, s.image.width) : read_matte(e.alpha);
    s.fg = e.fg.empty() ? s.image : read_image(e.fg);
    s.bg = e.bg.empty() ? s.image : read_image(e.bg);
    s.domain_tag = e.domain;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// frame sequences
// ---------------------------------------------------------------------------

inline std::string frame_name(std::size_t index, const std::string& ext = ".png") {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05zu", index);
  return buf + ext;
}

/// Reads every frame_NNNNN.{png,pgm} file in `dir`, ordered by number.
inline MatteSequence read_sequence(const fs::path& dir) {
  std::vector<std::pair<long, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    const std::string ext = detail::lower_extension(entry.path());
    if (name.rfind("frame_", 0) != 0 || (ext != ".png" && ext != ".pgm")) continue;
    const std::string digits = entry.path().stem().string().substr(6);
    if (digits.empty() || !std::all_of(digits.begin(), digits.end(), ::isdigit)) continue;
    files.emplace_back(std::stol(digits), entry.path());
  }
  if (files.empty()) throw IoError("no frame_NNNNN images in " + dir.string());
  std::sort(files.begin(), files.end());
  MatteSequence seq;
  for (const auto& [n, p] : files) seq.frames.push_back(read_matte(p));
  seq.validate();
  return seq;
}

inline void write_sequence(const fs::path& dir, const MatteSequence& seq, const std::string& ext = ".png") {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < seq.frames.size(); ++i) write_grid(dir / frame_name(i, ext), seq.frames[i]);
}

}  // namespace matteforge
