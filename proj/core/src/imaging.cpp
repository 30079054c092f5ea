#include "depthmae/imaging.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

namespace depthmae {

namespace fs = std::filesystem;

DepthImage::DepthImage(std::size_t height, std::size_t width, float fill)
    : height_(height), width_(width), values_(height * width, fill) {}

DepthImage::DepthImage(std::size_t height, std::size_t width, std::vector<float> meters)
    : height_(height), width_(width), values_(std::move(meters)) {
  if (values_.size() != height * width) throw ShapeError("depth image value count does not match dimensions");
}

std::size_t DepthImage::count_valid() const {
  return static_cast<std::size_t>(std::count_if(values_.begin(), values_.end(), valid));
}

RgbImage::RgbImage(std::size_t height, std::size_t width, float fill)
    : height_(height), width_(width), values_(3 * height * width, fill) {}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

struct PngPixels {
  std::size_t height = 0;
  std::size_t width = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> bytes;  // rows as stored, 16-bit samples big-endian
};

PngPixels read_png(const fs::path& path) {
  FilePtr file = open_file(path, "rb");
  png_byte signature[8];
  if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
    throw IoError(path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng: cannot create info struct");
  }
  PngPixels out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("cannot decode PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  out.height = png_get_image_height(png, info);
  out.width = png_get_image_width(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  out.channels = png_get_channels(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) out.channels = 0;  // reported as unsupported by callers
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  out.bytes.resize(rowbytes * out.height);
  rows.resize(out.height);
  for (std::size_t y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const fs::path& path, std::size_t height, std::size_t width, int color_type, int bit_depth,
               const std::vector<std::uint8_t>& bytes) {
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng: cannot create info struct");
  }
  const std::size_t rowbytes = bytes.size() / height;
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = const_cast<png_bytep>(bytes.data() + y * rowbytes);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("cannot encode PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void require_patch_multiple(std::size_t height, std::size_t width, std::size_t patch_size) {
  if (patch_size == 0 || height % patch_size != 0 || width % patch_size != 0) {
    throw ShapeError("target size " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by patch size " + std::to_string(patch_size));
  }
}

}  // namespace

std::vector<std::uint16_t> depth_to_counts(const DepthImage& depth, double depth_scale) {
  std::vector<std::uint16_t> counts(depth.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double c = std::nearbyint(static_cast<double>(depth.values()[i]) * depth_scale);
    counts[i] = static_cast<std::uint16_t>(std::clamp(c, 0.0, 65535.0));
  }
  return counts;
}

DepthImage load_depth(const fs::path& path, double depth_scale) {
  if (!(depth_scale > 0.0)) throw std::invalid_argument("depth_scale must be positive");
  PngPixels px = read_png(path);
  if (px.channels != 1 || px.bit_depth != 16) {
    throw IoError(path.string() + ": expected 16-bit single-channel depth, got " + std::to_string(px.channels) +
                  " channel(s) at " + std::to_string(px.bit_depth) + " bits");
  }
  DepthImage depth(px.height, px.width);
  auto& v = depth.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const unsigned count = (static_cast<unsigned>(px.bytes[2 * i]) << 8) | px.bytes[2 * i + 1];
    v[i] = static_cast<float>(static_cast<double>(count) / depth_scale);
  }
  return depth;
}

void save_depth(const fs::path& path, const DepthImage& depth, double depth_scale) {
  if (depth.empty()) throw IoError("refusing to write an empty depth image to " + path.string());
  const auto counts = depth_to_counts(depth, depth_scale);
  std::vector<std::uint8_t> bytes(2 * counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    bytes[2 * i] = static_cast<std::uint8_t>(counts[i] >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(counts[i] & 0xff);
  }
  write_png(path, depth.height(), depth.width(), PNG_COLOR_TYPE_GRAY, 16, bytes);
}

RgbImage load_rgb(const fs::path& path) {
  PngPixels px = read_png(path);
  if (px.channels != 3 || px.bit_depth != 8) {
    throw IoError(path.string() + ": expected 8-bit 3-channel RGB, got " + std::to_string(px.channels) +
                  " channel(s) at " + std::to_string(px.bit_depth) + " bits");
  }
  RgbImage rgb(px.height, px.width);
  for (std::size_t y = 0; y < px.height; ++y) {
    for (std::size_t x = 0; x < px.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        rgb.at(c, y, x) = static_cast<float>(px.bytes[(y * px.width + x) * 3 + c]) / 255.0f;
      }
    }
  }
  return rgb;
}

void save_rgb(const fs::path& path, const RgbImage& rgb) {
  std::vector<std::uint8_t> bytes(3 * rgb.height() * rgb.width());
  for (std::size_t y = 0; y < rgb.height(); ++y) {
    for (std::size_t x = 0; x < rgb.width(); ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(rgb.at(c, y, x), 0.0f, 1.0f);
        bytes[(y * rgb.width() + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  write_png(path, rgb.height(), rgb.width(), PNG_COLOR_TYPE_RGB, 8, bytes);
}

RgbImage resize_bilinear(const RgbImage& rgb, std::size_t height, std::size_t width) {
  if (height == rgb.height() && width == rgb.width()) return rgb;
  RgbImage out(height, width);
  const double sy = static_cast<double>(rgb.height()) / static_cast<double>(height);
  const double sx = static_cast<double>(rgb.width()) / static_cast<double>(width);
  const auto max_y = static_cast<double>(rgb.height() - 1);
  const auto max_x = static_cast<double>(rgb.width() - 1);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, rgb.height() - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, rgb.width() - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = (1.0 - wx) * rgb.at(c, y0, x0) + wx * rgb.at(c, y0, x1);
        const double bottom = (1.0 - wx) * rgb.at(c, y1, x0) + wx * rgb.at(c, y1, x1);
        out.at(c, y, x) = static_cast<float>((1.0 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

DepthImage resize_nearest(const DepthImage& depth, std::size_t height, std::size_t width) {
  if (height == depth.height() && width == depth.width()) return depth;
  DepthImage out(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    // center-aligned: floor((y + 0.5) * in / out)
    const std::size_t cy = std::min(depth.height() - 1, ((2 * y + 1) * depth.height()) / (2 * height));
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t cx = std::min(depth.width() - 1, ((2 * x + 1) * depth.width()) / (2 * width));
      out.at(y, x) = depth.at(cy, cx);
    }
  }
  return out;
}

RgbdSample resize_sample(const RgbdSample& sample, std::size_t height, std::size_t width, std::size_t patch_size) {
  require_patch_multiple(height, width, patch_size);
  RgbdSample out;
  out.identifier = sample.identifier;
  out.rgb = resize_bilinear(sample.rgb, height, width);
  out.raw_depth = sample.raw_depth.empty() ? DepthImage{} : resize_nearest(sample.raw_depth, height, width);
  out.gt_depth = sample.gt_depth.empty() ? DepthImage{} : resize_nearest(sample.gt_depth, height, width);
  return out;
}

template <typename T>
Tensor<T> to_model_input(const RgbdSample& sample, DepthSource which, double max_depth) {
  const DepthImage& depth = which == DepthSource::kRaw ? sample.raw_depth : sample.gt_depth;
  const std::size_t h = sample.rgb.height();
  const std::size_t w = sample.rgb.width();
  if (depth.height() != h || depth.width() != w) {
    throw ShapeError("rgb " + std::to_string(h) + "x" + std::to_string(w) + " and depth " +
                     std::to_string(depth.height()) + "x" + std::to_string(depth.width()) + " are not aligned");
  }
  std::vector<T> data(4 * h * w);
  const auto& rgb = sample.rgb.values();
  std::copy(rgb.begin(), rgb.end(), data.begin());
  for (std::size_t i = 0; i < h * w; ++i) {
    data[3 * h * w + i] = static_cast<T>(static_cast<double>(depth.values()[i]) / max_depth);
  }
  return Tensor<T>(Shape{4, h, w}, std::move(data));
}

template <typename T>
Tensor<T> depth_to_tensor(const DepthImage& depth, double max_depth) {
  std::vector<T> data(depth.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = static_cast<T>(static_cast<double>(depth.values()[i]) / max_depth);
  }
  return Tensor<T>(Shape{1, depth.height(), depth.width()}, std::move(data));
}

template <typename T>
DepthImage tensor_to_depth(const Tensor<T>& normalized, double max_depth) {
  const Shape& s = normalized.shape();
  const bool ok = (s.size() == 3 && s[0] == 1) || s.size() == 2;
  if (!ok) throw ShapeError("tensor_to_depth expects [1, H, W] or [H, W], got " + shape_string(s));
  const std::size_t h = s[s.size() - 2];
  const std::size_t w = s[s.size() - 1];
  std::vector<float> meters(h * w);
  for (std::size_t i = 0; i < meters.size(); ++i) {
    meters[i] = static_cast<float>(static_cast<double>(normalized.data()[i]) * max_depth);
  }
  return DepthImage(h, w, std::move(meters));
}

template Tensor<float> to_model_input<float>(const RgbdSample&, DepthSource, double);
template Tensor<double> to_model_input<double>(const RgbdSample&, DepthSource, double);
template Tensor<float> depth_to_tensor<float>(const DepthImage&, double);
template Tensor<double> depth_to_tensor<double>(const DepthImage&, double);
template DepthImage tensor_to_depth<float>(const Tensor<float>&, double);
template DepthImage tensor_to_depth<double>(const Tensor<double>&, double);

DatasetManifest DatasetManifest::load(const fs::path& path, fs::path root) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest manifest;
  manifest.root = root.empty() ? path.parent_path() : std::move(root);
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      const std::string tag = "# split:";
      if (line.rfind(tag, 0) == 0) {
        std::string split = line.substr(tag.size());
        split.erase(0, split.find_first_not_of(" \t"));
        manifest.split = split;
      }
      continue;
    }
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() != 3) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected 3 tab-separated paths, got " +
                    std::to_string(fields.size()));
    }
    ManifestRecord rec{fields[0], fields[1], fields[2], {}};
    rec.identifier = fs::path(fields[0]).replace_extension().generic_string();
    if (!ids.insert(rec.identifier).second) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": duplicate identifier " + rec.identifier);
    }
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

void DatasetManifest::save(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  if (!split.empty()) out << "# split: " << split << '\n';
  for (const auto& r : records) {
    out << r.rgb.generic_string() << '\t' << r.raw_depth.generic_string() << '\t' << r.gt_depth.generic_string()
        << '\n';
  }
}

std::vector<fs::path> DatasetManifest::missing_files() const {
  std::vector<fs::path> missing;
  for (const auto& r : records) {
    for (const auto* p : {&r.rgb, &r.raw_depth, &r.gt_depth}) {
      if (!fs::exists(root / *p)) missing.push_back(root / *p);
    }
  }
  return missing;
}

RgbdSample DatasetManifest::load_sample(std::size_t index, double depth_scale) const {
  const ManifestRecord& r = records.at(index);
  RgbdSample s;
  s.identifier = r.identifier;
  s.rgb = load_rgb(root / r.rgb);
  s.raw_depth = load_depth(root / r.raw_depth, depth_scale);
  s.gt_depth = load_depth(root / r.gt_depth, depth_scale);
  const auto same = [&](const DepthImage& d) { return d.height() == s.rgb.height() && d.width() == s.rgb.width(); };
  if (!same(s.raw_depth) || !same(s.gt_depth)) {
    throw IoError("sample " + r.identifier + ": rgb and depth images differ in size");
  }
  return s;
}

}  // namespace depthmae
