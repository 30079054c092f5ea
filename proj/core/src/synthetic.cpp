#include "depthmae/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include "depthmae/random.hpp"

namespace depthmae {

namespace fs = std::filesystem;

namespace {

struct Vec3 {
  double x, y, z;
};

Vec3 operator*(double s, Vec3 v) { return {s * v.x, s * v.y, s * v.z}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

struct Box {
  Vec3 lo, hi;
  Vec3 color;
};

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal{0, 0, 0};
  Vec3 color{0, 0, 0};
  bool checker = false;
};

void hit_plane(const Vec3& dir, double coord, int axis, Vec3 normal, Vec3 color, bool checker, Hit& best) {
  const double d = axis == 0 ? dir.x : axis == 1 ? dir.y : dir.z;
  if (std::abs(d) < 1e-12) return;
  const double t = coord / d;
  if (t > 0.0 && t < best.t) best = Hit{t, normal, color, checker};
}

void hit_box(const Vec3& dir, const Box& box, Hit& best) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int axis_near = 0;
  const std::array<double, 3> d{dir.x, dir.y, dir.z};
  const std::array<double, 3> lo{box.lo.x, box.lo.y, box.lo.z};
  const std::array<double, 3> hi{box.hi.x, box.hi.y, box.hi.z};
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-12) {
      if (0.0 < lo[a] || 0.0 > hi[a]) return;
      continue;
    }
    double t0 = lo[a] / d[a];
    double t1 = hi[a] / d[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_near) {
      t_near = t0;
      axis_near = a;
    }
    t_far = std::min(t_far, t1);
  }
  if (t_near > t_far || t_near <= 0.0 || t_near >= best.t) return;
  Vec3 n{0, 0, 0};
  const double s = d[axis_near] > 0 ? -1.0 : 1.0;
  (axis_near == 0 ? n.x : axis_near == 1 ? n.y : n.z) = s;
  best = Hit{t_near, n, box.color, false};
}

Vec3 random_color(Rng& rng, double lo, double hi) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

}  // namespace

RgbdSample generate_scene(std::uint64_t seed, const SyntheticOptions& opt) {
  Rng rng(seed);
  const double cam_height = rng.uniform(1.2, 1.5);
  const double ceiling = rng.uniform(2.6, 3.0) - cam_height;
  const double half_width = rng.uniform(1.5, 2.5);
  const double back = rng.uniform(3.2, 3.9);
  const double yaw = rng.uniform(-0.25, 0.25);

  const Vec3 wall_color = random_color(rng, 0.55, 0.9);
  const Vec3 floor_color = random_color(rng, 0.25, 0.55);
  const Vec3 back_color = random_color(rng, 0.45, 0.85);
  std::vector<Box> boxes;
  const std::size_t box_count = 1 + rng.bounded(3);
  for (std::size_t i = 0; i < box_count; ++i) {
    const double sx = rng.uniform(0.3, 0.9);
    const double sy = rng.uniform(0.3, 1.1);
    const double sz = rng.uniform(0.3, 0.9);
    const double cx = rng.uniform(-1.2, 1.2);
    const double cz = rng.uniform(1.3, 2.9);
    boxes.push_back(Box{{cx - sx / 2, -cam_height, cz - sz / 2},
                        {cx + sx / 2, -cam_height + sy, cz + sz / 2},
                        random_color(rng, 0.1, 0.95)});
  }

  const std::size_t h = opt.height;
  const std::size_t w = opt.width;
  const double focal = 0.9 * static_cast<double>(w);
  const Vec3 light{0.3, 0.8, -0.5};
  const double light_norm = std::sqrt(dot(light, light));
  const double cos_yaw = std::cos(yaw);
  const double sin_yaw = std::sin(yaw);

  RgbdSample s;
  s.identifier = "scene";
  s.rgb = RgbImage(h, w);
  s.gt_depth = DepthImage(h, w);
  for (std::size_t v = 0; v < h; ++v) {
    for (std::size_t u = 0; u < w; ++u) {
      const double px = (static_cast<double>(u) + 0.5 - 0.5 * static_cast<double>(w)) / focal;
      const double py = -(static_cast<double>(v) + 0.5 - 0.5 * static_cast<double>(h)) / focal;
      // Camera yaw rotates the ray in the room frame; depth stays along the optical axis.
      const Vec3 dir{cos_yaw * px + sin_yaw, py, -sin_yaw * px + cos_yaw};
      Hit hit;
      hit_plane(dir, -cam_height, 1, {0, 1, 0}, floor_color, true, hit);
      hit_plane(dir, ceiling, 1, {0, -1, 0}, {0.92, 0.92, 0.9}, false, hit);
      hit_plane(dir, -half_width, 0, {1, 0, 0}, wall_color, false, hit);
      hit_plane(dir, half_width, 0, {-1, 0, 0}, wall_color, false, hit);
      hit_plane(dir, back, 2, {0, 0, -1}, back_color, false, hit);
      for (const auto& b : boxes) hit_box(dir, b, hit);

      // Optical-axis depth of a unit-z camera ray equals the ray parameter t.
      const double depth = std::clamp(hit.t, 0.5, 4.0);
      s.gt_depth.at(v, u) = static_cast<float>(depth);

      const Vec3 p = hit.t * dir;
      double tint = 1.0;
      if (hit.checker) {
        const long cx = static_cast<long>(std::floor(p.x * 2.0));
        const long cz = static_cast<long>(std::floor(p.z * 2.0));
        tint = ((cx + cz) & 1) ? 0.8 : 1.0;
      }
      const double lambert = std::max(0.0, dot(hit.normal, light) / light_norm);
      const double shade = (0.35 + 0.65 * lambert) * tint / (1.0 + 0.08 * depth);
      s.rgb.at(0, v, u) = static_cast<float>(std::clamp(hit.color.x * shade, 0.0, 1.0));
      s.rgb.at(1, v, u) = static_cast<float>(std::clamp(hit.color.y * shade, 0.0, 1.0));
      s.rgb.at(2, v, u) = static_cast<float>(std::clamp(hit.color.z * shade, 0.0, 1.0));
    }
  }
  // Quantize to what survives the 16-bit file format so in-memory and on-disk scenes agree.
  for (float& d : s.gt_depth.values()) {
    d = static_cast<float>(std::nearbyint(static_cast<double>(d) * opt.depth_scale) / opt.depth_scale);
  }

  s.raw_depth = s.gt_depth;
  const double total = static_cast<double>(h * w);
  const double target = rng.uniform(opt.min_hole_fraction, opt.max_hole_fraction);
  const std::size_t max_rw = std::max<std::size_t>(2, w / 3);
  const std::size_t max_rh = std::max<std::size_t>(2, h / 3);
  auto& raw = s.raw_depth.values();
  while (static_cast<double>(s.raw_depth.count_holes()) < target * total) {
    const std::size_t rw = 2 + rng.bounded(max_rw - 1);
    const std::size_t rh = 2 + rng.bounded(max_rh - 1);
    const std::size_t x0 = rng.bounded(w - std::min(rw, w) + 1);
    const std::size_t y0 = rng.bounded(h - std::min(rh, h) + 1);
    for (std::size_t y = y0; y < std::min(h, y0 + rh); ++y) {
      for (std::size_t x = x0; x < std::min(w, x0 + rw); ++x) raw[y * w + x] = 0.0f;
    }
  }
  for (float& d : raw) {
    if (rng.uniform() < opt.speckle_probability) d = 0.0f;
  }
  return s;
}

DatasetManifest make_synthetic_dataset(const fs::path& out_dir, std::size_t count, std::uint64_t seed,
                                       const SyntheticOptions& options) {
  fs::create_directories(out_dir / "rgb");
  fs::create_directories(out_dir / "raw");
  fs::create_directories(out_dir / "gt");
  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.split = "synthetic";
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%05zu.png", i);
    RgbdSample s = generate_scene(derive_seed(seed, i), options);
    ManifestRecord rec{fs::path("rgb") / name, fs::path("raw") / name, fs::path("gt") / name, {}};
    rec.identifier = fs::path(rec.rgb).replace_extension().generic_string();
    save_rgb(out_dir / rec.rgb, s.rgb);
    save_depth(out_dir / rec.raw_depth, s.raw_depth, options.depth_scale);
    save_depth(out_dir / rec.gt_depth, s.gt_depth, options.depth_scale);
    manifest.records.push_back(std::move(rec));
  }
  manifest.save(out_dir / "manifest.tsv");
  return manifest;
}

}  // namespace depthmae
