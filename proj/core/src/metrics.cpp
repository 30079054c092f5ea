#include "depthmae/metrics.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "depthmae/fusion.hpp"

namespace depthmae {

namespace {

constexpr std::size_t kWindow = 11;

void require_same_size(const DepthImage& a, const DepthImage& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError(std::string(what) + ": images differ in size (" + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()) + ")");
  }
}

std::array<double, kWindow * kWindow> window_weights(SsimWindow kind) {
  std::array<double, kWindow * kWindow> w{};
  if (kind == SsimWindow::kUniform) {
    w.fill(1.0 / static_cast<double>(kWindow * kWindow));
    return w;
  }
  constexpr double sigma = 1.5;
  std::array<double, kWindow> g{};
  double total = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(kWindow / 2);
    g[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  for (std::size_t y = 0; y < kWindow; ++y) {
    for (std::size_t x = 0; x < kWindow; ++x) w[y * kWindow + x] = g[y] * g[x];
  }
  return w;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

std::optional<double> rmse(const DepthImage& pred, const DepthImage& gt) {
  require_same_size(pred, gt, "rmse");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!DepthImage::valid(gt.values()[i])) continue;
    const double d = static_cast<double>(pred.values()[i]) - static_cast<double>(gt.values()[i]);
    acc += d * d;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return std::sqrt(acc / static_cast<double>(n));
}

std::optional<double> mean_error(const DepthImage& pred, const DepthImage& gt) {
  require_same_size(pred, gt, "mean_error");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!DepthImage::valid(gt.values()[i])) continue;
    acc += std::abs(static_cast<double>(pred.values()[i]) - static_cast<double>(gt.values()[i]));
    ++n;
  }
  if (n == 0) return std::nullopt;
  return acc / static_cast<double>(n);
}

std::optional<double> delta(const DepthImage& pred, const DepthImage& gt, double threshold) {
  require_same_size(pred, gt, "delta");
  std::size_t hits = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double g = gt.values()[i];
    if (!(g > 0.0)) continue;
    ++n;
    const double p = pred.values()[i];
    if (!(p > 0.0)) continue;
    if (std::max(p / g, g / p) < threshold) ++hits;
  }
  if (n == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(n);
}

double ssim(const DepthImage& a, const DepthImage& b, double dynamic_range, SsimWindow window) {
  require_same_size(a, b, "ssim");
  if (a.height() < kWindow || a.width() < kWindow) {
    throw ShapeError("ssim: image " + std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                     " is smaller than the 11x11 window");
  }
  const auto w = window_weights(window);
  const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
  const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
  const std::size_t out_h = a.height() - kWindow + 1;
  const std::size_t out_w = a.width() - kWindow + 1;
  double total = 0.0;
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      double mu_a = 0, mu_b = 0, e_aa = 0, e_bb = 0, e_ab = 0;
      for (std::size_t dy = 0; dy < kWindow; ++dy) {
        for (std::size_t dx = 0; dx < kWindow; ++dx) {
          const double wt = w[dy * kWindow + dx];
          const double va = a.at(y + dy, x + dx);
          const double vb = b.at(y + dy, x + dx);
          mu_a += wt * va;
          mu_b += wt * vb;
          e_aa += wt * (va * va);
          e_bb += wt * (vb * vb);
          e_ab += wt * (va * vb);
        }
      }
      const double var_a = e_aa - mu_a * mu_a;
      const double var_b = e_bb - mu_b * mu_b;
      const double cov = e_ab - mu_a * mu_b;
      const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
      const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
      total += num / den;
    }
  }
  return total / static_cast<double>(out_h * out_w);
}

double masked_ssim(const DepthImage& pred, const DepthImage& gt, double dynamic_range) {
  require_same_size(pred, gt, "ssim");
  DepthImage masked = pred;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (!DepthImage::valid(gt.values()[i])) masked.values()[i] = 0.0f;
  }
  return ssim(masked, gt, dynamic_range);
}

ImageMetrics score_image(const DepthImage& pred, const DepthImage& gt, double max_depth, std::string identifier) {
  ImageMetrics m;
  m.identifier = std::move(identifier);
  m.valid_pixels = gt.count_valid();
  m.rmse_m = rmse(pred, gt);
  m.me_m = mean_error(pred, gt);
  m.delta_1 = delta(pred, gt, 1.25);
  m.delta_2 = delta(pred, gt, 1.25 * 1.25);
  if (m.valid_pixels > 0) m.ssim = masked_ssim(pred, gt, max_depth);
  return m;
}

EvalReport EvalReport::from_images(std::vector<ImageMetrics> images) {
  EvalReport r;
  r.images = std::move(images);
  r.aggregate.identifier = "AGGREGATE";
  auto average = [&](std::optional<double> ImageMetrics::*field) -> std::optional<double> {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& m : r.images) {
      if (m.*field) {
        acc += *(m.*field);
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return acc / static_cast<double>(n);
  };
  r.aggregate.rmse_m = average(&ImageMetrics::rmse_m);
  r.aggregate.me_m = average(&ImageMetrics::me_m);
  r.aggregate.ssim = average(&ImageMetrics::ssim);
  r.aggregate.delta_1 = average(&ImageMetrics::delta_1);
  r.aggregate.delta_2 = average(&ImageMetrics::delta_2);
  for (const auto& m : r.images) r.aggregate.valid_pixels += m.valid_pixels;
  return r;
}

std::string EvalReport::header() {
  return "identifier\trmse_m\tme_m\tssim\tdelta_1.25\tdelta_1.25^2\tvalid_pixels";
}

std::string EvalReport::row(const ImageMetrics& m) {
  std::ostringstream os;
  os << m.identifier << '\t' << fmt(m.rmse_m) << '\t' << fmt(m.me_m) << '\t' << fmt(m.ssim) << '\t' << fmt(m.delta_1)
     << '\t' << fmt(m.delta_2) << '\t' << m.valid_pixels;
  return os.str();
}

std::string EvalReport::to_tsv() const {
  std::ostringstream os;
  os << header() << '\n';
  for (const auto& m : images) os << row(m) << '\n';
  os << row(aggregate) << '\n';
  return os.str();
}

void EvalReport::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path.string());
  out << to_tsv();
}

EvalReport evaluate(const DatasetManifest& manifest, const Checkpoint& checkpoint, double depth_scale) {
  const Completer completer(checkpoint);
  std::vector<ImageMetrics> images;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const RgbdSample sample = manifest.load_sample(i, depth_scale);
    const DepthImage completed = completer.complete(sample);
    images.push_back(score_image(completed, sample.gt_depth, completer.config().max_depth, sample.identifier));
  }
  return EvalReport::from_images(std::move(images));
}

}  // namespace depthmae
