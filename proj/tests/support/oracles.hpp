#pragma once

// Reference implementations used to check the library. Everything here is
// written with plain loops over std::vector and does not call the code under
// test except to evaluate a loss for finite differences.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "depthmae/model.hpp"
#include "depthmae/tensor.hpp"

namespace depthmae::oracle {

/// Pixels of an H x W image that lie in one of the `masked` patches and have gt > 0.
inline double pretrain_loss(const std::vector<double>& pred, const std::vector<double>& gt, std::size_t h,
                            std::size_t w, std::size_t p, const std::vector<std::size_t>& masked, bool* defined = nullptr) {
  const std::set<std::size_t> m(masked.begin(), masked.end());
  const std::size_t gw = w / p;
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!m.count((y / p) * gw + x / p)) continue;
      const double g = gt[y * w + x];
      if (!(g > 0.0)) continue;
      acc += (pred[y * w + x] - g) * (pred[y * w + x] - g);
      ++n;
    }
  }
  if (defined) *defined = n > 0;
  return n ? std::sqrt(acc / static_cast<double>(n)) : 0.0;
}

inline double finetune_loss(const std::vector<double>& pred, const std::vector<double>& gt) {
  double acc = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) acc += (pred[i] - gt[i]) * (pred[i] - gt[i]);
  return std::sqrt(acc / static_cast<double>(gt.size()));
}

inline double rmse(const std::vector<double>& pred, const std::vector<double>& gt) {
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == 0.0) continue;
    acc += (pred[i] - gt[i]) * (pred[i] - gt[i]);
    ++n;
  }
  return std::sqrt(acc / static_cast<double>(n));
}

inline double mean_abs_error(const std::vector<double>& pred, const std::vector<double>& gt) {
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == 0.0) continue;
    acc += std::fabs(pred[i] - gt[i]);
    ++n;
  }
  return acc / static_cast<double>(n);
}

inline double delta(const std::vector<double>& pred, const std::vector<double>& gt, double t) {
  std::size_t hit = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == 0.0) continue;
    ++n;
    if (pred[i] <= 0.0) continue;
    const double r = pred[i] > gt[i] ? pred[i] / gt[i] : gt[i] / pred[i];
    if (r < t) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(n);
}

inline std::vector<float> fuse(const std::vector<float>& original, const std::vector<float>& completed) {
  std::vector<float> out(original.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = original[i] != 0.0f ? original[i] : completed[i];
  return out;
}

struct GradMismatch {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckResult {
  std::size_t checked = 0;
  double worst_rel_error = 0.0;
  GradMismatch worst;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
/// gradient is zero (or nearly so) from dividing roundoff by roundoff.
inline double relative_error(double a, double n, double floor) {
  return std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), floor});
}

/// Central differences over every entry of every parameter, compared with the
/// gradient left by one backward pass of `loss`.
inline GradCheckResult check_gradients(const std::vector<NamedTensor<double>>& params,
                                       const std::function<Tensor<double>()>& loss, double step, double floor) {
  for (auto p : params) p.tensor.zero_grad();
  backward(loss());
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    if (p.tensor.has_grad()) {
      analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
    } else {
      analytic.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  GradCheckResult r;
  NoGradGuard guard;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<double> handle = params[k].tensor;
    auto values = handle.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss().item();
      values[i] = saved - step;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(analytic[k][i], numeric, floor);
      ++r.checked;
      if (err >= r.worst_rel_error) {
        r.worst_rel_error = err;
        r.worst = {params[k].name, i, analytic[k][i], numeric, err};
      }
    }
  }
  return r;
}

}  // namespace depthmae::oracle
