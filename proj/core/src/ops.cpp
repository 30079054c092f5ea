#include "depthmae/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "depthmae/parallel.hpp"

namespace depthmae {

namespace {

template <typename T>
using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;

template <typename T>
using BackwardFn = typename detail::Node<T>::BackwardFn;

/// Wraps freshly computed values, attaching a backward closure only when some
/// input takes part in gradient tracking.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<ImplPtr<T>> inputs, const char* op,
                      BackwardFn<T> backward_fn) {
  Tensor<T> out(std::move(shape), std::move(data));
  const bool track = grad_enabled() &&
                     std::any_of(inputs.begin(), inputs.end(), [](const auto& in) { return in->requires_grad; });
  if (track) {
    auto node = std::make_shared<detail::Node<T>>();
    node->op = op;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward_fn);
    out.impl()->requires_grad = true;
    out.impl()->node = std::move(node);
  }
  return out;
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

/// For every flat index of `out`, the flat index of the broadcast source.
std::vector<std::size_t> broadcast_map(const Shape& in, const Shape& out) {
  const std::size_t offset = out.size() - in.size();
  const auto in_strides = strides_of(in);
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> counter(out.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < in.size(); ++d) {
      if (in[d] != 1) src += counter[d + offset] * in_strides[d];
    }
    map[flat] = src;
    for (std::size_t d = out.size(); d-- > 0;) {
      if (++counter[d] < out[d]) break;
      counter[d] = 0;
    }
  }
  return map;
}

std::size_t prod(const Shape& shape, std::size_t begin, std::size_t end) {
  std::size_t n = 1;
  for (std::size_t i = begin; i < end; ++i) n *= shape[i];
  return n;
}

void require_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(shape));
  }
}

template <typename T, typename Fwd, typename GradA, typename GradB>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, GradA grad_a,
                    GradB grad_b) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = shape_numel(out_shape);
  auto ma = std::make_shared<std::vector<std::size_t>>();
  auto mb = std::make_shared<std::vector<std::size_t>>();
  if (a.shape() != out_shape) *ma = broadcast_map(a.shape(), out_shape);
  if (b.shape() != out_shape) *mb = broadcast_map(b.shape(), out_shape);
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T x = ad[ma->empty() ? i : (*ma)[i]];
    const T y = bd[mb->empty() ? i : (*mb)[i]];
    out[i] = fwd(x, y);
  }
  return make_result<T>(
      std::move(out_shape), std::move(out), {a.impl(), b.impl()}, name,
      [ma, mb, grad_a, grad_b](const detail::TensorImpl<T>& o, std::span<const ImplPtr<T>> in) {
        const auto& ia = *in[0];
        const auto& ib = *in[1];
        std::vector<T>* ga = in[0]->requires_grad ? &in[0]->grad_buffer() : nullptr;
        std::vector<T>* gb = in[1]->requires_grad ? &in[1]->grad_buffer() : nullptr;
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          const std::size_t ja = ma->empty() ? i : (*ma)[i];
          const std::size_t jb = mb->empty() ? i : (*mb)[i];
          const T x = ia.data[ja];
          const T y = ib.data[jb];
          if (ga) (*ga)[ja] += o.grad[i] * grad_a(x, y);
          if (gb) (*gb)[jb] += o.grad[i] * grad_b(x, y);
        }
      });
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary_op(const char* name, const Tensor<T>& a, Fwd fwd, Deriv deriv) {
  const auto& ad = a.data();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = fwd(ad[i]);
  return make_result<T>(a.shape(), std::move(out), {a.impl()}, name,
                        [deriv](const detail::TensorImpl<T>& o, std::span<const ImplPtr<T>> in) {
                          auto& g = in[0]->grad_buffer();
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            g[i] += o.grad[i] * deriv(in[0]->data[i], o.data[i]);
                          }
                        });
}

// C[m,n] += A[m,k] * B[k,n], rows [row_begin, row_end).
template <typename T>
void gemm_rows(const T* a, const T* b, T* c, std::size_t k, std::size_t n, std::size_t row_begin,
               std::size_t row_end) {
  for (std::size_t i = row_begin; i < row_end; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast shapes " + shape_string(a) + " and " + shape_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return unary_op<T>("neg", a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  return unary_op<T>("add_scalar", a, [value](T x) { return x + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T value) {
  return unary_op<T>("mul_scalar", a, [value](T x) { return x * value; }, [value](T, T) { return value; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary_op<T>("square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return unary_op<T>(
      "sqrt", a, [](T x) { return std::sqrt(x); },
      [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2 || as[as.size() - 1] != bs[bs.size() - 2]) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(as) + " and " + shape_string(bs));
  }
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as[as.size() - 1];
  const std::size_t n = bs[bs.size() - 1];
  const Shape batch_a(as.begin(), as.end() - 2);
  const Shape batch_b(bs.begin(), bs.end() - 2);
  Shape batch;
  try {
    batch = broadcast_shape(batch_a, batch_b);
  } catch (const ShapeError&) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(as) + " and " + shape_string(bs));
  }
  const std::size_t nb = shape_numel(batch);
  auto map_a = std::make_shared<std::vector<std::size_t>>(broadcast_map(batch_a, batch));
  auto map_b = std::make_shared<std::vector<std::size_t>>(broadcast_map(batch_b, batch));

  std::vector<T> out(nb * m * n, T(0));
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  parallel_for(nb * m, 16, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const std::size_t bi = r / m;
      const std::size_t i = r % m;
      gemm_rows(ad + (*map_a)[bi] * m * k, bd + (*map_b)[bi] * k * n, out.data() + bi * m * n, k, n, i, i + 1);
    }
  });

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  return make_result<T>(
      std::move(out_shape), std::move(out), {a.impl(), b.impl()}, "matmul",
      [map_a, map_b, nb, m, k, n](const detail::TensorImpl<T>& o, std::span<const ImplPtr<T>> in) {
        const T* gc = o.grad.data();
        if (in[0]->requires_grad) {
          T* ga = in[0]->grad_buffer().data();
          const T* bd = in[1]->data.data();
          for (std::size_t bi = 0; bi < nb; ++bi) {
            const T* gcb = gc + bi * m * n;
            const T* bb = bd + (*map_b)[bi] * k * n;
            T* gab = ga + (*map_a)[bi] * m * k;
            for (std::size_t i = 0; i < m; ++i) {
              for (std::size_t p = 0; p < k; ++p) {
                T acc = T(0);
                for (std::size_t j = 0; j < n; ++j) acc += gcb[i * n + j] * bb[p * n + j];
                gab[i * k + p] += acc;
              }
            }
          }
        }
        if (in[1]->requires_grad) {
          T* gb = in[1]->grad_buffer().data();
          const T* ad = in[0]->data.data();
          for (std::size_t bi = 0; bi < nb; ++bi) {
            const T* gcb = gc + bi * m * n;
            const T* ab = ad + (*map_a)[bi] * m * k;
            T* gbb = gb + (*map_b)[bi] * k * n;
            for (std::size_t i = 0; i < m; ++i) {
              for (std::size_t p = 0; p < k; ++p) {
                const T aip = ab[i * k + p];
                for (std::size_t j = 0; j < n; ++j) gbb[p * n + j] += aip * gcb[i * n + j];
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>(std::move(shape), std::move(out), {a.impl()}, "reshape",
                        [](const detail::TensorImpl<T>& o, std::span<const ImplPtr<T>> in) {
                          auto& g = in[0]->grad_buffer();
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                        });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& order) {
  const Shape& in_shape = a.shape();
  if (order.size() != in_shape.size()) {
    throw ShapeError("permute: order has " + std::to_string(order.size()) + " axes for shape " +
                     shape_string(in_shape));
  }
  std::vector<bool> seen(order.size(), false);
  for (std::size_t ax : order) {
    if (ax >= order.size() || seen[ax]) throw ShapeError("permute: invalid axis order");
    seen[ax] = true;
  }
  Shape out_shape(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) out_shape[i] = in_shape[order[i]];
  const auto in_strides = strides_of(in_shape);
  const std::size_t n = a.numel();
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(order.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < order.size(); ++d) src += counter[d] * in_strides[order[d]];
    (*map)[flat] = src;
    for (std::size_t d = order.size(); d-- > 0;) {
      if (++counter[d] < out_shape[d]) break;
      counter[d] = 0;
    }
  }
  std::vector<T> out(n);
  const auto& ad = a.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = ad[(*map)[i]];
  return make_result<T>(std::move(out_shape), std::move(out), {a.impl()}, "permute",
                        [map](const detail::TensorImpl<T>& o, std::span<const ImplPtr<T>> in) {
                          auto& g = in[0]->grad_buffer();
                          for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*map)[i]] += o.grad[i];
                        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, std::size_t axis0, std::size_t axis1) {
  require_axis(a.shape(), axis0, "transpose");
  require_axis(a.shape(), axis1, "transpose");
  std::vector<std::size_t> order(a.rank());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::swap(order[axis0], order[axis1]);
  return permute(a, order);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  require_axis(first, axis, "concat");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw ShapeError("concat: " + shape_string(s) + " does not match " + shape_string(first));
    out_shape[axis] += s[axis];
  }
  const std::size_t outer = prod(first, 0, axis);
  const std::size_t inner = prod(first, axis + 1, first.size());
  const std::size_t out_row = out_shape[axis] * inner;
  std::vector<T> out(shape_numel(out_shape));
  auto widths = std::make_shared<std::vector<std::size_t>>();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(axis) * inner;
    const auto& d = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(d.begin() + o * w, w, out.begin() + o * out_row + offset);
    }
    offset += w;
    widths->push_back(w);
  }
  std::vector<ImplPtr<T>> inputs;
  for (const auto& p : parts) inputs.push_back(p.impl());
  return make_result<T>(std::move(out_shape), std::move(out), std::move(inputs), "concat",
                        [widths, outer, out_row](const detail::TensorImpl<T>& o, std::span<const ImplPtr<T>> in) {
                          std::size_t off = 0;
                          for (std::size_t pi = 0; pi < in.size(); ++pi) {
                            const std::size_t w = (*widths)[pi];
                            if (in[pi]->requires_grad) {
                              auto& g = in[pi]->grad_buffer();
                              for (std::size_t r = 0; r < outer; ++r) {
                                for (std::size_t j = 0; j < w; ++j) g[r * w + j] += o.grad[r * out_row + off + j];
                              }
                            }
                            off += w;
                          }
                        });
}

template <typename T>
Tensor<T> index_select(const Tensor<T>& a, std::size_t axis, const std::vector<std::size_t>& indices) {
  require_axis(a.shape(), axis, "index_select");
  const std::size_t len = a.dim(axis);
  for (std::size_t idx : indices) {
    if (idx >= len) {
      throw ShapeError("index_select: index " + std::to_string(idx) + " out of range for axis of length " +
                       std::to_string(len));
    }
  }
  if (indices.empty()) throw ShapeError("index_select: empty index list");
  const std::size_t outer = prod(a.shape(), 0, axis);
  const std::size_t inner = prod(a.shape(), axis + 1, a.rank());
  Shape out_shape = a.shape();
  out_shape[axis] = indices.size();
  std::vector<T> out(shape_numel(out_shape));
  const auto& d = a.data();
  const std::size_t k = indices.size();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < k; ++j) {
      std::copy_n(d.begin() + (o * len + indices[j]) * inner, inner, out.begin() + (o * k + j) * inner);
    }
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(indices);
  return make_result<T>(std::move(out_shape), std::move(out), {a.impl()}, "index_select",
                        [idx, outer, len, inner](const detail::TensorImpl<T>& o, std::span<const ImplPtr<T>> in) {
                          auto& g = in[0]->grad_buffer();
                          const std::size_t k = idx->size();
                          for (std::size_t r = 0; r < outer; ++r) {
                            for (std::size_t j = 0; j < k; ++j) {
                              T* dst = g.data() + (r * len + (*idx)[j]) * inner;
                              const T* src = o.grad.data() + (r * k + j) * inner;
                              for (std::size_t e = 0; e < inner; ++e) dst[e] += src[e];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  return make_result<T>(Shape{}, {acc}, {a.impl()}, "sum",
                        [](const detail::TensorImpl<T>& o, std::span<const ImplPtr<T>> in) {
                          auto& g = in[0]->grad_buffer();
                          for (T& v : g) v += o.grad[0];
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::size_t axis, bool keepdim) {
  require_axis(a.shape(), axis, "sum");
  const std::size_t outer = prod(a.shape(), 0, axis);
  const std::size_t len = a.dim(axis);
  const std::size_t inner = prod(a.shape(), axis + 1, a.rank());
  std::vector<T> out(outer * inner, T(0));
  const auto& d = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < len; ++j) {
      for (std::size_t e = 0; e < inner; ++e) out[o * inner + e] += d[(o * len + j) * inner + e];
    }
  }
  Shape out_shape = a.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return make_result<T>(std::move(out_shape), std::move(out), {a.impl()}, "sum_axis",
                        [outer, len, inner](const detail::TensorImpl<T>& o, std::span<const ImplPtr<T>> in) {
                          auto& g = in[0]->grad_buffer();
                          for (std::size_t r = 0; r < outer; ++r) {
                            for (std::size_t j = 0; j < len; ++j) {
                              for (std::size_t e = 0; e < inner; ++e) g[(r * len + j) * inner + e] += o.grad[r * inner + e];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return mul_scalar(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis, bool keepdim) {
  require_axis(a.shape(), axis, "mean");
  return mul_scalar(sum(a, axis, keepdim), T(1) / static_cast<T>(a.dim(axis)));
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  require_axis(x.shape(), axis, "softmax");
  const std::size_t outer = prod(x.shape(), 0, axis);
  const std::size_t len = x.dim(axis);
  const std::size_t inner = prod(x.shape(), axis + 1, x.rank());
  const auto& d = x.data();
  std::vector<T> out(d.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t e = 0; e < inner; ++e) {
      const std::size_t base = o * len * inner + e;
      T mx = d[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, d[base + j * inner]);
      T total = T(0);
      for (std::size_t j = 0; j < len; ++j) {
        const T v = std::exp(d[base + j * inner] - mx);
        out[base + j * inner] = v;
        total += v;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x.impl()}, "softmax",
                        [outer, len, inner](const detail::TensorImpl<T>& o, std::span<const ImplPtr<T>> in) {
                          auto& g = in[0]->grad_buffer();
                          for (std::size_t r = 0; r < outer; ++r) {
                            for (std::size_t e = 0; e < inner; ++e) {
                              const std::size_t base = r * len * inner + e;
                              T dot = T(0);
                              for (std::size_t j = 0; j < len; ++j) {
                                dot += o.grad[base + j * inner] * o.data[base + j * inner];
                              }
                              for (std::size_t j = 0; j < len; ++j) {
                                const std::size_t i = base + j * inner;
                                g[i] += o.data[i] * (o.grad[i] - dot);
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (x.rank() == 0) throw ShapeError("layernorm: scalar input");
  const std::size_t width = x.shape().back();
  if (gain.shape() != Shape{width} || bias.shape() != Shape{width}) {
    throw ShapeError("layernorm: gain " + shape_string(gain.shape()) + " / bias " + shape_string(bias.shape()) +
                     " do not match last axis of " + shape_string(x.shape()));
  }
  const std::size_t rows = x.numel() / width;
  const auto& d = x.data();
  const auto& gd = gain.data();
  const auto& bd = bias.data();
  auto normalized = std::make_shared<std::vector<T>>(d.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(d.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = d.data() + r * width;
    T mu = T(0);
    for (std::size_t j = 0; j < width; ++j) mu += row[j];
    mu /= static_cast<T>(width);
    T var = T(0);
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(width);
    const T rs = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = rs;
    for (std::size_t j = 0; j < width; ++j) {
      const T xh = (row[j] - mu) * rs;
      (*normalized)[r * width + j] = xh;
      out[r * width + j] = xh * gd[j] + bd[j];
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {x.impl(), gain.impl(), bias.impl()}, "layernorm",
      [normalized, inv_std, rows, width](const detail::TensorImpl<T>& o, std::span<const ImplPtr<T>> in) {
        const auto& g = in[1]->data;
        std::vector<T>* gx = in[0]->requires_grad ? &in[0]->grad_buffer() : nullptr;
        std::vector<T>* gg = in[1]->requires_grad ? &in[1]->grad_buffer() : nullptr;
        std::vector<T>* gbias = in[2]->requires_grad ? &in[2]->grad_buffer() : nullptr;
        const T n = static_cast<T>(width);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* dy = o.grad.data() + r * width;
          const T* xh = normalized->data() + r * width;
          T sum_dxh = T(0);
          T sum_dxh_xh = T(0);
          for (std::size_t j = 0; j < width; ++j) {
            const T dxh = dy[j] * g[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[j];
            if (gg) (*gg)[j] += dy[j] * xh[j];
            if (gbias) (*gbias)[j] += dy[j];
          }
          if (gx) {
            const T rs = (*inv_std)[r];
            for (std::size_t j = 0; j < width; ++j) {
              const T dxh = dy[j] * g[j];
              (*gx)[r * width + j] += rs * (n * dxh - sum_dxh - xh[j] * sum_dxh_xh) / n;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  return unary_op<T>(
      "gelu", x,
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v))); },
      [](T v, T) {
        const T t = std::tanh(kC * (v + kA * v * v * v));
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * kC * (T(1) + T(3) * kA * v * v);
      });
}

#define DEPTHMAE_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> neg(const Tensor<T>&);                                                          \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                                \
  template Tensor<T> square(const Tensor<T>&);                                                       \
  template Tensor<T> sqrt(const Tensor<T>&);                                                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                               \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                     \
  template Tensor<T> transpose(const Tensor<T>&, std::size_t, std::size_t);                          \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                             \
  template Tensor<T> index_select(const Tensor<T>&, std::size_t, const std::vector<std::size_t>&);   \
  template Tensor<T> sum(const Tensor<T>&);                                                          \
  template Tensor<T> sum(const Tensor<T>&, std::size_t, bool);                                       \
  template Tensor<T> mean(const Tensor<T>&);                                                         \
  template Tensor<T> mean(const Tensor<T>&, std::size_t, bool);                                      \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                         \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);             \
  template Tensor<T> gelu(const Tensor<T>&);

DEPTHMAE_INSTANTIATE_OPS(float)
DEPTHMAE_INSTANTIATE_OPS(double)

#undef DEPTHMAE_INSTANTIATE_OPS

}  // namespace depthmae
