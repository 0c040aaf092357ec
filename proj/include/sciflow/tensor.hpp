#pragma once

// Minimal dense tensor with reverse-mode automatic differentiation.
// Layout is row-major; image-like tensors are [B, C, H, W]. The element type
// is a template parameter: float for training speed, double for the
// verification suites, which need tight gradient tolerances.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sciflow/errors.hpp"

namespace sciflow {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // allocated on demand during backward
  bool requires_grad = false;
  bool graph_consumed = false;  // set on interior nodes once backward has run
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // pushes this->grad into parents

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Node = detail::Node<T>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    auto node = std::make_shared<Node>();
    node->values.assign(static_cast<std::size_t>(shape_numel(shape)), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from_data(Shape shape, std::vector<T> values,
                          bool requires_grad = false) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
      throw ShapeError("tensor: data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return full({1}, value, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }

  std::int64_t numel() const {
    return static_cast<std::int64_t>(node_->values.size());
  }

  int dim(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }

  // Views into node storage are only handed out from lvalues; on a temporary
  // the storage would die before the view is used.
  std::span<const T> data() const& { return node_->values; }
  std::span<const T> data() const&& = delete;

  // Weight updates between backward passes; never mutate inside a live graph.
  std::span<T> mutable_data() & { return node_->values; }
  std::span<T> mutable_data() && = delete;

  bool requires_grad() const { return node_->requires_grad; }

  bool has_grad() const { return !node_->grad.empty(); }

  std::span<const T> grad() const& {
    if (node_->grad.empty()) {
      throw StateError("tensor: gradient requested but backward has not run");
    }
    return node_->grad;
  }
  std::span<const T> grad() const&& = delete;

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("tensor: item() on non-scalar shape " + shape_str(shape()));
    }
    return node_->values[0];
  }

  // Value at [b,c,y,x] style index; test/IO convenience, not a hot path.
  T at(std::initializer_list<int> idx) const {
    const Shape& s = shape();
    if (idx.size() != s.size()) {
      throw ShapeError("tensor: index rank " + std::to_string(idx.size()) +
                       " vs shape " + shape_str(s));
    }
    std::int64_t flat = 0;
    std::size_t axis = 0;
    for (int i : idx) {
      flat = flat * s[axis] + i;
      ++axis;
    }
    return node_->values[static_cast<std::size_t>(flat)];
  }

  // Copy with the graph cut: same values, no parents, no gradient tracking.
  Tensor detach() const {
    auto node = std::make_shared<Node>();
    node->shape = node_->shape;
    node->values = node_->values;
    return Tensor(std::move(node));
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  std::shared_ptr<Node> node_;

  template <typename U>
  friend Tensor<U> make_op_result(Shape, std::vector<U>,
                                  std::vector<Tensor<U>>,
                                  std::function<void(detail::Node<U>&)>);
};

// Builds an interior graph node from an op's forward result.
template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> values,
                         std::vector<Tensor<T>> parents,
                         std::function<void(detail::Node<T>&)> backprop) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  bool needs_grad = false;
  for (const auto& p : parents) needs_grad = needs_grad || p.requires_grad();
  node->requires_grad = needs_grad;
  if (needs_grad) {
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backprop = std::move(backprop);
  }
  return Tensor<T>(std::move(node));
}

namespace detail {

template <typename T>
inline void require_same_shape(const char* op, const Tensor<T>& a,
                               const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    for (std::size_t axis = 0; axis < std::min(a.shape().size(), b.shape().size());
         ++axis) {
      if (a.shape()[axis] != b.shape()[axis]) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " differs, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
      }
    }
    throw ShapeError(std::string(op) + ": rank mismatch, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

template <typename T>
inline void require_rank4(const char* op, const char* arg, const Tensor<T>& t) {
  if (t.shape().size() != 4) {
    throw ShapeError(std::string(op) + ": " + arg + " must be 4-D [B,C,H,W], got " +
                     shape_str(t.shape()));
  }
}

template <typename T>
inline void accumulate(Node<T>& parent, std::size_t i, T value) {
  parent.grad[i] += value;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (identical shapes; no implicit broadcasting)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_op_result<T>(a.shape(), std::move(out), {a, b},
                           [](detail::Node<T>& self) {
                             for (auto& p : self.parents) {
                               if (!p->requires_grad) continue;
                               p->ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 p->grad[i] += self.grad[i];
                             }
                           });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return make_op_result<T>(a.shape(), std::move(out), {a, b},
                           [](detail::Node<T>& self) {
                             auto& pa = self.parents[0];
                             auto& pb = self.parents[1];
                             if (pa->requires_grad) {
                               pa->ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 pa->grad[i] += self.grad[i];
                             }
                             if (pb->requires_grad) {
                               pb->ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 pb->grad[i] -= self.grad[i];
                             }
                           });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<T> out(a.numel());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return make_op_result<T>(a.shape(), std::move(out), {a, b},
                           [](detail::Node<T>& self) {
                             auto& pa = self.parents[0];
                             auto& pb = self.parents[1];
                             if (pa->requires_grad) {
                               pa->ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 pa->grad[i] += self.grad[i] * pb->values[i];
                             }
                             if (pb->requires_grad) {
                               pb->ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 pb->grad[i] += self.grad[i] * pa->values[i];
                             }
                           });
}

// ---------------------------------------------------------------------------
// Scalar broadcasts
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += c;
  return make_op_result<T>(a.shape(), std::move(out), {a},
                           [](detail::Node<T>& self) {
                             auto& p = self.parents[0];
                             if (!p->requires_grad) return;
                             p->ensure_grad();
                             for (std::size_t i = 0; i < self.grad.size(); ++i)
                               p->grad[i] += self.grad[i];
                           });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= c;
  return make_op_result<T>(a.shape(), std::move(out), {a},
                           [c](detail::Node<T>& self) {
                             auto& p = self.parents[0];
                             if (!p->requires_grad) return;
                             p->ensure_grad();
                             for (std::size_t i = 0; i < self.grad.size(); ++i)
                               p->grad[i] += self.grad[i] * c;
                           });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

// dfn(value_in, value_out) -> local derivative
template <typename T, typename Fwd, typename Dfn>
Tensor<T> unary_op(const Tensor<T>& a, Fwd fwd, Dfn dfn) {
  std::vector<T> out(a.numel());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ad[i]);
  return make_op_result<T>(
      a.shape(), std::move(out), {a}, [dfn](detail::Node<T>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          p->grad[i] += self.grad[i] * dfn(p->values[i], self.values[i]);
      });
}

}  // namespace detail

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

// Subgradient 0 at the origin.
template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

// v^p for non-negative v; the derivative at v = 0 is flushed to 0.
template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& a, T p) {
  return detail::unary_op(
      a, [p](T v) { return std::pow(v, p); },
      [p](T v, T) { return v > T(0) ? p * std::pow(v, p - T(1)) : T(0); });
}

// ---------------------------------------------------------------------------
// Channel shuffles
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ArgumentError("concat_channels: empty input list");
  detail::require_rank4("concat_channels", "input", parts[0]);
  const int B = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
  int C = 0;
  for (const auto& p : parts) {
    detail::require_rank4("concat_channels", "input", p);
    if (p.dim(0) != B || p.dim(2) != H || p.dim(3) != W) {
      throw ShapeError("concat_channels: mismatched batch/spatial dims, " +
                       shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    C += p.dim(1);
  }
  const std::int64_t plane = std::int64_t(H) * W;
  std::vector<T> out(std::size_t(B) * C * plane);
  std::vector<int> channels;
  for (int b = 0; b < B; ++b) {
    std::int64_t co = 0;
    for (const auto& p : parts) {
      const int pc = p.dim(1);
      const T* src = p.data().data() + std::int64_t(b) * pc * plane;
      std::copy(src, src + std::int64_t(pc) * plane,
                out.data() + (std::int64_t(b) * C + co) * plane);
      co += pc;
    }
  }
  for (const auto& p : parts) channels.push_back(p.dim(1));
  return make_op_result<T>(
      {B, C, H, W}, std::move(out), parts,
      [B, C, plane, channels](detail::Node<T>& self) {
        for (int b = 0; b < B; ++b) {
          std::int64_t co = 0;
          for (std::size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = self.parents[k];
            const int pc = channels[k];
            if (p->requires_grad) {
              p->ensure_grad();
              const T* g = self.grad.data() + (std::int64_t(b) * C + co) * plane;
              T* dst = p->grad.data() + std::int64_t(b) * pc * plane;
              for (std::int64_t i = 0; i < std::int64_t(pc) * plane; ++i)
                dst[i] += g[i];
            }
            co += pc;
          }
        }
      });
}

// [B,1,H,W] -> [B,n,H,W]; the explicit channel broadcast.
template <typename T>
Tensor<T> repeat_channels(const Tensor<T>& a, int n) {
  detail::require_rank4("repeat_channels", "input", a);
  if (a.dim(1) != 1) {
    throw ShapeError("repeat_channels: axis 1 must be 1, got " +
                     shape_str(a.shape()));
  }
  if (n < 1) throw ArgumentError("repeat_channels: n must be >= 1");
  const int B = a.dim(0), H = a.dim(2), W = a.dim(3);
  const std::int64_t plane = std::int64_t(H) * W;
  std::vector<T> out(std::size_t(B) * n * plane);
  for (int b = 0; b < B; ++b) {
    const T* src = a.data().data() + b * plane;
    for (int c = 0; c < n; ++c)
      std::copy(src, src + plane, out.data() + (std::int64_t(b) * n + c) * plane);
  }
  return make_op_result<T>(
      {B, n, H, W}, std::move(out), {a}, [B, n, plane](detail::Node<T>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int b = 0; b < B; ++b) {
          T* dst = p->grad.data() + b * plane;
          for (int c = 0; c < n; ++c) {
            const T* g = self.grad.data() + (std::int64_t(b) * n + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) dst[i] += g[i];
          }
        }
      });
}

// [B,C,H,W] -> [B,1,H,W], summing over the channel axis.
template <typename T>
Tensor<T> sum_channels(const Tensor<T>& a) {
  detail::require_rank4("sum_channels", "input", a);
  const int B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  const std::int64_t plane = std::int64_t(H) * W;
  std::vector<T> out(std::size_t(B) * plane, T(0));
  const T* src = a.data().data();
  for (int b = 0; b < B; ++b) {
    T* dst = out.data() + b * plane;
    for (int c = 0; c < C; ++c) {
      const T* s = src + (std::int64_t(b) * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] += s[i];
    }
  }
  return make_op_result<T>(
      {B, 1, H, W}, std::move(out), {a}, [B, C, plane](detail::Node<T>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int b = 0; b < B; ++b) {
          const T* g = self.grad.data() + b * plane;
          for (int c = 0; c < C; ++c) {
            T* dst = p->grad.data() + (std::int64_t(b) * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) dst[i] += g[i];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  return make_op_result<T>({1}, {acc}, {a}, [](detail::Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    const T g = self.grad[0];
    for (auto& gv : p->grad) gv += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  const T inv = T(1) / T(a.numel());
  return make_op_result<T>({1}, {acc * inv}, {a}, [inv](detail::Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    const T g = self.grad[0] * inv;
    for (auto& gv : p->grad) gv += g;
  });
}

// Sum of absolute values; subgradient 0 at the origin.
template <typename T>
Tensor<T> l1(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += std::abs(v);
  return make_op_result<T>({1}, {acc}, {a}, [](detail::Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    const T g = self.grad[0];
    for (std::size_t i = 0; i < p->values.size(); ++i) {
      const T v = p->values[i];
      p->grad[i] += g * (v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)));
    }
  });
}

// [B,C,H,W] -> [B,C,1,1], mean over the spatial axes.
template <typename T>
Tensor<T> spatial_mean(const Tensor<T>& a) {
  detail::require_rank4("spatial_mean", "input", a);
  const int B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  const std::int64_t plane = std::int64_t(H) * W;
  const T inv = T(1) / T(plane);
  std::vector<T> out(std::size_t(B) * C);
  for (int bc = 0; bc < B * C; ++bc) {
    const T* s = a.data().data() + bc * plane;
    T acc = T(0);
    for (std::int64_t i = 0; i < plane; ++i) acc += s[i];
    out[static_cast<std::size_t>(bc)] = acc * inv;
  }
  return make_op_result<T>(
      {B, C, 1, 1}, std::move(out), {a}, [B, C, plane, inv](detail::Node<T>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int bc = 0; bc < B * C; ++bc) {
          const T g = self.grad[static_cast<std::size_t>(bc)] * inv;
          T* dst = p->grad.data() + bc * plane;
          for (std::int64_t i = 0; i < plane; ++i) dst[i] += g;
        }
      });
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace detail {

// Valid output range [o0, o1) such that 0 <= o*stride - pad + k < extent.
inline void conv_out_range(int extent, int out_extent, int stride, int pad, int k,
                           int& o0, int& o1) {
  int lo = pad - k;  // need o*stride >= lo
  o0 = lo <= 0 ? 0 : (lo + stride - 1) / stride;
  int hi = extent - 1 + pad - k;  // need o*stride <= hi
  o1 = hi < 0 ? 0 : std::min(out_extent, hi / stride + 1);
  if (o1 < o0) o1 = o0;
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, int stride, int padding) {
  detail::require_rank4("conv2d", "input", input);
  detail::require_rank4("conv2d", "kernel", kernel);
  if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1");
  if (padding < 0) throw ArgumentError("conv2d: padding must be >= 0");
  const int B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int Cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != Cin) {
    throw ShapeError("conv2d: axis 1 (input channels) mismatch, input has " +
                     std::to_string(Cin) + ", kernel expects " +
                     std::to_string(kernel.dim(1)));
  }
  if (kh > H + 2 * padding || kw > W + 2 * padding) {
    throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" +
                     std::to_string(kw) + " exceeds padded input " +
                     std::to_string(H + 2 * padding) + "x" +
                     std::to_string(W + 2 * padding));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.shape().size() != 1 || bias.dim(0) != Cout)) {
    throw ShapeError("conv2d: bias must be [Cout]=" + std::to_string(Cout) +
                     ", got " + shape_str(bias.shape()));
  }
  const int Ho = (H + 2 * padding - kh) / stride + 1;
  const int Wo = (W + 2 * padding - kw) / stride + 1;

  std::vector<T> out(std::size_t(B) * Cout * Ho * Wo, T(0));
  const T* in = input.data().data();
  const T* ker = kernel.data().data();
  for (int b = 0; b < B; ++b) {
    for (int co = 0; co < Cout; ++co) {
      T* out_plane = out.data() + (std::int64_t(b) * Cout + co) * Ho * Wo;
      if (has_bias) {
        const T bv = bias.data()[static_cast<std::size_t>(co)];
        for (std::int64_t i = 0; i < std::int64_t(Ho) * Wo; ++i) out_plane[i] = bv;
      }
      for (int ci = 0; ci < Cin; ++ci) {
        const T* in_plane = in + (std::int64_t(b) * Cin + ci) * H * W;
        const T* kplane = ker + (std::int64_t(co) * Cin + ci) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          int oy0, oy1;
          detail::conv_out_range(H, Ho, stride, padding, ky, oy0, oy1);
          for (int kx = 0; kx < kw; ++kx) {
            const T w = kplane[ky * kw + kx];
            int ox0, ox1;
            detail::conv_out_range(W, Wo, stride, padding, kx, ox0, ox1);
            const int shift = kx - padding;
            for (int oy = oy0; oy < oy1; ++oy) {
              const T* in_row = in_plane + std::int64_t(oy * stride - padding + ky) * W;
              T* out_row = out_plane + std::int64_t(oy) * Wo;
              if (stride == 1) {
                for (int ox = ox0; ox < ox1; ++ox) out_row[ox] += w * in_row[ox + shift];
              } else {
                for (int ox = ox0; ox < ox1; ++ox)
                  out_row[ox] += w * in_row[ox * stride + shift];
              }
            }
          }
        }
      }
    }
  }

  std::vector<Tensor<T>> parents = {input, kernel};
  if (has_bias) parents.push_back(bias);
  auto backprop = [B, Cin, Cout, H, W, Ho, Wo, kh, kw, stride, padding,
                   has_bias](detail::Node<T>& self) {
    auto& pin = self.parents[0];
    auto& pker = self.parents[1];
    const T* gout = self.grad.data();
    if (pin->requires_grad) {
      pin->ensure_grad();
      for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Cout; ++co) {
          const T* g_plane = gout + (std::int64_t(b) * Cout + co) * Ho * Wo;
          for (int ci = 0; ci < Cin; ++ci) {
            T* gin_plane = pin->grad.data() + (std::int64_t(b) * Cin + ci) * H * W;
            const T* kplane =
                pker->values.data() + (std::int64_t(co) * Cin + ci) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
              int oy0, oy1;
              detail::conv_out_range(H, Ho, stride, padding, ky, oy0, oy1);
              for (int kx = 0; kx < kw; ++kx) {
                const T w = kplane[ky * kw + kx];
                int ox0, ox1;
                detail::conv_out_range(W, Wo, stride, padding, kx, ox0, ox1);
                const int shift = kx - padding;
                for (int oy = oy0; oy < oy1; ++oy) {
                  T* gin_row =
                      gin_plane + std::int64_t(oy * stride - padding + ky) * W;
                  const T* g_row = g_plane + std::int64_t(oy) * Wo;
                  if (stride == 1) {
                    for (int ox = ox0; ox < ox1; ++ox) gin_row[ox + shift] += w * g_row[ox];
                  } else {
                    for (int ox = ox0; ox < ox1; ++ox)
                      gin_row[ox * stride + shift] += w * g_row[ox];
                  }
                }
              }
            }
          }
        }
      }
    }
    if (pker->requires_grad) {
      pker->ensure_grad();
      for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Cout; ++co) {
          const T* g_plane = gout + (std::int64_t(b) * Cout + co) * Ho * Wo;
          for (int ci = 0; ci < Cin; ++ci) {
            const T* in_plane =
                pin->values.data() + (std::int64_t(b) * Cin + ci) * H * W;
            T* gk_plane = pker->grad.data() + (std::int64_t(co) * Cin + ci) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
              int oy0, oy1;
              detail::conv_out_range(H, Ho, stride, padding, ky, oy0, oy1);
              for (int kx = 0; kx < kw; ++kx) {
                int ox0, ox1;
                detail::conv_out_range(W, Wo, stride, padding, kx, ox0, ox1);
                const int shift = kx - padding;
                T acc = T(0);
                for (int oy = oy0; oy < oy1; ++oy) {
                  const T* in_row =
                      in_plane + std::int64_t(oy * stride - padding + ky) * W;
                  const T* g_row = g_plane + std::int64_t(oy) * Wo;
                  if (stride == 1) {
                    for (int ox = ox0; ox < ox1; ++ox) acc += in_row[ox + shift] * g_row[ox];
                  } else {
                    for (int ox = ox0; ox < ox1; ++ox)
                      acc += in_row[ox * stride + shift] * g_row[ox];
                  }
                }
                gk_plane[ky * kw + kx] += acc;
              }
            }
          }
        }
      }
    }
    if (has_bias && self.parents[2]->requires_grad) {
      auto& pbias = self.parents[2];
      pbias->ensure_grad();
      for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Cout; ++co) {
          const T* g_plane = gout + (std::int64_t(b) * Cout + co) * Ho * Wo;
          T acc = T(0);
          for (std::int64_t i = 0; i < std::int64_t(Ho) * Wo; ++i) acc += g_plane[i];
          pbias->grad[static_cast<std::size_t>(co)] += acc;
        }
      }
    }
  };
  return make_op_result<T>({B, Cout, Ho, Wo}, std::move(out), std::move(parents),
                           std::move(backprop));
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride,
                 int padding) {
  return conv2d(input, kernel, Tensor<T>(), stride, padding);
}

// ---------------------------------------------------------------------------
// bilinear_sample
// ---------------------------------------------------------------------------

namespace detail {

// Clamp-to-edge corner lookup for one coordinate pair.
template <typename T>
struct BilinearTap {
  int x0, x1, y0, y1;
  T wx, wy;
  bool x_interior, y_interior;  // clamp derivative masks
};

template <typename T>
inline BilinearTap<T> bilinear_tap(T x, T y, int W, int H) {
  BilinearTap<T> t;
  t.x_interior = (x > T(0) && x < T(W - 1));
  t.y_interior = (y > T(0) && y < T(H - 1));
  const T xc = std::min(std::max(x, T(0)), T(W - 1));
  const T yc = std::min(std::max(y, T(0)), T(H - 1));
  t.x0 = static_cast<int>(std::floor(xc));
  t.y0 = static_cast<int>(std::floor(yc));
  t.x1 = std::min(t.x0 + 1, W - 1);
  t.y1 = std::min(t.y0 + 1, H - 1);
  t.wx = xc - T(t.x0);
  t.wy = yc - T(t.y0);
  return t;
}

}  // namespace detail

// coords is [B,2,H',W'] in absolute pixels, channel 0 = x, channel 1 = y.
// Out-of-range coordinates clamp to the border.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& source, const Tensor<T>& coords) {
  detail::require_rank4("bilinear_sample", "source", source);
  detail::require_rank4("bilinear_sample", "coords", coords);
  if (coords.dim(1) != 2) {
    throw ShapeError("bilinear_sample: coords axis 1 must be 2 (x,y), got " +
                     shape_str(coords.shape()));
  }
  if (coords.dim(0) != source.dim(0)) {
    throw ShapeError("bilinear_sample: axis 0 (batch) mismatch, " +
                     shape_str(source.shape()) + " vs " + shape_str(coords.shape()));
  }
  const int B = source.dim(0), C = source.dim(1), H = source.dim(2),
            W = source.dim(3);
  const int Ho = coords.dim(2), Wo = coords.dim(3);
  const std::int64_t out_plane = std::int64_t(Ho) * Wo;
  const std::int64_t src_plane = std::int64_t(H) * W;
  const T* cd = coords.data().data();
  for (int b = 0; b < B; ++b) {
    const T* cx = cd + std::int64_t(b) * 2 * out_plane;
    const T* cy = cx + out_plane;
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        const std::int64_t i = std::int64_t(oy) * Wo + ox;
        if (!std::isfinite(static_cast<double>(cx[i])) ||
            !std::isfinite(static_cast<double>(cy[i]))) {
          throw ValueError("bilinear_sample: non-finite coordinate at (b=" +
                           std::to_string(b) + ", y=" + std::to_string(oy) +
                           ", x=" + std::to_string(ox) + ")");
        }
      }
    }
  }

  std::vector<T> out(std::size_t(B) * C * out_plane);
  const T* sd = source.data().data();
  for (int b = 0; b < B; ++b) {
    const T* cx = cd + std::int64_t(b) * 2 * out_plane;
    const T* cy = cx + out_plane;
    for (std::int64_t i = 0; i < out_plane; ++i) {
      const auto t = detail::bilinear_tap(cx[i], cy[i], W, H);
      for (int c = 0; c < C; ++c) {
        const T* sp = sd + (std::int64_t(b) * C + c) * src_plane;
        const T v00 = sp[t.y0 * W + t.x0];
        const T v01 = sp[t.y0 * W + t.x1];
        const T v10 = sp[t.y1 * W + t.x0];
        const T v11 = sp[t.y1 * W + t.x1];
        out[(std::int64_t(b) * C + c) * out_plane + i] =
            (T(1) - t.wy) * ((T(1) - t.wx) * v00 + t.wx * v01) +
            t.wy * ((T(1) - t.wx) * v10 + t.wx * v11);
      }
    }
  }

  auto backprop = [B, C, H, W, Ho, Wo, out_plane, src_plane](detail::Node<T>& self) {
    auto& psrc = self.parents[0];
    auto& pcoord = self.parents[1];
    const T* cd = pcoord->values.data();
    const T* sd = psrc->values.data();
    const T* gout = self.grad.data();
    const bool need_src = psrc->requires_grad;
    const bool need_coord = pcoord->requires_grad;
    if (need_src) psrc->ensure_grad();
    if (need_coord) pcoord->ensure_grad();
    for (int b = 0; b < B; ++b) {
      const T* cx = cd + std::int64_t(b) * 2 * out_plane;
      const T* cy = cx + out_plane;
      T* gx = need_coord ? pcoord->grad.data() + std::int64_t(b) * 2 * out_plane
                         : nullptr;
      T* gy = need_coord ? gx + out_plane : nullptr;
      for (std::int64_t i = 0; i < out_plane; ++i) {
        const auto t = detail::bilinear_tap(cx[i], cy[i], W, H);
        T acc_dx = T(0), acc_dy = T(0);
        for (int c = 0; c < C; ++c) {
          const std::int64_t sbase = (std::int64_t(b) * C + c) * src_plane;
          const T g = gout[(std::int64_t(b) * C + c) * out_plane + i];
          const T v00 = sd[sbase + t.y0 * W + t.x0];
          const T v01 = sd[sbase + t.y0 * W + t.x1];
          const T v10 = sd[sbase + t.y1 * W + t.x0];
          const T v11 = sd[sbase + t.y1 * W + t.x1];
          if (need_src) {
            T* gs = psrc->grad.data() + sbase;
            gs[t.y0 * W + t.x0] += g * (T(1) - t.wy) * (T(1) - t.wx);
            gs[t.y0 * W + t.x1] += g * (T(1) - t.wy) * t.wx;
            gs[t.y1 * W + t.x0] += g * t.wy * (T(1) - t.wx);
            gs[t.y1 * W + t.x1] += g * t.wy * t.wx;
          }
          if (need_coord) {
            acc_dx += g * ((T(1) - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
            acc_dy += g * ((T(1) - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
          }
        }
        if (need_coord) {
          if (t.x_interior) gx[i] += acc_dx;
          if (t.y_interior) gy[i] += acc_dy;
        }
      }
    }
  };
  return make_op_result<T>({B, C, Ho, Wo}, std::move(out), {source, coords},
                           std::move(backprop));
}

// Constant [B,2,H,W] grid of absolute pixel coordinates (x in channel 0).
template <typename T>
Tensor<T> identity_grid(int B, int H, int W) {
  std::vector<T> g(std::size_t(B) * 2 * H * W);
  const std::int64_t plane = std::int64_t(H) * W;
  for (int b = 0; b < B; ++b) {
    T* gx = g.data() + std::int64_t(b) * 2 * plane;
    T* gy = gx + plane;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        gx[y * W + x] = T(x);
        gy[y * W + x] = T(y);
      }
    }
  }
  return Tensor<T>::from_data({B, 2, H, W}, std::move(g));
}

// Integer-factor bilinear upsample, half-pixel aligned, clamped at borders.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& a, int factor) {
  detail::require_rank4("upsample_bilinear", "input", a);
  if (factor < 1) throw ArgumentError("upsample_bilinear: factor must be >= 1");
  if (factor == 1) return add_scalar(a, T(0));
  const int B = a.dim(0), H = a.dim(2), W = a.dim(3);
  const int Ho = H * factor, Wo = W * factor;
  std::vector<T> coords(std::size_t(B) * 2 * Ho * Wo);
  const std::int64_t plane = std::int64_t(Ho) * Wo;
  const T inv = T(1) / T(factor);
  for (int b = 0; b < B; ++b) {
    T* cx = coords.data() + std::int64_t(b) * 2 * plane;
    T* cy = cx + plane;
    for (int y = 0; y < Ho; ++y) {
      const T sy = (T(y) + T(0.5)) * inv - T(0.5);
      for (int x = 0; x < Wo; ++x) {
        cx[y * Wo + x] = (T(x) + T(0.5)) * inv - T(0.5);
        cy[y * Wo + x] = sy;
      }
    }
  }
  return bilinear_sample(a, Tensor<T>::from_data({B, 2, Ho, Wo}, std::move(coords)));
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <typename T>
void backward(const Tensor<T>& loss, bool retain_graph = false) {
  if (!loss.defined()) throw StateError("backward: undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw StateError(
        "backward: loss is not reachable from any requires_grad tensor");
  }
  using Node = detail::Node<T>;
  auto root = loss.node();

  // Iterative post-order DFS over requires_grad parents.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->graph_consumed) {
      throw StateError(
          "backward: graph already consumed by a previous backward pass; "
          "rebuild it or pass retain_graph");
    }
    if (next < node->parents.size()) {
      Node* parent = node->parents[next].get();
      ++next;
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backprop) {
      node->ensure_grad();
      node->backprop(*node);
      if (!retain_graph) node->graph_consumed = true;
    }
  }
}

// ---------------------------------------------------------------------------
// Deterministic RNG (identical streams across platforms and builds)
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // Warm up so nearby seeds decorrelate.
    for (int i = 0; i < 4; ++i) splitmix64(state_);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  double uniform() {  // [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(next_u64() % std::uint64_t(hi - lo + 1));
  }

  // Derive an independent stream, e.g. per sample index.
  Rng fork(std::uint64_t salt) const {
    std::uint64_t s = state_ ^ (0x632be59bd9b4e019ULL * (salt + 1));
    return Rng(s);
  }

 private:
  std::uint64_t state_;
};

template <typename T>
Tensor<T> random_uniform(Shape shape, Rng& rng, double lo, double hi,
                         bool requires_grad = false) {
  std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from_data(std::move(shape), std::move(v), requires_grad);
}

}  // namespace sciflow
