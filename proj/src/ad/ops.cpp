// SPDX-License-Identifier: Apache-2.0

#include "lem/ad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace lem::ad {

namespace {

template <typename T>
using NodeT = Node<T>;

// Index mapping from a broadcast output position to an input position.
struct IndexMap {
  enum class Kind { kIdentity, kScalar, kModulo, kGeneral };
  Kind kind{Kind::kIdentity};
  std::size_t modulus{1};
  std::vector<std::size_t> table;

  std::size_t operator()(std::size_t i) const {
    switch (kind) {
      case Kind::kIdentity:
        return i;
      case Kind::kScalar:
        return 0;
      case Kind::kModulo:
        return i % modulus;
      case Kind::kGeneral:
        return table[i];
    }
    return i;
  }
};

struct BroadcastPlan {
  Shape out;
  IndexMap a;
  IndexMap b;
};

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw std::invalid_argument(
          fmt::format("cannot broadcast {} with {}", shape_str(a), shape_str(b)));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Drops leading unit axes.
Shape squeeze_leading(const Shape& s) {
  std::size_t i = 0;
  while (i < s.size() && s[i] == 1) {
    ++i;
  }
  return Shape(s.begin() + static_cast<std::ptrdiff_t>(i), s.end());
}

bool is_suffix(const Shape& small, const Shape& big) {
  const Shape sq = squeeze_leading(small);
  if (sq.size() > big.size()) {
    return false;
  }
  return std::equal(sq.begin(), sq.end(), big.end() - static_cast<std::ptrdiff_t>(sq.size()));
}

IndexMap make_map(const Shape& in, const Shape& out) {
  IndexMap m;
  const std::size_t n_in = numel(in);
  const std::size_t n_out = numel(out);
  if (n_in == n_out) {
    m.kind = IndexMap::Kind::kIdentity;
    return m;
  }
  if (n_in == 1) {
    m.kind = IndexMap::Kind::kScalar;
    return m;
  }
  if (is_suffix(in, out)) {
    m.kind = IndexMap::Kind::kModulo;
    m.modulus = n_in;
    return m;
  }
  m.kind = IndexMap::Kind::kGeneral;
  const std::size_t rank = out.size();
  std::vector<std::size_t> stride(rank, 0);
  {
    std::size_t s = 1;
    for (std::size_t i = rank; i-- > 0;) {
      const std::size_t off = rank - in.size();
      if (i >= off) {
        const std::size_t d = in[i - off];
        stride[i] = d == 1 ? 0 : s;
        s *= d;
      }
    }
  }
  m.table.resize(n_out);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t pos = 0;
  for (std::size_t flat = 0; flat < n_out; ++flat) {
    m.table[flat] = pos;
    for (std::size_t i = rank; i-- > 0;) {
      ++idx[i];
      pos += stride[i];
      if (idx[i] < out[i]) {
        break;
      }
      pos -= stride[i] * idx[i];
      idx[i] = 0;
    }
  }
  return m;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  p.out = broadcast_shape(a, b);
  p.a = make_map(a, p.out);
  p.b = make_map(b, p.out);
  return p;
}

void note_branch(std::uint8_t branch) {
  if (auto* rec = BranchRecorder::active()) {
    rec->note(branch);
  }
}

template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, Fwd f, DA da, DB db) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
  const std::size_t n = numel(plan->out);
  std::vector<T> out(n);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(av[plan->a(i)], bv[plan->b(i)]);
  }
  return detail::make_result<T>(
      plan->out, std::move(out), {a, b}, [plan, da, db](NodeT<T>& self) {
        auto& na = *self.inputs[0];
        auto& nb = *self.inputs[1];
        const auto& g = self.grad;
        const std::size_t n = g.size();
        if (na.requires_grad) {
          auto& ga = na.grad_buffer();
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t ia = plan->a(i);
            ga[ia] += g[i] * da(na.value[ia], nb.value[plan->b(i)], self.value[i]);
          }
        }
        if (nb.requires_grad) {
          auto& gb = nb.grad_buffer();
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t ib = plan->b(i);
            gb[ib] += g[i] * db(na.value[plan->a(i)], nb.value[ib], self.value[i]);
          }
        }
      });
}

template <typename T, typename Fwd, typename D>
Tensor<T> unary(const Tensor<T>& x, Fwd f, D df) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = f(xv[i]);
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x}, [df](NodeT<T>& self) {
    auto& nx = *self.inputs[0];
    auto& gx = nx.grad_buffer();
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += g[i] * df(nx.value[i], self.value[i]);
    }
  });
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) {
    const T z = std::exp(-x);
    return T{1} / (T{1} + z);
  }
  const T z = std::exp(x);
  return z / (T{1} + z);
}

struct AxisSplit {
  std::size_t outer{1};
  std::size_t extent{1};
  std::size_t inner{1};
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw std::invalid_argument(fmt::format("axis {} out of range for {}", axis, shape_str(s)));
  }
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) {
    a.outer *= s[i];
  }
  a.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) {
    a.inner *= s[i];
  }
  return a;
}

}  // namespace

// ---------------------------------------------------------------------------
// element-wise binary

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T{1}; },
      [](T, T, T) { return T{1}; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T{1}; },
      [](T, T, T) { return T{-1}; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T{1} / y; },
      [](T, T y, T z) { return -z / y; });
}

template <typename T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      a, b,
      [](T x, T y) {
        note_branch(x < y ? 0 : (x > y ? 1 : 2));
        return x <= y ? x : y;
      },
      [](T x, T y, T) { return x <= y ? T{1} : T{0}; },
      [](T x, T y, T) { return x <= y ? T{0} : T{1}; });
}

template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      a, b,
      [](T x, T y) {
        note_branch(x > y ? 0 : (x < y ? 1 : 2));
        return x >= y ? x : y;
      },
      [](T x, T y, T) { return x >= y ? T{1} : T{0}; },
      [](T x, T y, T) { return x >= y ? T{0} : T{1}; });
}

// ---------------------------------------------------------------------------
// scalar

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return unary<T>(x, [c](T v) { return v + c; }, [](T, T) { return T{1}; });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  return unary<T>(x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return mul_scalar<T>(x, T{-1});
}

template <typename T>
Tensor<T> rsub_scalar(T c, const Tensor<T>& x) {
  return unary<T>(x, [c](T v) { return c - v; }, [](T, T) { return T{-1}; });
}

// ---------------------------------------------------------------------------
// element-wise unary

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(x, [](T v) { return sigmoid_scalar(v); }, [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary<T>(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Tensor<T> elu(const Tensor<T>& x) {
  return unary<T>(
      x, [](T v) { return v > T{0} ? v : std::expm1(v); },
      [](T v, T y) { return v > T{0} ? T{1} : y + T{1}; });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary<T>(
      x, [](T v) { return v * sigmoid_scalar(v); },
      [](T v, T) {
        const T s = sigmoid_scalar(v);
        return s * (T{1} + v * (T{1} - s));
      });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary<T>(
      x, [](T v) { return std::max(v, T{0}) + std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) { return sigmoid_scalar(v); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary<T>(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary<T>(x, [](T v) { return std::log(v); }, [](T v, T) { return T{1} / v; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary<T>(
      x,
      [](T v) {
        note_branch(v > T{0} ? 0 : (v < T{0} ? 1 : 2));
        return std::abs(v);
      },
      [](T v, T) { return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0}); });
}

// ---------------------------------------------------------------------------
// shape

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw std::invalid_argument(
        fmt::format("cannot reshape {} to {}", shape_str(x.shape()), shape_str(shape)));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::make_result<T>(std::move(shape), std::move(out), {x}, [](NodeT<T>& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gx[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  const std::size_t rank = in.size();
  if (axes.size() != rank) {
    throw std::invalid_argument("permute: axes rank mismatch");
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) {
    in_stride[i - 1] = in_stride[i] * in[i];
  }
  Shape out_shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in.at(axes[i]);
    stride[i] = in_stride[axes[i]];
  }
  const std::size_t n = x.size();
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t pos = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    (*map)[flat] = pos;
    for (std::size_t i = rank; i-- > 0;) {
      ++idx[i];
      pos += stride[i];
      if (idx[i] < out_shape[i]) {
        break;
      }
      pos -= stride[i] * idx[i];
      idx[i] = 0;
    }
  }
  std::vector<T> out(n);
  const auto xv = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = xv[(*map)[i]];
  }
  return detail::make_result<T>(std::move(out_shape), std::move(out), {x}, [map](NodeT<T>& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gx[(*map)[i]] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto sp = split_axis(x.shape(), axis);
  if (start + length > sp.extent) {
    throw std::out_of_range(fmt::format("slice [{}, {}) exceeds axis {} of {}", start,
                                        start + length, axis, shape_str(x.shape())));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<T> out(sp.outer * length * sp.inner);
  const auto xv = x.data();
  const std::size_t chunk = length * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const auto* src = xv.data() + (o * sp.extent + start) * sp.inner;
    std::copy(src, src + chunk, out.data() + o * chunk);
  }
  return detail::make_result<T>(std::move(out_shape), std::move(out), {x},
                                [sp, start, chunk](NodeT<T>& self) {
                                  auto& gx = self.inputs[0]->grad_buffer();
                                  for (std::size_t o = 0; o < sp.outer; ++o) {
                                    T* dst = gx.data() + (o * sp.extent + start) * sp.inner;
                                    const T* src = self.grad.data() + o * chunk;
                                    for (std::size_t i = 0; i < chunk; ++i) {
                                      dst[i] += src[i];
                                    }
                                  }
                                });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) {
    throw std::invalid_argument("concat of zero tensors");
  }
  const Shape& first = xs.front().shape();
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& t : xs) {
    const Shape& s = t.shape();
    if (s.size() != first.size()) {
      throw std::invalid_argument("concat: rank mismatch");
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw std::invalid_argument(fmt::format("concat: {} vs {} along axis {}",
                                                shape_str(s), shape_str(first), axis));
      }
    }
    extents.push_back(s.at(axis));
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  const auto sp = split_axis(out_shape, axis);
  std::vector<T> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto xv = xs[k].data();
    const std::size_t chunk = extents[k] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy(xv.data() + o * chunk, xv.data() + (o + 1) * chunk,
                out.data() + (o * total + offset) * sp.inner);
    }
    offset += extents[k];
  }
  return detail::make_result<T>(
      std::move(out_shape), std::move(out), xs, [sp, extents, total](NodeT<T>& self) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
          auto& in = *self.inputs[k];
          const std::size_t chunk = extents[k] * sp.inner;
          if (in.requires_grad) {
            auto& g = in.grad_buffer();
            for (std::size_t o = 0; o < sp.outer; ++o) {
              const T* src = self.grad.data() + (o * total + offset) * sp.inner;
              T* dst = g.data() + o * chunk;
              for (std::size_t i = 0; i < chunk; ++i) {
                dst[i] += src[i];
              }
            }
          }
          offset += extents[k];
        }
      });
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  std::vector<Tensor<T>> expanded;
  expanded.reserve(xs.size());
  for (const auto& t : xs) {
    Shape s = t.shape();
    if (axis > s.size()) {
      throw std::invalid_argument("stack: axis out of range");
    }
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    expanded.push_back(reshape(t, std::move(s)));
  }
  return concat(expanded, axis);
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
  if (broadcast_shape(x.shape(), shape) != shape) {
    throw std::invalid_argument(
        fmt::format("cannot broadcast {} to {}", shape_str(x.shape()), shape_str(shape)));
  }
  auto map = std::make_shared<IndexMap>(make_map(x.shape(), shape));
  const std::size_t n = numel(shape);
  std::vector<T> out(n);
  const auto xv = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = xv[(*map)(i)];
  }
  return detail::make_result<T>(shape, std::move(out), {x}, [map](NodeT<T>& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gx[(*map)(i)] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis, bool keepdim) {
  const auto sp = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  std::vector<T> out(sp.outer * sp.inner, T{0});
  const auto xv = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t e = 0; e < sp.extent; ++e) {
      const T* src = xv.data() + (o * sp.extent + e) * sp.inner;
      T* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) {
        dst[i] += src[i];
      }
    }
  }
  return detail::make_result<T>(std::move(out_shape), std::move(out), {x}, [sp](NodeT<T>& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const T* src = self.grad.data() + o * sp.inner;
      for (std::size_t e = 0; e < sp.extent; ++e) {
        T* dst = gx.data() + (o * sp.extent + e) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) {
          dst[i] += src[i];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc{0};
  for (T v : x.data()) {
    acc += v;
  }
  return detail::make_result<T>(Shape{1}, std::vector<T>{acc}, {x}, [](NodeT<T>& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    const T g = self.grad[0];
    for (auto& v : gx) {
      v += g;
    }
  });
}

template <typename T>
Tensor<T> reverse_cumsum(const Tensor<T>& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis);
  std::vector<T> out(x.size());
  const auto xv = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      T acc{0};
      for (std::size_t e = sp.extent; e-- > 0;) {
        const std::size_t k = (o * sp.extent + e) * sp.inner + i;
        acc += xv[k];
        out[k] = acc;
      }
    }
  }
  // d out[t] / d x[s] = 1 for s >= t, so the input gradient is a forward cumsum.
  return detail::make_result<T>(x.shape(), std::move(out), {x}, [sp](NodeT<T>& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        T acc{0};
        for (std::size_t e = 0; e < sp.extent; ++e) {
          const std::size_t k = (o * sp.extent + e) * sp.inner + i;
          acc += self.grad[k];
          gx[k] += acc;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& x, const Tensor<T>& w) {
  if (w.rank() != 2 || x.rank() < 1 || x.shape().back() != w.dim(0)) {
    throw std::invalid_argument(
        fmt::format("matmul: {} x {}", shape_str(x.shape()), shape_str(w.shape())));
  }
  const std::size_t K = w.dim(0);
  const std::size_t N = w.dim(1);
  const std::size_t R = x.size() / K;
  Shape out_shape = x.shape();
  out_shape.back() = N;
  std::vector<T> out(R * N, T{0});
  const T* xv = x.data().data();
  const T* wv = w.data().data();
  for (std::size_t r = 0; r < R; ++r) {
    T* o = out.data() + r * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T a = xv[r * K + k];
      const T* wr = wv + k * N;
      for (std::size_t n = 0; n < N; ++n) {
        o[n] += a * wr[n];
      }
    }
  }
  return detail::make_result<T>(
      std::move(out_shape), std::move(out), {x, w}, [R, K, N](NodeT<T>& self) {
        auto& nx = *self.inputs[0];
        auto& nw = *self.inputs[1];
        const T* g = self.grad.data();
        if (nx.requires_grad) {
          auto& gx = nx.grad_buffer();
          for (std::size_t r = 0; r < R; ++r) {
            for (std::size_t k = 0; k < K; ++k) {
              const T* wr = nw.value.data() + k * N;
              const T* gr = g + r * N;
              T acc{0};
              for (std::size_t n = 0; n < N; ++n) {
                acc += gr[n] * wr[n];
              }
              gx[r * K + k] += acc;
            }
          }
        }
        if (nw.requires_grad) {
          auto& gw = nw.grad_buffer();
          for (std::size_t r = 0; r < R; ++r) {
            const T* gr = g + r * N;
            for (std::size_t k = 0; k < K; ++k) {
              const T a = nx.value[r * K + k];
              T* gwr = gw.data() + k * N;
              for (std::size_t n = 0; n < N; ++n) {
                gwr[n] += a * gr[n];
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> grouped_matmul(const Tensor<T>& x, const Tensor<T>& w) {
  if (x.rank() != 3 || w.rank() != 3 || x.dim(1) != w.dim(0) || x.dim(2) != w.dim(1)) {
    throw std::invalid_argument(
        fmt::format("grouped_matmul: {} x {}", shape_str(x.shape()), shape_str(w.shape())));
  }
  const std::size_t R = x.dim(0);
  const std::size_t G = x.dim(1);
  const std::size_t K = x.dim(2);
  const std::size_t N = w.dim(2);
  std::vector<T> out(R * G * N, T{0});
  const T* xv = x.data().data();
  const T* wv = w.data().data();
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t g = 0; g < G; ++g) {
      T* o = out.data() + (r * G + g) * N;
      const T* xr = xv + (r * G + g) * K;
      const T* wg = wv + g * K * N;
      for (std::size_t k = 0; k < K; ++k) {
        const T a = xr[k];
        const T* wr = wg + k * N;
        for (std::size_t n = 0; n < N; ++n) {
          o[n] += a * wr[n];
        }
      }
    }
  }
  return detail::make_result<T>(
      Shape{R, G, N}, std::move(out), {x, w}, [R, G, K, N](NodeT<T>& self) {
        auto& nx = *self.inputs[0];
        auto& nw = *self.inputs[1];
        const T* gout = self.grad.data();
        if (nx.requires_grad) {
          auto& gx = nx.grad_buffer();
          for (std::size_t r = 0; r < R; ++r) {
            for (std::size_t g = 0; g < G; ++g) {
              const T* gr = gout + (r * G + g) * N;
              const T* wg = nw.value.data() + g * K * N;
              T* gxr = gx.data() + (r * G + g) * K;
              for (std::size_t k = 0; k < K; ++k) {
                const T* wr = wg + k * N;
                T acc{0};
                for (std::size_t n = 0; n < N; ++n) {
                  acc += gr[n] * wr[n];
                }
                gxr[k] += acc;
              }
            }
          }
        }
        if (nw.requires_grad) {
          auto& gw = nw.grad_buffer();
          for (std::size_t r = 0; r < R; ++r) {
            for (std::size_t g = 0; g < G; ++g) {
              const T* gr = gout + (r * G + g) * N;
              const T* xr = nx.value.data() + (r * G + g) * K;
              T* gwg = gw.data() + g * K * N;
              for (std::size_t k = 0; k < K; ++k) {
                const T a = xr[k];
                T* gwr = gwg + k * N;
                for (std::size_t n = 0; n < N; ++n) {
                  gwr[n] += a * gr[n];
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw std::invalid_argument(
        fmt::format("bmm: {} x {}", shape_str(a.shape()), shape_str(b.shape())));
  }
  const std::size_t G = a.dim(0);
  const std::size_t M = a.dim(1);
  const std::size_t K = a.dim(2);
  const std::size_t N = transpose_b ? b.dim(1) : b.dim(2);
  if ((transpose_b ? b.dim(2) : b.dim(1)) != K) {
    throw std::invalid_argument(
        fmt::format("bmm: inner mismatch {} x {}", shape_str(a.shape()), shape_str(b.shape())));
  }
  // Element (k, n) of the logical right operand of group g.
  auto bidx = [=](std::size_t g, std::size_t k, std::size_t n) {
    return transpose_b ? (g * N + n) * K + k : (g * K + k) * N + n;
  };
  std::vector<T> out(G * M * N, T{0});
  const T* av = a.data().data();
  const T* bv = b.data().data();
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t m = 0; m < M; ++m) {
      T* o = out.data() + (g * M + m) * N;
      for (std::size_t n = 0; n < N; ++n) {
        T acc{0};
        for (std::size_t k = 0; k < K; ++k) {
          acc += av[(g * M + m) * K + k] * bv[bidx(g, k, n)];
        }
        o[n] = acc;
      }
    }
  }
  return detail::make_result<T>(
      Shape{G, M, N}, std::move(out), {a, b}, [G, M, K, N, bidx](NodeT<T>& self) {
        auto& na = *self.inputs[0];
        auto& nb = *self.inputs[1];
        const T* gout = self.grad.data();
        if (na.requires_grad) {
          auto& ga = na.grad_buffer();
          for (std::size_t g = 0; g < G; ++g) {
            for (std::size_t m = 0; m < M; ++m) {
              for (std::size_t k = 0; k < K; ++k) {
                T acc{0};
                for (std::size_t n = 0; n < N; ++n) {
                  acc += gout[(g * M + m) * N + n] * nb.value[bidx(g, k, n)];
                }
                ga[(g * M + m) * K + k] += acc;
              }
            }
          }
        }
        if (nb.requires_grad) {
          auto& gb = nb.grad_buffer();
          for (std::size_t g = 0; g < G; ++g) {
            for (std::size_t k = 0; k < K; ++k) {
              for (std::size_t n = 0; n < N; ++n) {
                T acc{0};
                for (std::size_t m = 0; m < M; ++m) {
                  acc += na.value[(g * M + m) * K + k] * gout[(g * M + m) * N + n];
                }
                gb[bidx(g, k, n)] += acc;
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// normalisation

template <typename T>
Tensor<T> softmax_last(const Tensor<T>& x) {
  const std::size_t C = x.shape().back();
  const std::size_t R = x.size() / C;
  std::vector<T> out(x.size());
  const auto xv = x.data();
  for (std::size_t r = 0; r < R; ++r) {
    const T* in = xv.data() + r * C;
    T* o = out.data() + r * C;
    const T mx = *std::max_element(in, in + C);
    T z{0};
    for (std::size_t c = 0; c < C; ++c) {
      o[c] = std::exp(in[c] - mx);
      z += o[c];
    }
    for (std::size_t c = 0; c < C; ++c) {
      o[c] /= z;
    }
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x}, [R, C](NodeT<T>& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < R; ++r) {
      const T* y = self.value.data() + r * C;
      const T* g = self.grad.data() + r * C;
      T dot{0};
      for (std::size_t c = 0; c < C; ++c) {
        dot += g[c] * y[c];
      }
      for (std::size_t c = 0; c < C; ++c) {
        gx[r * C + c] += y[c] * (g[c] - dot);
      }
    }
  });
}

template <typename T>
Tensor<T> causal_softmax(const Tensor<T>& x) {
  if (x.rank() < 2 || x.shape()[x.rank() - 1] != x.shape()[x.rank() - 2]) {
    throw std::invalid_argument(
        fmt::format("causal_softmax needs [..., S, S], got {}", shape_str(x.shape())));
  }
  const std::size_t S = x.shape().back();
  const std::size_t G = x.size() / (S * S);
  std::vector<T> out(x.size(), T{0});
  const auto xv = x.data();
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t i = 0; i < S; ++i) {
      const T* in = xv.data() + (g * S + i) * S;
      T* o = out.data() + (g * S + i) * S;
      const T mx = *std::max_element(in, in + i + 1);
      T z{0};
      for (std::size_t j = 0; j <= i; ++j) {
        o[j] = std::exp(in[j] - mx);
        z += o[j];
      }
      for (std::size_t j = 0; j <= i; ++j) {
        o[j] /= z;
      }
    }
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x}, [G, S](NodeT<T>& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t g = 0; g < G; ++g) {
      for (std::size_t i = 0; i < S; ++i) {
        const std::size_t row = (g * S + i) * S;
        T dot{0};
        for (std::size_t j = 0; j <= i; ++j) {
          dot += self.grad[row + j] * self.value[row + j];
        }
        for (std::size_t j = 0; j <= i; ++j) {
          gx[row + j] += self.value[row + j] * (self.grad[row + j] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, T eps) {
  const std::size_t C = x.shape().back();
  const std::size_t R = x.size() / C;
  std::vector<T> out(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(R);
  const auto xv = x.data();
  for (std::size_t r = 0; r < R; ++r) {
    const T* in = xv.data() + r * C;
    T mean{0};
    for (std::size_t c = 0; c < C; ++c) {
      mean += in[c];
    }
    mean /= static_cast<T>(C);
    T var{0};
    for (std::size_t c = 0; c < C; ++c) {
      const T d = in[c] - mean;
      var += d * d;
    }
    var /= static_cast<T>(C);
    const T is = T{1} / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < C; ++c) {
      out[r * C + c] = (in[c] - mean) * is;
    }
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x}, [R, C, inv_std](NodeT<T>& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    const T inv_c = T{1} / static_cast<T>(C);
    for (std::size_t r = 0; r < R; ++r) {
      const T* y = self.value.data() + r * C;
      const T* g = self.grad.data() + r * C;
      T mg{0};
      T mgy{0};
      for (std::size_t c = 0; c < C; ++c) {
        mg += g[c];
        mgy += g[c] * y[c];
      }
      mg *= inv_c;
      mgy *= inv_c;
      const T is = (*inv_std)[r];
      for (std::size_t c = 0; c < C; ++c) {
        gx[r * C + c] += is * (g[c] - mg - y[c] * mgy);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// splines

namespace {

// Non-zero basis functions of degree p at x inside knot span `span`
// (uniform knots t_j = lo + (j - order) h). Writes p + 1 values.
void basis_in_span(double x, std::size_t span, std::size_t p, double lo, double h,
                   std::size_t order, double* out) {
  auto knot = [&](std::ptrdiff_t j) {
    return lo + (static_cast<double>(j) - static_cast<double>(order)) * h;
  };
  std::vector<double> left(p + 1, 0.0);
  std::vector<double> right(p + 1, 0.0);
  out[0] = 1.0;
  for (std::size_t j = 1; j <= p; ++j) {
    left[j] = x - knot(static_cast<std::ptrdiff_t>(span + 1) - static_cast<std::ptrdiff_t>(j));
    right[j] = knot(static_cast<std::ptrdiff_t>(span + j)) - x;
    double saved = 0.0;
    for (std::size_t r = 0; r < j; ++r) {
      const double tmp = out[r] / (right[r + 1] + left[j - r]);
      out[r] = saved + right[r + 1] * tmp;
      saved = left[j - r] * tmp;
    }
    out[j] = saved;
  }
}

// Values and derivatives of all basis functions at x in [lo, hi].
void bspline_inside(double x, const SplineGrid& grid, double* values, double* derivs) {
  const std::size_t p = grid.order;
  const std::size_t nb = grid.basis_count();
  const double h = (grid.hi - grid.lo) / static_cast<double>(grid.grid_size);
  std::size_t interval = static_cast<std::size_t>(std::floor((x - grid.lo) / h));
  interval = std::min(interval, grid.grid_size - 1);
  const std::size_t span = interval + p;
  std::fill(values, values + nb, 0.0);
  if (derivs != nullptr) {
    std::fill(derivs, derivs + nb, 0.0);
  }
  std::vector<double> full(p + 1);
  basis_in_span(x, span, p, grid.lo, h, p, full.data());
  for (std::size_t r = 0; r <= p; ++r) {
    values[span - p + r] = full[r];
  }
  if (derivs == nullptr || p == 0) {
    return;
  }
  // B'_{j,p} = (B_{j,p-1} - B_{j+1,p-1}) / h on uniform knots.
  std::vector<double> lower(p);
  basis_in_span(x, span, p - 1, grid.lo, h, p, lower.data());
  // lower[r] is B_{span-(p-1)+r, p-1}.
  auto lower_at = [&](std::size_t j) -> double {
    const std::size_t first = span - (p - 1);
    if (j < first || j > span) {
      return 0.0;
    }
    return lower[j - first];
  };
  for (std::size_t j = span - p; j <= span; ++j) {
    derivs[j] = (lower_at(j) - lower_at(j + 1)) / h;
  }
}

}  // namespace

void bspline_eval(double x, const SplineGrid& grid, double* values, double* derivs) {
  const std::size_t nb = grid.basis_count();
  if (x >= grid.lo && x <= grid.hi) {
    bspline_inside(x, grid, values, derivs);
    return;
  }
  const double edge = x < grid.lo ? grid.lo : grid.hi;
  std::vector<double> v(nb);
  std::vector<double> d(nb);
  bspline_inside(edge, grid, v.data(), d.data());
  for (std::size_t j = 0; j < nb; ++j) {
    values[j] = v[j] + d[j] * (x - edge);
    if (derivs != nullptr) {
      derivs[j] = d[j];
    }
  }
}

template <typename T>
Tensor<T> bspline_basis(const Tensor<T>& x, const SplineGrid& grid) {
  if (grid.grid_size == 0 || !(grid.hi > grid.lo)) {
    throw std::invalid_argument("bspline_basis: empty grid");
  }
  const std::size_t nb = grid.basis_count();
  const std::size_t n = x.size();
  Shape out_shape = x.shape();
  out_shape.push_back(nb);
  std::vector<T> out(n * nb);
  auto derivs = std::make_shared<std::vector<T>>(n * nb);
  std::vector<double> v(nb);
  std::vector<double> d(nb);
  const auto xv = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    bspline_eval(static_cast<double>(xv[i]), grid, v.data(), d.data());
    for (std::size_t j = 0; j < nb; ++j) {
      out[i * nb + j] = static_cast<T>(v[j]);
      (*derivs)[i * nb + j] = static_cast<T>(d[j]);
    }
  }
  return detail::make_result<T>(std::move(out_shape), std::move(out), {x},
                                [nb, derivs](NodeT<T>& self) {
                                  auto& gx = self.inputs[0]->grad_buffer();
                                  for (std::size_t i = 0; i < gx.size(); ++i) {
                                    T acc{0};
                                    for (std::size_t j = 0; j < nb; ++j) {
                                      acc += self.grad[i * nb + j] * (*derivs)[i * nb + j];
                                    }
                                    gx[i] += acc;
                                  }
                                });
}

// ---------------------------------------------------------------------------
// explicit instantiation

#define LEM_INSTANTIATE_OPS(T)                                                            \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> minimum<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> maximum<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                  \
  template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                  \
  template Tensor<T> neg<T>(const Tensor<T>&);                                            \
  template Tensor<T> rsub_scalar<T>(T, const Tensor<T>&);                                 \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                        \
  template Tensor<T> tanh<T>(const Tensor<T>&);                                           \
  template Tensor<T> elu<T>(const Tensor<T>&);                                            \
  template Tensor<T> silu<T>(const Tensor<T>&);                                           \
  template Tensor<T> softplus<T>(const Tensor<T>&);                                       \
  template Tensor<T> exp<T>(const Tensor<T>&);                                            \
  template Tensor<T> log<T>(const Tensor<T>&);                                            \
  template Tensor<T> abs<T>(const Tensor<T>&);                                            \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                 \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);       \
  template Tensor<T> slice<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);   \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);               \
  template Tensor<T> stack<T>(const std::vector<Tensor<T>>&, std::size_t);                \
  template Tensor<T> broadcast_to<T>(const Tensor<T>&, const Shape&);                     \
  template Tensor<T> sum<T>(const Tensor<T>&, std::size_t, bool);                         \
  template Tensor<T> sum_all<T>(const Tensor<T>&);                                        \
  template Tensor<T> reverse_cumsum<T>(const Tensor<T>&, std::size_t);                    \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> grouped_matmul<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> bmm<T>(const Tensor<T>&, const Tensor<T>&, bool);                    \
  template Tensor<T> softmax_last<T>(const Tensor<T>&);                                   \
  template Tensor<T> causal_softmax<T>(const Tensor<T>&);                                 \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, T);                                  \
  template Tensor<T> bspline_basis<T>(const Tensor<T>&, const SplineGrid&);

LEM_INSTANTIATE_OPS(float)
LEM_INSTANTIATE_OPS(double)

#undef LEM_INSTANTIATE_OPS

}  // namespace lem::ad
