#include "xcnn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <type_traits>

namespace xcnn {

namespace {

template <typename T>
using NodeT = detail::Node<T>;

// Accumulator type: double for float and double tensors, T when wider.
template <typename T>
using Acc = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;

// Returns the period of b inside a: numel(b) when b is equal, a trailing
// suffix, or a single value.
std::size_t broadcast_period(const Shape& a, const Shape& b) {
  if (a == b) return shape_numel(b);
  const std::size_t nb = shape_numel(b);
  if (nb == 1) return 1;
  if (b.size() < a.size() && std::equal(b.begin(), b.end(), a.end() - b.size())) return nb;
  throw ShapeError("cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
}

void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw ShapeError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
  }
}

// Accumulates a wide buffer into a node grad.
template <typename T>
void accumulate(NodeT<T>& node, const std::vector<Acc<T>>& delta) {
  for (std::size_t i = 0; i < delta.size(); ++i) node.grad[i] += static_cast<T>(delta[i]);
}

template <typename T>
Tensor<T> binary(ElementwiseKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  if (!b.defined()) throw InvalidArgument("binary elementwise op needs two operands");
  const std::size_t period = broadcast_period(a.shape(), b.shape());
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<T> out(ad.size());
  const char* name = "add";
  switch (kind) {
    case ElementwiseKind::kAdd:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i % period];
      break;
    case ElementwiseKind::kSub:
      name = "sub";
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i % period];
      break;
    case ElementwiseKind::kMul:
      name = "mul";
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i % period];
      break;
    default:
      throw InvalidArgument("not a binary elementwise kind");
  }
  return Tensor<T>::make_result(
      a.shape(), std::move(out), {a, b}, name, [kind, period](NodeT<T>& self) {
        auto& na = *self.inputs[0];
        auto& nb = *self.inputs[1];
        const auto& g = self.grad;
        const Acc<T> sign = kind == ElementwiseKind::kSub ? -1.0 : 1.0;
        if (na.requires_grad) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            na.grad[i] += kind == ElementwiseKind::kMul ? g[i] * nb.data[i % period] : g[i];
          }
        }
        if (nb.requires_grad) {
          std::vector<Acc<T>> gb(period, 0.0);
          for (std::size_t i = 0; i < g.size(); ++i) {
            const Acc<T> term = kind == ElementwiseKind::kMul
                                    ? static_cast<Acc<T>>(g[i]) * na.data[i]
                                    : sign * static_cast<Acc<T>>(g[i]);
            gb[i % period] += term;
          }
          accumulate(nb, gb);
        }
      });
}

template <typename T>
Tensor<T> unary(ElementwiseKind kind, const Tensor<T>& a) {
  const auto ad = a.data();
  std::vector<T> out(ad.size());
  const char* name = "relu";
  switch (kind) {
    case ElementwiseKind::kRelu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] > T{0} ? ad[i] : T{0};
      break;
    case ElementwiseKind::kExp:
      name = "exp";
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(ad[i]);
      break;
    case ElementwiseKind::kLog:
      name = "log";
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(ad[i] > T{0})) {
          throw DomainError("log of non-positive value " + std::to_string(ad[i]) + " at index " +
                            std::to_string(i));
        }
        out[i] = std::log(ad[i]);
      }
      break;
    default:
      throw InvalidArgument("not a unary elementwise kind");
  }
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, name, [kind](NodeT<T>& self) {
    auto& na = *self.inputs[0];
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      switch (kind) {
        case ElementwiseKind::kRelu:
          if (na.data[i] > T{0}) na.grad[i] += g[i];
          break;
        case ElementwiseKind::kExp:
          na.grad[i] += g[i] * self.data[i];
          break;
        default:
          na.grad[i] += g[i] / na.data[i];
          break;
      }
    }
  });
}

// Row-major C = A[MxK] . B[KxN] accumulated in C's type.
template <typename A, typename B, typename C>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const A* a, const B* b, C* c) {
  for (std::size_t i = 0; i < m; ++i) {
    C* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const C av = a[i * k + p];
      if (av == 0.0) continue;
      const auto* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

struct ConvGeometry {
  std::size_t n, c, h, w, out_c, k, stride, pad, oh, ow;
  std::size_t patch() const { return c * k * k; }
  std::size_t positions() const { return oh * ow; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t q_count = g.positions();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* row = col + ((ci * g.k + ki) * g.k + kj) * q_count;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) &&
                                ix < static_cast<long>(g.w);
            row[oy * g.ow + ox] = inside ? x[(ci * g.h + iy) * g.w + ix] : T{0};
          }
        }
      }
    }
  }
}

template <typename C>
void col2im_add(const C* col, const ConvGeometry& g, C* dx) {
  const std::size_t q_count = g.positions();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const C* row = col + ((ci * g.k + ki) * g.k + kj) * q_count;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            dx[(ci * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

std::uint64_t next_u64(std::mt19937_64& rng) { return rng(); }

thread_local BranchTrace* active_trace = nullptr;

inline void trace_branch(std::uint64_t decision) {
  if (active_trace) active_trace->hash = (active_trace->hash ^ decision) * 0x100000001b3ull;
}

}  // namespace

BranchTrace::BranchTrace() : previous(active_trace) { active_trace = this; }
BranchTrace::~BranchTrace() { active_trace = previous; }

template <typename T>
Tensor<T> elementwise(ElementwiseKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  switch (kind) {
    case ElementwiseKind::kAdd:
    case ElementwiseKind::kSub:
    case ElementwiseKind::kMul:
      return binary(kind, a, b);
    default:
      return unary(kind, a);
  }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(ElementwiseKind::kAdd, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(ElementwiseKind::kSub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(ElementwiseKind::kMul, a, b);
}
template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  if (active_trace) {
    for (T v : a.data()) trace_branch(v > T(0));
  }
  return unary(ElementwiseKind::kRelu, a);
}
template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary(ElementwiseKind::kExp, a);
}
template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary(ElementwiseKind::kLog, a);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, "scale",
                                [factor](NodeT<T>& self) {
                                  auto& na = *self.inputs[0];
                                  for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                    na.grad[i] += self.grad[i] * factor;
                                  }
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  Acc<T> total = 0.0;
  for (T v : a.data()) total += v;
  return Tensor<T>::make_result({1}, {static_cast<T>(total)}, {a}, "sum", [](NodeT<T>& self) {
    auto& na = *self.inputs[0];
    for (auto& g : na.grad) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), static_cast<T>(1.0 / static_cast<Acc<T>>(a.numel())));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return Tensor<T>::make_result(std::move(shape), std::move(out), {a}, "reshape",
                                [](NodeT<T>& self) {
                                  auto& na = *self.inputs[0];
                                  for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                    na.grad[i] += self.grad[i];
                                  }
                                });
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& a) {
  if (a.dim() < 2) throw ShapeError("flatten expects a batch axis, got " + shape_str(a.shape()));
  const std::size_t n = a.extent(0);
  return reshape(a, {n, a.numel() / n});
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  if (b.extent(0) != k) {
    throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " . " +
                     shape_str(b.shape()));
  }
  std::vector<Acc<T>> acc(m * n, 0.0);
  gemm_nn(m, k, n, a.data().data(), b.data().data(), acc.data());
  std::vector<T> out(acc.begin(), acc.end());
  return Tensor<T>::make_result({m, n}, std::move(out), {a, b}, "matmul",
                                [m, k, n](NodeT<T>& self) {
                                  auto& na = *self.inputs[0];
                                  auto& nb = *self.inputs[1];
                                  const auto& g = self.grad;
                                  if (na.requires_grad) {
                                    // dA = G . B^T
                                    for (std::size_t i = 0; i < m; ++i) {
                                      for (std::size_t p = 0; p < k; ++p) {
                                        Acc<T> s = 0.0;
                                        for (std::size_t j = 0; j < n; ++j) {
                                          s += static_cast<Acc<T>>(g[i * n + j]) * nb.data[p * n + j];
                                        }
                                        na.grad[i * k + p] += static_cast<T>(s);
                                      }
                                    }
                                  }
                                  if (nb.requires_grad) {
                                    // dB = A^T . G
                                    std::vector<Acc<T>> gb(k * n, 0.0);
                                    for (std::size_t i = 0; i < m; ++i) {
                                      for (std::size_t p = 0; p < k; ++p) {
                                        const Acc<T> av = na.data[i * k + p];
                                        for (std::size_t j = 0; j < n; ++j) {
                                          gb[p * n + j] += av * g[i * n + j];
                                        }
                                      }
                                    }
                                    accumulate(nb, gb);
                                  }
                                });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x.shape(), 2, "linear input");
  require_rank(weight.shape(), 2, "linear weight");
  const std::size_t n = x.extent(0), f = x.extent(1), o = weight.extent(0);
  if (weight.extent(1) != f) {
    throw ShapeError("linear expects " + std::to_string(weight.extent(1)) + " features, got " +
                     shape_str(x.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{o}) {
    throw ShapeError("linear bias shape " + shape_str(bias.shape()) + " for " +
                     std::to_string(o) + " outputs");
  }
  const T* xd = x.data().data();
  const T* wd = weight.data().data();
  std::vector<T> out(n * o);
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = xd + r * f;
    for (std::size_t j = 0; j < o; ++j) {
      const T* wr = wd + j * f;
      Acc<T> s = has_bias ? static_cast<Acc<T>>(bias.data()[j]) : 0.0;
      for (std::size_t p = 0; p < f; ++p) s += static_cast<Acc<T>>(xr[p]) * wr[p];
      out[r * o + j] = static_cast<T>(s);
    }
  }
  std::vector<Tensor<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return Tensor<T>::make_result(
      {n, o}, std::move(out), inputs, "linear", [n, f, o, has_bias](NodeT<T>& self) {
        auto& nx = *self.inputs[0];
        auto& nw = *self.inputs[1];
        const auto& g = self.grad;
        if (nx.requires_grad) {
          std::vector<Acc<T>> row(f);
          for (std::size_t r = 0; r < n; ++r) {
            std::fill(row.begin(), row.end(), 0.0);
            for (std::size_t j = 0; j < o; ++j) {
              const Acc<T> gv = g[r * o + j];
              if (gv == 0.0) continue;
              const T* wr = nw.data.data() + j * f;
              for (std::size_t p = 0; p < f; ++p) row[p] += gv * wr[p];
            }
            for (std::size_t p = 0; p < f; ++p) nx.grad[r * f + p] += static_cast<T>(row[p]);
          }
        }
        if (nw.requires_grad) {
          std::vector<Acc<T>> row(f);
          for (std::size_t j = 0; j < o; ++j) {
            std::fill(row.begin(), row.end(), 0.0);
            for (std::size_t r = 0; r < n; ++r) {
              const Acc<T> gv = g[r * o + j];
              if (gv == 0.0) continue;
              const T* xr = nx.data.data() + r * f;
              for (std::size_t p = 0; p < f; ++p) row[p] += gv * xr[p];
            }
            T* gw = nw.grad.data() + j * f;
            for (std::size_t p = 0; p < f; ++p) gw[p] += static_cast<T>(row[p]);
          }
        }
        if (has_bias && self.inputs[2]->requires_grad) {
          auto& nbias = *self.inputs[2];
          for (std::size_t j = 0; j < o; ++j) {
            Acc<T> s = 0.0;
            for (std::size_t r = 0; r < n; ++r) s += g[r * o + j];
            nbias.grad[j] += static_cast<T>(s);
          }
        }
      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  if (stride == 0) throw InvalidArgument("conv2d stride must be >= 1");
  ConvGeometry g{};
  g.n = x.extent(0);
  g.c = x.extent(1);
  g.h = x.extent(2);
  g.w = x.extent(3);
  g.out_c = weight.extent(0);
  g.k = weight.extent(2);
  g.stride = stride;
  g.pad = padding;
  if (weight.extent(1) != g.c || weight.extent(3) != g.k) {
    throw ShapeError("conv2d weight " + shape_str(weight.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  const std::size_t span_h = g.h + 2 * g.pad;
  const std::size_t span_w = g.w + 2 * g.pad;
  if (span_h < g.k || span_w < g.k || (span_h - g.k) % stride != 0 ||
      (span_w - g.k) % stride != 0) {
    throw ShapeError("conv2d output extent is not an integer for input " + shape_str(x.shape()) +
                     ", kernel " + std::to_string(g.k) + ", stride " + std::to_string(stride) +
                     ", padding " + std::to_string(padding));
  }
  g.oh = (span_h - g.k) / stride + 1;
  g.ow = (span_w - g.k) / stride + 1;
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{g.out_c}) {
    throw ShapeError("conv2d bias shape " + shape_str(bias.shape()));
  }

  const std::size_t patch = g.patch(), q = g.positions();
  std::vector<T> out(g.n * g.out_c * q);
  std::vector<T> col(patch * q);
  std::vector<Acc<T>> acc(g.out_c * q);
  const T* xd = x.data().data();
  const T* wd = weight.data().data();
  for (std::size_t s = 0; s < g.n; ++s) {
    im2col(xd + s * g.c * g.h * g.w, g, col.data());
    for (std::size_t co = 0; co < g.out_c; ++co) {
      const Acc<T> b0 = has_bias ? static_cast<Acc<T>>(bias.data()[co]) : 0.0;
      std::fill(acc.begin() + co * q, acc.begin() + (co + 1) * q, b0);
    }
    gemm_nn(g.out_c, patch, q, wd, col.data(), acc.data());
    std::copy(acc.begin(), acc.end(), out.begin() + s * g.out_c * q);
  }

  std::vector<Tensor<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return Tensor<T>::make_result(
      {g.n, g.out_c, g.oh, g.ow}, std::move(out), inputs, "conv2d",
      [g, has_bias](NodeT<T>& self) {
        auto& nx = *self.inputs[0];
        auto& nw = *self.inputs[1];
        const std::size_t patch = g.patch(), q = g.positions();
        const std::size_t in_size = g.c * g.h * g.w;
        std::vector<T> col(patch * q);
        std::vector<Acc<T>> dcol(patch * q);
        std::vector<Acc<T>> dx(in_size);
        std::vector<Acc<T>> dw(nw.requires_grad ? g.out_c * patch : 0, 0.0);
        for (std::size_t s = 0; s < g.n; ++s) {
          const T* gs = self.grad.data() + s * g.out_c * q;
          im2col(nx.data.data() + s * in_size, g, col.data());
          if (nw.requires_grad) {
            for (std::size_t co = 0; co < g.out_c; ++co) {
              for (std::size_t r = 0; r < patch; ++r) {
                const T* cr = col.data() + r * q;
                Acc<T> acc = 0.0;
                for (std::size_t p = 0; p < q; ++p) acc += static_cast<Acc<T>>(gs[co * q + p]) * cr[p];
                dw[co * patch + r] += acc;
              }
            }
          }
          if (nx.requires_grad) {
            std::fill(dcol.begin(), dcol.end(), 0.0);
            for (std::size_t co = 0; co < g.out_c; ++co) {
              for (std::size_t r = 0; r < patch; ++r) {
                const Acc<T> wv = nw.data[co * patch + r];
                if (wv == 0.0) continue;
                Acc<T>* dr = dcol.data() + r * q;
                for (std::size_t p = 0; p < q; ++p) dr[p] += wv * gs[co * q + p];
              }
            }
            std::fill(dx.begin(), dx.end(), 0.0);
            col2im_add(dcol.data(), g, dx.data());
            T* gx = nx.grad.data() + s * in_size;
            for (std::size_t i = 0; i < in_size; ++i) gx[i] += static_cast<T>(dx[i]);
          }
        }
        if (nw.requires_grad) accumulate(nw, dw);
        if (has_bias && self.inputs[2]->requires_grad) {
          auto& nb = *self.inputs[2];
          for (std::size_t co = 0; co < g.out_c; ++co) {
            Acc<T> acc = 0.0;
            for (std::size_t s = 0; s < g.n; ++s) {
              const T* gs = self.grad.data() + (s * g.out_c + co) * q;
              for (std::size_t p = 0; p < q; ++p) acc += gs[p];
            }
            nb.grad[co] += static_cast<T>(acc);
          }
        }
      });
}

template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "maxpool2x2");
  const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2x2 needs even spatial extents, got " + shape_str(x.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<T> out(n * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto xd = x.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * oy + dy) * w + 2 * ox + dx;
            if (xd[idx] > xd[best]) best = idx;
          }
        }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out[o] = xd[best];
        argmax[o] = best;
        trace_branch(best - base);
      }
    }
  }
  return Tensor<T>::make_result({n, c, oh, ow}, std::move(out), {x}, "maxpool2x2",
                                [argmax = std::move(argmax)](NodeT<T>& self) {
                                  auto& nx = *self.inputs[0];
                                  for (std::size_t o = 0; o < argmax.size(); ++o) {
                                    nx.grad[argmax[o]] += self.grad[o];
                                  }
                                });
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      std::span<T> running_mean, std::span<T> running_var,
                      const BatchNormOptions& options) {
  require_rank(x.shape(), 4, "batchnorm2d");
  const std::size_t n = x.extent(0), c = x.extent(1), hw = x.extent(2) * x.extent(3);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c} || running_mean.size() != c ||
      running_var.size() != c) {
    throw ShapeError("batchnorm2d parameters do not match " + std::to_string(c) + " channels");
  }
  const std::size_t m = n * hw;
  if (options.training && m < 2) {
    throw DegenerateBatchError("batchnorm2d in training mode needs batch*H*W >= 2, got " +
                               std::to_string(m));
  }
  const auto xd = x.data();
  std::vector<Acc<T>> mu(c), invstd(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (options.training) {
      Acc<T> s = 0.0;
      for (std::size_t s_i = 0; s_i < n; ++s_i) {
        const T* p = xd.data() + (s_i * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const Acc<T> mean_c = s / static_cast<Acc<T>>(m);
      Acc<T> sq = 0.0;
      for (std::size_t s_i = 0; s_i < n; ++s_i) {
        const T* p = xd.data() + (s_i * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const Acc<T> d = p[i] - mean_c;
          sq += d * d;
        }
      }
      const Acc<T> var_c = sq / static_cast<Acc<T>>(m);
      mu[ch] = mean_c;
      invstd[ch] = 1.0 / std::sqrt(var_c + options.epsilon);
      const Acc<T> unbiased = sq / static_cast<Acc<T>>(m - 1);
      running_mean[ch] = static_cast<T>((1.0 - options.momentum) * running_mean[ch] +
                                        options.momentum * mean_c);
      running_var[ch] = static_cast<T>((1.0 - options.momentum) * running_var[ch] +
                                       options.momentum * unbiased);
    } else {
      mu[ch] = running_mean[ch];
      invstd[ch] = 1.0 / std::sqrt(static_cast<Acc<T>>(running_var[ch]) + options.epsilon);
    }
  }
  std::vector<T> xhat(x.numel());
  std::vector<T> out(x.numel());
  for (std::size_t s_i = 0; s_i < n; ++s_i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (s_i * c + ch) * hw;
      const Acc<T> gm = gamma.data()[ch], bt = beta.data()[ch];
      for (std::size_t i = 0; i < hw; ++i) {
        const Acc<T> xh = (xd[base + i] - mu[ch]) * invstd[ch];
        xhat[base + i] = static_cast<T>(xh);
        out[base + i] = static_cast<T>(gm * xh + bt);
      }
    }
  }
  const bool training = options.training;
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x, gamma, beta}, "batchnorm2d",
      [n, c, hw, m, training, invstd = std::move(invstd),
       xhat = std::move(xhat)](NodeT<T>& self) {
        auto& nx = *self.inputs[0];
        auto& ng = *self.inputs[1];
        auto& nbeta = *self.inputs[2];
        const auto& g = self.grad;
        for (std::size_t ch = 0; ch < c; ++ch) {
          Acc<T> sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t s_i = 0; s_i < n; ++s_i) {
            const std::size_t base = (s_i * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_g += g[base + i];
              sum_gx += static_cast<Acc<T>>(g[base + i]) * xhat[base + i];
            }
          }
          if (ng.requires_grad) ng.grad[ch] += static_cast<T>(sum_gx);
          if (nbeta.requires_grad) nbeta.grad[ch] += static_cast<T>(sum_g);
          if (!nx.requires_grad) continue;
          const Acc<T> gm = ng.data[ch];
          const Acc<T> k = gm * invstd[ch];
          for (std::size_t s_i = 0; s_i < n; ++s_i) {
            const std::size_t base = (s_i * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              Acc<T> d = g[base + i];
              if (training) {
                d -= (sum_g + xhat[base + i] * sum_gx) / static_cast<Acc<T>>(m);
              }
              nx.grad[base + i] += static_cast<T>(k * d);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw InvalidArgument("dropout rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  std::mt19937_64 rng(seed);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.numel());
  for (auto& v : mask) {
    const double u = static_cast<double>(next_u64(rng) >> 11) * 0x1.0p-53;
    v = u >= rate ? keep_scale : T{0};
  }
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, "dropout",
                                [mask = std::move(mask)](NodeT<T>& self) {
                                  auto& nx = *self.inputs[0];
                                  for (std::size_t i = 0; i < mask.size(); ++i) {
                                    nx.grad[i] += self.grad[i] * mask[i];
                                  }
                                });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_rank(logits.shape(), 2, "softmax");
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  const auto ld = logits.data();
  std::vector<T> out(n * k);
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = ld.data() + r * k;
    const Acc<T> mx = *std::max_element(row, row + k);
    Acc<T> z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = static_cast<T>(std::exp(row[j] - mx) / z);
  }
  return Tensor<T>::make_result({n, k}, std::move(out), {logits}, "softmax",
                                [n, k](NodeT<T>& self) {
                                  auto& nl = *self.inputs[0];
                                  for (std::size_t r = 0; r < n; ++r) {
                                    Acc<T> dot = 0.0;
                                    for (std::size_t j = 0; j < k; ++j) {
                                      dot += static_cast<Acc<T>>(self.grad[r * k + j]) *
                                             self.data[r * k + j];
                                    }
                                    for (std::size_t j = 0; j < k; ++j) {
                                      nl.grad[r * k + j] += static_cast<T>(
                                          self.data[r * k + j] * (self.grad[r * k + j] - dot));
                                    }
                                  }
                                });
}

#define XCNN_INSTANTIATE_OPS(T)                                                               \
  template Tensor<T> elementwise(ElementwiseKind, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> relu(const Tensor<T>&);                                                  \
  template Tensor<T> exp(const Tensor<T>&);                                                   \
  template Tensor<T> log(const Tensor<T>&);                                                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                              \
  template Tensor<T> sum(const Tensor<T>&);                                                   \
  template Tensor<T> mean(const Tensor<T>&);                                                  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                        \
  template Tensor<T> flatten(const Tensor<T>&);                                               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                            std::size_t);                                                     \
  template Tensor<T> maxpool2x2(const Tensor<T>&);                                            \
  template Tensor<T> batchnorm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                 std::span<T>, std::span<T>, const BatchNormOptions&);        \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, std::uint64_t);                  \
  template Tensor<T> softmax(const Tensor<T>&);

XCNN_INSTANTIATE_OPS(float)
XCNN_INSTANTIATE_OPS(double)
XCNN_INSTANTIATE_OPS(long double)

#undef XCNN_INSTANTIATE_OPS

}  // namespace xcnn
