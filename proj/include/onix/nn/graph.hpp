#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "onix/nn/gemm.hpp"
#include "onix/nn/tensor.hpp"

namespace onix::nn {

template <typename T>
T stable_softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T logistic(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

namespace detail {
/// Source taps for integer-factor bilinear upsampling with edge clamping.
template <typename T>
inline void upsample_taps(std::int64_t o, std::int64_t n, int factor, std::int64_t& i0,
                          std::int64_t& i1, T& t) {
  const T src = (static_cast<T>(o) + T(0.5)) / static_cast<T>(factor) - T(0.5);
  const T f = std::floor(src);
  i0 = static_cast<std::int64_t>(f);
  t = src - f;
  i1 = i0 + 1;
  if (i0 < 0) i0 = 0;
  if (i1 > n - 1) i1 = n - 1;
  if (i0 > n - 1) i0 = n - 1;
}
}  // namespace detail

/// Tape-recorded computation graph with eager forward evaluation and
/// reverse-mode backward. One graph per forward/backward pass; parameters
/// are bound by name to a ParamStore, which receives the accumulated
/// gradients when backward() finishes. A graph built with record=false
/// evaluates forward only and keeps no backward closures.
template <typename T>
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}

  // ---- leaves ----

  int constant(Tensor<T> v) { return push(std::move(v), false, nullptr); }

  int param(ParamStore<T>& store, const std::string& name) {
    const int id = push(Tensor<T>(store.param(name)), true, nullptr);
    bound_.push_back({id, &store, name});
    return id;
  }

  /// Leaf whose gradient is retained for inspection (input sensitivities).
  int input(Tensor<T> v) { return push(std::move(v), true, nullptr); }

  // ---- elementwise / linear ----

  int matmul(int a, int w) {
    const auto& A = value(a);
    const auto& W = value(w);
    if (A.rank() != 2 || W.rank() != 2 || A.dim(1) != W.dim(0))
      shape_mismatch("matmul", A, W);
    const auto B = A.dim(0), M = A.dim(1), N = W.dim(1);
    Tensor<T> out = Tensor<T>::zeros({B, N});
    gemm_nn_acc(A.data.data(), W.data.data(), out.data.data(), B, M, N);
    return push(std::move(out), needs(a) || needs(w), [a, w, B, M, N](Graph& g, int self) {
      const auto& gy = g.grad(self);
      if (g.needs(a))  // dA += dY * W^T
        gemm_nt_acc(gy.data.data(), g.value(w).data.data(), g.grad_ref(a).data.data(), B, N, M);
      if (g.needs(w))  // dW += A^T * dY
        gemm_tn_acc(g.value(a).data.data(), gy.data.data(), g.grad_ref(w).data.data(), B, M, N);
    });
  }

  int add_bias(int x, int b) {
    const auto& X = value(x);
    const auto& Bv = value(b);
    if (X.rank() != 2 || Bv.rank() != 1 || X.dim(1) != Bv.dim(0)) shape_mismatch("add_bias", X, Bv);
    Tensor<T> out = X;
    const auto rows = X.dim(0), cols = X.dim(1);
    for (std::int64_t i = 0; i < rows; ++i)
      for (std::int64_t j = 0; j < cols; ++j) out.at2(i, j) += Bv.data[static_cast<std::size_t>(j)];
    return push(std::move(out), needs(x) || needs(b), [x, b, rows, cols](Graph& g, int self) {
      const auto& gy = g.grad(self);
      if (g.needs(x))
        for (std::size_t i = 0; i < gy.data.size(); ++i) g.grad_ref(x).data[i] += gy.data[i];
      if (g.needs(b)) {
        auto& gb = g.grad_ref(b);
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < cols; ++j)
            gb.data[static_cast<std::size_t>(j)] += gy.at2(i, j);
      }
    });
  }

  /// dense layer y = x*W + b.
  int dense(int x, int w, int b) { return add_bias(matmul(x, w), b); }

  int add(int a, int b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (!A.same_shape(B)) shape_mismatch("add", A, B);
    Tensor<T> out = A;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, int self) {
      const auto& gy = g.grad(self);
      for (int p : {a, b})
        if (g.needs(p))
          for (std::size_t i = 0; i < gy.data.size(); ++i) g.grad_ref(p).data[i] += gy.data[i];
    });
  }

  int mul(int a, int b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (!A.same_shape(B)) shape_mismatch("mul", A, B);
    Tensor<T> out = A;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, int self) {
      const auto& gy = g.grad(self);
      if (g.needs(a))
        for (std::size_t i = 0; i < gy.data.size(); ++i)
          g.grad_ref(a).data[i] += gy.data[i] * g.value(b).data[i];
      if (g.needs(b))
        for (std::size_t i = 0; i < gy.data.size(); ++i)
          g.grad_ref(b).data[i] += gy.data[i] * g.value(a).data[i];
    });
  }

  int scale(int x, T c) {
    Tensor<T> out = value(x);
    for (auto& v : out.data) v *= c;
    return push(std::move(out), needs(x), [x, c](Graph& g, int self) {
      const auto& gy = g.grad(self);
      if (g.needs(x))
        for (std::size_t i = 0; i < gy.data.size(); ++i) g.grad_ref(x).data[i] += c * gy.data[i];
    });
  }

  int relu(int x) {
    Tensor<T> out = value(x);
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return push(std::move(out), needs(x), [x](Graph& g, int self) {
      if (!g.needs(x)) return;
      const auto& gy = g.grad(self);
      const auto& xv = g.value(x);
      auto& gx = g.grad_ref(x);
      for (std::size_t i = 0; i < gy.data.size(); ++i)
        if (xv.data[i] > T(0)) gx.data[i] += gy.data[i];
    });
  }

  int softplus(int x) {
    Tensor<T> out = value(x);
    for (auto& v : out.data) v = stable_softplus(v);
    return push(std::move(out), needs(x), [x](Graph& g, int self) {
      if (!g.needs(x)) return;
      const auto& gy = g.grad(self);
      const auto& xv = g.value(x);
      auto& gx = g.grad_ref(x);
      for (std::size_t i = 0; i < gy.data.size(); ++i)
        gx.data[i] += gy.data[i] * logistic(xv.data[i]);
    });
  }

  /// Broadcast multiply of each column j of x [B,n] by s[j].
  int colwise_scale(int x, int s) {
    const auto& X = value(x);
    const auto& S = value(s);
    if (X.rank() != 2 || S.rank() != 1 || X.dim(1) != S.dim(0))
      shape_mismatch("colwise_scale", X, S);
    Tensor<T> out = X;
    const auto rows = X.dim(0), cols = X.dim(1);
    for (std::int64_t i = 0; i < rows; ++i)
      for (std::int64_t j = 0; j < cols; ++j) out.at2(i, j) *= S.data[static_cast<std::size_t>(j)];
    return push(std::move(out), needs(x) || needs(s), [x, s, rows, cols](Graph& g, int self) {
      const auto& gy = g.grad(self);
      if (g.needs(x)) {
        auto& gx = g.grad_ref(x);
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < cols; ++j)
            gx.at2(i, j) += gy.at2(i, j) * g.value(s).data[static_cast<std::size_t>(j)];
      }
      if (g.needs(s)) {
        auto& gs = g.grad_ref(s);
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < cols; ++j)
            gs.data[static_cast<std::size_t>(j)] += gy.at2(i, j) * g.value(x).at2(i, j);
      }
    });
  }

  int concat_cols(const std::vector<int>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_cols: empty input list");
    const auto rows = value(xs[0]).dim(0);
    std::int64_t cols = 0;
    bool any = false;
    for (int x : xs) {
      const auto& X = value(x);
      if (X.rank() != 2 || X.dim(0) != rows) shape_mismatch("concat_cols", value(xs[0]), X);
      cols += X.dim(1);
      any = any || needs(x);
    }
    Tensor<T> out = Tensor<T>::zeros({rows, cols});
    std::int64_t off = 0;
    for (int x : xs) {
      const auto& X = value(x);
      for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < X.dim(1); ++j) out.at2(i, off + j) = X.at2(i, j);
      off += X.dim(1);
    }
    auto list = xs;
    return push(std::move(out), any, [list, rows](Graph& g, int self) {
      const auto& gy = g.grad(self);
      std::int64_t off = 0;
      for (int x : list) {
        const auto w = g.value(x).dim(1);
        if (g.needs(x)) {
          auto& gx = g.grad_ref(x);
          for (std::int64_t i = 0; i < rows; ++i)
            for (std::int64_t j = 0; j < w; ++j) gx.at2(i, j) += gy.at2(i, off + j);
        }
        off += w;
      }
    });
  }

  /// Elementwise mean over a list of same-shaped tensors (the view average).
  int mean_list(const std::vector<int>& xs) {
    if (xs.empty()) throw std::invalid_argument("mean_list: empty input list");
    Tensor<T> out = value(xs[0]);
    bool any = needs(xs[0]);
    for (std::size_t m = 1; m < xs.size(); ++m) {
      const auto& X = value(xs[m]);
      if (!X.same_shape(out)) shape_mismatch("mean_list", out, X);
      for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += X.data[i];
      any = any || needs(xs[m]);
    }
    const T inv = T(1) / static_cast<T>(xs.size());
    for (auto& v : out.data) v *= inv;
    auto list = xs;
    return push(std::move(out), any, [list, inv](Graph& g, int self) {
      const auto& gy = g.grad(self);
      for (int x : list)
        if (g.needs(x)) {
          auto& gx = g.grad_ref(x);
          for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += inv * gy.data[i];
        }
    });
  }

  /// Concatenate [Ci,H,W] tensors along the channel axis.
  int concat_channels(const std::vector<int>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_channels: empty input list");
    const auto h = value(xs[0]).dim(1), w = value(xs[0]).dim(2);
    std::int64_t channels = 0;
    bool any = false;
    for (int x : xs) {
      const auto& X = value(x);
      if (X.rank() != 3 || X.dim(1) != h || X.dim(2) != w)
        shape_mismatch("concat_channels", value(xs[0]), X);
      channels += X.dim(0);
      any = any || needs(x);
    }
    Tensor<T> out = Tensor<T>::zeros({channels, h, w});
    std::size_t off = 0;
    for (int x : xs) {
      const auto& X = value(x);
      std::copy(X.data.begin(), X.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
      off += X.data.size();
    }
    auto list = xs;
    return push(std::move(out), any, [list](Graph& g, int self) {
      const auto& gy = g.grad(self);
      std::size_t off = 0;
      for (int x : list) {
        const auto n = g.value(x).data.size();
        if (g.needs(x)) {
          auto& gx = g.grad_ref(x);
          for (std::size_t i = 0; i < n; ++i) gx.data[i] += gy.data[off + i];
        }
        off += n;
      }
    });
  }

  // ---- image ops (layout [C,H,W]) ----

  int conv2d(int x, int k, int b, int stride, int pad) {
    const auto& X = value(x);
    const auto& K = value(k);
    const auto& Bv = value(b);
    if (X.rank() != 3 || K.shape.size() != 4 || K.dim(1) != X.dim(0)) shape_mismatch("conv2d", X, K);
    if (Bv.rank() != 1 || Bv.dim(0) != K.dim(0)) shape_mismatch("conv2d bias", K, Bv);
    if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
    const auto cin = X.dim(0), h = X.dim(1), w = X.dim(2);
    const auto cout = K.dim(0), kh = K.dim(2), kw = K.dim(3);
    const auto ho = (h + 2 * pad - kh) / stride + 1;
    const auto wo = (w + 2 * pad - kw) / stride + 1;
    if (ho < 1 || wo < 1) throw std::invalid_argument("conv2d: kernel larger than padded input");
    Tensor<T> out = Tensor<T>::zeros({cout, ho, wo});
    for (std::int64_t co = 0; co < cout; ++co)
      for (std::int64_t oh = 0; oh < ho; ++oh)
        for (std::int64_t ow = 0; ow < wo; ++ow) {
          T acc = Bv.data[static_cast<std::size_t>(co)];
          for (std::int64_t ci = 0; ci < cin; ++ci)
            for (std::int64_t r = 0; r < kh; ++r) {
              const std::int64_t ih = oh * stride - pad + r;
              if (ih < 0 || ih >= h) continue;
              for (std::int64_t c = 0; c < kw; ++c) {
                const std::int64_t iw = ow * stride - pad + c;
                if (iw < 0 || iw >= w) continue;
                acc += X.at3(ci, ih, iw) *
                       K.data[static_cast<std::size_t>(((co * cin + ci) * kh + r) * kw + c)];
              }
            }
          out.at3(co, oh, ow) = acc;
        }
    return push(std::move(out), needs(x) || needs(k) || needs(b),
                [x, k, b, stride, pad, cin, h, w, cout, kh, kw, ho, wo](Graph& g, int self) {
      const auto& gy = g.grad(self);
      const auto& X = g.value(x);
      const auto& K = g.value(k);
      for (std::int64_t co = 0; co < cout; ++co)
        for (std::int64_t oh = 0; oh < ho; ++oh)
          for (std::int64_t ow = 0; ow < wo; ++ow) {
            const T gyv = gy.at3(co, oh, ow);
            if (g.needs(b)) g.grad_ref(b).data[static_cast<std::size_t>(co)] += gyv;
            for (std::int64_t ci = 0; ci < cin; ++ci)
              for (std::int64_t r = 0; r < kh; ++r) {
                const std::int64_t ih = oh * stride - pad + r;
                if (ih < 0 || ih >= h) continue;
                for (std::int64_t c = 0; c < kw; ++c) {
                  const std::int64_t iw = ow * stride - pad + c;
                  if (iw < 0 || iw >= w) continue;
                  const auto kidx = static_cast<std::size_t>(((co * cin + ci) * kh + r) * kw + c);
                  if (g.needs(k)) g.grad_ref(k).data[kidx] += gyv * X.at3(ci, ih, iw);
                  if (g.needs(x)) g.grad_ref(x).at3(ci, ih, iw) += gyv * K.data[kidx];
                }
              }
          }
    });
  }

  int avg_pool2(int x) {
    const auto& X = value(x);
    if (X.rank() != 3 || X.dim(1) % 2 != 0 || X.dim(2) % 2 != 0)
      throw std::invalid_argument("avg_pool2: needs [C,H,W] with even H and W, got " + X.shape_str());
    const auto c = X.dim(0), ho = X.dim(1) / 2, wo = X.dim(2) / 2;
    Tensor<T> out = Tensor<T>::zeros({c, ho, wo});
    for (std::int64_t ci = 0; ci < c; ++ci)
      for (std::int64_t i = 0; i < ho; ++i)
        for (std::int64_t j = 0; j < wo; ++j)
          out.at3(ci, i, j) = T(0.25) * (X.at3(ci, 2 * i, 2 * j) + X.at3(ci, 2 * i + 1, 2 * j) +
                                         X.at3(ci, 2 * i, 2 * j + 1) + X.at3(ci, 2 * i + 1, 2 * j + 1));
    return push(std::move(out), needs(x), [x, c, ho, wo](Graph& g, int self) {
      if (!g.needs(x)) return;
      const auto& gy = g.grad(self);
      auto& gx = g.grad_ref(x);
      for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t i = 0; i < ho; ++i)
          for (std::int64_t j = 0; j < wo; ++j) {
            const T v = T(0.25) * gy.at3(ci, i, j);
            gx.at3(ci, 2 * i, 2 * j) += v;
            gx.at3(ci, 2 * i + 1, 2 * j) += v;
            gx.at3(ci, 2 * i, 2 * j + 1) += v;
            gx.at3(ci, 2 * i + 1, 2 * j + 1) += v;
          }
    });
  }

  /// Bilinear upsampling by an integer factor; output pixel centers map to
  /// src = (dst+0.5)/f - 0.5 with edge clamping.
  int upsample_bilinear(int x, int factor) {
    const auto& X = value(x);
    if (X.rank() != 3 || factor < 1)
      throw std::invalid_argument("upsample_bilinear: needs [C,H,W] and factor >= 1");
    const auto c = X.dim(0), h = X.dim(1), w = X.dim(2);
    const auto ho = h * factor, wo = w * factor;
    Tensor<T> out = Tensor<T>::zeros({c, ho, wo});
    for (std::int64_t ci = 0; ci < c; ++ci)
      for (std::int64_t i = 0; i < ho; ++i) {
        std::int64_t r0, r1;
        T tr;
        detail::upsample_taps(i, h, factor, r0, r1, tr);
        for (std::int64_t j = 0; j < wo; ++j) {
          std::int64_t c0, c1;
          T tc;
          detail::upsample_taps(j, w, factor, c0, c1, tc);
          out.at3(ci, i, j) = (T(1) - tr) * ((T(1) - tc) * X.at3(ci, r0, c0) + tc * X.at3(ci, r0, c1)) +
                              tr * ((T(1) - tc) * X.at3(ci, r1, c0) + tc * X.at3(ci, r1, c1));
        }
      }
    return push(std::move(out), needs(x), [x, factor, c, h, w, ho, wo](Graph& g, int self) {
      if (!g.needs(x)) return;
      const auto& gy = g.grad(self);
      auto& gx = g.grad_ref(x);
      for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t i = 0; i < ho; ++i) {
          std::int64_t r0, r1;
          T tr;
          detail::upsample_taps(i, h, factor, r0, r1, tr);
          for (std::int64_t j = 0; j < wo; ++j) {
            std::int64_t c0, c1;
            T tc;
            detail::upsample_taps(j, w, factor, c0, c1, tc);
            const T v = gy.at3(ci, i, j);
            gx.at3(ci, r0, c0) += v * (T(1) - tr) * (T(1) - tc);
            gx.at3(ci, r0, c1) += v * (T(1) - tr) * tc;
            gx.at3(ci, r1, c0) += v * tr * (T(1) - tc);
            gx.at3(ci, r1, c1) += v * tr * tc;
          }
        }
    });
  }

  /// Bilinear lookup of N points in a [C,H,W] grid; integer coordinates hit
  /// pixel centers, out-of-grid taps read zero. points[p] = (col, row).
  int sample_bilinear(int grid_id, std::vector<std::array<T, 2>> points) {
    const auto& G = value(grid_id);
    if (G.rank() != 3) throw std::invalid_argument("sample_bilinear: grid must be [C,H,W]");
    const auto c = G.dim(0), h = G.dim(1), w = G.dim(2);
    const auto n = static_cast<std::int64_t>(points.size());
    Tensor<T> out = Tensor<T>::zeros({n, c});
    auto sample = [&](auto&& visit) {
      for (std::int64_t p = 0; p < n; ++p) {
        const T xf = std::floor(points[static_cast<std::size_t>(p)][0]);
        const T yf = std::floor(points[static_cast<std::size_t>(p)][1]);
        const std::int64_t x0 = static_cast<std::int64_t>(xf);
        const std::int64_t y0 = static_cast<std::int64_t>(yf);
        const T tx = points[static_cast<std::size_t>(p)][0] - xf;
        const T ty = points[static_cast<std::size_t>(p)][1] - yf;
        const std::array<std::pair<std::int64_t, T>, 2> xs{{{x0, T(1) - tx}, {x0 + 1, tx}}};
        const std::array<std::pair<std::int64_t, T>, 2> ys{{{y0, T(1) - ty}, {y0 + 1, ty}}};
        for (const auto& [yi, wy] : ys) {
          if (yi < 0 || yi >= h) continue;
          for (const auto& [xi, wx] : xs) {
            if (xi < 0 || xi >= w) continue;
            visit(p, yi, xi, wy * wx);
          }
        }
      }
    };
    sample([&](std::int64_t p, std::int64_t yi, std::int64_t xi, T wgt) {
      for (std::int64_t ci = 0; ci < c; ++ci) out.at2(p, ci) += wgt * G.at3(ci, yi, xi);
    });
    return push(std::move(out), needs(grid_id),
                [grid_id, pts = std::move(points), c, h, w, n](Graph& g, int self) {
      if (!g.needs(grid_id)) return;
      const auto& gy = g.grad(self);
      auto& gg = g.grad_ref(grid_id);
      for (std::int64_t p = 0; p < n; ++p) {
        const T xf = std::floor(pts[static_cast<std::size_t>(p)][0]);
        const T yf = std::floor(pts[static_cast<std::size_t>(p)][1]);
        const std::int64_t x0 = static_cast<std::int64_t>(xf);
        const std::int64_t y0 = static_cast<std::int64_t>(yf);
        const T tx = pts[static_cast<std::size_t>(p)][0] - xf;
        const T ty = pts[static_cast<std::size_t>(p)][1] - yf;
        const std::array<std::pair<std::int64_t, T>, 2> xs{{{x0, T(1) - tx}, {x0 + 1, tx}}};
        const std::array<std::pair<std::int64_t, T>, 2> ys{{{y0, T(1) - ty}, {y0 + 1, ty}}};
        for (const auto& [yi, wy] : ys) {
          if (yi < 0 || yi >= h) continue;
          for (const auto& [xi, wx] : xs) {
            if (xi < 0 || xi >= w) continue;
            for (std::int64_t ci = 0; ci < c; ++ci)
              gg.at3(ci, yi, xi) += wy * wx * gy.at2(p, ci);
          }
        }
      }
    });
  }

  /// Weighted scatter-sum of rows into segments:
  /// out[seg[p], :] += weight[p] * x[p, :]. The ray-rendering quadrature.
  int segment_weighted_sum(int x, std::vector<std::int64_t> seg, std::vector<T> weight,
                           std::int64_t n_segments) {
    const auto& X = value(x);
    if (X.rank() != 2 || seg.size() != static_cast<std::size_t>(X.dim(0)) ||
        weight.size() != seg.size())
      throw std::invalid_argument("segment_weighted_sum: inconsistent sizes for input " +
                                  X.shape_str());
    const auto n = X.dim(0), c = X.dim(1);
    Tensor<T> out = Tensor<T>::zeros({n_segments, c});
    for (std::int64_t p = 0; p < n; ++p) {
      const auto s = seg[static_cast<std::size_t>(p)];
      for (std::int64_t ci = 0; ci < c; ++ci)
        out.at2(s, ci) += weight[static_cast<std::size_t>(p)] * X.at2(p, ci);
    }
    return push(std::move(out), needs(x),
                [x, sg = std::move(seg), wt = std::move(weight), n, c](Graph& g, int self) {
      if (!g.needs(x)) return;
      const auto& gy = g.grad(self);
      auto& gx = g.grad_ref(x);
      for (std::int64_t p = 0; p < n; ++p)
        for (std::int64_t ci = 0; ci < c; ++ci)
          gx.at2(p, ci) += wt[static_cast<std::size_t>(p)] * gy.at2(sg[static_cast<std::size_t>(p)], ci);
    });
  }

  /// Scalar loss: mean over rows of the summed squared difference to a
  /// constant target (rows = rays, columns = contrast channels).
  int squared_error_mean(int pred, Tensor<T> target) {
    const auto& P = value(pred);
    if (!P.same_shape(target)) shape_mismatch("squared_error_mean", P, target);
    const auto n = P.dim(0);
    T acc = T(0);
    for (std::size_t i = 0; i < P.data.size(); ++i) {
      const T d = P.data[i] - target.data[i];
      acc += d * d;
    }
    Tensor<T> out = Tensor<T>::full({1}, acc / static_cast<T>(n));
    return push(std::move(out), needs(pred), [pred, tgt = std::move(target), n](Graph& g, int self) {
      if (!g.needs(pred)) return;
      const T gy = g.grad(self).data[0];
      const auto& P = g.value(pred);
      auto& gp = g.grad_ref(pred);
      const T c = T(2) * gy / static_cast<T>(n);
      for (std::size_t i = 0; i < P.data.size(); ++i)
        gp.data[i] += c * (P.data[i] - tgt.data[i]);
    });
  }

  int sum_all(int x) {
    const auto& X = value(x);
    T acc = T(0);
    for (T v : X.data) acc += v;
    return push(Tensor<T>::full({1}, acc), needs(x), [x](Graph& g, int self) {
      if (!g.needs(x)) return;
      const T gy = g.grad(self).data[0];
      for (auto& v : g.grad_ref(x).data) v += gy;
    });
  }

  // ---- engine ----

  const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  /// Gradient of a node after backward() (zeros if it never received one).
  Tensor<T> grad_of(int id) const {
    const auto& n = nodes_[static_cast<std::size_t>(id)];
    return n.grad.data.empty() ? Tensor<T>::zeros(n.value.shape) : n.grad;
  }

  void backward(int loss_id) {
    if (!record_) throw std::logic_error("backward: graph was built without recording");
    if (ran_backward_) throw std::logic_error("backward: already ran on this graph");
    if (value(loss_id).numel() != 1)
      throw std::invalid_argument("backward: loss node must be a scalar");
    ran_backward_ = true;
    grad_ref(loss_id).data[0] = T(1);
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      auto& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.back || n.grad.data.empty()) continue;
      n.back(*this, id);
      n.back = nullptr;
    }
    for (const auto& bound : bound_) {
      const auto& n = nodes_[static_cast<std::size_t>(bound.id)];
      if (!n.grad.data.empty()) bound.store->accumulate_grad(bound.name, n.grad);
    }
  }

  bool needs(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  Tensor<T>& grad_ref(int id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.data.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
    return n.grad;
  }

  const Tensor<T>& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    std::function<void(Graph&, int)> back;
  };
  struct BoundParam {
    int id;
    ParamStore<T>* store;
    std::string name;
  };

  template <typename Back>
  int push(Tensor<T> v, bool needs_grad, Back&& back) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    if constexpr (!std::is_same_v<std::decay_t<Back>, std::nullptr_t>) {
      if (record_ && needs_grad) n.back = std::forward<Back>(back);
    }
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int push(Tensor<T> v, bool needs_grad, std::nullptr_t) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  bool record_;
  bool ran_backward_ = false;
  std::vector<Node> nodes_;
  std::vector<BoundParam> bound_;
};

}  // namespace onix::nn
