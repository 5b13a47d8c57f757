#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "smokeseg/tensor.hpp"

// Differentiable kernels. Every forward op here has a matching *_backward
// adjoint that accumulates (+=) into caller-owned gradient tensors; the
// network graph owns the bookkeeping of which saved value feeds which adjoint.
//
// Convolution is cross-correlation (standard CNN convention). 3x3 kernels use
// zero padding 1, 1x1 kernels padding 0, stride 1 always; spatial size is
// preserved. Weight layout is (k, k, cin, cout) with cout contiguous.

namespace smokeseg {

namespace detail {
// Self-test hook for the gradient-check harness: flips the sign of the
// sigmoid adjoint so a deliberately broken gradient is observable end to end.
inline std::atomic<bool> corrupt_sigmoid_adjoint{false};
}  // namespace detail

template <typename F>
inline Tensor<F> conv2d(const Tensor<F>& x, const Tensor<F>& w, const Tensor<F>& b) {
  const int k = w.shape.d[0];
  if (k != w.shape.d[1] || (k != 1 && k != 3)) {
    throw ShapeError("conv2d: weight must be (k,k,cin,cout) with k in {1,3}, got " + w.shape.str());
  }
  const int cin = w.shape.d[2];
  const int cout = w.shape.d[3];
  if (x.shape.c() != cin) {
    throw ShapeError("conv2d: input channels mismatch, input " + x.shape.str() + " vs weight " +
                     w.shape.str());
  }
  if (static_cast<int>(b.numel()) != cout) {
    throw ShapeError("conv2d: bias length " + std::to_string(b.numel()) + " != cout " +
                     std::to_string(cout));
  }
  const int n = x.shape.n(), h = x.shape.h(), wd = x.shape.w();
  const int pad = (k == 3) ? 1 : 0;
  Tensor<F> out(Shape(n, cout, h, wd));

#pragma omp parallel for collapse(2) schedule(static)
  for (int in = 0; in < n; ++in) {
    for (int y = 0; y < h; ++y) {
      std::vector<F> acc(cout);
      for (int xpos = 0; xpos < wd; ++xpos) {
        for (int co = 0; co < cout; ++co) acc[co] = b.data[co];
        for (int ky = 0; ky < k; ++ky) {
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = xpos + kx - pad;
            if (ix < 0 || ix >= wd) continue;
            for (int ci = 0; ci < cin; ++ci) {
              const F xv = x.at(in, ci, iy, ix);
              const F* wrow = w.row(ky, kx, ci);
              for (int co = 0; co < cout; ++co) acc[co] += xv * wrow[co];
            }
          }
        }
        for (int co = 0; co < cout; ++co) out.at(in, co, y, xpos) = acc[co];
      }
    }
  }
  return out;
}

/// Adjoint of conv2d. Accumulates into gx, gw, gb (all pre-sized by caller).
template <typename F>
inline void conv2d_backward(const Tensor<F>& x, const Tensor<F>& w, const Tensor<F>& gout,
                            Tensor<F>& gx, Tensor<F>& gw, Tensor<F>& gb) {
  const int k = w.shape.d[0];
  const int cin = w.shape.d[2];
  const int cout = w.shape.d[3];
  const int n = x.shape.n(), h = x.shape.h(), wd = x.shape.w();
  const int pad = (k == 3) ? 1 : 0;
  if (gout.shape != Shape(n, cout, h, wd)) {
    throw ShapeError("conv2d_backward: upstream shape " + gout.shape.str() + " != expected " +
                     Shape(n, cout, h, wd).str());
  }

  // d/dx: full correlation with the weight, each input site independent.
#pragma omp parallel for collapse(2) schedule(static)
  for (int in = 0; in < n; ++in) {
    for (int iy = 0; iy < h; ++iy) {
      for (int ix = 0; ix < wd; ++ix) {
        for (int ci = 0; ci < cin; ++ci) {
          F acc = F(0);
          for (int ky = 0; ky < k; ++ky) {
            const int y = iy - ky + pad;
            if (y < 0 || y >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int xp = ix - kx + pad;
              if (xp < 0 || xp >= wd) continue;
              const F* wrow = w.row(ky, kx, ci);
              const F* grow = &gout.data[gout.index(in, 0, y, xp)];
              const std::size_t gstride = static_cast<std::size_t>(h) * wd;
              for (int co = 0; co < cout; ++co) acc += grow[co * gstride] * wrow[co];
            }
          }
          gx.at(in, ci, iy, ix) += acc;
        }
      }
    }
  }

  // d/dw: each weight element owns a serial reduction over batch and space.
#pragma omp parallel for collapse(2) schedule(static)
  for (int ky = 0; ky < k; ++ky) {
    for (int kx = 0; kx < k; ++kx) {
      for (int ci = 0; ci < cin; ++ci) {
        for (int co = 0; co < cout; ++co) {
          F acc = F(0);
          for (int in = 0; in < n; ++in) {
            for (int y = 0; y < h; ++y) {
              const int iy = y + ky - pad;
              if (iy < 0 || iy >= h) continue;
              for (int xpos = 0; xpos < wd; ++xpos) {
                const int ix = xpos + kx - pad;
                if (ix < 0 || ix >= wd) continue;
                acc += x.at(in, ci, iy, ix) * gout.at(in, co, y, xpos);
              }
            }
          }
          gw.at(ky, kx, ci, co) += acc;
        }
      }
    }
  }

#pragma omp parallel for schedule(static)
  for (int co = 0; co < cout; ++co) {
    F acc = F(0);
    for (int in = 0; in < n; ++in)
      for (int y = 0; y < h; ++y) {
        const F* grow = gout.row(in, co, y);
        for (int xpos = 0; xpos < wd; ++xpos) acc += grow[xpos];
      }
    gb.data[co] += acc;
  }
}

/// Transposed convolution, 2x2 kernel, stride 2, no padding: every input site
/// scatters its weighted 2x2 patch into a (2h, 2w) output.
template <typename F>
inline Tensor<F> conv_transpose2d(const Tensor<F>& x, const Tensor<F>& w, const Tensor<F>& b) {
  if (w.shape.d[0] != 2 || w.shape.d[1] != 2) {
    throw ShapeError("conv_transpose2d: weight must be (2,2,cin,cout), got " + w.shape.str());
  }
  const int cin = w.shape.d[2];
  const int cout = w.shape.d[3];
  if (x.shape.c() != cin) {
    throw ShapeError("conv_transpose2d: input channels mismatch, input " + x.shape.str() +
                     " vs weight " + w.shape.str());
  }
  if (static_cast<int>(b.numel()) != cout) {
    throw ShapeError("conv_transpose2d: bias length " + std::to_string(b.numel()) + " != cout " +
                     std::to_string(cout));
  }
  const int n = x.shape.n(), h = x.shape.h(), wd = x.shape.w();
  Tensor<F> out(Shape(n, cout, 2 * h, 2 * wd));

#pragma omp parallel for collapse(2) schedule(static)
  for (int in = 0; in < n; ++in) {
    for (int co = 0; co < cout; ++co) {
      for (int y = 0; y < h; ++y) {
        for (int xpos = 0; xpos < wd; ++xpos) {
          for (int ky = 0; ky < 2; ++ky) {
            for (int kx = 0; kx < 2; ++kx) {
              F acc = b.data[co];
              for (int ci = 0; ci < cin; ++ci) {
                acc += x.at(in, ci, y, xpos) * w.at(ky, kx, ci, co);
              }
              out.at(in, co, 2 * y + ky, 2 * xpos + kx) = acc;
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename F>
inline void conv_transpose2d_backward(const Tensor<F>& x, const Tensor<F>& w, const Tensor<F>& gout,
                                      Tensor<F>& gx, Tensor<F>& gw, Tensor<F>& gb) {
  const int cin = w.shape.d[2];
  const int cout = w.shape.d[3];
  const int n = x.shape.n(), h = x.shape.h(), wd = x.shape.w();
  if (gout.shape != Shape(n, cout, 2 * h, 2 * wd)) {
    throw ShapeError("conv_transpose2d_backward: upstream shape " + gout.shape.str() +
                     " != expected " + Shape(n, cout, 2 * h, 2 * wd).str());
  }

#pragma omp parallel for collapse(2) schedule(static)
  for (int in = 0; in < n; ++in) {
    for (int ci = 0; ci < cin; ++ci) {
      for (int y = 0; y < h; ++y) {
        for (int xpos = 0; xpos < wd; ++xpos) {
          F acc = F(0);
          for (int ky = 0; ky < 2; ++ky)
            for (int kx = 0; kx < 2; ++kx)
              for (int co = 0; co < cout; ++co)
                acc += gout.at(in, co, 2 * y + ky, 2 * xpos + kx) * w.at(ky, kx, ci, co);
          gx.at(in, ci, y, xpos) += acc;
        }
      }
    }
  }

#pragma omp parallel for collapse(2) schedule(static)
  for (int ky = 0; ky < 2; ++ky) {
    for (int kx = 0; kx < 2; ++kx) {
      for (int ci = 0; ci < cin; ++ci) {
        for (int co = 0; co < cout; ++co) {
          F acc = F(0);
          for (int in = 0; in < n; ++in)
            for (int y = 0; y < h; ++y)
              for (int xpos = 0; xpos < wd; ++xpos)
                acc += x.at(in, ci, y, xpos) * gout.at(in, co, 2 * y + ky, 2 * xpos + kx);
          gw.at(ky, kx, ci, co) += acc;
        }
      }
    }
  }

#pragma omp parallel for schedule(static)
  for (int co = 0; co < cout; ++co) {
    F acc = F(0);
    for (int in = 0; in < n; ++in)
      for (int y = 0; y < 2 * h; ++y) {
        const F* grow = gout.row(in, co, y);
        for (int xpos = 0; xpos < 2 * wd; ++xpos) acc += grow[xpos];
      }
    gb.data[co] += acc;
  }
}

/// 2x2 max pooling, stride 2. Returns the pooled map plus one window offset
/// (dy*2+dx, ties to the first maximum in scan order) per output element for
/// the adjoint.
template <typename F>
inline std::pair<Tensor<F>, std::vector<std::uint8_t>> maxpool2x2(const Tensor<F>& x) {
  const int n = x.shape.n(), c = x.shape.c(), h = x.shape.h(), wd = x.shape.w();
  if (h % 2 != 0 || wd % 2 != 0) {
    throw ShapeError("maxpool2x2: spatial dims must be even, got " + x.shape.str());
  }
  Tensor<F> out(Shape(n, c, h / 2, wd / 2));
  std::vector<std::uint8_t> arg(out.numel());

#pragma omp parallel for collapse(2) schedule(static)
  for (int in = 0; in < n; ++in) {
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < h / 2; ++y) {
        for (int xpos = 0; xpos < wd / 2; ++xpos) {
          F best = x.at(in, ch, 2 * y, 2 * xpos);
          std::uint8_t off = 0;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const F v = x.at(in, ch, 2 * y + dy, 2 * xpos + dx);
              if (v > best) {
                best = v;
                off = static_cast<std::uint8_t>(dy * 2 + dx);
              }
            }
          }
          const std::size_t oi = out.index(in, ch, y, xpos);
          out.data[oi] = best;
          arg[oi] = off;
        }
      }
    }
  }
  return {std::move(out), std::move(arg)};
}

/// Routes each upstream gradient to its recorded argmax site.
template <typename F>
inline void maxpool2x2_backward(const std::vector<std::uint8_t>& arg, const Tensor<F>& gout,
                                Tensor<F>& gx) {
  const int n = gout.shape.n(), c = gout.shape.c(), h = gout.shape.h(), wd = gout.shape.w();
  if (gx.shape != Shape(n, c, 2 * h, 2 * wd) || arg.size() != gout.numel()) {
    throw ShapeError("maxpool2x2_backward: mismatched shapes, upstream " + gout.shape.str() +
                     " vs input grad " + gx.shape.str());
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int in = 0; in < n; ++in) {
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < h; ++y) {
        for (int xpos = 0; xpos < wd; ++xpos) {
          const std::size_t oi = gout.index(in, ch, y, xpos);
          const int dy = arg[oi] >> 1;
          const int dx = arg[oi] & 1;
          gx.at(in, ch, 2 * y + dy, 2 * xpos + dx) += gout.data[oi];
        }
      }
    }
  }
}

/// Nearest-neighbor 2x upsampling: each pixel replicated into its 2x2 block.
template <typename F>
inline Tensor<F> upsample_nearest2x(const Tensor<F>& x) {
  const int n = x.shape.n(), c = x.shape.c(), h = x.shape.h(), wd = x.shape.w();
  Tensor<F> out(Shape(n, c, 2 * h, 2 * wd));
#pragma omp parallel for collapse(2) schedule(static)
  for (int in = 0; in < n; ++in) {
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < h; ++y) {
        const F* src = x.row(in, ch, y);
        F* d0 = out.row(in, ch, 2 * y);
        F* d1 = out.row(in, ch, 2 * y + 1);
        for (int xpos = 0; xpos < wd; ++xpos) {
          d0[2 * xpos] = src[xpos];
          d0[2 * xpos + 1] = src[xpos];
          d1[2 * xpos] = src[xpos];
          d1[2 * xpos + 1] = src[xpos];
        }
      }
    }
  }
  return out;
}

template <typename F>
inline void upsample_nearest2x_backward(const Tensor<F>& gout, Tensor<F>& gx) {
  const int n = gx.shape.n(), c = gx.shape.c(), h = gx.shape.h(), wd = gx.shape.w();
  if (gout.shape != Shape(n, c, 2 * h, 2 * wd)) {
    throw ShapeError("upsample_nearest2x_backward: upstream shape " + gout.shape.str() +
                     " != expected " + Shape(n, c, 2 * h, 2 * wd).str());
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int in = 0; in < n; ++in) {
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < h; ++y) {
        const F* s0 = gout.row(in, ch, 2 * y);
        const F* s1 = gout.row(in, ch, 2 * y + 1);
        F* dst = gx.row(in, ch, y);
        for (int xpos = 0; xpos < wd; ++xpos) {
          dst[xpos] += s0[2 * xpos] + s0[2 * xpos + 1] + s1[2 * xpos] + s1[2 * xpos + 1];
        }
      }
    }
  }
}

template <typename F>
inline Tensor<F> relu(const Tensor<F>& x) {
  Tensor<F> out(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] > F(0) ? x.data[i] : F(0);
  return out;
}

template <typename F>
inline void relu_backward(const Tensor<F>& x, const Tensor<F>& gout, Tensor<F>& gx) {
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    if (x.data[i] > F(0)) gx.data[i] += gout.data[i];
  }
}

// Sigmoid input is clamped to [-30, 30] and the output to [1e-7, 1-1e-7] so
// downstream cross-entropy stays finite.
inline constexpr double kSigmoidInputClamp = 30.0;
inline constexpr double kSigmoidOutputEps = 1e-7;

template <typename F>
inline Tensor<F> sigmoid(const Tensor<F>& x) {
  Tensor<F> out(x.shape);
  const F lo = static_cast<F>(kSigmoidOutputEps);
  const F hi = static_cast<F>(1.0 - kSigmoidOutputEps);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    F z = std::clamp(x.data[i], static_cast<F>(-kSigmoidInputClamp),
                     static_cast<F>(kSigmoidInputClamp));
    F s = F(1) / (F(1) + std::exp(-z));
    out.data[i] = std::clamp(s, lo, hi);
  }
  return out;
}

/// Adjoint from the saved output: dy/dx = y * (1 - y).
template <typename F>
inline void sigmoid_backward(const Tensor<F>& y, const Tensor<F>& gout, Tensor<F>& gx) {
  const F sign = detail::corrupt_sigmoid_adjoint.load(std::memory_order_relaxed) ? F(-1) : F(1);
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    gx.data[i] += sign * gout.data[i] * y.data[i] * (F(1) - y.data[i]);
  }
}

/// Channel concatenation, a's channels first.
template <typename F>
inline Tensor<F> concat_channels(const Tensor<F>& a, const Tensor<F>& b) {
  if (a.shape.n() != b.shape.n() || a.shape.h() != b.shape.h() || a.shape.w() != b.shape.w()) {
    throw ShapeError("concat_channels: spatial/batch mismatch, " + a.shape.str() + " vs " +
                     b.shape.str());
  }
  const int n = a.shape.n(), ca = a.shape.c(), cb = b.shape.c(), h = a.shape.h(), wd = a.shape.w();
  Tensor<F> out(Shape(n, ca + cb, h, wd));
  const std::size_t plane = static_cast<std::size_t>(h) * wd;
  for (int in = 0; in < n; ++in) {
    std::copy_n(&a.data[a.index(in, 0, 0, 0)], plane * ca, &out.data[out.index(in, 0, 0, 0)]);
    std::copy_n(&b.data[b.index(in, 0, 0, 0)], plane * cb, &out.data[out.index(in, ca, 0, 0)]);
  }
  return out;
}

/// Splits the upstream gradient exactly at a's channel count.
template <typename F>
inline void concat_channels_backward(const Tensor<F>& gout, int ca, Tensor<F>& ga, Tensor<F>& gb) {
  const int n = gout.shape.n(), h = gout.shape.h(), wd = gout.shape.w();
  const int cb = gout.shape.c() - ca;
  if (ga.shape != Shape(n, ca, h, wd) || gb.shape != Shape(n, cb, h, wd)) {
    throw ShapeError("concat_channels_backward: mismatched split shapes for upstream " +
                     gout.shape.str());
  }
  const std::size_t plane = static_cast<std::size_t>(h) * wd;
  for (int in = 0; in < n; ++in) {
    const F* src_a = &gout.data[gout.index(in, 0, 0, 0)];
    const F* src_b = &gout.data[gout.index(in, ca, 0, 0)];
    F* da = &ga.data[ga.index(in, 0, 0, 0)];
    F* db = &gb.data[gb.index(in, 0, 0, 0)];
    for (std::size_t i = 0; i < plane * ca; ++i) da[i] += src_a[i];
    for (std::size_t i = 0; i < plane * cb; ++i) db[i] += src_b[i];
  }
}

template <typename F>
inline Tensor<F> add(const Tensor<F>& a, const Tensor<F>& b) {
  if (a.shape != b.shape) {
    throw ShapeError("add: shape mismatch, " + a.shape.str() + " vs " + b.shape.str());
  }
  Tensor<F> out(a.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  return out;
}

template <typename F>
inline void add_backward(const Tensor<F>& gout, Tensor<F>& ga, Tensor<F>& gb) {
  for (std::size_t i = 0; i < gout.data.size(); ++i) {
    ga.data[i] += gout.data[i];
    gb.data[i] += gout.data[i];
  }
}

}  // namespace smokeseg
