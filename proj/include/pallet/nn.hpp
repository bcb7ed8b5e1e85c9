#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <vector>

#include "pallet/rng.hpp"

namespace pallet::nn {

struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) { resize(c_, h_, w_); }

  void resize(int c_, int h_, int w_) {
    c = c_;
    h = h_;
    w = w_;
    v.assign(static_cast<std::size_t>(c) * h * w, 0.0);
  }
  void zero() { std::fill(v.begin(), v.end(), 0.0); }

  double& at(int ch, int y, int x) {
    return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  double at(int ch, int y, int x) const {
    return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  double* row(int ch, int y) {
    return v.data() + (static_cast<std::size_t>(ch) * h + y) * w;
  }
  const double* row(int ch, int y) const {
    return v.data() + (static_cast<std::size_t>(ch) * h + y) * w;
  }
  std::size_t size() const { return v.size(); }
};

enum class Activation { Tanh, Identity };

inline void activation_fwd(Activation act, std::vector<double>& v) {
  if (act == Activation::Identity) return;
  for (double& x : v) x = std::tanh(x);
}

// g <- g * act'(y) where y is the stored activation output.
inline void activation_bwd(Activation act, const std::vector<double>& y,
                           std::vector<double>& g) {
  if (act == Activation::Identity) return;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - y[i] * y[i];
}

// Square-kernel convolution, stride 1, zero "same" padding. Weights are laid
// out [out_c][in_c][k][k].
struct Conv2D {
  int in_c = 0, out_c = 0, k = 1, pad = 0;
  std::vector<double> w, b, gw, gb;

  Conv2D() = default;
  Conv2D(int in, int out, int kernel) { configure(in, out, kernel); }

  void configure(int in, int out, int kernel) {
    in_c = in;
    out_c = out;
    k = kernel;
    pad = (kernel - 1) / 2;
    w.assign(static_cast<std::size_t>(out) * in * kernel * kernel, 0.0);
    b.assign(static_cast<std::size_t>(out), 0.0);
    gw.assign(w.size(), 0.0);
    gb.assign(b.size(), 0.0);
  }

  // Xavier-uniform; zero_init gives zero weights and biases (used for heads).
  void init(Rng& rng, bool zero_init = false) {
    if (zero_init) {
      std::fill(w.begin(), w.end(), 0.0);
      std::fill(b.begin(), b.end(), 0.0);
      return;
    }
    const double fan_in = static_cast<double>(in_c) * k * k;
    const double fan_out = static_cast<double>(out_c) * k * k;
    const double s = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& x : w) x = rng.uniform(-s, s);
    std::fill(b.begin(), b.end(), 0.0);
  }

  void forward(const Tensor& x, Tensor& y) const {
    y.resize(out_c, x.h, x.w);
    const int H = x.h, W = x.w;
    for (int oc = 0; oc < out_c; ++oc) {
      for (int yy = 0; yy < H; ++yy) {
        double* yr = y.row(oc, yy);
        const double bias = b[static_cast<std::size_t>(oc)];
        for (int xx = 0; xx < W; ++xx) yr[xx] = bias;
      }
      for (int ic = 0; ic < in_c; ++ic) {
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const double wv =
                w[((static_cast<std::size_t>(oc) * in_c + ic) * k + ky) * k + kx];
            const int dy = ky - pad, dx = kx - pad;
            const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
            for (int yy = y0; yy < y1; ++yy) {
              const double* xr = x.row(ic, yy + dy) + dx;
              double* yr = y.row(oc, yy);
              for (int xx = x0; xx < x1; ++xx) yr[xx] += wv * xr[xx];
            }
          }
        }
      }
    }
  }

  // Accumulates gw/gb; writes the input gradient when gx != nullptr.
  void backward(const Tensor& x, const Tensor& gy, Tensor* gx) {
    const int H = x.h, W = x.w;
    if (gx != nullptr) gx->resize(in_c, H, W);
    for (int oc = 0; oc < out_c; ++oc) {
      double gbo = 0.0;
      for (int yy = 0; yy < H; ++yy) {
        const double* gr = gy.row(oc, yy);
        for (int xx = 0; xx < W; ++xx) gbo += gr[xx];
      }
      gb[static_cast<std::size_t>(oc)] += gbo;

      for (int ic = 0; ic < in_c; ++ic) {
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const std::size_t wi =
                ((static_cast<std::size_t>(oc) * in_c + ic) * k + ky) * k + kx;
            const int dy = ky - pad, dx = kx - pad;
            const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
            double acc = 0.0;
            for (int yy = y0; yy < y1; ++yy) {
              const double* xr = x.row(ic, yy + dy) + dx;
              const double* gr = gy.row(oc, yy);
              for (int xx = x0; xx < x1; ++xx) acc += gr[xx] * xr[xx];
            }
            gw[wi] += acc;
            if (gx != nullptr) {
              const double wv = w[wi];
              for (int yy = y0; yy < y1; ++yy) {
                double* gxr = gx->row(ic, yy + dy) + dx;
                const double* gr = gy.row(oc, yy);
                for (int xx = x0; xx < x1; ++xx) gxr[xx] += wv * gr[xx];
              }
            }
          }
        }
      }
    }
  }
};

struct Dense {
  int in = 0, out = 0;
  std::vector<double> w, b, gw, gb;  // w is [out][in]

  Dense() = default;
  Dense(int in_, int out_) { configure(in_, out_); }

  void configure(int in_, int out_) {
    in = in_;
    out = out_;
    w.assign(static_cast<std::size_t>(in) * out, 0.0);
    b.assign(static_cast<std::size_t>(out), 0.0);
    gw.assign(w.size(), 0.0);
    gb.assign(b.size(), 0.0);
  }

  void init(Rng& rng, bool zero_init = false) {
    if (zero_init) {
      std::fill(w.begin(), w.end(), 0.0);
      std::fill(b.begin(), b.end(), 0.0);
      return;
    }
    const double s = std::sqrt(6.0 / (static_cast<double>(in) + out));
    for (double& x : w) x = rng.uniform(-s, s);
    std::fill(b.begin(), b.end(), 0.0);
  }

  void forward(const double* x, double* y) const {
    for (int o = 0; o < out; ++o) {
      const double* wr = w.data() + static_cast<std::size_t>(o) * in;
      double acc = b[static_cast<std::size_t>(o)];
      for (int i = 0; i < in; ++i) acc += wr[i] * x[i];
      y[o] = acc;
    }
  }

  void backward(const double* x, const double* gy, double* gx) {
    if (gx != nullptr) std::memset(gx, 0, sizeof(double) * static_cast<std::size_t>(in));
    for (int o = 0; o < out; ++o) {
      const double g = gy[o];
      gb[static_cast<std::size_t>(o)] += g;
      double* gwr = gw.data() + static_cast<std::size_t>(o) * in;
      const double* wr = w.data() + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) gwr[i] += g * x[i];
      if (gx != nullptr)
        for (int i = 0; i < in; ++i) gx[i] += g * wr[i];
    }
  }
};

// 2x2 average pooling with stride 2; odd trailing rows/cols pool over the
// clipped window.
inline void avgpool2_fwd(const Tensor& x, Tensor& y) {
  const int hh = (x.h + 1) / 2, ww = (x.w + 1) / 2;
  y.resize(x.c, hh, ww);
  for (int ch = 0; ch < x.c; ++ch) {
    for (int py = 0; py < hh; ++py) {
      const int y0 = 2 * py, y1 = std::min(x.h, y0 + 2);
      for (int px = 0; px < ww; ++px) {
        const int x0 = 2 * px, x1 = std::min(x.w, x0 + 2);
        double acc = 0.0;
        for (int yy = y0; yy < y1; ++yy)
          for (int xx = x0; xx < x1; ++xx) acc += x.at(ch, yy, xx);
        y.at(ch, py, px) = acc / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  }
}

inline void avgpool2_bwd(const Tensor& x, const Tensor& gy, Tensor& gx) {
  gx.resize(x.c, x.h, x.w);
  const int hh = gy.h, ww = gy.w;
  for (int ch = 0; ch < x.c; ++ch) {
    for (int py = 0; py < hh; ++py) {
      const int y0 = 2 * py, y1 = std::min(x.h, y0 + 2);
      for (int px = 0; px < ww; ++px) {
        const int x0 = 2 * px, x1 = std::min(x.w, x0 + 2);
        const double g =
            gy.at(ch, py, px) / static_cast<double>((y1 - y0) * (x1 - x0));
        for (int yy = y0; yy < y1; ++yy)
          for (int xx = x0; xx < x1; ++xx) gx.at(ch, yy, xx) += g;
      }
    }
  }
}

// Nearest-neighbour upsample to an explicit target size; exactly inverts the
// pooling window map (out(y, x) reads in(y / 2, x / 2)).
inline void upsample2_fwd(const Tensor& x, int H, int W, Tensor& y) {
  y.resize(x.c, H, W);
  for (int ch = 0; ch < x.c; ++ch)
    for (int yy = 0; yy < H; ++yy) {
      const double* xr = x.row(ch, yy / 2);
      double* yr = y.row(ch, yy);
      for (int xx = 0; xx < W; ++xx) yr[xx] = xr[xx / 2];
    }
}

inline void upsample2_bwd(const Tensor& x, const Tensor& gy, Tensor& gx) {
  gx.resize(x.c, x.h, x.w);
  for (int ch = 0; ch < gy.c; ++ch)
    for (int yy = 0; yy < gy.h; ++yy) {
      double* gxr = gx.row(ch, yy / 2);
      const double* gr = gy.row(ch, yy);
      for (int xx = 0; xx < gy.w; ++xx) gxr[xx / 2] += gr[xx];
    }
}

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

// Parameter plumbing shared by the nets: each net lists its (value, grad)
// pairs in a fixed order via visit().
using ParamVisitor =
    std::function<void(std::vector<double>& value, std::vector<double>& grad)>;

template <typename Net>
std::size_t param_count(Net& net) {
  std::size_t n = 0;
  net.visit([&](std::vector<double>& v, std::vector<double>&) { n += v.size(); });
  return n;
}

template <typename Net>
std::vector<double> get_params(Net& net) {
  std::vector<double> out;
  net.visit([&](std::vector<double>& v, std::vector<double>&) {
    out.insert(out.end(), v.begin(), v.end());
  });
  return out;
}

template <typename Net>
void set_params(Net& net, const std::vector<double>& flat) {
  std::size_t pos = 0;
  net.visit([&](std::vector<double>& v, std::vector<double>&) {
    if (pos + v.size() > flat.size())
      throw std::invalid_argument("set_params: size mismatch");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
              flat.begin() + static_cast<std::ptrdiff_t>(pos + v.size()), v.begin());
    pos += v.size();
  });
  if (pos != flat.size()) throw std::invalid_argument("set_params: size mismatch");
}

template <typename Net>
std::vector<double> get_grads(Net& net) {
  std::vector<double> out;
  net.visit([&](std::vector<double>&, std::vector<double>& g) {
    out.insert(out.end(), g.begin(), g.end());
  });
  return out;
}

template <typename Net>
void zero_grads(Net& net) {
  net.visit([&](std::vector<double>&, std::vector<double>& g) {
    std::fill(g.begin(), g.end(), 0.0);
  });
}

// grads(net) += grads(other); nets must share the architecture.
template <typename Net>
void add_grads(Net& net, Net& other) {
  std::vector<std::vector<double>*> mine;
  net.visit([&](std::vector<double>&, std::vector<double>& g) { mine.push_back(&g); });
  std::size_t idx = 0;
  other.visit([&](std::vector<double>&, std::vector<double>& g) {
    std::vector<double>& dst = *mine[idx++];
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

// SGD with momentum: vel = m * vel + grad; param -= lr * vel.
template <typename Net>
void sgd_momentum_step(Net& net, std::vector<double>& velocity, double lr,
                       double momentum) {
  if (velocity.empty()) velocity.assign(param_count(net), 0.0);
  std::size_t pos = 0;
  net.visit([&](std::vector<double>& v, std::vector<double>& g) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      double& vel = velocity[pos + i];
      vel = momentum * vel + g[i];
      v[i] -= lr * vel;
    }
    pos += v.size();
  });
}

struct AdamState {
  std::vector<double> m, v;
  std::int64_t t = 0;
};

template <typename Net>
void adam_step(Net& net, AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8) {
  const std::size_t n = param_count(net);
  if (state.m.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  std::size_t pos = 0;
  net.visit([&](std::vector<double>& p, std::vector<double>& g) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      double& m = state.m[pos + i];
      double& v = state.v[pos + i];
      m = beta1 * m + (1.0 - beta1) * g[i];
      v = beta2 * v + (1.0 - beta2) * g[i] * g[i];
      p[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
    }
    pos += p.size();
  });
}

}  // namespace pallet::nn
