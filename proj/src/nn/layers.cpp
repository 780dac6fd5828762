#include "octqsm/layers.hpp"

#include <algorithm>
#include <cmath>

#include <cblas.h>

namespace octqsm::nn {

namespace {

template <typename T>
void require_same_shape(const Tensor5<T>& a, const Tensor5<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
}

template <typename T>
void require_channels(const Tensor5<T>& x, int expected, const char* op) {
  if (x.channels() != expected)
    throw std::invalid_argument(std::string(op) + ": expected " + std::to_string(expected) + " input channels, got " +
                                std::to_string(x.channels()));
}

int conv_out_dim(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

// Output indices o in [lo, hi) whose input index o*s + off lies inside [0, n).
inline void valid_range(int off, int s, int n, int out_n, int& lo, int& hi) {
  lo = off >= 0 ? 0 : (-off + s - 1) / s;
  hi = std::min(out_n, (n - 1 - off) / s + 1);
  if (n - 1 - off < 0) hi = 0;
}

template <typename T>
Tensor5<T> spatial_pool_shape(const Tensor5<T>& x, const char* op) {
  for (int a = 2; a < 5; ++a)
    if (x.shape()[a] % 2 != 0)
      throw std::invalid_argument(std::string(op) + ": spatial dims must be even, got " + shape_string(x.shape()));
  return Tensor5<T>({x.batch(), x.channels(), x.depth() / 2, x.height() / 2, x.width() / 2});
}

}  // namespace

template <typename T>
Param<T>::Param(std::string n, std::vector<int> s, T fill) : name(std::move(n)), shape(std::move(s)) {
  std::size_t count = 1;
  for (int v : shape) count *= static_cast<std::size_t>(v);
  value.assign(count, fill);
  grad.assign(count, T(0));
}

template <typename T>
ConvParams<T>::ConvParams(std::string name, int in, int out, int k, int s, int p)
    : in_ch(in),
      out_ch(out),
      kernel(k),
      stride(s),
      padding(p),
      weight(name + ".weight", {out, in, k, k, k}),
      bias(name + ".bias", {out}) {
  if (in < 1 || out < 1 || k < 1 || s < 1 || p < 0) throw std::invalid_argument("invalid conv parameters for " + name);
}

template <typename T>
void ConvParams<T>::init_normal(std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (T& w : weight.value) w = static_cast<T>(dist(rng));
  for (T& b : bias.value) b = static_cast<T>(dist(rng));
}

template <typename T>
void ConvParams<T>::set_zero() {
  std::fill(weight.value.begin(), weight.value.end(), T(0));
  std::fill(bias.value.begin(), bias.value.end(), T(0));
}

template <typename T>
BatchNormParams<T>::BatchNormParams(std::string n, int ch, double e, double m)
    : channels(ch),
      gain(n + ".gain", {ch}, T(1)),
      shift(n + ".shift", {ch}),
      running_mean(static_cast<std::size_t>(ch), T(0)),
      running_var(static_cast<std::size_t>(ch), T(1)),
      eps(e),
      momentum(m),
      name(std::move(n)) {}

// ---------------------------------------------------------------------------
// conv3d: im2col + GEMM, one sample at a time

namespace {

void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, const float* b, float beta, float* c) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a,
              ta ? m : k, b, tb ? k : n, beta, c, n);
}

void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, const double* b, double beta,
          double* c) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a,
              ta ? m : k, b, tb ? k : n, beta, c, n);
}

struct ConvGeometry {
  int IC, ID, IH, IW;
  int OD, OH, OW;
  int k, s, pad;
  [[nodiscard]] bool pointwise() const { return k == 1 && s == 1 && pad == 0; }
  [[nodiscard]] std::size_t out_plane() const { return static_cast<std::size_t>(OD) * OH * OW; }
  [[nodiscard]] std::size_t in_plane() const { return static_cast<std::size_t>(ID) * IH * IW; }
  [[nodiscard]] int rows() const { return IC * k * k * k; }
};

template <typename T>
ConvGeometry geometry(const Tensor5<T>& x, const ConvParams<T>& p) {
  ConvGeometry g{p.in_ch, x.depth(), x.height(), x.width(), 0, 0, 0, p.kernel, p.stride, p.padding};
  g.OD = conv_out_dim(g.ID, g.k, g.s, g.pad);
  g.OH = conv_out_dim(g.IH, g.k, g.s, g.pad);
  g.OW = conv_out_dim(g.IW, g.k, g.s, g.pad);
  return g;
}

// Row r = (i, kd, kh, kw) of col holds the input voxels that tap hits for every output voxel.
template <typename T>
void im2col(const T* in, const ConvGeometry& g, T* col) {
  const int k = g.k, k3 = k * k * k;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < g.rows(); ++r) {
    const int i = r / k3, t = r % k3;
    const int kd = t / (k * k), kh = (t / k) % k, kw = t % k;
    const T* src = in + static_cast<std::size_t>(i) * g.in_plane();
    T* dst = col + static_cast<std::size_t>(r) * g.out_plane();
    const int off = kw - g.pad;
    int lo = 0, hi = 0;
    valid_range(off, g.s, g.IW, g.OW, lo, hi);
    for (int od = 0; od < g.OD; ++od) {
      const int id = od * g.s + kd - g.pad;
      for (int oh = 0; oh < g.OH; ++oh) {
        const int ih = oh * g.s + kh - g.pad;
        T* __restrict drow = dst + (static_cast<std::size_t>(od) * g.OH + oh) * g.OW;
        if (id < 0 || id >= g.ID || ih < 0 || ih >= g.IH) {
          std::fill(drow, drow + g.OW, T(0));
          continue;
        }
        const T* __restrict srow = src + (static_cast<std::size_t>(id) * g.IH + ih) * g.IW;
        std::fill(drow, drow + lo, T(0));
        if (g.s == 1) {
          std::copy(srow + lo + off, srow + hi + off, drow + lo);
        } else {
          for (int ow = lo; ow < hi; ++ow) drow[ow] = srow[ow * g.s + off];
        }
        std::fill(drow + std::max(lo, hi), drow + g.OW, T(0));
      }
    }
  }
}

// Adjoint of im2col, accumulated into `out`. Parallel over input channels so every
// output voxel has one writer.
template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* out) {
  const int k = g.k, k3 = k * k * k;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < g.IC; ++i) {
    T* dst = out + static_cast<std::size_t>(i) * g.in_plane();
    for (int t = 0; t < k3; ++t) {
      const int kd = t / (k * k), kh = (t / k) % k, kw = t % k;
      const T* src = col + (static_cast<std::size_t>(i) * k3 + t) * g.out_plane();
      const int off = kw - g.pad;
      int lo = 0, hi = 0;
      valid_range(off, g.s, g.IW, g.OW, lo, hi);
      for (int od = 0; od < g.OD; ++od) {
        const int id = od * g.s + kd - g.pad;
        if (id < 0 || id >= g.ID) continue;
        for (int oh = 0; oh < g.OH; ++oh) {
          const int ih = oh * g.s + kh - g.pad;
          if (ih < 0 || ih >= g.IH) continue;
          const T* __restrict srow = src + (static_cast<std::size_t>(od) * g.OH + oh) * g.OW;
          T* __restrict drow = dst + (static_cast<std::size_t>(id) * g.IH + ih) * g.IW;
          if (g.s == 1) {
#pragma omp simd
            for (int ow = lo; ow < hi; ++ow) drow[ow + off] += srow[ow];
          } else {
            for (int ow = lo; ow < hi; ++ow) drow[ow * g.s + off] += srow[ow];
          }
        }
      }
    }
  }
}

// Stride-1 direct convolution on a zero-padded copy of each sample. An output plane
// at depth od is computed over the "extended" plane of length OH * Wp (Wp = padded
// width): position p reads input p + kh*Wp + kw, columns ow >= OW are discarded. This
// turns every tap into one long unit-stride run.
constexpr int kChunk = 32;
constexpr int kOcBlock = 4;

template <typename T>
struct PaddedSample {
  std::vector<T> data;
  int Dp = 0, Hp = 0, Wp = 0;
  std::size_t plane = 0, chan = 0;
};

template <typename T>
PaddedSample<T> pad_sample(const Tensor5<T>& x, int n, int pad, int k) {
  PaddedSample<T> s;
  s.Dp = x.depth() + 2 * pad;
  s.Hp = x.height() + 2 * pad;
  s.Wp = x.width() + 2 * pad;
  s.plane = static_cast<std::size_t>(s.Hp) * s.Wp;
  s.chan = static_cast<std::size_t>(s.Dp) * s.plane + kChunk + k;
  s.data.assign(s.chan * x.channels(), T(0));
  const int D = x.depth(), H = x.height(), W = x.width();
  for (int c = 0; c < x.channels(); ++c)
    for (int d = 0; d < D; ++d)
      for (int h = 0; h < H; ++h)
        std::copy_n(x.plane(n, c) + (static_cast<std::size_t>(d) * H + h) * W, W,
                    s.data.data() + c * s.chan + (d + pad) * s.plane + static_cast<std::size_t>(h + pad) * s.Wp + pad);
  return s;
}

// w is [o][i][tap]; `flip` reads it as the adjoint kernel [i][o][k3 - 1 - tap].
template <typename T>
void direct_conv_s1(const Tensor5<T>& x, const std::vector<T>& w, bool flip, const T* bias, int OC, int k, int pad,
                    Tensor5<T>& y) {
  const int IC = x.channels(), k3 = k * k * k;
  const int OD = y.depth(), OH = y.height(), OW = y.width();
  const int blocks = (OC + kOcBlock - 1) / kOcBlock;
  std::vector<T> wb(static_cast<std::size_t>(blocks) * IC * k3 * kOcBlock, T(0));
  for (int o = 0; o < OC; ++o)
    for (int i = 0; i < IC; ++i)
      for (int t = 0; t < k3; ++t) {
        const T v = flip ? w[(static_cast<std::size_t>(i) * OC + o) * k3 + (k3 - 1 - t)]
                         : w[(static_cast<std::size_t>(o) * IC + i) * k3 + t];
        wb[((static_cast<std::size_t>(o / kOcBlock) * IC + i) * k3 + t) * kOcBlock + o % kOcBlock] = v;
      }

  for (int n = 0; n < x.batch(); ++n) {
    const PaddedSample<T> ps = pad_sample(x, n, pad, k);
    const int Wp = ps.Wp;
    const int L = OH * Wp;
#pragma omp parallel for collapse(2) schedule(static)
    for (int od = 0; od < OD; ++od) {
      for (int ob = 0; ob < blocks; ++ob) {
        for (int c0 = 0; c0 < L; c0 += kChunk) {
          alignas(64) T acc[kOcBlock][kChunk];
          for (int b = 0; b < kOcBlock; ++b) {
            const int o = ob * kOcBlock + b;
            const T init = bias && o < OC ? bias[o] : T(0);
            for (int j = 0; j < kChunk; ++j) acc[b][j] = init;
          }
          for (int i = 0; i < IC; ++i) {
            const T* base = ps.data.data() + i * ps.chan + od * ps.plane + c0;
            const T* wi = wb.data() + (static_cast<std::size_t>(ob) * IC + i) * k3 * kOcBlock;
            for (int kd = 0; kd < k; ++kd)
              for (int kh = 0; kh < k; ++kh)
                for (int kw = 0; kw < k; ++kw) {
                  const T* __restrict src = base + kd * ps.plane + kh * Wp + kw;
                  const T* w4 = wi + ((kd * k + kh) * k + kw) * kOcBlock;
                  for (int b = 0; b < kOcBlock; ++b) {
                    const T wv = w4[b];
#pragma omp simd aligned(acc : 64)
                    for (int j = 0; j < kChunk; ++j) acc[b][j] += wv * src[j];
                  }
                }
          }
          for (int b = 0; b < kOcBlock; ++b) {
            const int o = ob * kOcBlock + b;
            if (o >= OC) break;
            T* out = y.plane(n, o) + static_cast<std::size_t>(od) * OH * OW;
            for (int j = 0; j < kChunk && c0 + j < L; ++j) {
              const int oh = (c0 + j) / Wp, ow = (c0 + j) % Wp;
              if (ow < OW) out[oh * OW + ow] = acc[b][j];
            }
          }
        }
      }
    }
  }
}

// dW[o][i][tap] += sum over batch and output positions of dy[o] * x[i] shifted by tap.
// The kw taps of one (kd, kh) row share each load of dy.
constexpr int kMaxDirectKernel = 7;

template <typename T>
void direct_weight_grad_s1(const Tensor5<T>& x, const Tensor5<T>& dy, int k, int pad, T* wgrad) {
  const int IC = x.channels(), OC = dy.channels(), k3 = k * k * k;
  const int OD = dy.depth(), OH = dy.height(), OW = dy.width();
  std::vector<double> dw(static_cast<std::size_t>(OC) * IC * k3, 0.0);
  for (int n = 0; n < x.batch(); ++n) {
    const PaddedSample<T> ps = pad_sample(x, n, pad, k);
    const int Wp = ps.Wp;
    const int L = OH * Wp;
    const int Lr = (L + kChunk - 1) / kChunk * kChunk;
    std::vector<T> ext(static_cast<std::size_t>(OC) * OD * Lr, T(0));
    for (int o = 0; o < OC; ++o)
      for (int od = 0; od < OD; ++od)
        for (int oh = 0; oh < OH; ++oh)
          std::copy_n(dy.plane(n, o) + (static_cast<std::size_t>(od) * OH + oh) * OW, OW,
                      ext.data() + (static_cast<std::size_t>(o) * OD + od) * Lr + static_cast<std::size_t>(oh) * Wp);
#pragma omp parallel for collapse(2) schedule(static)
    for (int o = 0; o < OC; ++o) {
      for (int i = 0; i < IC; ++i) {
        for (int kd = 0; kd < k; ++kd) {
          for (int kh = 0; kh < k; ++kh) {
            alignas(64) T acc[kMaxDirectKernel][kChunk] = {};
            for (int od = 0; od < OD; ++od) {
              const T* g = ext.data() + (static_cast<std::size_t>(o) * OD + od) * Lr;
              const T* src = ps.data.data() + i * ps.chan + (od + kd) * ps.plane + kh * Wp;
              for (int c0 = 0; c0 < Lr; c0 += kChunk) {
                for (int kw = 0; kw < k; ++kw) {
                  const T* __restrict sp = src + c0 + kw;
                  const T* __restrict gp = g + c0;
#pragma omp simd aligned(acc : 64)
                  for (int j = 0; j < kChunk; ++j) acc[kw][j] += gp[j] * sp[j];
                }
              }
            }
            for (int kw = 0; kw < k; ++kw) {
              double s = 0;
              for (int j = 0; j < kChunk; ++j) s += acc[kw][j];
              dw[(static_cast<std::size_t>(o) * IC + i) * k3 + (kd * k + kh) * k + kw] += s;
            }
          }
        }
      }
    }
  }
  for (std::size_t r = 0; r < dw.size(); ++r) wgrad[r] += static_cast<T>(dw[r]);
}

// dx += col2im(W^T dy), W grad += dy col^T, per sample.
template <typename T>
void conv_backward_gemm(const Tensor5<T>& x, ConvParams<T>& p, const Tensor5<T>& dy, const ConvGeometry& g,
                        Tensor5<T>& dx) {
  const int OC = p.out_ch;
  const int P = static_cast<int>(g.out_plane());
  const std::size_t col_size = g.pointwise() ? 0 : static_cast<std::size_t>(g.rows()) * g.out_plane();
  std::vector<T> col(col_size), dcol(col_size);
  for (int n = 0; n < x.batch(); ++n) {
    const T* b = x.plane(n, 0);
    if (!g.pointwise()) {
      im2col(x.plane(n, 0), g, col.data());
      b = col.data();
    }
    gemm(false, true, OC, g.rows(), P, T(1), dy.plane(n, 0), b, T(1), p.weight.grad.data());
    if (g.pointwise()) {
      gemm(true, false, g.rows(), P, OC, T(1), p.weight.value.data(), dy.plane(n, 0), T(0), dx.plane(n, 0));
    } else {
      gemm(true, false, g.rows(), P, OC, T(1), p.weight.value.data(), dy.plane(n, 0), T(0), dcol.data());
      col2im_add(dcol.data(), g, dx.plane(n, 0));
    }
  }
}

}  // namespace

template <typename T>
Tensor5<T> conv3d(const Tensor5<T>& x, const ConvParams<T>& p) {
  require_channels(x, p.in_ch, "conv3d");
  const ConvGeometry g = geometry(x, p);
  if (g.OD < 1 || g.OH < 1 || g.OW < 1) throw std::invalid_argument("conv3d: padding yields empty output");
  const int N = x.batch(), OC = p.out_ch;
  Tensor5<T> y({N, OC, g.OD, g.OH, g.OW});
  if (g.s == 1 && !g.pointwise() && g.k <= kMaxDirectKernel) {
    direct_conv_s1(x, p.weight.value, false, p.bias.value.data(), OC, g.k, g.pad, y);
    return y;
  }
  const int P = static_cast<int>(g.out_plane());
  std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(g.rows()) * g.out_plane());
  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < OC; ++o) std::fill_n(y.plane(n, o), P, p.bias.value[static_cast<std::size_t>(o)]);
    const T* b = x.plane(n, 0);
    if (!g.pointwise()) {
      im2col(x.plane(n, 0), g, col.data());
      b = col.data();
    }
    gemm(false, false, OC, P, g.rows(), T(1), p.weight.value.data(), b, T(1), y.plane(n, 0));
  }
  return y;
}

template <typename T>
Tensor5<T> conv3d_backward(const Tensor5<T>& x, ConvParams<T>& p, const Tensor5<T>& dy) {
  require_channels(x, p.in_ch, "conv3d_backward");
  const ConvGeometry g = geometry(x, p);
  if (dy.shape() != typename Tensor5<T>::Shape{x.batch(), p.out_ch, g.OD, g.OH, g.OW})
    throw std::invalid_argument("conv3d_backward: upstream gradient shape " + shape_string(dy.shape()));
  const int OC = p.out_ch, IC = g.IC;
  Tensor5<T> dx(x.shape());
  if (g.s == 1 && !g.pointwise() && g.k <= kMaxDirectKernel) {
    // The input gradient is a stride-1 conv of dy with the flipped, transposed kernel.
    direct_conv_s1(dy, p.weight.value, true, static_cast<const T*>(nullptr), IC, g.k, g.k - 1 - g.pad, dx);
    direct_weight_grad_s1(x, dy, g.k, g.pad, p.weight.grad.data());
  } else {
    conv_backward_gemm(x, p, dy, g, dx);
  }
  const std::size_t P = g.out_plane();
  for (int o = 0; o < OC; ++o) {
    double bsum = 0;
    for (int n = 0; n < x.batch(); ++n) {
      const T* gp = dy.plane(n, o);
      for (std::size_t t = 0; t < P; ++t) bsum += gp[t];
    }
    p.bias.grad[static_cast<std::size_t>(o)] += static_cast<T>(bsum);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// conv_transpose3d (k = 2, s = 2)

template <typename T>
static void check_transpose(const Tensor5<T>& x, const ConvParams<T>& p, const char* op) {
  if (p.kernel != 2 || p.stride != 2 || p.padding != 0)
    throw std::invalid_argument(std::string(op) + ": only kernel 2, stride 2, padding 0 is supported");
  require_channels(x, p.in_ch, op);
}

template <typename T>
Tensor5<T> conv_transpose3d(const Tensor5<T>& x, const ConvParams<T>& p) {
  check_transpose(x, p, "conv_transpose3d");
  const int N = x.batch(), IC = p.in_ch, OC = p.out_ch;
  const int D = x.depth(), H = x.height(), W = x.width();
  const int OH = 2 * H, OW = 2 * W;
  Tensor5<T> y({N, OC, 2 * D, OH, OW});
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < OC; ++o) {
      T* out = y.plane(n, o);
      std::fill(out, out + y.spatial_size(), p.bias.value[static_cast<std::size_t>(o)]);
      for (int i = 0; i < IC; ++i) {
        const T* in = x.plane(n, i);
        const T* wk = p.weight.value.data() + (static_cast<std::size_t>(o) * IC + i) * 8;
        for (int d = 0; d < D; ++d)
          for (int h = 0; h < H; ++h) {
            const T* __restrict xrow = in + (static_cast<std::size_t>(d) * H + h) * W;
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b) {
                T* __restrict orow = out + (static_cast<std::size_t>(2 * d + a) * OH + (2 * h + b)) * OW;
                const T w0 = wk[(a * 2 + b) * 2], w1 = wk[(a * 2 + b) * 2 + 1];
                for (int w = 0; w < W; ++w) {
                  orow[2 * w] += w0 * xrow[w];
                  orow[2 * w + 1] += w1 * xrow[w];
                }
              }
          }
      }
    }
  }
  return y;
}

template <typename T>
Tensor5<T> conv_transpose3d_backward(const Tensor5<T>& x, ConvParams<T>& p, const Tensor5<T>& dy) {
  check_transpose(x, p, "conv_transpose3d_backward");
  const int N = x.batch(), IC = p.in_ch, OC = p.out_ch;
  const int D = x.depth(), H = x.height(), W = x.width();
  const int OH = 2 * H, OW = 2 * W;
  if (dy.shape() != typename Tensor5<T>::Shape{N, OC, 2 * D, OH, OW})
    throw std::invalid_argument("conv_transpose3d_backward: upstream gradient shape " + shape_string(dy.shape()));

  Tensor5<T> dx(x.shape());
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int i = 0; i < IC; ++i) {
      T* dxp = dx.plane(n, i);
      for (int o = 0; o < OC; ++o) {
        const T* g = dy.plane(n, o);
        const T* wk = p.weight.value.data() + (static_cast<std::size_t>(o) * IC + i) * 8;
        for (int d = 0; d < D; ++d)
          for (int h = 0; h < H; ++h) {
            T* __restrict xrow = dxp + (static_cast<std::size_t>(d) * H + h) * W;
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b) {
                const T* __restrict grow = g + (static_cast<std::size_t>(2 * d + a) * OH + (2 * h + b)) * OW;
                const T w0 = wk[(a * 2 + b) * 2], w1 = wk[(a * 2 + b) * 2 + 1];
                for (int w = 0; w < W; ++w) xrow[w] += w0 * grow[2 * w] + w1 * grow[2 * w + 1];
              }
          }
      }
    }
  }

#pragma omp parallel for schedule(static)
  for (int o = 0; o < OC; ++o) {
    for (int i = 0; i < IC; ++i) {
      double acc[8] = {};
      for (int n = 0; n < N; ++n) {
        const T* g = dy.plane(n, o);
        const T* in = x.plane(n, i);
        for (int d = 0; d < D; ++d)
          for (int h = 0; h < H; ++h) {
            const T* xrow = in + (static_cast<std::size_t>(d) * H + h) * W;
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b) {
                const T* grow = g + (static_cast<std::size_t>(2 * d + a) * OH + (2 * h + b)) * OW;
                T s0 = 0, s1 = 0;
                for (int w = 0; w < W; ++w) {
                  s0 += grow[2 * w] * xrow[w];
                  s1 += grow[2 * w + 1] * xrow[w];
                }
                acc[(a * 2 + b) * 2] += s0;
                acc[(a * 2 + b) * 2 + 1] += s1;
              }
          }
      }
      T* wg = p.weight.grad.data() + (static_cast<std::size_t>(o) * IC + i) * 8;
      for (int t = 0; t < 8; ++t) wg[t] += static_cast<T>(acc[t]);
    }
    double bsum = 0;
    for (int n = 0; n < N; ++n) {
      const T* g = dy.plane(n, o);
      for (std::size_t t = 0; t < dy.spatial_size(); ++t) bsum += g[t];
    }
    p.bias.grad[static_cast<std::size_t>(o)] += static_cast<T>(bsum);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// pooling

template <typename T>
Tensor5<T> avg_pool3d(const Tensor5<T>& x) {
  Tensor5<T> y = spatial_pool_shape(x, "avg_pool3d");
  const int D = y.depth(), H = y.height(), W = y.width();
  const int XH = x.height(), XW = x.width();
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < x.batch(); ++n)
    for (int c = 0; c < x.channels(); ++c) {
      const T* in = x.plane(n, c);
      T* out = y.plane(n, c);
      for (int d = 0; d < D; ++d)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            T s = 0;
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b) {
                const T* r = in + (static_cast<std::size_t>(2 * d + a) * XH + (2 * h + b)) * XW + 2 * w;
                s += r[0] + r[1];
              }
            out[(static_cast<std::size_t>(d) * H + h) * W + w] = s * T(0.125);
          }
    }
  return y;
}

template <typename T>
Tensor5<T> avg_pool3d_backward(const Tensor5<T>& x, const Tensor5<T>& dy) {
  const Tensor5<T> expect = spatial_pool_shape(x, "avg_pool3d_backward");
  require_same_shape(expect, dy, "avg_pool3d_backward");
  Tensor5<T> dx(x.shape());
  const int D = dy.depth(), H = dy.height(), W = dy.width();
  const int XH = x.height(), XW = x.width();
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < x.batch(); ++n)
    for (int c = 0; c < x.channels(); ++c) {
      const T* g = dy.plane(n, c);
      T* out = dx.plane(n, c);
      for (int d = 0; d < D; ++d)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            const T v = g[(static_cast<std::size_t>(d) * H + h) * W + w] * T(0.125);
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b) {
                T* r = out + (static_cast<std::size_t>(2 * d + a) * XH + (2 * h + b)) * XW + 2 * w;
                r[0] = v;
                r[1] = v;
              }
          }
    }
  return dx;
}

namespace {

// Offset of the first maximum of the 2x2x2 block at pooled position (d, h, w).
template <typename T>
std::size_t block_argmax(const T* in, int d, int h, int w, int XH, int XW) {
  std::size_t best = (static_cast<std::size_t>(2 * d) * XH + 2 * h) * XW + 2 * w;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c) {
        const std::size_t idx = (static_cast<std::size_t>(2 * d + a) * XH + (2 * h + b)) * XW + 2 * w + c;
        if (in[idx] > in[best]) best = idx;
      }
  return best;
}

}  // namespace

template <typename T>
Tensor5<T> max_pool3d(const Tensor5<T>& x) {
  Tensor5<T> y = spatial_pool_shape(x, "max_pool3d");
  const int D = y.depth(), H = y.height(), W = y.width();
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < x.batch(); ++n)
    for (int c = 0; c < x.channels(); ++c) {
      const T* in = x.plane(n, c);
      T* out = y.plane(n, c);
      for (int d = 0; d < D; ++d)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w)
            out[(static_cast<std::size_t>(d) * H + h) * W + w] = in[block_argmax(in, d, h, w, x.height(), x.width())];
    }
  return y;
}

template <typename T>
Tensor5<T> max_pool3d_backward(const Tensor5<T>& x, const Tensor5<T>& dy) {
  const Tensor5<T> expect = spatial_pool_shape(x, "max_pool3d_backward");
  require_same_shape(expect, dy, "max_pool3d_backward");
  Tensor5<T> dx(x.shape());
  const int D = dy.depth(), H = dy.height(), W = dy.width();
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < x.batch(); ++n)
    for (int c = 0; c < x.channels(); ++c) {
      const T* in = x.plane(n, c);
      const T* g = dy.plane(n, c);
      T* out = dx.plane(n, c);
      for (int d = 0; d < D; ++d)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w)
            out[block_argmax(in, d, h, w, x.height(), x.width())] = g[(static_cast<std::size_t>(d) * H + h) * W + w];
    }
  return dx;
}

// ---------------------------------------------------------------------------
// batch norm

template <typename T>
Tensor5<T> batch_norm3d(const Tensor5<T>& x, BatchNormParams<T>& p, Mode mode, BatchNormCache<T>* cache) {
  require_channels(x, p.channels, "batch_norm3d");
  const int N = x.batch(), C = x.channels();
  const std::size_t S = x.spatial_size();
  const std::size_t M = static_cast<std::size_t>(N) * S;
  if (mode == Mode::train && M < 2)
    throw std::invalid_argument("batch_norm3d: train mode needs at least 2 elements per channel, got " +
                                std::to_string(M));

  Tensor5<T> y(x.shape());
  Tensor5<T> xhat(x.shape());
  std::vector<T> inv_std(static_cast<std::size_t>(C));

#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    double mean = 0, var = 0;
    if (mode == Mode::train) {
      for (int n = 0; n < N; ++n) {
        const T* in = x.plane(n, c);
#pragma omp simd reduction(+ : mean)
        for (std::size_t t = 0; t < S; ++t) mean += in[t];
      }
      mean /= static_cast<double>(M);
      for (int n = 0; n < N; ++n) {
        const T* in = x.plane(n, c);
#pragma omp simd reduction(+ : var)
        for (std::size_t t = 0; t < S; ++t) {
          const double d = in[t] - mean;
          var += d * d;
        }
      }
      const double unbiased = var / static_cast<double>(M - 1);
      var /= static_cast<double>(M);
      p.running_mean[cu] = static_cast<T>((1.0 - p.momentum) * p.running_mean[cu] + p.momentum * mean);
      p.running_var[cu] = static_cast<T>((1.0 - p.momentum) * p.running_var[cu] + p.momentum * unbiased);
    } else {
      mean = p.running_mean[cu];
      var = p.running_var[cu];
    }
    const T istd = static_cast<T>(1.0 / std::sqrt(var + p.eps));
    const T m = static_cast<T>(mean);
    inv_std[cu] = istd;
    const T g = p.gain.value[cu], b = p.shift.value[cu];
    for (int n = 0; n < N; ++n) {
      const T* in = x.plane(n, c);
      T* xh = xhat.plane(n, c);
      T* out = y.plane(n, c);
      for (std::size_t t = 0; t < S; ++t) {
        xh[t] = (in[t] - m) * istd;
        out[t] = g * xh[t] + b;
      }
    }
  }
  if (cache != nullptr) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return y;
}

template <typename T>
Tensor5<T> batch_norm3d_backward(const BatchNormCache<T>& cache, BatchNormParams<T>& p, const Tensor5<T>& dy) {
  require_same_shape(cache.normalized, dy, "batch_norm3d_backward");
  const int N = dy.batch(), C = dy.channels();
  const std::size_t S = dy.spatial_size();
  const double M = static_cast<double>(N) * static_cast<double>(S);
  Tensor5<T> dx(dy.shape());
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < N; ++n) {
      const T* g = dy.plane(n, c);
      const T* xh = cache.normalized.plane(n, c);
#pragma omp simd reduction(+ : sum_dy, sum_dy_xhat)
      for (std::size_t t = 0; t < S; ++t) {
        sum_dy += g[t];
        sum_dy_xhat += static_cast<double>(g[t]) * xh[t];
      }
    }
    p.gain.grad[cu] += static_cast<T>(sum_dy_xhat);
    p.shift.grad[cu] += static_cast<T>(sum_dy);
    const T scale = p.gain.value[cu] * cache.inv_std[cu];
    if (cache.mode == Mode::train) {
      const T mean_dy = static_cast<T>(sum_dy / M);
      const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / M);
      for (int n = 0; n < N; ++n) {
        const T* g = dy.plane(n, c);
        const T* xh = cache.normalized.plane(n, c);
        T* out = dx.plane(n, c);
        for (std::size_t t = 0; t < S; ++t) out[t] = scale * (g[t] - mean_dy - xh[t] * mean_dy_xhat);
      }
    } else {
      for (int n = 0; n < N; ++n) {
        const T* g = dy.plane(n, c);
        T* out = dx.plane(n, c);
        for (std::size_t t = 0; t < S; ++t) out[t] = scale * g[t];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Tensor5<T> relu(const Tensor5<T>& x) {
  Tensor5<T> y(x.shape());
  auto in = x.data();
  auto out = y.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
  return y;
}

template <typename T>
Tensor5<T> relu_backward(const Tensor5<T>& x, const Tensor5<T>& dy) {
  require_same_shape(x, dy, "relu_backward");
  Tensor5<T> dx(x.shape());
  auto in = x.data();
  auto g = dy.data();
  auto out = dx.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? g[i] : T(0);
  return dx;
}

template <typename T>
Tensor5<T> add(const Tensor5<T>& x, const Tensor5<T>& y) {
  require_same_shape(x, y, "add");
  Tensor5<T> z(x.shape());
  auto a = x.data();
  auto b = y.data();
  auto out = z.data();
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return z;
}

template <typename T>
Tensor5<T> concat_channels(const Tensor5<T>& x, const Tensor5<T>& y) {
  if (x.batch() != y.batch() || x.spatial() != y.spatial())
    throw std::invalid_argument("concat_channels: non-channel dims differ " + shape_string(x.shape()) + " vs " +
                                shape_string(y.shape()));
  Tensor5<T> z({x.batch(), x.channels() + y.channels(), x.depth(), x.height(), x.width()});
  const std::size_t S = x.spatial_size();
  for (int n = 0; n < x.batch(); ++n) {
    for (int c = 0; c < x.channels(); ++c) std::copy(x.plane(n, c), x.plane(n, c) + S, z.plane(n, c));
    for (int c = 0; c < y.channels(); ++c) std::copy(y.plane(n, c), y.plane(n, c) + S, z.plane(n, x.channels() + c));
  }
  return z;
}

template <typename T>
std::pair<Tensor5<T>, Tensor5<T>> split_channels(const Tensor5<T>& x, int n_first) {
  if (n_first < 0 || n_first > x.channels())
    throw std::invalid_argument("split_channels: split index " + std::to_string(n_first) + " out of range");
  Tensor5<T> a({x.batch(), n_first, x.depth(), x.height(), x.width()});
  Tensor5<T> b({x.batch(), x.channels() - n_first, x.depth(), x.height(), x.width()});
  const std::size_t S = x.spatial_size();
  for (int n = 0; n < x.batch(); ++n) {
    for (int c = 0; c < n_first; ++c) std::copy(x.plane(n, c), x.plane(n, c) + S, a.plane(n, c));
    for (int c = n_first; c < x.channels(); ++c) std::copy(x.plane(n, c), x.plane(n, c) + S, b.plane(n, c - n_first));
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
double l2_loss(const Tensor5<T>& pred, const Tensor5<T>& label) {
  require_same_shape(pred, label, "l2_loss");
  if (pred.batch() < 1) throw std::invalid_argument("l2_loss: empty batch");
  auto a = pred.data();
  auto b = label.data();
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s / (2.0 * pred.batch());
}

template <typename T>
Tensor5<T> l2_loss_grad(const Tensor5<T>& pred, const Tensor5<T>& label) {
  require_same_shape(pred, label, "l2_loss_grad");
  if (pred.batch() < 1) throw std::invalid_argument("l2_loss_grad: empty batch");
  Tensor5<T> g(pred.shape());
  const T inv_n = T(1) / static_cast<T>(pred.batch());
  auto a = pred.data();
  auto b = label.data();
  auto out = g.data();
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] - b[i]) * inv_n;
  return g;
}

#define OCTQSM_INSTANTIATE_LAYERS(T)                                                                        \
  template struct Param<T>;                                                                                 \
  template struct ConvParams<T>;                                                                            \
  template struct BatchNormParams<T>;                                                                       \
  template Tensor5<T> conv3d(const Tensor5<T>&, const ConvParams<T>&);                                      \
  template Tensor5<T> conv3d_backward(const Tensor5<T>&, ConvParams<T>&, const Tensor5<T>&);                \
  template Tensor5<T> conv_transpose3d(const Tensor5<T>&, const ConvParams<T>&);                            \
  template Tensor5<T> conv_transpose3d_backward(const Tensor5<T>&, ConvParams<T>&, const Tensor5<T>&);      \
  template Tensor5<T> avg_pool3d(const Tensor5<T>&);                                                        \
  template Tensor5<T> avg_pool3d_backward(const Tensor5<T>&, const Tensor5<T>&);                            \
  template Tensor5<T> max_pool3d(const Tensor5<T>&);                                                        \
  template Tensor5<T> max_pool3d_backward(const Tensor5<T>&, const Tensor5<T>&);                            \
  template Tensor5<T> batch_norm3d(const Tensor5<T>&, BatchNormParams<T>&, Mode, BatchNormCache<T>*);       \
  template Tensor5<T> batch_norm3d_backward(const BatchNormCache<T>&, BatchNormParams<T>&, const Tensor5<T>&); \
  template Tensor5<T> relu(const Tensor5<T>&);                                                              \
  template Tensor5<T> relu_backward(const Tensor5<T>&, const Tensor5<T>&);                                  \
  template Tensor5<T> add(const Tensor5<T>&, const Tensor5<T>&);                                            \
  template Tensor5<T> concat_channels(const Tensor5<T>&, const Tensor5<T>&);                                \
  template std::pair<Tensor5<T>, Tensor5<T>> split_channels(const Tensor5<T>&, int);                        \
  template double l2_loss(const Tensor5<T>&, const Tensor5<T>&);                                            \
  template Tensor5<T> l2_loss_grad(const Tensor5<T>&, const Tensor5<T>&);

OCTQSM_INSTANTIATE_LAYERS(float)
OCTQSM_INSTANTIATE_LAYERS(double)

}  // namespace octqsm::nn
