#include "pf/diffcore/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "pf/diffcore/parallel.hpp"

namespace pf {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;

struct OpName {
  LayerOp op;
  std::string_view name;
};

constexpr OpName kOpNames[] = {
    {LayerOp::conv2d, "conv2d"},
    {LayerOp::separable_conv2d, "separable_conv2d"},
    {LayerOp::maxpool2d, "maxpool2d"},
    {LayerOp::batchnorm2d, "batchnorm2d"},
    {LayerOp::relu, "relu"},
    {LayerOp::residual_add, "residual_add"},
    {LayerOp::pointwise_conv, "pointwise_conv"},
    {LayerOp::leaky_relu, "leaky_relu"},
    {LayerOp::sigmoid, "sigmoid"},
    {LayerOp::upsample_nearest, "upsample_nearest"},
    {LayerOp::dense, "dense"},
};

constexpr double kLeakySlope = 0.2;

void require_rank4(const Shape& s, const LayerKind& kind) {
  if (s.size() != 4)
    throw StructuralError(std::string(to_string(kind.op)) + " expects NCHW input, got " + shape_str(s));
}

void require_channels(const Shape& s, int ch, const LayerKind& kind) {
  require_rank4(s, kind);
  if (s[1] != static_cast<std::size_t>(ch))
    throw StructuralError(kind.describe() + " expects " + std::to_string(ch) + " input channels, got " +
                          shape_str(s));
}

// Fan-in Kaiming-uniform (ReLU gain): U(-sqrt(6/fan_in), sqrt(6/fan_in)).
template <typename T>
void kaiming_uniform(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

// Shapes a layer output that the caller overwrites completely. Storage is kept
// across calls with an unchanged shape; fresh large allocations fault in page
// by page and dominate the cost of the cheap layers.
template <typename T>
void prepare(Tensor<T>& out, const Shape& shape) {
  if (out.shape() != shape) out = Tensor<T>(shape);
}

// Sum in double with eight interleaved partial sums, combined in a fixed order.
template <typename T>
double ordered_sum(const T* p, std::size_t n) {
  double acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int j = 0; j < 8; ++j) acc[j] += static_cast<double>(p[i + j]);
  for (; i < n; ++i) acc[i % 8] += static_cast<double>(p[i]);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// ---------------------------------------------------------------------------
// im2col helpers for one image [C, H, W] -> [C*K*K, OH*OW].

template <typename T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, int K, int S, int P, std::size_t OH,
            std::size_t OW, T* col) {
  const std::size_t ohw = OH * OW;
  for (std::size_t c = 0; c < C; ++c) {
    for (int kh = 0; kh < K; ++kh) {
      for (int kw = 0; kw < K; ++kw) {
        T* row = col + ((c * K + kh) * K + kw) * ohw;
        for (std::size_t oh = 0; oh < OH; ++oh) {
          const long ih = static_cast<long>(oh) * S + kh - P;
          T* dst = row + oh * OW;
          if (ih < 0 || ih >= static_cast<long>(H)) {
            std::fill(dst, dst + OW, T(0));
            continue;
          }
          const T* src = x + (c * H + static_cast<std::size_t>(ih)) * W;
          for (std::size_t ow = 0; ow < OW; ++ow) {
            const long iw = static_cast<long>(ow) * S + kw - P;
            dst[ow] = (iw < 0 || iw >= static_cast<long>(W)) ? T(0) : src[iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t C, std::size_t H, std::size_t W, int K, int S, int P, std::size_t OH,
                std::size_t OW, T* dx) {
  const std::size_t ohw = OH * OW;
  for (std::size_t c = 0; c < C; ++c) {
    for (int kh = 0; kh < K; ++kh) {
      for (int kw = 0; kw < K; ++kw) {
        const T* row = col + ((c * K + kh) * K + kw) * ohw;
        for (std::size_t oh = 0; oh < OH; ++oh) {
          const long ih = static_cast<long>(oh) * S + kh - P;
          if (ih < 0 || ih >= static_cast<long>(H)) continue;
          T* dst = dx + (c * H + static_cast<std::size_t>(ih)) * W;
          const T* src = row + oh * OW;
          for (std::size_t ow = 0; ow < OW; ++ow) {
            const long iw = static_cast<long>(ow) * S + kw - P;
            if (iw >= 0 && iw < static_cast<long>(W)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

// Sums per-image weight-gradient contributions in image order. Each image's
// product is formed in its own buffer before being added, so the result is
// the same for any worker count.
template <typename T, typename Fn>
void ordered_weight_grad(std::size_t batch, std::size_t len, T* accum, Fn&& per_image) {
  const auto chunk = static_cast<std::size_t>(std::max(1, num_threads()));
  std::vector<std::vector<T>> bufs(std::min(chunk, batch), std::vector<T>(len));
  for (std::size_t base = 0; base < batch; base += chunk) {
    const std::size_t count = std::min(chunk, batch - base);
    parallel_for(count, [&](std::size_t i) { per_image(base + i, bufs[i].data()); });
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t j = 0; j < len; ++j) accum[j] += bufs[i][j];
  }
}

// ---------------------------------------------------------------------------
// Dense convolution via explicit patch-matrix multiplication.

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  explicit Conv2d(const LayerKind& k) : Layer<T>(k) {
    weight_ = Tensor<T>({size_t(k.out_ch), size_t(k.in_ch), size_t(k.kernel), size_t(k.kernel)});
    weight_.set_requires_grad(true);
    if (k.bias) {
      bias_ = Tensor<T>({size_t(k.out_ch)});
      bias_.set_requires_grad(true);
    }
  }

  Shape output_shape(const std::vector<Shape>& in) const override {
    const auto& k = this->kind();
    require_channels(in[0], k.in_ch, k);
    const auto oh = out_size(in[0][2]);
    const auto ow = out_size(in[0][3]);
    return {in[0][0], size_t(k.out_ch), oh, ow};
  }

  void forward(const std::vector<const Tensor<T>*>& in, Tensor<T>& out, bool) override {
    const auto& k = this->kind();
    const Tensor<T>& x = *in[0];
    prepare(out, output_shape({x.shape()}));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OH = out.dim(2), OW = out.dim(3), OC = out.dim(1);
    const std::size_t ckk = C * k.kernel * k.kernel, ohw = OH * OW;
    CMatMap<T> wm(weight_.data(), OC, ckk);
    parallel_for(N, [&](std::size_t n) {
      const T* xn = x.data() + n * C * H * W;
      MatMap<T> on(out.data() + n * OC * ohw, OC, ohw);
      if (direct()) {
        on.noalias() = wm * CMatMap<T>(xn, C, ohw);
      } else {
        std::vector<T> col(ckk * ohw);
        im2col(xn, C, H, W, k.kernel, k.stride, k.pad, OH, OW, col.data());
        on.noalias() = wm * CMatMap<T>(col.data(), ckk, ohw);
      }
      if (k.bias)
        for (std::size_t o = 0; o < OC; ++o) on.row(o).array() += bias_[o];
    });
  }

  void backward(const std::vector<const Tensor<T>*>& in, const Tensor<T>& out, const Tensor<T>& dout,
                const std::vector<Tensor<T>*>& din) override {
    const auto& k = this->kind();
    const Tensor<T>& x = *in[0];
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OH = out.dim(2), OW = out.dim(3), OC = out.dim(1);
    const std::size_t ckk = C * k.kernel * k.kernel, ohw = OH * OW;
    CMatMap<T> wm(weight_.data(), OC, ckk);

    if (weight_.requires_grad()) {
      ordered_weight_grad<T>(N, OC * ckk, weight_.grad().data(), [&](std::size_t n, T* buf) {
        CMatMap<T> dy(dout.data() + n * OC * ohw, OC, ohw);
        MatMap<T> dw(buf, OC, ckk);
        const T* xn = x.data() + n * C * H * W;
        if (direct()) {
          dw.noalias() = dy * CMatMap<T>(xn, C, ohw).transpose();
        } else {
          std::vector<T> col(ckk * ohw);
          im2col(xn, C, H, W, k.kernel, k.stride, k.pad, OH, OW, col.data());
          dw.noalias() = dy * CMatMap<T>(col.data(), ckk, ohw).transpose();
        }
      });
    }
    if (k.bias && bias_.requires_grad()) {
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < OC; ++o) {
          const T* dy = dout.data() + (n * OC + o) * ohw;
          T s = 0;
          for (std::size_t i = 0; i < ohw; ++i) s += dy[i];
          bias_.grad()[o] += s;
        }
    }
    if (din[0]) {
      Tensor<T>& dx = *din[0];
      parallel_for(N, [&](std::size_t n) {
        CMatMap<T> dy(dout.data() + n * OC * ohw, OC, ohw);
        T* dxn = dx.data() + n * C * H * W;
        if (direct()) {
          MatMap<T>(dxn, C, ohw).noalias() += wm.transpose() * dy;
        } else {
          std::vector<T> col(ckk * ohw);
          MatMap<T>(col.data(), ckk, ohw).noalias() = wm.transpose() * dy;
          col2im_add(col.data(), C, H, W, k.kernel, k.stride, k.pad, OH, OW, dxn);
        }
      });
    }
  }

  std::vector<NamedTensor<T>> parameters() override {
    std::vector<NamedTensor<T>> p{{"weight", &weight_}};
    if (this->kind().bias) p.push_back({"bias", &bias_});
    return p;
  }

  void initialize(Rng& rng) override {
    const auto& k = this->kind();
    kaiming_uniform(weight_, static_cast<std::size_t>(k.in_ch) * k.kernel * k.kernel, rng);
    if (k.bias) bias_.fill(T(0));
  }

 private:
  bool direct() const {
    const auto& k = this->kind();
    return k.kernel == 1 && k.stride == 1 && k.pad == 0;
  }
  std::size_t out_size(std::size_t in) const {
    const auto& k = this->kind();
    return conv_out_size(in, k.kernel, k.stride, k.pad);
  }

  Tensor<T> weight_;
  Tensor<T> bias_;
};

// ---------------------------------------------------------------------------
// Depthwise k x k followed by pointwise 1 x 1, no nonlinearity in between.

template <typename T>
class SeparableConv2d final : public Layer<T> {
 public:
  explicit SeparableConv2d(const LayerKind& k)
      : Layer<T>(k), pointwise_(LayerKind::pointwise_conv(k.in_ch, k.out_ch, k.bias)) {
    depthwise_ = Tensor<T>({size_t(k.in_ch), 1, size_t(k.kernel), size_t(k.kernel)});
    depthwise_.set_requires_grad(true);
  }

  Shape output_shape(const std::vector<Shape>& in) const override {
    const auto& k = this->kind();
    require_channels(in[0], k.in_ch, k);
    return {in[0][0], size_t(k.out_ch), conv_out_size(in[0][2], k.kernel, k.stride, k.pad),
            conv_out_size(in[0][3], k.kernel, k.stride, k.pad)};
  }

  void forward(const std::vector<const Tensor<T>*>& in, Tensor<T>& out, bool training) override {
    const auto& k = this->kind();
    const Tensor<T>& x = *in[0];
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OH = conv_out_size(H, k.kernel, k.stride, k.pad);
    const std::size_t OW = conv_out_size(W, k.kernel, k.stride, k.pad);
    prepare(mid_, {N, C, OH, OW});
    parallel_for(N * C, [&](std::size_t nc) {
      const std::size_t c = nc % C;
      depthwise_plane(x.data() + nc * H * W, H, W, depthwise_.data() + c * k.kernel * k.kernel,
                      mid_.data() + nc * OH * OW, OH, OW);
    });
    pointwise_.forward({&mid_}, out, training);
  }

  void backward(const std::vector<const Tensor<T>*>& in, const Tensor<T>& out, const Tensor<T>& dout,
                const std::vector<Tensor<T>*>& din) override {
    const auto& k = this->kind();
    const Tensor<T>& x = *in[0];
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OH = mid_.dim(2), OW = mid_.dim(3);
    prepare(dmid_, mid_.shape());
    dmid_.fill(T(0));
    Tensor<T>& dmid = dmid_;
    pointwise_.backward({&mid_}, out, dout, {&dmid});
    const std::size_t kk = static_cast<std::size_t>(k.kernel) * k.kernel;
    if (depthwise_.requires_grad()) {
      parallel_for(C, [&](std::size_t c) {
        T* dw = depthwise_.grad().data() + c * kk;
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t nc = n * C + c;
          depthwise_weight_grad(x.data() + nc * H * W, H, W, dmid.data() + nc * OH * OW, OH, OW, dw);
        }
      });
    }
    if (din[0]) {
      parallel_for(N * C, [&](std::size_t nc) {
        const std::size_t c = nc % C;
        depthwise_input_grad(dmid.data() + nc * OH * OW, OH, OW, depthwise_.data() + c * kk,
                             din[0]->data() + nc * H * W, H, W);
      });
    }
  }

  std::vector<NamedTensor<T>> parameters() override {
    std::vector<NamedTensor<T>> p{{"depthwise.weight", &depthwise_}};
    for (auto& q : pointwise_.parameters()) p.push_back({"pointwise." + q.name, q.tensor});
    return p;
  }

  void initialize(Rng& rng) override {
    const auto& k = this->kind();
    kaiming_uniform(depthwise_, static_cast<std::size_t>(k.kernel) * k.kernel, rng);
    pointwise_.initialize(rng);
  }

 private:
  // Calls fn(tap, oh, ow_lo, ow_hi, ih, iw_lo) for every output row segment
  // whose taps land inside the input; iw advances by the stride along ow.
  template <typename Fn>
  void for_rows(std::size_t H, std::size_t W, std::size_t OH, std::size_t OW, Fn&& fn) const {
    const auto& k = this->kind();
    const long S = k.stride, P = k.pad;
    for (int kh = 0; kh < k.kernel; ++kh) {
      for (int kw = 0; kw < k.kernel; ++kw) {
        const long off = kw - P;
        // ow*S + off in [0, W)
        const long lo = off >= 0 ? 0 : (-off + S - 1) / S;
        const long hi = std::min<long>(static_cast<long>(OW), (static_cast<long>(W) - 1 - off) / S + 1);
        if (hi <= lo) continue;
        for (std::size_t oh = 0; oh < OH; ++oh) {
          const long ih = static_cast<long>(oh) * S + kh - P;
          if (ih < 0 || ih >= static_cast<long>(H)) continue;
          fn(static_cast<std::size_t>(kh * k.kernel + kw), oh, lo, hi, static_cast<std::size_t>(ih), lo * S + off);
        }
      }
    }
  }

  void depthwise_plane(const T* x, std::size_t H, std::size_t W, const T* w, T* y, std::size_t OH,
                       std::size_t OW) const {
    std::fill(y, y + OH * OW, T(0));
    const long S = this->kind().stride;
    for_rows(H, W, OH, OW, [&](std::size_t t, std::size_t oh, long lo, long hi, std::size_t ih, long iw) {
      const T wt = w[t];
      T* __restrict yr = y + oh * OW;
      const T* __restrict xr = x + ih * W + iw;
      if (S == 1)
        for (long o = lo; o < hi; ++o) yr[o] += wt * xr[o - lo];
      else
        for (long o = lo; o < hi; ++o) yr[o] += wt * xr[(o - lo) * S];
    });
  }
  void depthwise_weight_grad(const T* x, std::size_t H, std::size_t W, const T* dy, std::size_t OH,
                             std::size_t OW, T* dw) const {
    // Products accumulate column-wise per tap, then each tap row is summed once.
    const long S = this->kind().stride;
    const std::size_t kk = static_cast<std::size_t>(this->kind().kernel) * this->kind().kernel;
    thread_local std::vector<T> rows;
    rows.assign(kk * OW, T(0));
    for_rows(H, W, OH, OW, [&](std::size_t t, std::size_t oh, long lo, long hi, std::size_t ih, long iw) {
      const T* __restrict dr = dy + oh * OW;
      const T* __restrict xr = x + ih * W + iw;
      T* __restrict acc = rows.data() + t * OW;
      if (S == 1)
        for (long o = lo; o < hi; ++o) acc[o] += dr[o] * xr[o - lo];
      else
        for (long o = lo; o < hi; ++o) acc[o] += dr[o] * xr[(o - lo) * S];
    });
    for (std::size_t t = 0; t < kk; ++t) {
      T sum = 0;
      for (std::size_t o = 0; o < OW; ++o) sum += rows[t * OW + o];
      dw[t] += sum;
    }
  }
  void depthwise_input_grad(const T* dy, std::size_t OH, std::size_t OW, const T* w, T* dx, std::size_t H,
                            std::size_t W) const {
    const long S = this->kind().stride;
    for_rows(H, W, OH, OW, [&](std::size_t t, std::size_t oh, long lo, long hi, std::size_t ih, long iw) {
      const T wt = w[t];
      const T* __restrict dr = dy + oh * OW;
      T* __restrict xr = dx + ih * W + iw;
      if (S == 1)
        for (long o = lo; o < hi; ++o) xr[o - lo] += wt * dr[o];
      else
        for (long o = lo; o < hi; ++o) xr[(o - lo) * S] += wt * dr[o];
    });
  }

  Tensor<T> depthwise_;
  Conv2d<T> pointwise_;
  Tensor<T> mid_, dmid_;
};

// ---------------------------------------------------------------------------

template <typename T>
class MaxPool2d final : public Layer<T> {
 public:
  using Layer<T>::Layer;

  Shape output_shape(const std::vector<Shape>& in) const override {
    const auto& k = this->kind();
    require_rank4(in[0], k);
    return {in[0][0], in[0][1], conv_out_size(in[0][2], k.kernel, k.stride, k.pad),
            conv_out_size(in[0][3], k.kernel, k.stride, k.pad)};
  }

  void forward(const std::vector<const Tensor<T>*>& in, Tensor<T>& out, bool) override {
    const auto& k = this->kind();
    const Tensor<T>& x = *in[0];
    prepare(out, output_shape({x.shape()}));
    const std::size_t H = x.dim(2), W = x.dim(3), OH = out.dim(2), OW = out.dim(3);
    const std::size_t planes = x.dim(0) * x.dim(1);
    argmax_.resize(out.size());
    const long K = k.kernel, S = k.stride, P = k.pad;
    parallel_for(planes, [&](std::size_t p) {
      const T* xp = x.data() + p * H * W;
      T* yp = out.data() + p * OH * OW;
      std::uint32_t* ap = argmax_.data() + p * OH * OW;
      for (std::size_t oh = 0; oh < OH; ++oh) {
        const long h0 = std::max<long>(0, long(oh) * S - P), h1 = std::min<long>(long(H), long(oh) * S - P + K);
        for (std::size_t ow = 0; ow < OW; ++ow) {
          const long w0 = std::max<long>(0, long(ow) * S - P), w1 = std::min<long>(long(W), long(ow) * S - P + K);
          if (h0 >= h1 || w0 >= w1) {  // window lies entirely in the padding
            yp[oh * OW + ow] = -std::numeric_limits<T>::infinity();
            ap[oh * OW + ow] = kNoArg;
            continue;
          }
          std::size_t arg = std::size_t(h0) * W + std::size_t(w0);
          T best = xp[arg];
          for (long ih = h0; ih < h1; ++ih)
            for (long iw = w0; iw < w1; ++iw) {
              const std::size_t idx = std::size_t(ih) * W + std::size_t(iw);
              const bool gt = xp[idx] > best;  // kept branch-free: the outcome is data dependent
              best = gt ? xp[idx] : best;
              arg = gt ? idx : arg;
            }
          yp[oh * OW + ow] = best;
          ap[oh * OW + ow] = static_cast<std::uint32_t>(arg);
        }
      }
    });
  }

  void backward(const std::vector<const Tensor<T>*>& in, const Tensor<T>& out, const Tensor<T>& dout,
                const std::vector<Tensor<T>*>& din) override {
    if (!din[0]) return;
    const std::size_t hw = in[0]->dim(2) * in[0]->dim(3), ohw = out.dim(2) * out.dim(3);
    const std::size_t planes = out.size() / std::max<std::size_t>(ohw, 1);
    parallel_for(planes, [&](std::size_t p) {
      T* dx = din[0]->data() + p * hw;
      const T* dy = dout.data() + p * ohw;
      const std::uint32_t* ap = argmax_.data() + p * ohw;
      for (std::size_t o = 0; o < ohw; ++o)
        if (ap[o] != kNoArg) dx[ap[o]] += dy[o];
    });
  }

 private:
  static constexpr std::uint32_t kNoArg = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> argmax_;  // within-plane offsets
};

// ---------------------------------------------------------------------------
// Training mode normalizes with batch statistics (biased variance) and updates
// running statistics with momentum 0.1 (unbiased variance); evaluation mode
// normalizes with the running statistics.

template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  explicit BatchNorm2d(const LayerKind& k) : Layer<T>(k) {
    const auto c = static_cast<std::size_t>(k.in_ch);
    gamma_ = Tensor<T>({c}, T(1));
    beta_ = Tensor<T>({c}, T(0));
    gamma_.set_requires_grad(true);
    beta_.set_requires_grad(true);
    running_mean_ = Tensor<T>({c}, T(0));
    running_var_ = Tensor<T>({c}, T(1));
  }

  Shape output_shape(const std::vector<Shape>& in) const override {
    require_channels(in[0], this->kind().in_ch, this->kind());
    return in[0];
  }

  void forward(const std::vector<const Tensor<T>*>& in, Tensor<T>& out, bool training) override {
    const Tensor<T>& x = *in[0];
    output_shape({x.shape()});
    prepare(out, x.shape());
    prepare(xhat_, x.shape());
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    training_ = training;
    inv_std_.assign(C, 0.0);
    parallel_for(C, [&](std::size_t c) {
      double mean, var;
      if (training) {
        double s = 0;
        for (std::size_t n = 0; n < N; ++n) s += ordered_sum(x.data() + (n * C + c) * HW, HW);
        const double count = static_cast<double>(N * HW);
        mean = s / count;
        double ss = 0;
        std::vector<double> sq(HW);
        for (std::size_t n = 0; n < N; ++n) {
          const T* p = x.data() + (n * C + c) * HW;
          for (std::size_t i = 0; i < HW; ++i) sq[i] = (p[i] - mean) * (p[i] - mean);
          ss += ordered_sum(sq.data(), HW);
        }
        var = ss / count;
        const double unbiased = count > 1 ? ss / (count - 1) : var;
        running_mean_[c] = static_cast<T>((1 - kMomentum) * running_mean_[c] + kMomentum * mean);
        running_var_[c] = static_cast<T>((1 - kMomentum) * running_var_[c] + kMomentum * unbiased);
      } else {
        mean = running_mean_[c];
        var = running_var_[c];
      }
      const double inv = 1.0 / std::sqrt(var + kEps);
      inv_std_[c] = inv;
      const T g = gamma_[c], b = beta_[c];
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t off = (n * C + c) * HW;
        const T* __restrict xp = x.data() + off;
        T* __restrict hp = xhat_.data() + off;
        T* __restrict yp = out.data() + off;
        for (std::size_t i = 0; i < HW; ++i) {
          const T xh = static_cast<T>((xp[i] - mean) * inv);
          hp[i] = xh;
          yp[i] = g * xh + b;
        }
      }
    });
  }

  void backward(const std::vector<const Tensor<T>*>& in, const Tensor<T>&, const Tensor<T>& dout,
                const std::vector<Tensor<T>*>& din) override {
    const Tensor<T>& x = *in[0];
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    const double count = static_cast<double>(N * HW);
    parallel_for(C, [&](std::size_t c) {
      double sum_dy = 0, sum_dy_xhat = 0;
      std::vector<T> prod(HW);
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t off = (n * C + c) * HW;
        const T* dy = dout.data() + off;
        const T* hp = xhat_.data() + off;
        sum_dy += ordered_sum(dy, HW);
        for (std::size_t i = 0; i < HW; ++i) prod[i] = dy[i] * hp[i];
        sum_dy_xhat += ordered_sum(prod.data(), HW);
      }
      if (gamma_.requires_grad()) gamma_.grad()[c] += static_cast<T>(sum_dy_xhat);
      if (beta_.requires_grad()) beta_.grad()[c] += static_cast<T>(sum_dy);
      if (!din[0]) return;
      const double g = gamma_[c] * inv_std_[c];
      const T mean_dy = static_cast<T>(training_ ? sum_dy / count : 0.0);
      const T mean_dy_xhat = static_cast<T>(training_ ? sum_dy_xhat / count : 0.0);
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t off = (n * C + c) * HW;
        const T* __restrict dy = dout.data() + off;
        const T* __restrict hp = xhat_.data() + off;
        T* __restrict dx = din[0]->data() + off;
        for (std::size_t i = 0; i < HW; ++i)
          dx[i] += static_cast<T>(g * static_cast<double>(dy[i] - mean_dy - hp[i] * mean_dy_xhat));
      }
    });
  }

  std::vector<NamedTensor<T>> parameters() override { return {{"weight", &gamma_}, {"bias", &beta_}}; }
  std::vector<NamedTensor<T>> buffers() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
  }

 private:
  Tensor<T> gamma_, beta_, running_mean_, running_var_;
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
  bool training_ = true;
};

// ---------------------------------------------------------------------------
// Elementwise primitives.

template <typename T>
class Relu final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  Shape output_shape(const std::vector<Shape>& in) const override { return in[0]; }
  void forward(const std::vector<const Tensor<T>*>& in, Tensor<T>& out, bool) override {
    prepare(out, in[0]->shape());
    const auto slope = static_cast<T>(leaky() ? kLeakySlope : 0.0);
    const T* __restrict x = in[0]->data();
    T* __restrict y = out.data();
    // max/min form instead of a select so the loop vectorizes without branches.
    for (std::size_t i = 0, n = out.size(); i < n; ++i) y[i] = std::max(x[i], T(0)) + slope * std::min(x[i], T(0));
  }
  // Subgradient at exactly zero is taken from the negative side.
  void backward(const std::vector<const Tensor<T>*>& in, const Tensor<T>&, const Tensor<T>& dout,
                const std::vector<Tensor<T>*>& din) override {
    if (!din[0]) return;
    const auto slope = static_cast<T>(leaky() ? kLeakySlope : 0.0);
    const T* __restrict x = in[0]->data();
    const T* __restrict dy = dout.data();
    T* __restrict dx = din[0]->data();
    for (std::size_t i = 0, n = dout.size(); i < n; ++i) {
      const T m = x[i] > T(0) ? T(1) : slope;
      dx[i] += m * dy[i];
    }
  }

 private:
  bool leaky() const { return this->kind().op == LayerOp::leaky_relu; }
};

template <typename T>
class Sigmoid final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  Shape output_shape(const std::vector<Shape>& in) const override { return in[0]; }
  void forward(const std::vector<const Tensor<T>*>& in, Tensor<T>& out, bool) override {
    prepare(out, in[0]->shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const T v = (*in[0])[i];
      // Split by sign so exp never overflows.
      if (v >= T(0)) {
        out[i] = T(1) / (T(1) + std::exp(-v));
      } else {
        const T e = std::exp(v);
        out[i] = e / (T(1) + e);
      }
    }
  }
  void backward(const std::vector<const Tensor<T>*>&, const Tensor<T>& out, const Tensor<T>& dout,
                const std::vector<Tensor<T>*>& din) override {
    if (!din[0]) return;
    const T* __restrict y = out.data();
    const T* __restrict dy = dout.data();
    T* __restrict dx = din[0]->data();
    for (std::size_t i = 0, n = dout.size(); i < n; ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
  }
};

template <typename T>
class ResidualAdd final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  std::size_t arity() const override { return 2; }
  Shape output_shape(const std::vector<Shape>& in) const override {
    if (in.size() != 2 || in[0] != in[1])
      throw StructuralError("residual_add operands differ: " + shape_str(in[0]) + " vs " +
                            shape_str(in.size() > 1 ? in[1] : Shape{}));
    return in[0];
  }
  void forward(const std::vector<const Tensor<T>*>& in, Tensor<T>& out, bool) override {
    prepare(out, output_shape({in[0]->shape(), in[1]->shape()}));
    const T* __restrict a = in[0]->data();
    const T* __restrict b = in[1]->data();
    T* __restrict y = out.data();
    for (std::size_t i = 0, n = out.size(); i < n; ++i) y[i] = a[i] + b[i];
  }
  void backward(const std::vector<const Tensor<T>*>&, const Tensor<T>&, const Tensor<T>& dout,
                const std::vector<Tensor<T>*>& din) override {
    for (Tensor<T>* d : din)
      if (d) {
        const T* __restrict dy = dout.data();
        T* __restrict dx = d->data();
        for (std::size_t i = 0, n = dout.size(); i < n; ++i) dx[i] += dy[i];
      }
  }
};

template <typename T>
class UpsampleNearest final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  Shape output_shape(const std::vector<Shape>& in) const override {
    require_rank4(in[0], this->kind());
    const auto f = static_cast<std::size_t>(this->kind().stride);
    return {in[0][0], in[0][1], in[0][2] * f, in[0][3] * f};
  }
  void forward(const std::vector<const Tensor<T>*>& in, Tensor<T>& out, bool) override {
    const Tensor<T>& x = *in[0];
    prepare(out, output_shape({x.shape()}));
    const auto f = static_cast<std::size_t>(this->kind().stride);
    const std::size_t H = x.dim(2), W = x.dim(3), OH = out.dim(2), OW = out.dim(3);
    for (std::size_t p = 0; p < x.dim(0) * x.dim(1); ++p)
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow)
          out[(p * OH + oh) * OW + ow] = x[(p * H + oh / f) * W + ow / f];
  }
  void backward(const std::vector<const Tensor<T>*>& in, const Tensor<T>& out, const Tensor<T>& dout,
                const std::vector<Tensor<T>*>& din) override {
    if (!din[0]) return;
    const auto f = static_cast<std::size_t>(this->kind().stride);
    const std::size_t H = in[0]->dim(2), W = in[0]->dim(3), OH = out.dim(2), OW = out.dim(3);
    for (std::size_t p = 0; p < in[0]->dim(0) * in[0]->dim(1); ++p)
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow)
          (*din[0])[(p * H + oh / f) * W + ow / f] += dout[(p * OH + oh) * OW + ow];
  }
};

// Fully connected map from a flattened sample to an out_ch x out_h x out_w map.
template <typename T>
class Dense final : public Layer<T> {
 public:
  explicit Dense(const LayerKind& k) : Layer<T>(k) {
    weight_ = Tensor<T>({out_features(), size_t(k.in_ch)});
    weight_.set_requires_grad(true);
    if (k.bias) {
      bias_ = Tensor<T>({out_features()});
      bias_.set_requires_grad(true);
    }
  }
  Shape output_shape(const std::vector<Shape>& in) const override {
    const auto& k = this->kind();
    if (in[0].empty() || shape_numel(in[0]) != in[0][0] * static_cast<std::size_t>(k.in_ch))
      throw StructuralError(k.describe() + " cannot take input " + shape_str(in[0]));
    return {in[0][0], size_t(k.out_ch), size_t(k.out_h), size_t(k.out_w)};
  }
  void forward(const std::vector<const Tensor<T>*>& in, Tensor<T>& out, bool) override {
    const Tensor<T>& x = *in[0];
    prepare(out, output_shape({x.shape()}));
    const std::size_t N = x.dim(0), F = static_cast<std::size_t>(this->kind().in_ch), O = out_features();
    MatMap<T> y(out.data(), N, O);
    y.noalias() = CMatMap<T>(x.data(), N, F) * CMatMap<T>(weight_.data(), O, F).transpose();
    if (this->kind().bias)
      for (std::size_t n = 0; n < N; ++n) y.row(n) += CMatMap<T>(bias_.data(), 1, O);
  }
  void backward(const std::vector<const Tensor<T>*>& in, const Tensor<T>&, const Tensor<T>& dout,
                const std::vector<Tensor<T>*>& din) override {
    const Tensor<T>& x = *in[0];
    const std::size_t N = x.dim(0), F = static_cast<std::size_t>(this->kind().in_ch), O = out_features();
    CMatMap<T> dy(dout.data(), N, O);
    if (weight_.requires_grad()) {
      RowMat<T> dw = dy.transpose() * CMatMap<T>(x.data(), N, F);
      MatMap<T>(weight_.grad().data(), O, F) += dw;
    }
    if (this->kind().bias && bias_.requires_grad())
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o) bias_.grad()[o] += dy(n, o);
    if (din[0]) {
      RowMat<T> dx = dy * CMatMap<T>(weight_.data(), O, F);
      MatMap<T>(din[0]->data(), N, F) += dx;
    }
  }
  std::vector<NamedTensor<T>> parameters() override {
    std::vector<NamedTensor<T>> p{{"weight", &weight_}};
    if (this->kind().bias) p.push_back({"bias", &bias_});
    return p;
  }
  void initialize(Rng& rng) override {
    kaiming_uniform(weight_, static_cast<std::size_t>(this->kind().in_ch), rng);
    if (this->kind().bias) bias_.fill(T(0));
  }

 private:
  std::size_t out_features() const {
    const auto& k = this->kind();
    return static_cast<std::size_t>(k.out_ch) * k.out_h * k.out_w;
  }
  Tensor<T> weight_, bias_;
};

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(LayerOp op) {
  for (const auto& e : kOpNames)
    if (e.op == op) return e.name;
  return "unknown";
}

LayerOp layer_op_from_string(std::string_view name) {
  for (const auto& e : kOpNames)
    if (e.name == name) return e.op;
  throw ConfigError("unknown layer op '" + std::string(name) + "'");
}

std::size_t conv_out_size(std::size_t in, int k, int s, int pad) {
  const long span = static_cast<long>(in) + 2L * pad - k;
  if (span < 0)
    throw StructuralError("window of size " + std::to_string(k) + " does not fit input of size " +
                          std::to_string(in) + " with padding " + std::to_string(pad));
  return static_cast<std::size_t>(span / s + 1);
}

LayerKind LayerKind::conv2d(int k, int s, int pad, int in_ch, int out_ch, bool bias) {
  return {LayerOp::conv2d, k, s, pad, in_ch, out_ch, bias};
}
LayerKind LayerKind::separable_conv2d(int k, int s, int pad, int in_ch, int out_ch, bool bias) {
  return {LayerOp::separable_conv2d, k, s, pad, in_ch, out_ch, bias};
}
LayerKind LayerKind::maxpool2d(int k, int s, int pad) { return {LayerOp::maxpool2d, k, s, pad}; }
LayerKind LayerKind::batchnorm2d(int ch) { return {LayerOp::batchnorm2d, 1, 1, 0, ch, ch}; }
LayerKind LayerKind::relu() { return {LayerOp::relu}; }
LayerKind LayerKind::residual_add() { return {LayerOp::residual_add}; }
LayerKind LayerKind::pointwise_conv(int in_ch, int out_ch, bool bias) {
  return {LayerOp::pointwise_conv, 1, 1, 0, in_ch, out_ch, bias};
}
LayerKind LayerKind::leaky_relu() { return {LayerOp::leaky_relu}; }
LayerKind LayerKind::sigmoid() { return {LayerOp::sigmoid}; }
LayerKind LayerKind::upsample_nearest(int factor) { return {LayerOp::upsample_nearest, 1, factor}; }
LayerKind LayerKind::dense(int in_features, int out_ch, int out_h, int out_w, bool bias) {
  return {LayerOp::dense, 1, 1, 0, in_features, out_ch, bias, out_h, out_w};
}

void LayerKind::validate() const {
  if (kernel < 1 || stride < 1 || pad < 0) throw StructuralError("invalid window in " + describe());
  const bool has_channels = op == LayerOp::conv2d || op == LayerOp::separable_conv2d ||
                            op == LayerOp::pointwise_conv || op == LayerOp::batchnorm2d ||
                            op == LayerOp::dense;
  if (has_channels && (in_ch < 1 || out_ch < 1)) throw StructuralError("invalid channel count in " + describe());
  if (op == LayerOp::dense && (out_h < 1 || out_w < 1)) throw StructuralError("invalid output map in " + describe());
}

std::size_t LayerKind::param_count() const {
  const auto in = static_cast<std::size_t>(in_ch), out = static_cast<std::size_t>(out_ch);
  const auto kk = static_cast<std::size_t>(kernel) * kernel;
  const std::size_t b = bias ? out : 0;
  switch (op) {
    case LayerOp::conv2d: return in * out * kk + b;
    case LayerOp::separable_conv2d: return in * kk + in * out + b;
    case LayerOp::pointwise_conv: return in * out + b;
    case LayerOp::batchnorm2d: return 2 * in;
    case LayerOp::dense: {
      const std::size_t o = out * static_cast<std::size_t>(out_h) * out_w;
      return in * o + (bias ? o : 0);
    }
    default: return 0;
  }
}

std::string LayerKind::describe() const {
  std::string s(to_string(op));
  switch (op) {
    case LayerOp::conv2d:
    case LayerOp::separable_conv2d:
      s += "(k=" + std::to_string(kernel) + ", s=" + std::to_string(stride) + ", pad=" + std::to_string(pad) +
           ", " + std::to_string(in_ch) + "->" + std::to_string(out_ch) + (bias ? ", bias" : "") + ")";
      break;
    case LayerOp::maxpool2d:
      s += "(k=" + std::to_string(kernel) + ", s=" + std::to_string(stride) + ", pad=" + std::to_string(pad) + ")";
      break;
    case LayerOp::pointwise_conv:
      s += "(" + std::to_string(in_ch) + "->" + std::to_string(out_ch) + (bias ? ", bias" : "") + ")";
      break;
    case LayerOp::batchnorm2d: s += "(" + std::to_string(in_ch) + ")"; break;
    case LayerOp::upsample_nearest: s += "(x" + std::to_string(stride) + ")"; break;
    case LayerOp::dense:
      s += "(" + std::to_string(in_ch) + "->" + std::to_string(out_ch) + "x" + std::to_string(out_h) + "x" +
           std::to_string(out_w) + ")";
      break;
    default: break;
  }
  return s;
}

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerKind& kind) {
  kind.validate();
  switch (kind.op) {
    case LayerOp::conv2d:
    case LayerOp::pointwise_conv: return std::make_unique<Conv2d<T>>(kind);
    case LayerOp::separable_conv2d: return std::make_unique<SeparableConv2d<T>>(kind);
    case LayerOp::maxpool2d: return std::make_unique<MaxPool2d<T>>(kind);
    case LayerOp::batchnorm2d: return std::make_unique<BatchNorm2d<T>>(kind);
    case LayerOp::relu:
    case LayerOp::leaky_relu: return std::make_unique<Relu<T>>(kind);
    case LayerOp::sigmoid: return std::make_unique<Sigmoid<T>>(kind);
    case LayerOp::residual_add: return std::make_unique<ResidualAdd<T>>(kind);
    case LayerOp::upsample_nearest: return std::make_unique<UpsampleNearest<T>>(kind);
    case LayerOp::dense: return std::make_unique<Dense<T>>(kind);
  }
  throw StructuralError("unsupported layer op");
}

template std::unique_ptr<Layer<float>> make_layer<float>(const LayerKind&);
template std::unique_ptr<Layer<double>> make_layer<double>(const LayerKind&);

}  // namespace pf
