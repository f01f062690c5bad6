#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "peakit/error.hpp"
#include "peakit/nn/tensor.hpp"

namespace peakit::nn {

enum class Mode { Train, Eval };

enum class LayerKind : std::uint8_t {
  Conv2d = 0,
  MaxPool2x2 = 1,
  ReLU = 2,
  BatchNorm = 3,
  FullyConnected = 4,
  Softmax = 5,
  GlobalAvgPool = 6,
  Sequential = 7,
  ResidualBlock = 8,
};

/// Kind plus the integer hyperparameters that rebuild the layer. Composite
/// layers are followed by their children in pre-order.
struct LayerSpec {
  LayerKind kind;
  std::vector<std::int32_t> params;

  bool operator==(const LayerSpec&) const = default;
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  explicit Parameter(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(shape) {}
};

/// Runtime switch for the NaN/Inf guard on activations and gradients. On by
/// default in debug builds.
inline bool& finite_checks() {
#ifdef NDEBUG
  static bool enabled = false;
#else
  static bool enabled = true;
#endif
  return enabled;
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* where) {
  if (finite_checks() && !t.all_finite()) fail(ErrorCode::DivergedLoss, std::string("non-finite values after ") + where);
}

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  /// Caches whatever backward() needs.
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  /// Accumulates parameter gradients and returns d(loss)/d(input).
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;

  virtual Shape output_shape(const Shape& in) const = 0;
  virtual void describe(std::vector<LayerSpec>& out) const = 0;
  virtual void collect_params(std::vector<Parameter<T>*>&) {}
  /// Non-trainable state saved in checkpoints (BatchNorm running statistics).
  virtual void collect_buffers(std::vector<Tensor<T>*>&) {}
  virtual void initialize(std::mt19937_64&) {}
  virtual const char* name() const = 0;
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void he_normal(Tensor<T>& w, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : w.values()) v = static_cast<T>(dist(rng));
}

// ---------------------------------------------------------------------------

struct Conv2dOptions {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int padding = 0;
  int groups = 1;
  bool bias = true;
  /// Allow (H + 2p - k) not divisible by stride and drop the trailing remainder,
  /// as stride-2 downsampling on even inputs needs. Off means the size must divide.
  bool floor_mode = false;
};

/// Grouped 2-D cross-correlation via im2col + GEMM. Each group g maps input
/// channels [g*Ci/G, (g+1)*Ci/G) to output channels [g*Co/G, (g+1)*Co/G).
template <typename T>
class Conv2d final : public Layer<T> {
 public:
  explicit Conv2d(const Conv2dOptions& o)
      : opt_(o),
        weight_("weight", {static_cast<std::size_t>(o.out_channels), static_cast<std::size_t>(o.in_channels / std::max(o.groups, 1)),
                           static_cast<std::size_t>(o.kernel), static_cast<std::size_t>(o.kernel)}),
        bias_("bias", {o.bias ? static_cast<std::size_t>(o.out_channels) : 0}) {
    if (o.groups <= 0 || o.in_channels % o.groups != 0 || o.out_channels % o.groups != 0)
      fail(ErrorCode::ShapeMismatch, "groups " + std::to_string(o.groups) + " must divide in (" +
                                         std::to_string(o.in_channels) + ") and out (" + std::to_string(o.out_channels) +
                                         ") channels");
    if (o.kernel <= 0 || o.stride <= 0 || o.padding < 0) fail(ErrorCode::ShapeMismatch, "invalid conv geometry");
  }

  const Conv2dOptions& options() const { return opt_; }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

  Shape output_shape(const Shape& in) const override {
    if (in.size() != 4 || in[1] != static_cast<std::size_t>(opt_.in_channels))
      fail(ErrorCode::ShapeMismatch, "conv expects [N," + std::to_string(opt_.in_channels) + ",H,W], got " + shape_string(in));
    const long h = static_cast<long>(in[2]) + 2 * opt_.padding - opt_.kernel;
    const long w = static_cast<long>(in[3]) + 2 * opt_.padding - opt_.kernel;
    if (h < 0 || w < 0 || (!opt_.floor_mode && (h % opt_.stride != 0 || w % opt_.stride != 0)))
      fail(ErrorCode::ShapeMismatch, "conv output size not integral for input " + shape_string(in));
    return {in[0], static_cast<std::size_t>(opt_.out_channels), static_cast<std::size_t>(h / opt_.stride + 1),
            static_cast<std::size_t>(w / opt_.stride + 1)};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    const Shape os = output_shape(x.shape());
    input_ = x;
    Tensor<T> y(os);
    const Geometry g = geometry(x.shape(), os);
    for (std::size_t n = 0; n < g.N; ++n) {
      for (std::size_t grp = 0; grp < g.G; ++grp) {
        const T* col = columns(x.data() + (n * g.Ci + grp * g.cig) * g.H * g.W, g);
        ConstMatMap<T> wmat(weight_.value.data() + grp * g.cog * g.K, static_cast<Eigen::Index>(g.cog), static_cast<Eigen::Index>(g.K));
        ConstMatMap<T> cmat(col, static_cast<Eigen::Index>(g.K), static_cast<Eigen::Index>(g.P));
        MatMap<T> out(y.data() + (n * g.Co + grp * g.cog) * g.P, static_cast<Eigen::Index>(g.cog), static_cast<Eigen::Index>(g.P));
        out.noalias() = wmat * cmat;
      }
      if (opt_.bias)
        for (std::size_t c = 0; c < g.Co; ++c) {
          T* row = y.data() + (n * g.Co + c) * g.P;
          const T b = bias_.value[c];
          for (std::size_t p = 0; p < g.P; ++p) row[p] += b;
        }
    }
    check_finite(y, "conv2d forward");
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const Shape os = output_shape(input_.shape());
    if (gy.shape() != os) fail(ErrorCode::ShapeMismatch, "conv backward: gradient shape " + shape_string(gy.shape()));
    const Geometry g = geometry(input_.shape(), os);
    Tensor<T> dx(input_.shape());
    std::vector<T> dcol(g.K * g.P);
    for (std::size_t n = 0; n < g.N; ++n) {
      for (std::size_t grp = 0; grp < g.G; ++grp) {
        const T* col = columns(input_.data() + (n * g.Ci + grp * g.cig) * g.H * g.W, g);
        ConstMatMap<T> cmat(col, static_cast<Eigen::Index>(g.K), static_cast<Eigen::Index>(g.P));
        ConstMatMap<T> gmat(gy.data() + (n * g.Co + grp * g.cog) * g.P, static_cast<Eigen::Index>(g.cog), static_cast<Eigen::Index>(g.P));
        MatMap<T> dw(weight_.grad.data() + grp * g.cog * g.K, static_cast<Eigen::Index>(g.cog), static_cast<Eigen::Index>(g.K));
        ConstMatMap<T> wmat(weight_.value.data() + grp * g.cog * g.K, static_cast<Eigen::Index>(g.cog), static_cast<Eigen::Index>(g.K));
        dw.noalias() += gmat * cmat.transpose();
        T* dx_base = dx.data() + (n * g.Ci + grp * g.cig) * g.H * g.W;
        if (g.pointwise) {
          MatMap<T> dxm(dx_base, static_cast<Eigen::Index>(g.K), static_cast<Eigen::Index>(g.P));
          dxm.noalias() += wmat.transpose() * gmat;
        } else {
          MatMap<T> dc(dcol.data(), static_cast<Eigen::Index>(g.K), static_cast<Eigen::Index>(g.P));
          dc.noalias() = wmat.transpose() * gmat;
          col2im(dcol.data(), dx_base, g);
        }
      }
      if (opt_.bias)
        for (std::size_t c = 0; c < g.Co; ++c) {
          const T* row = gy.data() + (n * g.Co + c) * g.P;
          T s = 0;
          for (std::size_t p = 0; p < g.P; ++p) s += row[p];
          bias_.grad[c] += s;
        }
    }
    check_finite(dx, "conv2d backward");
    return dx;
  }

  void describe(std::vector<LayerSpec>& out) const override {
    out.push_back({LayerKind::Conv2d,
                   {opt_.in_channels, opt_.out_channels, opt_.kernel, opt_.stride, opt_.padding, opt_.groups, opt_.bias ? 1 : 0,
                    opt_.floor_mode ? 1 : 0}});
  }

  void collect_params(std::vector<Parameter<T>*>& out) override {
    out.push_back(&weight_);
    if (opt_.bias) out.push_back(&bias_);
  }

  void initialize(std::mt19937_64& rng) override {
    he_normal(weight_.value, static_cast<std::size_t>(opt_.in_channels / opt_.groups) * opt_.kernel * opt_.kernel, rng);
    bias_.value.fill(T(0));
  }

  const char* name() const override { return "conv2d"; }

 private:
  struct Geometry {
    std::size_t N, Ci, Co, H, W, Ho, Wo, G, cig, cog, K, P;
    bool pointwise;
  };

  Geometry geometry(const Shape& in, const Shape& out) const {
    Geometry g{};
    g.N = in[0];
    g.Ci = in[1];
    g.H = in[2];
    g.W = in[3];
    g.Co = out[1];
    g.Ho = out[2];
    g.Wo = out[3];
    g.G = static_cast<std::size_t>(opt_.groups);
    g.cig = g.Ci / g.G;
    g.cog = g.Co / g.G;
    g.K = g.cig * opt_.kernel * opt_.kernel;
    g.P = g.Ho * g.Wo;
    g.pointwise = opt_.kernel == 1 && opt_.stride == 1 && opt_.padding == 0;
    return g;
  }

  /// Output columns [lo, hi) whose input column ox * stride + kx - pad is inside the row.
  static void valid_range(long kx, long stride, long pad, long width, long out, long& lo, long& hi) {
    const long first = pad - kx;  // smallest ox * stride that lands on column 0
    lo = first <= 0 ? 0 : (first + stride - 1) / stride;
    const long last = width - 1 + pad - kx;
    hi = last < 0 ? 0 : std::min(out, last / stride + 1);
    lo = std::min(lo, hi);
  }

  /// Returns a K x P column matrix for one group of one sample.
  const T* columns(const T* src, const Geometry& g) {
    if (g.pointwise) return src;
    cols_.resize(g.K * g.P);
    const int k = opt_.kernel, s = opt_.stride, pad = opt_.padding;
    const long H = static_cast<long>(g.H), W = static_cast<long>(g.W), Wo = static_cast<long>(g.Wo);
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.cig; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx, ++row) {
          T* dst = cols_.data() + row * g.P;
          const T* plane = src + c * g.H * g.W;
          long lo, hi;
          valid_range(kx, s, pad, W, Wo, lo, hi);
          for (std::size_t oy = 0; oy < g.Ho; ++oy, dst += Wo) {
            const long iy = static_cast<long>(oy) * s + ky - pad;
            if (iy < 0 || iy >= H) {
              std::fill(dst, dst + Wo, T(0));
              continue;
            }
            const long base = iy * W + kx - pad;
            std::fill(dst, dst + lo, T(0));
            if (s == 1)
              std::copy(plane + base + lo, plane + base + hi, dst + lo);
            else
              for (long ox = lo; ox < hi; ++ox) dst[ox] = plane[base + ox * s];
            std::fill(dst + hi, dst + Wo, T(0));
          }
        }
    return cols_.data();
  }

  void col2im(const T* col, T* dst, const Geometry& g) const {
    const int k = opt_.kernel, s = opt_.stride, pad = opt_.padding;
    const long H = static_cast<long>(g.H), W = static_cast<long>(g.W), Wo = static_cast<long>(g.Wo);
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.cig; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx, ++row) {
          const T* src = col + row * g.P;
          T* plane = dst + c * g.H * g.W;
          long lo, hi;
          valid_range(kx, s, pad, W, Wo, lo, hi);
          for (std::size_t oy = 0; oy < g.Ho; ++oy, src += Wo) {
            const long iy = static_cast<long>(oy) * s + ky - pad;
            if (iy < 0 || iy >= H) continue;
            const long base = iy * W + kx - pad;
            if (s == 1)
              for (long ox = lo; ox < hi; ++ox) plane[base + ox] += src[ox];
            else
              for (long ox = lo; ox < hi; ++ox) plane[base + ox * s] += src[ox];
          }
        }
  }

  Conv2dOptions opt_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
  std::vector<T> cols_;
};

// ---------------------------------------------------------------------------

/// 2x2 max pooling, stride 2. Ties resolve to the first element of the window
/// in row-major order, and backward routes the gradient there.
template <typename T>
class MaxPool2x2 final : public Layer<T> {
 public:
  Shape output_shape(const Shape& in) const override {
    if (in.size() != 4) fail(ErrorCode::ShapeMismatch, "maxpool expects rank 4, got " + shape_string(in));
    if (in[2] % 2 != 0 || in[3] % 2 != 0)
      fail(ErrorCode::OddSpatialDims, "maxpool2x2 needs even H and W, got " + shape_string(in));
    return {in[0], in[1], in[2] / 2, in[3] / 2};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    const Shape os = output_shape(x.shape());
    in_shape_ = x.shape();
    Tensor<T> y(os);
    argmax_.assign(y.size(), 0);
    const std::size_t H = x.dim(2), W = x.dim(3), Ho = os[2], Wo = os[3];
    std::size_t o = 0;
    for (std::size_t nc = 0; nc < x.dim(0) * x.dim(1); ++nc) {
      const T* plane = x.data() + nc * H * W;
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox, ++o) {
          const std::size_t base = (2 * oy) * W + 2 * ox;
          const std::size_t cand[4] = {base, base + 1, base + W, base + W + 1};
          std::size_t best = cand[0];
          for (int i = 1; i < 4; ++i)
            if (plane[cand[i]] > plane[best]) best = cand[i];
          y[o] = plane[best];
          argmax_[o] = nc * H * W + best;
        }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> dx(in_shape_);
    for (std::size_t o = 0; o < gy.size(); ++o) dx[argmax_[o]] += gy[o];
    return dx;
  }

  void describe(std::vector<LayerSpec>& out) const override { out.push_back({LayerKind::MaxPool2x2, {}}); }
  const char* name() const override { return "maxpool2x2"; }

 private:
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    Tensor<T> y(x.shape());
    mask_.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask_[i] = x[i] > T(0);
      y[i] = mask_[i] ? x[i] : T(0);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> dx(gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) dx[i] = mask_[i] ? gy[i] : T(0);
    return dx;
  }

  void describe(std::vector<LayerSpec>& out) const override { out.push_back({LayerKind::ReLU, {}}); }
  const char* name() const override { return "relu"; }

 private:
  std::vector<char> mask_;
};

// ---------------------------------------------------------------------------

/// Per-channel batch normalization over N x spatial positions.
/// Train mode uses batch statistics and updates running averages
/// (running = decay * running + (1 - decay) * batch, unbiased variance);
/// eval mode applies the running statistics as a fixed affine map.
template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  explicit BatchNorm(int channels, double eps = 1e-5, double decay = 0.9)
      : channels_(static_cast<std::size_t>(channels)),
        eps_(eps),
        decay_(decay),
        gamma_("gamma", {channels_}),
        beta_("beta", {channels_}),
        running_mean_({channels_}, T(0)),
        running_var_({channels_}, T(1)) {
    gamma_.value.fill(T(1));
  }

  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }

  Shape output_shape(const Shape& in) const override {
    if (in.size() < 2 || in[1] != channels_)
      fail(ErrorCode::ShapeMismatch, "batchnorm expects [N," + std::to_string(channels_) + ",...], got " + shape_string(in));
    return in;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    output_shape(x.shape());
    mode_ = mode;
    const std::size_t N = x.dim(0), C = channels_, S = x.size() / (N * C);
    const std::size_t m = N * S;
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(C, T(0));
    Tensor<T> y(x.shape());
    for (std::size_t c = 0; c < C; ++c) {
      T mean, var;
      if (mode == Mode::Train) {
        if (m < 2) fail(ErrorCode::DegenerateBatch, "batchnorm needs at least 2 values per channel in train mode");
        double s = 0;
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t i = 0; i < S; ++i) s += x[(n * C + c) * S + i];
        const double mu = s / static_cast<double>(m);
        double ss = 0;
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t i = 0; i < S; ++i) {
            const double d = x[(n * C + c) * S + i] - mu;
            ss += d * d;
          }
        const double biased = ss / static_cast<double>(m);
        mean = static_cast<T>(mu);
        var = static_cast<T>(biased);
        running_mean_[c] = static_cast<T>(decay_ * running_mean_[c] + (1 - decay_) * mu);
        running_var_[c] = static_cast<T>(decay_ * running_var_[c] + (1 - decay_) * ss / static_cast<double>(m - 1));
      } else {
        mean = running_mean_[c];
        var = running_var_[c];
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + eps_));
      inv_std_[c] = inv;
      const T g = gamma_.value[c], b = beta_.value[c];
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < S; ++i) {
          const std::size_t k = (n * C + c) * S + i;
          xhat_[k] = (x[k] - mean) * inv;
          y[k] = g * xhat_[k] + b;
        }
    }
    check_finite(y, "batchnorm forward");
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const std::size_t N = gy.dim(0), C = channels_, S = gy.size() / (N * C);
    const T m = static_cast<T>(N * S);
    Tensor<T> dx(gy.shape());
    for (std::size_t c = 0; c < C; ++c) {
      T sum_dy = 0, sum_dy_xhat = 0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < S; ++i) {
          const std::size_t k = (n * C + c) * S + i;
          sum_dy += gy[k];
          sum_dy_xhat += gy[k] * xhat_[k];
        }
      gamma_.grad[c] += sum_dy_xhat;
      beta_.grad[c] += sum_dy;
      const T g = gamma_.value[c], inv = inv_std_[c];
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < S; ++i) {
          const std::size_t k = (n * C + c) * S + i;
          if (mode_ == Mode::Train)
            dx[k] = g * inv / m * (m * gy[k] - sum_dy - xhat_[k] * sum_dy_xhat);
          else
            dx[k] = g * inv * gy[k];
        }
    }
    return dx;
  }

  void describe(std::vector<LayerSpec>& out) const override {
    out.push_back({LayerKind::BatchNorm, {static_cast<std::int32_t>(channels_)}});
  }
  void collect_params(std::vector<Parameter<T>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  void collect_buffers(std::vector<Tensor<T>*>& out) override {
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }
  void initialize(std::mt19937_64&) override {
    gamma_.value.fill(T(1));
    beta_.value.fill(T(0));
    running_mean_.fill(T(0));
    running_var_.fill(T(1));
  }
  const char* name() const override { return "batchnorm"; }

 private:
  std::size_t channels_;
  double eps_;
  double decay_;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  Tensor<T> running_mean_;
  Tensor<T> running_var_;
  Mode mode_ = Mode::Train;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

// ---------------------------------------------------------------------------

/// y = x W^T + b over the flattened per-sample input.
template <typename T>
class FullyConnected final : public Layer<T> {
 public:
  FullyConnected(int in_features, int out_features)
      : in_(static_cast<std::size_t>(in_features)),
        out_(static_cast<std::size_t>(out_features)),
        weight_("weight", {out_, in_}),
        bias_("bias", {out_}) {}

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  std::size_t in_features() const { return in_; }

  Shape output_shape(const Shape& in) const override {
    if (in.size() < 2 || shape_size(in) / in[0] != in_)
      fail(ErrorCode::ShapeMismatch, "fully connected layer expects " + std::to_string(in_) + " features per sample, got " +
                                         shape_string(in));
    return {in[0], out_};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    const Shape os = output_shape(x.shape());
    input_ = x;
    Tensor<T> y(os);
    const auto N = static_cast<Eigen::Index>(x.dim(0));
    ConstMatMap<T> xm(x.data(), N, static_cast<Eigen::Index>(in_));
    ConstMatMap<T> wm(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    MatMap<T> ym(y.data(), N, static_cast<Eigen::Index>(out_));
    ym.noalias() = xm * wm.transpose();
    for (Eigen::Index n = 0; n < N; ++n)
      for (std::size_t o = 0; o < out_; ++o) ym(n, static_cast<Eigen::Index>(o)) += bias_.value[o];
    check_finite(y, "fully connected forward");
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const auto N = static_cast<Eigen::Index>(input_.dim(0));
    ConstMatMap<T> xm(input_.data(), N, static_cast<Eigen::Index>(in_));
    ConstMatMap<T> wm(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    ConstMatMap<T> gm(gy.data(), N, static_cast<Eigen::Index>(out_));
    MatMap<T> dw(weight_.grad.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    dw.noalias() += gm.transpose() * xm;
    for (Eigen::Index n = 0; n < N; ++n)
      for (std::size_t o = 0; o < out_; ++o) bias_.grad[o] += gm(n, static_cast<Eigen::Index>(o));
    Tensor<T> dx(input_.shape());
    MatMap<T> dxm(dx.data(), N, static_cast<Eigen::Index>(in_));
    dxm.noalias() = gm * wm;
    return dx;
  }

  void describe(std::vector<LayerSpec>& out) const override {
    out.push_back({LayerKind::FullyConnected, {static_cast<std::int32_t>(in_), static_cast<std::int32_t>(out_)}});
  }
  void collect_params(std::vector<Parameter<T>*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }
  void initialize(std::mt19937_64& rng) override {
    he_normal(weight_.value, in_, rng);
    bias_.value.fill(T(0));
  }
  const char* name() const override { return "fully_connected"; }

 private:
  std::size_t in_, out_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
};

template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  Shape output_shape(const Shape& in) const override {
    if (in.size() != 4) fail(ErrorCode::ShapeMismatch, "global average pool expects rank 4, got " + shape_string(in));
    return {in[0], in[1]};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    in_shape_ = x.shape();
    Tensor<T> y(output_shape(x.shape()));
    const std::size_t S = x.dim(2) * x.dim(3);
    for (std::size_t k = 0; k < y.size(); ++k) {
      T s = 0;
      for (std::size_t i = 0; i < S; ++i) s += x[k * S + i];
      y[k] = s / static_cast<T>(S);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> dx(in_shape_);
    const std::size_t S = in_shape_[2] * in_shape_[3];
    for (std::size_t k = 0; k < gy.size(); ++k) {
      const T g = gy[k] / static_cast<T>(S);
      for (std::size_t i = 0; i < S; ++i) dx[k * S + i] = g;
    }
    return dx;
  }

  void describe(std::vector<LayerSpec>& out) const override { out.push_back({LayerKind::GlobalAvgPool, {}}); }
  const char* name() const override { return "global_avg_pool"; }

 private:
  Shape in_shape_;
};

/// Row-wise softmax over the last axis of a [N, K] tensor.
template <typename T>
class Softmax final : public Layer<T> {
 public:
  Shape output_shape(const Shape& in) const override {
    if (in.size() != 2) fail(ErrorCode::ShapeMismatch, "softmax expects [N,K], got " + shape_string(in));
    return in;
  }

  static Tensor<T> apply(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    const std::size_t N = x.dim(0), K = x.dim(1);
    for (std::size_t n = 0; n < N; ++n) {
      T mx = x[n * K];
      for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, x[n * K + k]);
      T s = 0;
      for (std::size_t k = 0; k < K; ++k) s += (y[n * K + k] = std::exp(x[n * K + k] - mx));
      for (std::size_t k = 0; k < K; ++k) y[n * K + k] /= s;
    }
    return y;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    output_shape(x.shape());
    out_ = apply(x);
    return out_;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> dx(gy.shape());
    const std::size_t N = gy.dim(0), K = gy.dim(1);
    for (std::size_t n = 0; n < N; ++n) {
      T dot = 0;
      for (std::size_t k = 0; k < K; ++k) dot += gy[n * K + k] * out_[n * K + k];
      for (std::size_t k = 0; k < K; ++k) dx[n * K + k] = out_[n * K + k] * (gy[n * K + k] - dot);
    }
    return dx;
  }

  void describe(std::vector<LayerSpec>& out) const override { out.push_back({LayerKind::Softmax, {}}); }
  const char* name() const override { return "softmax"; }

 private:
  Tensor<T> out_;
};

// ---------------------------------------------------------------------------

template <typename T>
class Sequential final : public Layer<T> {
 public:
  Sequential() = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  void push_back(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  Layer<T>& operator[](std::size_t i) { return *layers_[i]; }
  const Layer<T>& operator[](std::size_t i) const { return *layers_[i]; }

  Shape output_shape(const Shape& in) const override { return output_shape_until(in, layers_.size()); }

  Shape output_shape_until(Shape s, std::size_t count) const {
    for (std::size_t i = 0; i < count; ++i) s = layers_[i]->output_shape(s);
    return s;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override { return forward_until(x, mode, layers_.size()); }

  /// Runs the first `count` layers only.
  Tensor<T> forward_until(const Tensor<T>& x, Mode mode, std::size_t count) {
    Tensor<T> h = x;
    for (std::size_t i = 0; i < count; ++i) h = layers_[i]->forward(h, mode);
    return h;
  }

  Tensor<T> backward(const Tensor<T>& gy) override { return backward_from(gy, layers_.size()); }

  /// Backpropagates through the first `count` layers, last one first.
  Tensor<T> backward_from(const Tensor<T>& gy, std::size_t count) {
    Tensor<T> g = gy;
    for (std::size_t i = count; i-- > 0;) g = layers_[i]->backward(g);
    return g;
  }

  void describe(std::vector<LayerSpec>& out) const override {
    out.push_back({LayerKind::Sequential, {static_cast<std::int32_t>(layers_.size())}});
    for (const auto& l : layers_) l->describe(out);
  }
  void collect_params(std::vector<Parameter<T>*>& out) override {
    for (auto& l : layers_) l->collect_params(out);
  }
  void collect_buffers(std::vector<Tensor<T>*>& out) override {
    for (auto& l : layers_) l->collect_buffers(out);
  }
  void initialize(std::mt19937_64& rng) override {
    for (auto& l : layers_) l->initialize(rng);
  }
  const char* name() const override { return "sequential"; }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

/// y = ReLU(branch(x) + shortcut(x)); an empty shortcut is the identity.
template <typename T>
class ResidualBlock final : public Layer<T> {
 public:
  ResidualBlock() = default;

  Sequential<T>& branch() { return branch_; }
  Sequential<T>& shortcut() { return shortcut_; }

  Shape output_shape(const Shape& in) const override {
    const Shape b = branch_.output_shape(in);
    const Shape s = shortcut_.empty() ? in : shortcut_.output_shape(in);
    if (b != s)
      fail(ErrorCode::ShapeMismatch, "residual branch " + shape_string(b) + " does not match shortcut " + shape_string(s));
    return b;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> z = branch_.forward(x, mode);
    if (shortcut_.empty())
      z += x;
    else
      z += shortcut_.forward(x, mode);
    return relu_.forward(z, mode);
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const Tensor<T> dz = relu_.backward(gy);
    Tensor<T> dx = branch_.backward(dz);
    if (shortcut_.empty())
      dx += dz;
    else
      dx += shortcut_.backward(dz);
    return dx;
  }

  void describe(std::vector<LayerSpec>& out) const override {
    out.push_back({LayerKind::ResidualBlock, {shortcut_.empty() ? 0 : 1}});
    branch_.describe(out);
    shortcut_.describe(out);
  }
  void collect_params(std::vector<Parameter<T>*>& out) override {
    branch_.collect_params(out);
    shortcut_.collect_params(out);
  }
  void collect_buffers(std::vector<Tensor<T>*>& out) override {
    branch_.collect_buffers(out);
    shortcut_.collect_buffers(out);
  }
  void initialize(std::mt19937_64& rng) override {
    branch_.initialize(rng);
    shortcut_.initialize(rng);
  }
  const char* name() const override { return "residual_block"; }

 private:
  Sequential<T> branch_;
  Sequential<T> shortcut_;
  ReLU<T> relu_;
};

template <typename T>
std::vector<Parameter<T>*> parameters_of(Layer<T>& layer) {
  std::vector<Parameter<T>*> out;
  layer.collect_params(out);
  return out;
}

template <typename T>
std::size_t parameter_count(Layer<T>& layer) {
  std::size_t n = 0;
  for (auto* p : parameters_of(layer)) n += p->value.size();
  return n;
}

template <typename T>
void zero_grad(Layer<T>& layer) {
  for (auto* p : parameters_of(layer)) p->grad.fill(T(0));
}

}  // namespace peakit::nn
