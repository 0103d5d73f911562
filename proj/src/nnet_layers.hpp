#pragma once

// Layer implementations behind Network<T>. Each layer owns its parameters
// and gradients; Sequential owns the activations needed for backprop.

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "myoloop/error.hpp"
#include "myoloop/nnet.hpp"

namespace myo::detail {

template <class T>
struct Tensor {
  std::size_t n = 0;
  Shape shape;
  std::vector<T> data;

  void resize(std::size_t batch, Shape s) {
    n = batch;
    shape = s;
    data.resize(batch * s.size());
  }
  T* sample(std::size_t i) { return data.data() + i * shape.size(); }
  const T* sample(std::size_t i) const { return data.data() + i * shape.size(); }
};

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <class T>
MatMap<T> mat(T* p, std::size_t rows, std::size_t cols) {
  return {p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}
template <class T>
ConstMatMap<T> mat(const T* p, std::size_t rows, std::size_t cols) {
  return {p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual Shape configure(Shape in) = 0;
  virtual void init(std::mt19937_64&) {}
  virtual void forward(const Tensor<T>& in, Tensor<T>& out, const ForwardOptions& opt) = 0;
  virtual void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out,
                        Tensor<T>& grad_in) = 0;
  virtual void collect_params(std::vector<ParamView<T>>&) {}
  virtual void collect_state(std::vector<std::vector<T>*>&) {}
  virtual void zero_grad() {}
  virtual std::size_t counted() const { return 1; }
  /// Appends the on/off state of every ReLU unit given this layer's last output.
  virtual void activation_pattern(const Tensor<T>&, std::vector<std::uint8_t>&) const {}
};

template <class T>
void he_normal(std::vector<T>& w, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (T& v : w) v = static_cast<T>(normal(rng));
}

template <class T>
class Dense : public Layer<T> {
 public:
  explicit Dense(std::size_t out) : out_(out) {}
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dense>(*this); }

  Shape configure(Shape in) override {
    require(in.h == 1 && in.w == 1, ErrorKind::Shape, "dense layer needs a flat input");
    require(out_ > 0, ErrorKind::Shape, "dense layer needs a positive width");
    in_ = in.c;
    w_.assign(out_ * in_, T(0));
    b_.assign(out_, T(0));
    gw_.assign(w_.size(), T(0));
    gb_.assign(b_.size(), T(0));
    return {out_, 1, 1};
  }
  void init(std::mt19937_64& rng) override { he_normal(w_, in_, rng); }

  void forward(const Tensor<T>& in, Tensor<T>& out, const ForwardOptions&) override {
    out.resize(in.n, {out_, 1, 1});
    auto y = mat(out.data.data(), in.n, out_);
    y.noalias() = mat(in.data.data(), in.n, in_) * mat(w_.data(), out_, in_).transpose();
    for (std::size_t s = 0; s < in.n; ++s)
      for (std::size_t o = 0; o < out_; ++o) y(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(o)) += b_[o];
  }

  void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& g,
                Tensor<T>& gin) override {
    gin.resize(in.n, in.shape);
    const auto go = mat(g.data.data(), in.n, out_);
    mat(gw_.data(), out_, in_).noalias() += go.transpose() * mat(in.data.data(), in.n, in_);
    mat(gin.data.data(), in.n, in_).noalias() = go * mat(w_.data(), out_, in_);
    for (std::size_t s = 0; s < in.n; ++s)
      for (std::size_t o = 0; o < out_; ++o) gb_[o] += go(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(o));
  }

  void collect_params(std::vector<ParamView<T>>& p) override {
    p.push_back({w_, gw_});
    p.push_back({b_, gb_});
  }
  void collect_state(std::vector<std::vector<T>*>& s) override {
    s.push_back(&w_);
    s.push_back(&b_);
  }
  void zero_grad() override {
    std::fill(gw_.begin(), gw_.end(), T(0));
    std::fill(gb_.begin(), gb_.end(), T(0));
  }

 private:
  std::size_t out_;
  std::size_t in_ = 0;
  std::vector<T> w_, b_, gw_, gb_;
};

/// Square-kernel convolution with same padding and no bias (batch norm follows).
template <class T>
class Conv : public Layer<T> {
 public:
  Conv(std::size_t out, int kernel, int stride) : out_(out), k_(kernel), stride_(stride) {}
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv>(*this); }

  Shape configure(Shape in) override {
    require(k_ == 1 || k_ == 3, ErrorKind::Shape, "conv kernel must be 1 or 3");
    require(stride_ == 1 || stride_ == 2, ErrorKind::Shape, "conv stride must be 1 or 2");
    require(out_ > 0, ErrorKind::Shape, "conv needs a positive channel count");
    in_ = in;
    const std::size_t pad = static_cast<std::size_t>(k_ / 2);
    const auto k = static_cast<std::size_t>(k_);
    const auto s = static_cast<std::size_t>(stride_);
    require(in.h + 2 * pad >= k && in.w + 2 * pad >= k, ErrorKind::Shape, "conv input too small");
    out_shape_ = {out_, (in.h + 2 * pad - k) / s + 1, (in.w + 2 * pad - k) / s + 1};
    kdim_ = in.c * k * k;
    w_.assign(out_ * kdim_, T(0));
    gw_.assign(w_.size(), T(0));
    return out_shape_;
  }
  void init(std::mt19937_64& rng) override { he_normal(w_, kdim_, rng); }

  void forward(const Tensor<T>& in, Tensor<T>& out, const ForwardOptions&) override {
    out.resize(in.n, out_shape_);
    const std::size_t P = out_shape_.h * out_shape_.w;
    col_.resize(kdim_ * P);
    const auto w = mat(w_.data(), out_, kdim_);
    for (std::size_t s = 0; s < in.n; ++s) {
      im2col(in.sample(s), col_.data());
      mat(out.sample(s), out_, P).noalias() = w * mat(static_cast<const T*>(col_.data()), kdim_, P);
    }
  }

  void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& g,
                Tensor<T>& gin) override {
    gin.resize(in.n, in.shape);
    std::fill(gin.data.begin(), gin.data.end(), T(0));
    const std::size_t P = out_shape_.h * out_shape_.w;
    col_.resize(kdim_ * P);
    dcol_.resize(kdim_ * P);
    const auto w = mat(w_.data(), out_, kdim_);
    auto gw = mat(gw_.data(), out_, kdim_);
    for (std::size_t s = 0; s < in.n; ++s) {
      im2col(in.sample(s), col_.data());
      const auto go = mat(g.sample(s), out_, P);
      gw.noalias() += go * mat(static_cast<const T*>(col_.data()), kdim_, P).transpose();
      mat(dcol_.data(), kdim_, P).noalias() = w.transpose() * go;
      col2im(gin.sample(s));
    }
  }

  void collect_params(std::vector<ParamView<T>>& p) override { p.push_back({w_, gw_}); }
  void collect_state(std::vector<std::vector<T>*>& s) override { s.push_back(&w_); }
  void zero_grad() override { std::fill(gw_.begin(), gw_.end(), T(0)); }

 private:
  // Visits every (tap row, output row) pair with the output-column range
  // [lo, hi) whose input column is inside the image; other columns are padding.
  template <class F>
  void for_each_row(F&& f) const {
    const long pad = k_ / 2;
    const long W = static_cast<long>(in_.w), H = static_cast<long>(in_.h);
    const long OW = static_cast<long>(out_shape_.w);
    const std::size_t P = out_shape_.h * out_shape_.w;
    for (std::size_t ci = 0; ci < in_.c; ++ci)
      for (long kh = 0; kh < k_; ++kh)
        for (long kw = 0; kw < k_; ++kw) {
          const std::size_t row = (ci * static_cast<std::size_t>(k_) + static_cast<std::size_t>(kh)) *
                                      static_cast<std::size_t>(k_) + static_cast<std::size_t>(kw);
          // ow in [lo, hi) maps to iw = ow * stride + kw - pad inside [0, W)
          const long lo = std::max(0L, (pad - kw + stride_ - 1) / stride_);
          const long hi = std::min(OW, (W - 1 + pad - kw) / stride_ + 1);
          for (std::size_t oh = 0; oh < out_shape_.h; ++oh) {
            const long ih = static_cast<long>(oh) * stride_ + kh - pad;
            const std::size_t p = row * P + oh * out_shape_.w;
            if (ih < 0 || ih >= H) {
              f(p, 0L, 0L, std::size_t(0), kw - pad);
            } else {
              f(p, lo, std::max(lo, hi), (ci * in_.h + static_cast<std::size_t>(ih)) * in_.w, kw - pad);
            }
          }
        }
  }
  void im2col(const T* x, T* col) const {
    const long OW = static_cast<long>(out_shape_.w);
    for_each_row([&](std::size_t p, long lo, long hi, std::size_t base, long off) {
      T* c = col + p;
      for (long ow = 0; ow < lo; ++ow) c[ow] = T(0);
      for (long ow = lo; ow < hi; ++ow) c[ow] = x[base + static_cast<std::size_t>(ow * stride_ + off)];
      for (long ow = hi; ow < OW; ++ow) c[ow] = T(0);
    });
  }
  void col2im(T* gx) const {
    for_each_row([&](std::size_t p, long lo, long hi, std::size_t base, long off) {
      const T* c = dcol_.data() + p;
      for (long ow = lo; ow < hi; ++ow) gx[base + static_cast<std::size_t>(ow * stride_ + off)] += c[ow];
    });
  }

  std::size_t out_;
  int k_;
  int stride_;
  Shape in_;
  Shape out_shape_;
  std::size_t kdim_ = 0;
  std::vector<T> w_, gw_;
  std::vector<T> col_, dcol_;
};

/// Per-channel batch normalisation over (N, H, W).
template <class T>
class BatchNorm : public Layer<T> {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm>(*this); }

  Shape configure(Shape in) override {
    shape_ = in;
    gamma_.assign(in.c, T(1));
    beta_.assign(in.c, T(0));
    running_mean_.assign(in.c, T(0));
    running_var_.assign(in.c, T(1));
    ggamma_.assign(in.c, T(0));
    gbeta_.assign(in.c, T(0));
    return in;
  }

  void forward(const Tensor<T>& in, Tensor<T>& out, const ForwardOptions& opt) override {
    out.resize(in.n, in.shape);
    const std::size_t C = shape_.c, HW = shape_.h * shape_.w;
    if (opt.mode == Mode::Eval) {
      for (std::size_t c = 0; c < C; ++c) {
        const T inv = T(1) / std::sqrt(running_var_[c] + T(kEps));
        for (std::size_t s = 0; s < in.n; ++s) {
          const T* x = in.sample(s) + c * HW;
          T* y = out.sample(s) + c * HW;
          for (std::size_t i = 0; i < HW; ++i)
            y[i] = gamma_[c] * ((x[i] - running_mean_[c]) * inv) + beta_[c];
        }
      }
      return;
    }
    const std::size_t M = in.n * HW;
    require(M > 0, ErrorKind::Shape, "batch norm needs a non-empty batch");
    xhat_.resize(in.n * shape_.size());
    inv_std_.resize(C);
    for (std::size_t c = 0; c < C; ++c) {
      T mean = 0;
      for (std::size_t s = 0; s < in.n; ++s) {
        const T* x = in.sample(s) + c * HW;
        for (std::size_t i = 0; i < HW; ++i) mean += x[i];
      }
      mean /= static_cast<T>(M);
      T var = 0;
      for (std::size_t s = 0; s < in.n; ++s) {
        const T* x = in.sample(s) + c * HW;
        for (std::size_t i = 0; i < HW; ++i) var += (x[i] - mean) * (x[i] - mean);
      }
      var /= static_cast<T>(M);
      const T inv = T(1) / std::sqrt(var + T(kEps));
      inv_std_[c] = inv;
      for (std::size_t s = 0; s < in.n; ++s) {
        const T* x = in.sample(s) + c * HW;
        T* xh = xhat_.data() + s * shape_.size() + c * HW;
        T* y = out.sample(s) + c * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          xh[i] = (x[i] - mean) * inv;
          y[i] = gamma_[c] * xh[i] + beta_[c];
        }
      }
      const T unbiased = M > 1 ? var * static_cast<T>(M) / static_cast<T>(M - 1) : var;
      running_mean_[c] = static_cast<T>((1 - kMomentum) * running_mean_[c] + kMomentum * mean);
      running_var_[c] = static_cast<T>((1 - kMomentum) * running_var_[c] + kMomentum * unbiased);
    }
  }

  void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& g,
                Tensor<T>& gin) override {
    gin.resize(in.n, in.shape);
    const std::size_t C = shape_.c, HW = shape_.h * shape_.w;
    const T M = static_cast<T>(in.n * HW);
    for (std::size_t c = 0; c < C; ++c) {
      T dgamma = 0, dbeta = 0;
      for (std::size_t s = 0; s < in.n; ++s) {
        const T* go = g.sample(s) + c * HW;
        const T* xh = xhat_.data() + s * shape_.size() + c * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          dgamma += go[i] * xh[i];
          dbeta += go[i];
        }
      }
      ggamma_[c] += dgamma;
      gbeta_[c] += dbeta;
      const T scale = gamma_[c] * inv_std_[c] / M;
      for (std::size_t s = 0; s < in.n; ++s) {
        const T* go = g.sample(s) + c * HW;
        const T* xh = xhat_.data() + s * shape_.size() + c * HW;
        T* gi = gin.sample(s) + c * HW;
        for (std::size_t i = 0; i < HW; ++i) gi[i] = scale * (M * go[i] - dbeta - xh[i] * dgamma);
      }
    }
  }

  void collect_params(std::vector<ParamView<T>>& p) override {
    p.push_back({gamma_, ggamma_});
    p.push_back({beta_, gbeta_});
  }
  void collect_state(std::vector<std::vector<T>*>& s) override {
    s.push_back(&gamma_);
    s.push_back(&beta_);
    s.push_back(&running_mean_);
    s.push_back(&running_var_);
  }
  void zero_grad() override {
    std::fill(ggamma_.begin(), ggamma_.end(), T(0));
    std::fill(gbeta_.begin(), gbeta_.end(), T(0));
  }

  /// Normalised activations of the last training-mode forward.
  const std::vector<T>& normalized() const { return xhat_; }

 private:
  Shape shape_;
  std::vector<T> gamma_, beta_, running_mean_, running_var_, ggamma_, gbeta_;
  std::vector<T> xhat_, inv_std_;
};

template <class T>
class Relu : public Layer<T> {
 public:
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Relu>(*this); }
  Shape configure(Shape in) override { return in; }
  void forward(const Tensor<T>& in, Tensor<T>& out, const ForwardOptions&) override {
    out.resize(in.n, in.shape);
    for (std::size_t i = 0; i < in.data.size(); ++i) out.data[i] = in.data[i] > T(0) ? in.data[i] : T(0);
  }
  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& g,
                Tensor<T>& gin) override {
    gin.resize(in.n, in.shape);
    for (std::size_t i = 0; i < g.data.size(); ++i) gin.data[i] = out.data[i] > T(0) ? g.data[i] : T(0);
  }
  void activation_pattern(const Tensor<T>& out, std::vector<std::uint8_t>& p) const override {
    for (T v : out.data) p.push_back(v > T(0));
  }
};

/// Inverted dropout: kept units are scaled by 1 / (1 - rate) at train time.
template <class T>
class Dropout : public Layer<T> {
 public:
  explicit Dropout(double rate) : rate_(rate) {}
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dropout>(*this); }
  Shape configure(Shape in) override {
    require(rate_ >= 0 && rate_ < 1, ErrorKind::Shape, "dropout rate must lie in [0, 1)");
    return in;
  }
  void forward(const Tensor<T>& in, Tensor<T>& out, const ForwardOptions& opt) override {
    out.resize(in.n, in.shape);
    active_ = opt.mode == Mode::Train && opt.dropout && rate_ > 0;
    if (!active_) {
      out.data = in.data;
      return;
    }
    require(opt.rng != nullptr, ErrorKind::Domain, "training-mode dropout needs an RNG");
    std::bernoulli_distribution keep(1.0 - rate_);
    const T scale = static_cast<T>(1.0 / (1.0 - rate_));
    mask_.resize(in.data.size());
    for (std::size_t i = 0; i < in.data.size(); ++i) {
      mask_[i] = keep(*opt.rng) ? scale : T(0);
      out.data[i] = in.data[i] * mask_[i];
    }
  }
  void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& g, Tensor<T>& gin) override {
    gin.resize(in.n, in.shape);
    if (!active_) {
      gin.data = g.data;
      return;
    }
    for (std::size_t i = 0; i < g.data.size(); ++i) gin.data[i] = g.data[i] * mask_[i];
  }

 private:
  double rate_;
  bool active_ = false;
  std::vector<T> mask_;
};

template <class T>
class GlobalAvgPool : public Layer<T> {
 public:
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
  Shape configure(Shape in) override {
    in_ = in;
    return {in.c, 1, 1};
  }
  void forward(const Tensor<T>& in, Tensor<T>& out, const ForwardOptions&) override {
    out.resize(in.n, {in_.c, 1, 1});
    const std::size_t HW = in_.h * in_.w;
    for (std::size_t s = 0; s < in.n; ++s)
      for (std::size_t c = 0; c < in_.c; ++c) {
        const T* x = in.sample(s) + c * HW;
        T sum = 0;
        for (std::size_t i = 0; i < HW; ++i) sum += x[i];
        out.sample(s)[c] = sum / static_cast<T>(HW);
      }
  }
  void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& g, Tensor<T>& gin) override {
    gin.resize(in.n, in_);
    const std::size_t HW = in_.h * in_.w;
    for (std::size_t s = 0; s < in.n; ++s)
      for (std::size_t c = 0; c < in_.c; ++c) {
        const T v = g.sample(s)[c] / static_cast<T>(HW);
        T* gi = gin.sample(s) + c * HW;
        std::fill(gi, gi + HW, v);
      }
  }

 private:
  Shape in_;
};

template <class T>
class Flatten : public Layer<T> {
 public:
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Flatten>(*this); }
  Shape configure(Shape in) override {
    in_ = in;
    return {in.size(), 1, 1};
  }
  void forward(const Tensor<T>& in, Tensor<T>& out, const ForwardOptions&) override {
    out.n = in.n;
    out.shape = {in_.size(), 1, 1};
    out.data = in.data;
  }
  void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& g, Tensor<T>& gin) override {
    gin.n = in.n;
    gin.shape = in_;
    gin.data = g.data;
  }

 private:
  Shape in_;
};

template <class T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec);

template <class T>
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(const std::vector<LayerSpec>& specs) {
    for (const auto& s : specs) layers_.push_back(make_layer<T>(s));
  }
  Sequential(const Sequential& o) : shapes_(o.shapes_) {
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
  }
  Sequential& operator=(const Sequential& o) {
    if (this != &o) {
      Sequential tmp(o);
      std::swap(layers_, tmp.layers_);
      shapes_ = o.shapes_;
      acts_.clear();
    }
    return *this;
  }

  bool empty() const { return layers_.empty(); }

  Shape configure(Shape in) {
    shapes_.clear();
    for (auto& l : layers_) {
      in = l->configure(in);
      shapes_.push_back(in);
    }
    return in;
  }
  const std::vector<Shape>& shapes() const { return shapes_; }

  void init(std::mt19937_64& rng) {
    for (auto& l : layers_) l->init(rng);
  }

  void forward(const Tensor<T>& in, Tensor<T>& out, const ForwardOptions& opt) {
    acts_.resize(layers_.size() + 1);
    acts_[0] = in;
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->forward(acts_[i], acts_[i + 1], opt);
    out = acts_.back();
  }

  void backward(const Tensor<T>& grad_out, Tensor<T>& grad_in) {
    require(acts_.size() == layers_.size() + 1, ErrorKind::Domain, "backward without forward");
    Tensor<T> g = grad_out, gi;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      layers_[i]->backward(acts_[i], acts_[i + 1], g, gi);
      std::swap(g, gi);
    }
    grad_in = std::move(g);
  }

  void collect_params(std::vector<ParamView<T>>& p) {
    for (auto& l : layers_) l->collect_params(p);
  }
  void collect_state(std::vector<std::vector<T>*>& s) {
    for (auto& l : layers_) l->collect_state(s);
  }
  void zero_grad() {
    for (auto& l : layers_) l->zero_grad();
  }
  std::size_t counted() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l->counted();
    return n;
  }
  void activation_pattern(std::vector<std::uint8_t>& p) const {
    if (acts_.size() != layers_.size() + 1) return;
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->activation_pattern(acts_[i + 1], p);
  }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }
  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<Shape> shapes_;
  std::vector<Tensor<T>> acts_;
};

/// relu(inner(x) + skip(x)); skip is identity or a projection.
template <class T>
class Residual : public Layer<T> {
 public:
  Residual(const std::vector<LayerSpec>& inner, const std::vector<LayerSpec>& projection)
      : inner_(inner), projection_(projection) {}
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Residual>(*this); }

  Shape configure(Shape in) override {
    require(!inner_.empty(), ErrorKind::Shape, "residual block needs inner layers");
    const Shape a = inner_.configure(in);
    const Shape b = projection_.empty() ? in : projection_.configure(in);
    require(a == b, ErrorKind::Shape, "residual branches produce different shapes");
    return a;
  }
  void init(std::mt19937_64& rng) override {
    inner_.init(rng);
    projection_.init(rng);
  }

  void forward(const Tensor<T>& in, Tensor<T>& out, const ForwardOptions& opt) override {
    inner_.forward(in, out, opt);
    const Tensor<T>* skip = &in;
    if (!projection_.empty()) {
      projection_.forward(in, skip_, opt);
      skip = &skip_;
    }
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      const T v = out.data[i] + skip->data[i];
      out.data[i] = v > T(0) ? v : T(0);
    }
  }

  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& g,
                Tensor<T>& gin) override {
    gsum_ = g;
    for (std::size_t i = 0; i < g.data.size(); ++i)
      if (!(out.data[i] > T(0))) gsum_.data[i] = T(0);
    inner_.backward(gsum_, gin);
    if (projection_.empty()) {
      for (std::size_t i = 0; i < gin.data.size(); ++i) gin.data[i] += gsum_.data[i];
    } else {
      projection_.backward(gsum_, gskip_);
      for (std::size_t i = 0; i < gin.data.size(); ++i) gin.data[i] += gskip_.data[i];
    }
    (void)in;
  }

  void collect_params(std::vector<ParamView<T>>& p) override {
    inner_.collect_params(p);
    projection_.collect_params(p);
  }
  void collect_state(std::vector<std::vector<T>*>& s) override {
    inner_.collect_state(s);
    projection_.collect_state(s);
  }
  void zero_grad() override {
    inner_.zero_grad();
    projection_.zero_grad();
  }
  void activation_pattern(const Tensor<T>& out, std::vector<std::uint8_t>& p) const override {
    inner_.activation_pattern(p);
    projection_.activation_pattern(p);
    for (T v : out.data) p.push_back(v > T(0));
  }
  // inner + projection + the add + the ReLU after it
  std::size_t counted() const override { return inner_.counted() + projection_.counted() + 2; }

 private:
  Sequential<T> inner_;
  Sequential<T> projection_;
  Tensor<T> skip_, gsum_, gskip_;
};

template <class T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& s) {
  switch (s.kind) {
    case LayerKind::Dense:
    case LayerKind::LinearOutput: return std::make_unique<Dense<T>>(s.out);
    case LayerKind::Conv: return std::make_unique<Conv<T>>(s.out, s.kernel, s.stride);
    case LayerKind::BatchNorm: return std::make_unique<BatchNorm<T>>();
    case LayerKind::Relu: return std::make_unique<Relu<T>>();
    case LayerKind::Dropout: return std::make_unique<Dropout<T>>(s.rate);
    case LayerKind::Residual: return std::make_unique<Residual<T>>(s.inner, s.projection);
    case LayerKind::GlobalAvgPool: return std::make_unique<GlobalAvgPool<T>>();
    case LayerKind::Flatten: return std::make_unique<Flatten<T>>();
  }
  fail(ErrorKind::Shape, "unknown layer kind");
}

}  // namespace myo::detail
