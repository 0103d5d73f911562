#include "myoloop/nnet.hpp"

#include <cmath>

#include <json.hpp>

#include "nnet_layers.hpp"

namespace myo {

using nlohmann::json;

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv: return "conv";
    case LayerKind::BatchNorm: return "batch_norm";
    case LayerKind::Relu: return "relu";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::Residual: return "residual";
    case LayerKind::GlobalAvgPool: return "global_avg_pool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::LinearOutput: return "linear_output";
  }
  return "?";
}

namespace {

LayerKind kind_from(const std::string& s) {
  for (auto k : {LayerKind::Dense, LayerKind::Conv, LayerKind::BatchNorm, LayerKind::Relu,
                 LayerKind::Dropout, LayerKind::Residual, LayerKind::GlobalAvgPool,
                 LayerKind::Flatten, LayerKind::LinearOutput})
    if (s == to_string(k)) return k;
  fail(ErrorKind::Parse, "unknown layer kind '" + s + "'");
}

json layer_json(const LayerSpec& s) {
  json j{{"kind", to_string(s.kind)}};
  switch (s.kind) {
    case LayerKind::Dense:
    case LayerKind::LinearOutput: j["out"] = s.out; break;
    case LayerKind::Conv:
      j["out"] = s.out;
      j["kernel"] = s.kernel;
      j["stride"] = s.stride;
      break;
    case LayerKind::Dropout: j["rate"] = s.rate; break;
    case LayerKind::Residual: {
      json inner = json::array(), proj = json::array();
      for (const auto& l : s.inner) inner.push_back(layer_json(l));
      for (const auto& l : s.projection) proj.push_back(layer_json(l));
      j["inner"] = inner;
      j["projection"] = proj;
      break;
    }
    default: break;
  }
  return j;
}

LayerSpec layer_from(const json& j) {
  LayerSpec s;
  s.kind = kind_from(j.at("kind").get<std::string>());
  switch (s.kind) {
    case LayerKind::Dense:
    case LayerKind::LinearOutput: s.out = j.at("out").get<std::size_t>(); break;
    case LayerKind::Conv:
      s.out = j.at("out").get<std::size_t>();
      s.kernel = j.at("kernel").get<int>();
      s.stride = j.at("stride").get<int>();
      break;
    case LayerKind::Dropout: s.rate = j.at("rate").get<double>(); break;
    case LayerKind::Residual:
      for (const auto& l : j.at("inner")) s.inner.push_back(layer_from(l));
      for (const auto& l : j.at("projection")) s.projection.push_back(layer_from(l));
      break;
    default: break;
  }
  return s;
}

std::size_t count_outputs(const std::vector<LayerSpec>& layers) {
  std::size_t n = 0;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::LinearOutput) ++n;
    n += count_outputs(l.inner) + count_outputs(l.projection);
  }
  return n;
}

}  // namespace

std::string spec_to_json(const NetworkSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers) layers.push_back(layer_json(l));
  return json{{"input", {spec.input.c, spec.input.h, spec.input.w}}, {"layers", layers}}.dump();
}

NetworkSpec spec_from_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    NetworkSpec spec;
    const auto& in = j.at("input");
    spec.input = {in.at(0).get<std::size_t>(), in.at(1).get<std::size_t>(), in.at(2).get<std::size_t>()};
    for (const auto& l : j.at("layers")) spec.layers.push_back(layer_from(l));
    return spec;
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string("network spec: ") + e.what());
  }
}

NetworkSpec shallow_spec(std::size_t hidden, double dropout) {
  NetworkSpec s;
  s.layers = {LayerSpec::flatten(),
              LayerSpec::dense(hidden), LayerSpec::relu(), LayerSpec::dropout(dropout),
              LayerSpec::dense(hidden), LayerSpec::relu(), LayerSpec::dropout(dropout),
              LayerSpec::dense(hidden), LayerSpec::relu(),
              LayerSpec::linear_output(kDof)};
  return s;
}

NetworkSpec deep_spec(std::array<std::size_t, 3> widths, int blocks_per_stage) {
  require(widths[0] > 0 && widths[0] <= widths[1] && widths[1] <= widths[2], ErrorKind::Domain,
          "deep widths must be positive and ascending");
  require(blocks_per_stage >= 1, ErrorKind::Domain, "need at least one block per stage");
  NetworkSpec s;
  s.layers = {LayerSpec::conv(widths[0]), LayerSpec::batch_norm(), LayerSpec::relu()};
  for (std::size_t stage = 0; stage < 3; ++stage) {
    for (int b = 0; b < blocks_per_stage; ++b) {
      const bool down = stage > 0 && b == 0;
      const int stride = down ? 2 : 1;
      std::vector<LayerSpec> inner = {LayerSpec::conv(widths[stage], 3, stride), LayerSpec::batch_norm(),
                                      LayerSpec::relu(), LayerSpec::conv(widths[stage]),
                                      LayerSpec::batch_norm()};
      std::vector<LayerSpec> proj;
      if (down) proj = {LayerSpec::conv(widths[stage], 1, 2), LayerSpec::batch_norm()};
      s.layers.push_back(LayerSpec::residual(std::move(inner), std::move(proj)));
    }
  }
  s.layers.push_back(LayerSpec::global_avg_pool());
  s.layers.push_back(LayerSpec::linear_output(kDof));
  return s;
}

// ---------------------------------------------------------------------------

template <class T>
Network<T>::Network(const NetworkSpec& spec, std::uint64_t seed)
    : spec_(spec), body_(std::make_unique<detail::Sequential<T>>(spec.layers)) {
  require(spec.input.size() > 0, ErrorKind::Shape, "network input shape is empty");
  require(count_outputs(spec.layers) == 1 && !spec.layers.empty() &&
              spec.layers.back().kind == LayerKind::LinearOutput,
          ErrorKind::Shape, "network must end in exactly one linear_output layer");
  body_->configure(spec.input);
  std::mt19937_64 rng(seed);
  body_->init(rng);
}

template <class T>
Network<T>::~Network() = default;
template <class T>
Network<T>::Network(const Network& o)
    : spec_(o.spec_), body_(std::make_unique<detail::Sequential<T>>(*o.body_)) {}
template <class T>
Network<T>& Network<T>::operator=(const Network& o) {
  if (this != &o) {
    spec_ = o.spec_;
    body_ = std::make_unique<detail::Sequential<T>>(*o.body_);
  }
  return *this;
}
template <class T>
Network<T>::Network(Network&&) noexcept = default;
template <class T>
Network<T>& Network<T>::operator=(Network&&) noexcept = default;

template <class T>
Shape Network<T>::output_shape() const {
  return body_->shapes().back();
}

template <class T>
std::vector<T> Network<T>::forward(std::span<const T> input, std::size_t n, const ForwardOptions& opt) {
  require(input.size() == n * spec_.input.size(), ErrorKind::Shape,
          "network input does not match its declared shape");
  detail::Tensor<T> in, out;
  in.n = n;
  in.shape = spec_.input;
  in.data.assign(input.begin(), input.end());
  body_->forward(in, out, opt);
  return std::move(out.data);
}

template <class T>
void Network<T>::backward(std::span<const T> grad_output) {
  detail::Tensor<T> g, gin;
  const Shape out = output_shape();
  require(grad_output.size() % out.size() == 0, ErrorKind::Shape, "gradient has the wrong shape");
  g.n = grad_output.size() / out.size();
  g.shape = out;
  g.data.assign(grad_output.begin(), grad_output.end());
  body_->backward(g, gin);
}

template <class T>
void Network<T>::zero_grad() {
  body_->zero_grad();
}

template <class T>
std::vector<std::uint8_t> Network<T>::activation_pattern() const {
  std::vector<std::uint8_t> p;
  body_->activation_pattern(p);
  return p;
}

template <class T>
std::vector<ParamView<T>> Network<T>::parameters() {
  std::vector<ParamView<T>> p;
  body_->collect_params(p);
  return p;
}

template <class T>
std::vector<std::vector<T>*> Network<T>::state_buffers() {
  std::vector<std::vector<T>*> s;
  body_->collect_state(s);
  return s;
}

template <class T>
std::vector<const std::vector<T>*> Network<T>::state_buffers() const {
  std::vector<std::vector<T>*> s;
  body_->collect_state(s);
  return {s.begin(), s.end()};
}

template <class T>
std::size_t Network<T>::parameter_count() const {
  std::vector<ParamView<T>> p;
  body_->collect_params(p);
  std::size_t n = 0;
  for (const auto& v : p) n += v.value.size();
  return n;
}

template <class T>
std::size_t Network<T>::state_size() const {
  std::size_t n = 0;
  for (const auto* b : state_buffers()) n += b->size();
  return n;
}

template <class T>
std::size_t Network<T>::counted_layers() const {
  return body_->counted();
}

template <class T>
std::size_t Network<T>::sublayer_count() const {
  return body_->counted() + 2;
}

template <class T>
std::vector<Shape> Network<T>::layer_output_shapes() const {
  return body_->shapes();
}

template class Network<float>;
template class Network<double>;

template <class T>
T mse_loss(std::span<const T> output, std::span<const T> target, std::span<T> grad,
           std::size_t observations) {
  require(output.size() == target.size() && grad.size() == output.size() && !output.empty(),
          ErrorKind::Shape, "loss buffers differ in size");
  require(observations > 0 && output.size() % observations == 0, ErrorKind::Shape,
          "loss buffer is not a whole number of observations");
  const T n = static_cast<T>(observations);
  T loss = 0;
  for (std::size_t i = 0; i < output.size(); ++i) {
    const T d = output[i] - target[i];
    loss += d * d;
    grad[i] = d / n;
  }
  return loss / (T(2) * n);
}

template float mse_loss<float>(std::span<const float>, std::span<const float>, std::span<float>,
                               std::size_t);
template double mse_loss<double>(std::span<const double>, std::span<const double>,
                                 std::span<double>, std::size_t);

// ---------------------------------------------------------------------------

GradCheckResult grad_check(const NetworkSpec& spec, std::uint64_t seed, const GradCheckOptions& options) {
  Network<double> net(spec, seed);
  const std::size_t n = options.batch;
  const std::size_t in_size = spec.input.size();
  const std::size_t out_size = net.output_shape().size();

  std::mt19937_64 rng(seed ^ 0x5eedull);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> input(n * in_size), target(n * out_size);
  for (double& v : input) v = normal(rng);
  for (double& v : target) v = 0.5 * normal(rng);

  // Move gamma/beta off 1/0 so their gradients are generic.
  for (auto& p : net.parameters())
    for (double& v : p.value) v += 0.1 * normal(rng);

  const ForwardOptions opt{Mode::Train, false, nullptr};
  if (options.zero_loss) target = net.forward(input, n, opt);

  auto loss_at = [&](std::vector<std::uint8_t>* pattern) {
    const auto out = net.forward(input, n, opt);
    if (pattern) *pattern = net.activation_pattern();
    std::vector<double> g(out.size());
    return mse_loss<double>(out, target, g, n);
  };

  net.zero_grad();
  std::vector<std::uint8_t> base;
  {
    const auto out = net.forward(input, n, opt);
    base = net.activation_pattern();
    std::vector<double> g(out.size());
    mse_loss<double>(out, target, g, n);
    net.backward(g);
  }

  GradCheckResult r;
  double norm2 = 0;
  std::vector<std::uint8_t> pat_up, pat_down;
  for (auto& p : net.parameters()) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double analytic = p.grad[i];
      norm2 += analytic * analytic;
      const double saved = p.value[i];
      double eps = options.eps, numeric = 0;
      bool smooth = false;
      for (int attempt = 0; attempt < 4 && !smooth; ++attempt, eps /= 10) {
        p.value[i] = saved + eps;
        const double up = loss_at(&pat_up);
        p.value[i] = saved - eps;
        const double down = loss_at(&pat_down);
        numeric = (up - down) / (2 * eps);
        smooth = pat_up == base && pat_down == base;
        if (!smooth && attempt == 0) ++r.kink_retries;
      }
      p.value[i] = saved;
      ++r.parameters;
      if (!smooth) {
        ++r.kink_skipped;
        continue;
      }
      const double abs_err = std::abs(analytic - numeric);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      r.max_abs_error = std::max(r.max_abs_error, abs_err);
      r.max_relative_error = std::max(r.max_relative_error, abs_err / denom);
    }
  }
  r.gradient_norm = std::sqrt(norm2);
  return r;
}

}  // namespace myo
