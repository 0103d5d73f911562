#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "myoloop/nnet.hpp"

namespace myo {

const char* to_string(Architecture arch) {
  switch (arch) {
    case Architecture::Shallow: return "shallow";
    case Architecture::Deep: return "deep";
    case Architecture::Custom: return "custom";
  }
  return "?";
}

void TrainConfig::validate() const {
  require(learning_rate > 0 && std::isfinite(learning_rate), ErrorKind::Domain,
          "learning rate must be positive");
  require(momentum >= 0 && momentum < 1, ErrorKind::Domain, "momentum must lie in [0, 1)");
  require(batch_size > 0, ErrorKind::Domain, "batch size must be positive");
  require(max_epochs > 0, ErrorKind::Domain, "max_epochs must be positive");
}

Decoder build_shallow(std::uint64_t seed) {
  Decoder d(Architecture::Shallow, Network<float>(shallow_spec(), seed));
  d.seed = seed;
  return d;
}

Decoder build_deep(std::uint64_t seed, std::array<std::size_t, 3> widths) {
  Decoder d(Architecture::Deep, Network<float>(deep_spec(widths), seed));
  d.seed = seed;
  return d;
}

namespace {

void normalize_into(const InputNormalization& norm, std::span<float> image) {
  for (std::size_t c = 0; c < kElectrodes; ++c) {
    const float mu = norm.mean[c];
    const float inv = 1.0f / norm.stddev[c];
    float* row = image.data() + c * kImageTicks;
    for (std::size_t t = 0; t < kImageTicks; ++t) row[t] = (row[t] - mu) * inv;
  }
}

/// Normalised images and labels for the listed samples, packed contiguously.
void gather(const ImageSet& data, const InputNormalization& norm, std::span<const std::size_t> idx,
            std::vector<float>& images, std::vector<float>& labels) {
  constexpr std::size_t kPixels = kElectrodes * kImageTicks;
  images.resize(idx.size() * kPixels);
  labels.resize(idx.size() * kDof);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    std::span<float> img(images.data() + k * kPixels, kPixels);
    data.image(idx[k], img);
    normalize_into(norm, img);
    const auto y = data.label(idx[k]);
    std::copy(y.begin(), y.end(), labels.begin() + static_cast<std::ptrdiff_t>(k * kDof));
  }
}

void require_decoder_input(const Decoder& d, const ImageSet& data) {
  require(data.n_channels() == kElectrodes, ErrorKind::Shape,
          "decoders take 32-channel feature images");
  require(d.net.spec().input == Shape{1, kElectrodes, kImageTicks}, ErrorKind::Shape,
          "decoder network does not take 32x32 images");
}

}  // namespace

std::vector<float> normalized_input(const InputNormalization& norm, const FeatureImage& image) {
  std::vector<float> v(image.values.begin(), image.values.end());
  normalize_into(norm, v);
  return v;
}

KinematicState forward(Decoder& decoder, const FeatureImage& image, Mode mode, std::mt19937_64* rng) {
  const auto input = normalized_input(decoder.norm, image);
  const auto out = decoder.net.forward(input, 1, ForwardOptions{mode, true, rng});
  require(out.size() == kDof, ErrorKind::Shape, "decoder must emit six outputs");
  KinematicState k{};
  for (std::size_t d = 0; d < kDof; ++d) {
    k[d] = static_cast<double>(out[d]);
    if (mode == Mode::Eval) k[d] = std::clamp(k[d], -1.0, 1.0);
  }
  return k;
}

std::vector<KinematicState> predict_all(Decoder& decoder, const ImageSet& data) {
  require_decoder_input(decoder, data);
  constexpr std::size_t kChunk = 256;
  std::vector<KinematicState> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  std::vector<float> images, labels;
  const ForwardOptions opt{Mode::Eval, false, nullptr};
  for (std::size_t first = 0; first < data.size(); first += kChunk) {
    const std::size_t n = std::min(kChunk, data.size() - first);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), first);
    gather(data, decoder.norm, idx, images, labels);
    const auto y = decoder.net.forward(images, n, opt);
    for (std::size_t k = 0; k < n; ++k) {
      KinematicState s{};
      for (std::size_t d = 0; d < kDof; ++d)
        s[d] = std::clamp(static_cast<double>(y[k * kDof + d]), -1.0, 1.0);
      out.push_back(s);
    }
  }
  return out;
}

double rmse(std::span<const KinematicState> predicted, const ImageSet& data) {
  require(predicted.size() == data.size() && !predicted.empty(), ErrorKind::Shape,
          "prediction count does not match the data");
  double sum = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto y = data.label(i);
    for (std::size_t d = 0; d < kDof; ++d) {
      const double e = predicted[i][d] - static_cast<double>(y[d]);
      sum += e * e;
    }
  }
  return std::sqrt(sum / static_cast<double>(predicted.size() * kDof));
}

InputNormalization fit_normalization(const ImageSet& data) {
  require(data.size() > 0, ErrorKind::Domain, "cannot fit normalisation on empty data");
  std::array<double, kElectrodes> sum{}, sum2{};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = data.feature_row(data.end_tick(i));
    for (std::size_t c = 0; c < kElectrodes; ++c) {
      sum[c] += row[c];
      sum2[c] += static_cast<double>(row[c]) * row[c];
    }
  }
  const auto n = static_cast<double>(data.size());
  InputNormalization norm;
  for (std::size_t c = 0; c < kElectrodes; ++c) {
    const double mean = sum[c] / n;
    const double var = std::max(0.0, sum2[c] / n - mean * mean);
    const double sd = std::sqrt(var);
    norm.mean[c] = static_cast<float>(mean);
    norm.stddev[c] = sd > 1e-12 ? static_cast<float>(sd) : 1.0f;
  }
  return norm;
}

std::pair<Decoder, TrainingHistory> train(const NetworkSpec& spec, Architecture arch,
                                          const ImageSet& train_data, const ImageSet& val_data,
                                          const TrainConfig& cfg) {
  cfg.validate();
  require(train_data.size() > 0, ErrorKind::Domain, "training data is empty");
  require(val_data.size() > 0, ErrorKind::Domain, "validation data is empty");

  const auto started = std::chrono::steady_clock::now();
  Decoder decoder(arch, Network<float>(spec, cfg.seed));
  decoder.seed = cfg.seed;
  require_decoder_input(decoder, train_data);
  decoder.norm = fit_normalization(train_data);

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto params = decoder.net.parameters();
  std::vector<std::vector<float>> velocity;
  for (const auto& p : params) velocity.emplace_back(p.value.size(), 0.0f);

  const auto lr = static_cast<float>(cfg.learning_rate);
  const auto mu = static_cast<float>(cfg.momentum);
  const ForwardOptions train_opt{Mode::Train, true, &rng};

  TrainingHistory history;
  Network<float> previous = decoder.net;
  std::vector<float> images, labels, grad;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - first);
      gather(train_data, decoder.norm, std::span(order).subspan(first, n), images, labels);
      const auto y = decoder.net.forward(images, n, train_opt);
      grad.resize(y.size());
      // per-element MSE of the batch
      loss_sum += 2.0 * mse_loss<float>(y, labels, grad, n) / static_cast<double>(kDof);
      ++batches;
      decoder.net.zero_grad();
      decoder.net.backward(grad);
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto& v = velocity[k];
        auto value = params[k].value;
        const auto g = params[k].grad;
        for (std::size_t i = 0; i < v.size(); ++i) {
          v[i] = mu * v[i] - lr * g[i];
          value[i] += v[i];
        }
      }
    }
    history.train_rmse.push_back(std::sqrt(loss_sum / static_cast<double>(batches)));
    const auto pred = predict_all(decoder, val_data);
    const double val = rmse(pred, val_data);
    history.validation_rmse.push_back(val);
    require(std::isfinite(val), ErrorKind::Numeric, "training diverged");

    if (epoch > 1 && val > history.validation_rmse[history.validation_rmse.size() - 2]) {
      decoder.net = std::move(previous);
      history.stopped_epoch = epoch - 1;
      history.early_stopped = true;
      break;
    }
    history.stopped_epoch = epoch;
    if (epoch < cfg.max_epochs) previous = decoder.net;
  }

  history.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  decoder.history = history;
  return {std::move(decoder), std::move(history)};
}

void fit_smoother(Decoder& decoder, const ImageSet& train_data) {
  const auto pred = predict_all(decoder, train_data);
  std::vector<double> states, obs;
  states.reserve(pred.size() * kDof);
  obs.reserve(pred.size() * kDof);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto y = train_data.label(i);
    for (std::size_t d = 0; d < kDof; ++d) {
      states.push_back(y[d]);
      obs.push_back(pred[i][d]);
    }
  }
  decoder.smoother = fit_kalman(states, obs, kDof, kDof);
}

Decoder train_on_sessions(std::span<const SessionDataset> sessions, const PipelineConfig& cfg) {
  require(!sessions.empty(), ErrorKind::Domain, "training needs at least one session");
  require(cfg.arch != Architecture::Custom, ErrorKind::Domain, "choose the shallow or deep network");
  const SessionDataset all = accumulate(sessions);
  const Split parts = split(all);
  const ImageSet train_set(all, parts.train_ticks);
  const ImageSet val_set(all, parts.validation_ticks);
  const NetworkSpec spec =
      cfg.arch == Architecture::Deep ? deep_spec(cfg.deep_widths) : shallow_spec();
  auto trained = train(spec, cfg.arch, train_set, val_set, cfg.train);
  Decoder decoder = std::move(trained.first);
  if (cfg.fit_smoother) fit_smoother(decoder, train_set);
  return decoder;
}

}  // namespace myo
