#pragma once

// Minimal tensor/backprop core and the two decoder architectures.
//
// Activations are NCHW; a dense feature vector of width F is the shape
// (F, 1, 1). Layers are templated on the scalar type so the same code runs
// in float for training and in double for gradient checks.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "myoloop/dataset.hpp"
#include "myoloop/error.hpp"
#include "myoloop/kalman.hpp"
#include "myoloop/sigproc.hpp"

namespace myo {

struct Shape {
  std::size_t c = 1, h = 1, w = 1;
  std::size_t size() const { return c * h * w; }
  bool operator==(const Shape&) const = default;
};

enum class LayerKind {
  Dense,
  Conv,
  BatchNorm,
  Relu,
  Dropout,
  Residual,
  GlobalAvgPool,
  Flatten,
  LinearOutput,
};

const char* to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t out = 0;  // dense / conv / linear_output width
  int kernel = 3;       // conv: 1 or 3
  int stride = 1;       // conv: 1 or 2
  double rate = 0.0;    // dropout
  std::vector<LayerSpec> inner;       // residual body
  std::vector<LayerSpec> projection;  // residual skip; empty = identity

  static LayerSpec make(LayerKind kind, std::size_t out = 0) {
    LayerSpec s;
    s.kind = kind;
    s.out = out;
    return s;
  }
  static LayerSpec dense(std::size_t out) { return make(LayerKind::Dense, out); }
  static LayerSpec conv(std::size_t out, int kernel = 3, int stride = 1) {
    LayerSpec s = make(LayerKind::Conv, out);
    s.kernel = kernel;
    s.stride = stride;
    return s;
  }
  static LayerSpec batch_norm() { return make(LayerKind::BatchNorm); }
  static LayerSpec relu() { return make(LayerKind::Relu); }
  static LayerSpec dropout(double rate) {
    LayerSpec s = make(LayerKind::Dropout);
    s.rate = rate;
    return s;
  }
  static LayerSpec residual(std::vector<LayerSpec> inner, std::vector<LayerSpec> projection = {}) {
    LayerSpec s = make(LayerKind::Residual);
    s.inner = std::move(inner);
    s.projection = std::move(projection);
    return s;
  }
  static LayerSpec global_avg_pool() { return make(LayerKind::GlobalAvgPool); }
  static LayerSpec flatten() { return make(LayerKind::Flatten); }
  static LayerSpec linear_output(std::size_t out = kDof) { return make(LayerKind::LinearOutput, out); }

  bool operator==(const LayerSpec&) const = default;
};

struct NetworkSpec {
  Shape input{1, kElectrodes, kImageTicks};
  std::vector<LayerSpec> layers;

  bool operator==(const NetworkSpec&) const = default;
};

std::string spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const std::string& text);

/// flatten -> 3 x (dense 128, relu[, dropout 0.5]) -> linear_output(6)
NetworkSpec shallow_spec(std::size_t hidden = 128, double dropout = 0.5);

/// Stem conv + 9 residual blocks in 3 stages, global average pool, linear output.
NetworkSpec deep_spec(std::array<std::size_t, 3> widths = {8, 16, 32}, int blocks_per_stage = 3);

enum class Mode { Train, Eval };

struct ForwardOptions {
  Mode mode = Mode::Eval;
  bool dropout = true;               // only consulted in Train mode
  std::mt19937_64* rng = nullptr;    // dropout masks
};

template <class T>
struct ParamView {
  std::span<T> value;
  std::span<T> grad;
};

namespace detail {
template <class T>
class Sequential;
}

template <class T>
class Network {
 public:
  Network(const NetworkSpec& spec, std::uint64_t seed);
  ~Network();
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;

  const NetworkSpec& spec() const { return spec_; }
  Shape output_shape() const;

  /// `input` holds n samples of spec().input; returns [n x outputs].
  std::vector<T> forward(std::span<const T> input, std::size_t n, const ForwardOptions& opt);
  /// Backprop of dLoss/dOutput through the most recent forward call;
  /// parameter gradients accumulate.
  void backward(std::span<const T> grad_output);
  void zero_grad();
  /// On/off state of every ReLU unit in the most recent forward call.
  std::vector<std::uint8_t> activation_pattern() const;

  std::vector<ParamView<T>> parameters();
  /// Every serialised buffer (weights, biases, gamma, beta, running stats)
  /// in layer declaration order.
  std::vector<std::vector<T>*> state_buffers();
  std::vector<const std::vector<T>*> state_buffers() const;

  std::size_t parameter_count() const;
  std::size_t state_size() const;
  /// Layers as listed in the NetworkSpec (residual blocks expanded, input/output
  /// markers excluded).
  std::size_t counted_layers() const;
  /// Every conv/BN/ReLU/add/pool/dense layer plus input and output markers.
  std::size_t sublayer_count() const;
  /// Output shape after each top-level layer.
  std::vector<Shape> layer_output_shapes() const;

 private:
  NetworkSpec spec_;
  std::unique_ptr<detail::Sequential<T>> body_;
};

extern template class Network<float>;
extern template class Network<double>;

/// Half squared error summed over the outputs of each observation and
/// averaged over observations, sum(d^2) / (2 N); fills grad = d / N.
/// The per-element MSE is 2 * loss / outputs_per_observation.
template <class T>
T mse_loss(std::span<const T> output, std::span<const T> target, std::span<T> grad,
           std::size_t observations);

// ---------------------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  int max_epochs = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainingHistory {
  std::vector<double> train_rmse;
  std::vector<double> validation_rmse;
  int stopped_epoch = 0;  // epoch whose weights were kept (1-based)
  double wall_time_s = 0;
  bool early_stopped = false;
};

struct InputNormalization {
  std::array<float, kElectrodes> mean{};
  std::array<float, kElectrodes> stddev{};

  bool operator==(const InputNormalization&) const = default;
};

enum class Architecture { Shallow, Deep, Custom };
const char* to_string(Architecture arch);

struct Decoder {
  Architecture arch = Architecture::Custom;
  Network<float> net;
  InputNormalization norm;
  std::uint64_t seed = 0;
  TrainingHistory history;
  /// Output smoother fitted on the network's own training-set predictions.
  std::optional<KalmanParams> smoother;

  Decoder(Architecture a, Network<float> n) : arch(a), net(std::move(n)) {
    norm.stddev.fill(1.0f);
  }
};

Decoder build_shallow(std::uint64_t seed);
Decoder build_deep(std::uint64_t seed, std::array<std::size_t, 3> widths = {8, 16, 32});

/// Normalises and lays out one image as network input.
std::vector<float> normalized_input(const InputNormalization& norm, const FeatureImage& image);

/// Eval: dropout off, BN running stats, output clamped to [-1, 1].
/// Train: inverted dropout, batch statistics, no clamp.
KinematicState forward(Decoder& decoder, const FeatureImage& image, Mode mode = Mode::Eval,
                       std::mt19937_64* rng = nullptr);

/// Batched eval-mode predictions (clamped) for every sample in the set.
std::vector<KinematicState> predict_all(Decoder& decoder, const ImageSet& data);

double rmse(std::span<const KinematicState> predicted, const ImageSet& data);

InputNormalization fit_normalization(const ImageSet& data);

std::pair<Decoder, TrainingHistory> train(const NetworkSpec& spec, Architecture arch,
                                          const ImageSet& train_data, const ImageSet& val_data,
                                          const TrainConfig& cfg);

/// Fits the output smoother: states = labels, observations = predictions.
void fit_smoother(Decoder& decoder, const ImageSet& train_data);

struct PipelineConfig {
  Architecture arch = Architecture::Shallow;
  std::array<std::size_t, 3> deep_widths{8, 16, 32};
  TrainConfig train;
  bool fit_smoother = false;
};

/// Accumulates the sessions, holds out the tail of each for validation,
/// trains and optionally fits the output smoother on the training part.
Decoder train_on_sessions(std::span<const SessionDataset> sessions, const PipelineConfig& cfg);

struct GradCheckResult {
  double max_relative_error = 0;
  double max_abs_error = 0;
  double gradient_norm = 0;
  std::size_t parameters = 0;
  /// Parameters whose probe flipped a ReLU and was redone with a smaller step.
  std::size_t kink_retries = 0;
  /// Parameters left out because even the smallest step crossed a kink.
  std::size_t kink_skipped = 0;
};

struct GradCheckOptions {
  double eps = 1e-4;
  std::size_t batch = 4;
  /// Use the network's own outputs as labels (stationary point).
  bool zero_loss = false;
};

/// Analytic vs central-difference gradient of the MSE loss on every
/// parameter, in double precision, dropout off, batch-norm in batch mode.
/// A probe whose +/-eps evaluations change any ReLU on/off state measures a
/// kink rather than the derivative; it is retried with eps / 10 up to three
/// times and the parameter is skipped if it still crosses.
GradCheckResult grad_check(const NetworkSpec& spec, std::uint64_t seed,
                           const GradCheckOptions& options = {});

void save_model(const Decoder& decoder, const std::string& path);
Decoder load_model(const std::string& path);
std::string encode_model(const Decoder& decoder);
Decoder decode_model(const std::string& bytes);

}  // namespace myo
