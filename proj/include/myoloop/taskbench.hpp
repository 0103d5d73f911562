#pragma once

// Closed-loop target-matching task: 7 s trials at 30 Hz scored by the longest
// continuous hold inside the target window, plus counterbalanced cross-over
// experiments between decoder variants.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "myoloop/nnet.hpp"
#include "myoloop/stats.hpp"
#include "myoloop/synthem.hpp"

namespace myo {

inline constexpr std::size_t kTrialTicks = 210;
inline constexpr double kWindowFraction = 0.10;
/// Rest ticks run before every trial so the MAV window, the image history
/// and any smoother state are settled when scoring starts.
inline constexpr std::size_t kWarmupTicks = 45;

struct TargetSpec {
  std::vector<int> selected_dofs;
  KinematicState target{};
  double window_fraction = kWindowFraction;

  /// Absolute half-width per DOF; the full-scale range is [-1, 1].
  double half_width() const { return window_fraction * 2.0; }
  void validate() const;
  bool operator==(const TargetSpec&) const = default;
};

/// Picks `n_selected` distinct DOFs with magnitudes uniform in [0.3, 0.9]
/// and random sign.
TargetSpec sample_target(std::mt19937_64& rng, std::size_t n_selected = 1);

bool in_window(const KinematicState& state, const TargetSpec& spec);

/// Longest run of true flags, in seconds at the tick rate.
double longest_run_seconds(std::span<const bool> flags);

/// Throws Shape unless the trajectory has exactly kTrialTicks rows.
double hold_duration(std::span<const KinematicState> trajectory, const TargetSpec& spec);

// ---------------------------------------------------------------------------

/// Anything that turns the per-tick feature history into a kinematic
/// estimate. `intent` is passed only so test decoders can cheat.
class TrialDecoder {
 public:
  virtual ~TrialDecoder() = default;
  virtual void reset() {}
  virtual KinematicState step(const FeatureImage& image, const FeatureFrame& newest,
                              const KinematicState& intent) = 0;
  virtual std::unique_ptr<TrialDecoder> clone() const = 0;
  virtual std::string name() const = 0;
};

/// Network decoder with an optional causal output smoother.
class NetTrialDecoder : public TrialDecoder {
 public:
  NetTrialDecoder(std::shared_ptr<const Decoder> decoder, bool use_smoother);
  NetTrialDecoder(const NetTrialDecoder&) = delete;
  NetTrialDecoder& operator=(const NetTrialDecoder&) = delete;
  void reset() override;
  KinematicState step(const FeatureImage& image, const FeatureFrame& newest,
                      const KinematicState& intent) override;
  std::unique_ptr<TrialDecoder> clone() const override;
  std::string name() const override;

 private:
  std::shared_ptr<const Decoder> source_;
  Decoder net_;  // private copy: forward passes cache activations
  std::optional<KalmanSmoother> smoother_;
};

/// Baseline: Kalman filter decoding kinematics straight from feature
/// channels (state = kinematics, observation = MAV vector).
class KalmanFeatureDecoder : public TrialDecoder {
 public:
  explicit KalmanFeatureDecoder(KalmanParams params);
  void reset() override;
  KinematicState step(const FeatureImage& image, const FeatureFrame& newest,
                      const KinematicState& intent) override;
  std::unique_ptr<TrialDecoder> clone() const override;
  std::string name() const override { return "kalman-features"; }

  const KalmanParams& params() const { return params_; }

 private:
  KalmanParams params_;
  std::optional<KalmanState> state_;
};

/// Fits the feature decoder on every tick of a dataset.
KalmanParams fit_feature_kalman(const SessionDataset& ds);

/// Returns the intended state unchanged.
class OracleDecoder : public TrialDecoder {
 public:
  KinematicState step(const FeatureImage&, const FeatureFrame&, const KinematicState& intent) override {
    return clamp_state(intent);
  }
  std::unique_ptr<TrialDecoder> clone() const override { return std::make_unique<OracleDecoder>(); }
  std::string name() const override { return "oracle"; }
};

class ZeroDecoder : public TrialDecoder {
 public:
  KinematicState step(const FeatureImage&, const FeatureFrame&, const KinematicState&) override {
    return {};
  }
  std::unique_ptr<TrialDecoder> clone() const override { return std::make_unique<ZeroDecoder>(); }
  std::string name() const override { return "zero"; }
};

// ---------------------------------------------------------------------------

/// Synthetic participant behaviour: watches the decoded hand through a
/// reaction delay and nudges its intent toward the target by a first-order
/// pursuit step, u_k = u_{k-1} + alpha (target - y_{k-1-delay}), emitting
/// clamp(u_k + noise). With a decoder that returns the intent, no delay and
/// no noise this is the plain pursuit u_k = target (1 - (1 - alpha)^k).
struct PursuitController {
  double time_constant_s = 0.5;
  double delay_s = 0.15;
  double noise_sigma = 0.05;

  std::size_t delay_ticks() const;
  /// Per-tick pursuit fraction 1 - exp(-dt / tau).
  double alpha() const;
  void validate() const;
};

class PursuitAgent {
 public:
  PursuitAgent(const TargetSpec& target, const PursuitController& controller, std::uint64_t seed);
  /// Intent for the next tick.
  KinematicState intent();
  /// Feedback: the decoded state shown for the tick just run.
  void observe(const KinematicState& decoded);

 private:
  TargetSpec target_;
  PursuitController controller_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> noise_{0.0, 1.0};
  KinematicState u_{};
  std::vector<KinematicState> seen_;
};

enum class IntentSource { Synthetic, External };

struct TrialOptions {
  IntentSource source = IntentSource::Synthetic;
  PursuitController controller;
  /// kTrialTicks intents, required in External mode.
  std::vector<KinematicState> external_intent;
  std::uint64_t seed = 0;
  std::string condition;
};

struct TrialResult {
  double hold_duration_s = 0;
  std::vector<bool> in_window;
  std::vector<KinematicState> decoded;
  std::vector<KinematicState> intended;
  std::string condition;
  std::uint64_t seed = 0;
  bool partial = false;
};

struct TickOutcome {
  std::size_t tick = 0;  // 0-based trial tick
  KinematicState intent{};
  KinematicState decoded{};
  bool in_window = false;
  std::size_t hold_run_ticks = 0;  // current consecutive in-window run
  std::size_t best_run_ticks = 0;
};

/// Intent to EMG to MAV to feature image to decoder, one tick at a time.
class DecodePipeline {
 public:
  DecodePipeline(const ParticipantModel& participant, const SleevePlacement& placement,
                 std::uint64_t emg_seed);
  /// Runs one tick; the intent is used as given and the decode is clamped.
  KinematicState advance(TrialDecoder& decoder, const KinematicState& intent);

 private:
  EmgSynthesizer synth_;
  MavStream mav_;
  FrameHistory history_;
  std::vector<double> samples_;
  std::vector<FeatureFrame> frames_;
};

/// One trial as a stepper, shared by the batch runner and the live server so
/// both produce identical decodes from identical seeds and intents.
class TrialEngine {
 public:
  TrialEngine(TrialDecoder& decoder, const ParticipantModel& participant,
              const SleevePlacement& placement, TargetSpec target, std::uint64_t seed);

  /// Advances one tick with the given intent (clamped to [-1, 1]).
  TickOutcome step(const KinematicState& intent);
  bool done() const { return result_.decoded.size() >= kTrialTicks; }
  std::size_t tick() const { return result_.decoded.size(); }
  const TargetSpec& target() const { return target_; }

  /// Result so far; flagged partial if fewer than kTrialTicks were run.
  TrialResult result() const;

 private:
  TrialDecoder& decoder_;
  DecodePipeline pipeline_;
  TargetSpec target_;
  TrialResult result_;
  std::size_t run_ = 0, best_ = 0;
};

/// EMG noise seed of a trial; the synthetic controller uses an independent
/// stream derived from the same trial seed.
std::uint64_t emg_seed(std::uint64_t trial_seed);

TrialResult run_trial(TrialDecoder& decoder, const ParticipantModel& participant,
                      const SleevePlacement& placement, const TargetSpec& target,
                      const TrialOptions& options);

// ---------------------------------------------------------------------------

struct ExperimentPlan {
  std::vector<std::string> conditions;
  std::size_t blocks = 10;
  std::size_t selected_dofs = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Condition order of every block: Latin-square rows (cyclic), each row used
/// equally often across consecutive groups of k blocks, group order shuffled.
std::vector<std::vector<std::size_t>> block_orders(const ExperimentPlan& plan);

struct TrialRecord {
  std::size_t block = 0;
  std::size_t position = 0;
  std::size_t condition = 0;
  std::uint64_t seed = 0;
  TargetSpec target;
  double hold_duration_s = 0;
};

struct ExperimentReport {
  std::vector<std::string> conditions;
  std::vector<TrialRecord> trials;  // in execution order
  /// holds[c][b] = hold of condition c in block b.
  std::vector<std::vector<double>> holds;
  std::vector<Summary> summaries;
  std::vector<PairwiseComparison> pairwise;  // paired by block
  std::optional<AnovaResult> anova;
};

struct ExperimentEnvironment {
  ParticipantModel participant;
  SleevePlacement placement;
  PursuitController controller;
  /// One decoder per condition, in plan order.
  std::vector<const TrialDecoder*> decoders;
  /// Worker threads for trials; results do not depend on it.
  std::size_t jobs = 1;
};

/// Cross-over of two or more conditions.
ExperimentReport run_experiment(const ExperimentPlan& plan, const ExperimentEnvironment& env);
/// Single-condition variant: the same block seeds and targets, no comparisons.
ExperimentReport run_evaluation(const ExperimentPlan& plan, const ExperimentEnvironment& env);

std::string report_to_json(const ExperimentReport& report);
/// Per-trial rows: block,position,condition,seed,hold_duration_s
std::string report_to_csv(const ExperimentReport& report);

}  // namespace myo
