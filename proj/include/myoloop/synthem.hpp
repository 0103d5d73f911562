#pragma once

// Synthetic participant: a forearm cylinder with twelve Gaussian muscle
// sources (one flexor and one extensor per DOF) seen through a 32-electrode
// sleeve that shifts a little every time it is donned.

#include <array>
#include <cstdint>
#include <deque>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "myoloop/sigproc.hpp"

namespace myo {

inline constexpr std::size_t kDof = 6;
inline constexpr std::size_t kSources = 2 * kDof;

using KinematicState = std::array<double, kDof>;
using Activation = std::array<double, kSources>;

/// Flexor of DOF d sits in slot 2d, extensor in slot 2d + 1.
Activation activation(const KinematicState& k);

KinematicState clamp_state(const KinematicState& k);

struct MuscleSource {
  double z_mm = 0;
  double theta_rad = 0;
  double scale_mm = 25;
  double strength = 1;

  bool operator==(const MuscleSource&) const = default;
};

struct ParticipantConfig {
  double forearm_radius_mm = 40;
  double source_scale_mm = 25;
  double rest_noise_floor = 1.0;
  double rest_floor_jitter = 0.1;  // log-normal sigma across channels
  double target_snr = 14.0;
  double activation_latency_ms = 100;
  double strength_min = 0.85;
  double strength_max = 1.15;

  void validate() const;

  bool operator==(const ParticipantConfig&) const = default;
};

struct ElectrodePosition {
  double z_mm = 0;
  double theta_rad = 0;

  bool operator==(const ElectrodePosition&) const = default;
};

struct ParticipantModel {
  ParticipantConfig config;
  std::uint64_t seed = 0;
  std::array<MuscleSource, kSources> sources{};
  std::array<double, kElectrodes> rest_floor{};
  /// Envelope gain that brings steady-state SNR to config.target_snr.
  double snr_gain = 1.0;

  int latency_samples() const;
  bool operator==(const ParticipantModel&) const = default;
};

/// 4 rings along the forearm x 8 electrodes around it; channel = ring * 8 + column.
std::array<ElectrodePosition, kElectrodes> nominal_electrodes();

ParticipantModel make_participant(const ParticipantConfig& config, std::uint64_t seed);

struct SleevePlacement {
  std::array<ElectrodePosition, kElectrodes> electrodes{};
  double shift_z_mm = 0;
  double shift_arc_mm = 0;
  std::array<double, kSources> posture_gain{};
  std::uint64_t seed = 0;

  double shift_magnitude_mm() const;
  bool operator==(const SleevePlacement&) const = default;
};

struct DonOptions {
  double shift_mean_mm = 7.32;
  double shift_sigma_mm = 3.0;
  double posture_sigma = 0.1;

  bool operator==(const DonOptions&) const = default;
};

/// Location parameter of a folded normal with scale sigma whose mean is `mean`.
double folded_normal_location(double mean, double sigma);

SleevePlacement don_sleeve(const ParticipantModel& participant, const DonOptions& options,
                           std::uint64_t seed);

/// Geodesic distance on the forearm cylinder.
double cylinder_distance(const ElectrodePosition& a, double z_mm, double theta_rad,
                         double radius_mm);

/// G[c][m], row-major [32 x 12].
using GainMatrix = std::array<std::array<double, kSources>, kElectrodes>;

GainMatrix gain_matrix(const ParticipantModel& participant, const SleevePlacement& placement);

/// Expected per-channel amplitude envelope for a (non-delayed) activation.
std::array<double, kElectrodes> envelope(const ParticipantModel& participant,
                                         const SleevePlacement& placement,
                                         const Activation& act);

/// Streaming EMG generator: one call per 30 Hz tick produces the raw samples
/// belonging to that tick.
class EmgSynthesizer {
 public:
  EmgSynthesizer(const ParticipantModel& participant, const SleevePlacement& placement,
                 std::uint64_t seed);

  /// Appends this tick's samples (row-major, 32 channels) to `out`.
  void tick(const KinematicState& intent, std::vector<double>& out);

  std::int64_t ticks() const { return tick_; }
  std::int64_t samples() const { return sample_; }

 private:
  std::array<std::array<double, kSources>, kElectrodes> mix_{};
  std::array<double, kElectrodes> floor_{};
  std::deque<Activation> delay_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::int64_t tick_ = 0;
  std::int64_t sample_ = 0;
};

RawEmgBlock synthesize_emg(const ParticipantModel& participant, const SleevePlacement& placement,
                           std::span<const KinematicState> kinematics, std::uint64_t seed);

struct TrajectorySegment {
  double duration_s;
  double from;
  double to;
};

inline constexpr double kBaseRampS = 0.7;
inline constexpr double kRestS = 0.5;

/// Rest, ramp to +1, hold, ramp to 0, rest, ramp to -1, hold, ramp to 0, rest.
std::vector<TrajectorySegment> trajectory_segments(double speed_scale, double hold_s);

std::vector<KinematicState> generate_trajectory(int movement_id, double speed_scale,
                                                double hold_s);

// JSON documents so experiments can be replayed exactly.
std::string participant_to_json(const ParticipantModel& p);
ParticipantModel participant_from_json(const std::string& text);
std::string placement_to_json(const SleevePlacement& p);
SleevePlacement placement_from_json(const std::string& text);

void save_participant(const ParticipantModel& p, const std::string& path);
ParticipantModel load_participant(const std::string& path);

}  // namespace myo
