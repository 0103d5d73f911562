#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "myoloop/synthem.hpp"

namespace myo {

inline constexpr double kTrainFraction = 0.97;

struct RecordingProtocol {
  std::array<double, kDof> speed_scale{1, 1, 1, 1, 1, 1};
  std::array<double, kDof> hold_s{1, 1, 1, 1, 1, 1};
  int repetitions = 1;

  void validate() const;
  bool operator==(const RecordingProtocol&) const = default;
};

struct SessionMetadata {
  std::string session_id;
  std::uint64_t participant_seed = 0;
  std::optional<SleevePlacement> placement;
  std::uint64_t protocol_seed = 0;
  RecordingProtocol protocol;
  std::string created_by;
  /// Constituent session ids, in tick order.
  std::vector<std::string> sessions;
  /// Tick count of each constituent session.
  std::vector<std::size_t> segments;

  bool operator==(const SessionMetadata&) const = default;
};

struct SessionDataset {
  std::size_t n_channels = kElectrodes;
  std::vector<float> features;  // [n_ticks x n_channels]
  std::vector<float> labels;    // [n_ticks x 6]
  SessionMetadata metadata;

  std::size_t n_ticks() const { return labels.size() / kDof; }
  void validate() const;
  bool operator==(const SessionDataset&) const = default;
};

std::string tool_version();

SessionDataset record_session(const ParticipantModel& participant, const SleevePlacement& placement,
                              const RecordingProtocol& protocol, std::uint64_t seed,
                              const std::string& session_id = "session");

/// A run of recording sessions, each on a freshly donned sleeve with its own
/// movement speeds and hold times.
struct SeriesOptions {
  std::size_t sessions = 1;
  DonOptions don;
  int repetitions = 1;
  double speed_min = 0.8, speed_max = 1.2;
  double hold_min_s = 0.8, hold_max_s = 1.5;

  void validate() const;
};

/// Session i is named session_NNN; its placement, protocol and noise come
/// from independent streams of `seed`.
std::vector<SessionDataset> record_series(const ParticipantModel& participant,
                                          const SeriesOptions& options, std::uint64_t seed);

/// Session `index` of the series alone (identical to record_series()[index]).
SessionDataset record_series_session(const ParticipantModel& participant,
                                     const SeriesOptions& options, std::uint64_t seed,
                                     std::size_t index);

/// Ticks whose intended kinematics have been steady (all-rest, or one DOF at
/// full scale) for `settle_ticks` ticks, labelled for SNR measurement.
std::vector<Activity> steady_state_activity(const SessionDataset& ds, std::size_t settle_ticks);

std::vector<FeatureFrame> frames_of(const SessionDataset& ds);

void save_dataset(const SessionDataset& ds, const std::string& path);
SessionDataset load_dataset(const std::string& path);
std::string encode_dataset(const SessionDataset& ds);
SessionDataset decode_dataset(const std::string& bytes);

SessionDataset accumulate(std::span<const SessionDataset> sessions);

struct SplitSpec {
  double train_fraction = kTrainFraction;
};

struct Split {
  SessionDataset train;
  SessionDataset validation;
  /// Tick indices into the source dataset.
  std::vector<std::size_t> train_ticks;
  std::vector<std::size_t> validation_ticks;
};

/// Tail holdout: the last ceil((1 - f) n) ticks of every session validate.
Split split(const SessionDataset& ds, const SplitSpec& spec = {});

/// Network samples: the image ending at each listed tick uses feature ticks
/// t-31..t of the same session; ticks without a full window are skipped.
class ImageSet {
 public:
  ImageSet() = default;
  ImageSet(const SessionDataset& ds, std::span<const std::size_t> ticks);

  std::size_t size() const { return ends_.size(); }
  std::size_t end_tick(std::size_t i) const { return ends_[i]; }
  /// Writes the 32x32 image (row = channel, column 31 newest) into `out`.
  void image(std::size_t i, std::span<float> out) const;
  std::span<const float> label(std::size_t i) const;
  std::span<const float> feature_row(std::size_t tick) const;
  std::size_t n_channels() const { return n_channels_; }

 private:
  std::shared_ptr<const std::vector<float>> features_;
  std::shared_ptr<const std::vector<float>> labels_;
  std::size_t n_channels_ = kElectrodes;
  std::vector<std::size_t> ends_;
};

/// All ticks with a full in-session window.
ImageSet all_images(const SessionDataset& ds);

}  // namespace myo
