#pragma once

// Feature extraction from raw EMG: channel montages, 300 ms MAV at 30 Hz,
// SNR and the 32x32 channel-by-time feature image.

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace myo {

inline constexpr int kSampleRateHz = 1000;
inline constexpr int kTickRateHz = 30;
inline constexpr int kMavWindowSamples = 300;
inline constexpr std::size_t kElectrodes = 32;
inline constexpr std::size_t kImageTicks = 32;

/// Raw EMG, row-major [n_samples x n_channels].
struct RawEmgBlock {
  int sample_rate = kSampleRateHz;
  std::size_t channels = kElectrodes;
  std::vector<double> samples;

  std::size_t n_samples() const { return channels ? samples.size() / channels : 0; }
  double at(std::size_t sample, std::size_t channel) const {
    return samples[sample * channels + channel];
  }
  std::span<const double> row(std::size_t sample) const {
    return {samples.data() + sample * channels, channels};
  }
  void validate() const;
};

enum class ChannelMode { SingleEnded, Differential, Combined };

std::size_t channel_count(ChannelMode mode);
const char* to_string(ChannelMode mode);
ChannelMode channel_mode_from_string(const std::string& s);

/// Electrode pair (i, j), i < j, for differential channel index `index`
/// in lexicographic order.
std::pair<std::size_t, std::size_t> differential_pair(std::size_t index);

RawEmgBlock derive_channels(const RawEmgBlock& block, ChannelMode mode);

struct FeatureFrame {
  std::int64_t tick_index = 0;
  std::vector<double> values;
};

/// Mean absolute value. Throws Domain on an empty window.
double mav(std::span<const double> window);

/// Sample index at which tick k is emitted: floor((k + 1) * 1000 / 30).
std::int64_t tick_sample(std::int64_t k);

/// Number of ticks emitted for a block of n samples.
std::int64_t ticks_for_samples(std::int64_t n_samples);

/// Streaming MAV extractor. Feeding a block in any chunking produces the same
/// frames, bit for bit, as one batch call.
class MavStream {
 public:
  explicit MavStream(std::size_t channels = kElectrodes,
                     int window = kMavWindowSamples);

  /// Push row-major samples [n x channels]; appends every completed frame.
  void push(std::span<const double> samples, std::vector<FeatureFrame>& out);

  std::size_t channels() const { return channels_; }
  std::int64_t samples_seen() const { return sample_count_; }
  std::int64_t next_tick() const { return next_tick_; }

 private:
  FeatureFrame emit();

  std::size_t channels_;
  int window_;
  std::vector<double> ring_;  // [window x channels], zero-initialised
  std::int64_t sample_count_ = 0;
  std::int64_t next_tick_ = 0;
};

std::vector<FeatureFrame> mav_stream(const RawEmgBlock& block,
                                     int window = kMavWindowSamples);

/// 32 x 32, row = channel, column 0 oldest, column 31 newest.
struct FeatureImage {
  std::array<float, kElectrodes * kImageTicks> values{};

  float at(std::size_t channel, std::size_t tick) const {
    return values[channel * kImageTicks + tick];
  }
  float& at(std::size_t channel, std::size_t tick) {
    return values[channel * kImageTicks + tick];
  }
};

/// Newest frame lands in column 31; missing history columns are zero.
FeatureImage build_image(std::span<const FeatureFrame> history);

/// Fixed-length frame history for online image construction.
class FrameHistory {
 public:
  void push(FeatureFrame frame);
  FeatureImage image() const;
  std::size_t size() const { return frames_.size(); }
  const FeatureFrame& newest() const { return frames_.back(); }

 private:
  std::deque<FeatureFrame> frames_;
};

enum class Activity : std::uint8_t { Rest, Movement, Ignore };

struct SnrReport {
  double snr = 0;
  double mean_movement_mav = 0;
  double mean_rest_mav = 0;
};

SnrReport snr(std::span<const FeatureFrame> frames, std::span<const Activity> labels);

}  // namespace myo
