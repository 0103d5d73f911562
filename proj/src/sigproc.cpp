#include "myoloop/sigproc.hpp"

#include <algorithm>
#include <cmath>

#include "myoloop/error.hpp"

namespace myo {

void RawEmgBlock::validate() const {
  require(sample_rate == kSampleRateHz, ErrorKind::Domain,
          "raw EMG must be sampled at 1000 Hz");
  require(channels > 0 && samples.size() % channels == 0, ErrorKind::Shape,
          "raw EMG sample buffer is not a whole number of rows");
  for (double v : samples)
    require(std::isfinite(v), ErrorKind::Domain, "raw EMG contains non-finite samples");
}

std::size_t channel_count(ChannelMode mode) {
  constexpr std::size_t pairs = kElectrodes * (kElectrodes - 1) / 2;
  switch (mode) {
    case ChannelMode::SingleEnded: return kElectrodes;
    case ChannelMode::Differential: return pairs;
    case ChannelMode::Combined: return kElectrodes + pairs;
  }
  return 0;
}

const char* to_string(ChannelMode mode) {
  switch (mode) {
    case ChannelMode::SingleEnded: return "single_ended";
    case ChannelMode::Differential: return "differential";
    case ChannelMode::Combined: return "combined";
  }
  return "?";
}

ChannelMode channel_mode_from_string(const std::string& s) {
  if (s == "single_ended") return ChannelMode::SingleEnded;
  if (s == "differential") return ChannelMode::Differential;
  if (s == "combined") return ChannelMode::Combined;
  fail(ErrorKind::Parse, "unknown channel mode '" + s + "'");
}

std::pair<std::size_t, std::size_t> differential_pair(std::size_t index) {
  require(index < channel_count(ChannelMode::Differential), ErrorKind::Shape,
          "differential pair index out of range");
  std::size_t i = 0;
  while (index >= kElectrodes - 1 - i) {
    index -= kElectrodes - 1 - i;
    ++i;
  }
  return {i, i + 1 + index};
}

RawEmgBlock derive_channels(const RawEmgBlock& block, ChannelMode mode) {
  require(block.channels == kElectrodes, ErrorKind::Shape,
          "derive_channels expects 32 single-ended channels");
  if (mode == ChannelMode::SingleEnded) return block;

  const std::size_t n = block.n_samples();
  const bool with_single = mode == ChannelMode::Combined;
  RawEmgBlock out;
  out.sample_rate = block.sample_rate;
  out.channels = channel_count(mode);
  out.samples.resize(n * out.channels);
  for (std::size_t t = 0; t < n; ++t) {
    const double* in = block.samples.data() + t * kElectrodes;
    double* o = out.samples.data() + t * out.channels;
    if (with_single) {
      for (std::size_t c = 0; c < kElectrodes; ++c) *o++ = in[c];
    }
    for (std::size_t i = 0; i < kElectrodes; ++i)
      for (std::size_t j = i + 1; j < kElectrodes; ++j) *o++ = in[i] - in[j];
  }
  return out;
}

double mav(std::span<const double> window) {
  require(!window.empty(), ErrorKind::Domain, "mav of an empty window");
  double sum = 0;
  for (double v : window) sum += std::abs(v);
  return sum / static_cast<double>(window.size());
}

std::int64_t tick_sample(std::int64_t k) {
  return (k + 1) * kSampleRateHz / kTickRateHz;
}

std::int64_t ticks_for_samples(std::int64_t n_samples) {
  if (n_samples <= 0) return 0;
  // floor((k+1)*1000/30) <= n-1  <=>  (k+1)*1000 < 30*n
  return (n_samples * kTickRateHz - 1) / kSampleRateHz;
}

MavStream::MavStream(std::size_t channels, int window)
    : channels_(channels), window_(window), ring_(static_cast<std::size_t>(window) * channels, 0.0) {
  require(channels > 0 && window > 0, ErrorKind::Domain, "MavStream needs channels and a window");
}

FeatureFrame MavStream::emit() {
  FeatureFrame f;
  f.tick_index = next_tick_;
  f.values.assign(channels_, 0.0);
  // oldest sample sits at the current write position
  const std::size_t w = static_cast<std::size_t>(window_);
  const std::size_t start = static_cast<std::size_t>(sample_count_ % window_);
  for (std::size_t i = 0; i < w; ++i) {
    const double* row = ring_.data() + ((start + i) % w) * channels_;
    for (std::size_t c = 0; c < channels_; ++c) f.values[c] += std::abs(row[c]);
  }
  for (double& v : f.values) v /= static_cast<double>(window_);
  ++next_tick_;
  return f;
}

void MavStream::push(std::span<const double> samples, std::vector<FeatureFrame>& out) {
  require(samples.size() % channels_ == 0, ErrorKind::Shape,
          "MavStream::push expects whole sample rows");
  const std::size_t rows = samples.size() / channels_;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t slot = static_cast<std::size_t>(sample_count_ % window_);
    for (std::size_t c = 0; c < channels_; ++c) {
      const double v = samples[r * channels_ + c];
      require(std::isfinite(v), ErrorKind::Domain, "non-finite EMG sample");
      ring_[slot * channels_ + c] = v;
    }
    const std::int64_t index = sample_count_;
    ++sample_count_;
    if (tick_sample(next_tick_) == index) out.push_back(emit());
  }
}

std::vector<FeatureFrame> mav_stream(const RawEmgBlock& block, int window) {
  block.validate();
  MavStream stream(block.channels, window);
  std::vector<FeatureFrame> frames;
  frames.reserve(static_cast<std::size_t>(ticks_for_samples(static_cast<std::int64_t>(block.n_samples()))));
  stream.push(block.samples, frames);
  return frames;
}

FeatureImage build_image(std::span<const FeatureFrame> history) {
  FeatureImage img;
  const std::size_t have = std::min(history.size(), kImageTicks);
  const std::size_t first = history.size() - have;
  for (std::size_t i = 0; i < have; ++i) {
    const FeatureFrame& f = history[first + i];
    require(f.values.size() == kElectrodes, ErrorKind::Shape,
            "feature image needs 32-channel frames");
    const std::size_t col = kImageTicks - have + i;
    for (std::size_t c = 0; c < kElectrodes; ++c)
      img.at(c, col) = static_cast<float>(f.values[c]);
  }
  return img;
}

void FrameHistory::push(FeatureFrame frame) {
  require(frame.values.size() == kElectrodes, ErrorKind::Shape,
          "frame history holds 32-channel frames");
  frames_.push_back(std::move(frame));
  if (frames_.size() > kImageTicks) frames_.pop_front();
}

FeatureImage FrameHistory::image() const {
  std::vector<FeatureFrame> v(frames_.begin(), frames_.end());
  return build_image(v);
}

SnrReport snr(std::span<const FeatureFrame> frames, std::span<const Activity> labels) {
  require(frames.size() == labels.size(), ErrorKind::Shape,
          "snr needs one activity label per frame");
  double move_sum = 0, rest_sum = 0;
  std::size_t move_n = 0, rest_n = 0;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (labels[t] == Activity::Ignore) continue;
    double s = 0;
    for (double v : frames[t].values) s += v;
    if (labels[t] == Activity::Movement) {
      move_sum += s;
      move_n += frames[t].values.size();
    } else {
      rest_sum += s;
      rest_n += frames[t].values.size();
    }
  }
  require(move_n > 0 && rest_n > 0, ErrorKind::Domain,
          "snr needs both movement and rest ticks");
  SnrReport r;
  r.mean_movement_mav = move_sum / static_cast<double>(move_n);
  r.mean_rest_mav = rest_sum / static_cast<double>(rest_n);
  require(r.mean_rest_mav > 1e-12, ErrorKind::Domain, "rest MAV is zero");
  r.snr = r.mean_movement_mav / r.mean_rest_mav;
  return r;
}

}  // namespace myo
