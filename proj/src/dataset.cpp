#include "myoloop/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "json_detail.hpp"
#include "myoloop/error.hpp"
#include "util.hpp"

namespace myo {

namespace {

using ojson = nlohmann::ordered_json;
constexpr const char* kMagic = "EMGS1";
constexpr int kVersion = 1;

ojson metadata_json(const SessionMetadata& m) {
  ojson j;
  j["session_id"] = m.session_id;
  j["participant_seed"] = m.participant_seed;
  j["placement"] = m.placement ? ojson(detail::to_json(*m.placement)) : ojson(nullptr);
  j["protocol_seed"] = m.protocol_seed;
  j["speed_scale"] = m.protocol.speed_scale;
  j["hold_s"] = m.protocol.hold_s;
  j["repetitions"] = m.protocol.repetitions;
  j["created_by"] = m.created_by;
  j["sessions"] = m.sessions;
  j["segments"] = m.segments;
  return j;
}

SessionMetadata metadata_from(const ojson& j) {
  SessionMetadata m;
  m.session_id = j.at("session_id").get<std::string>();
  m.participant_seed = j.at("participant_seed").get<std::uint64_t>();
  if (!j.at("placement").is_null())
    m.placement = detail::placement_from(nlohmann::json::parse(j.at("placement").dump()));
  m.protocol_seed = j.at("protocol_seed").get<std::uint64_t>();
  m.protocol.speed_scale = j.at("speed_scale").get<std::array<double, kDof>>();
  m.protocol.hold_s = j.at("hold_s").get<std::array<double, kDof>>();
  m.protocol.repetitions = j.at("repetitions").get<int>();
  m.created_by = j.at("created_by").get<std::string>();
  m.sessions = j.at("sessions").get<std::vector<std::string>>();
  m.segments = j.at("segments").get<std::vector<std::size_t>>();
  return m;
}

}  // namespace

void RecordingProtocol::validate() const {
  require(repetitions >= 1, ErrorKind::Domain, "protocol repetitions must be >= 1");
  for (std::size_t d = 0; d < kDof; ++d) {
    require(speed_scale[d] > 0, ErrorKind::Domain, "protocol speed_scale must be positive");
    require(hold_s[d] >= 0, ErrorKind::Domain, "protocol hold_s must be non-negative");
  }
}

void SeriesOptions::validate() const {
  require(sessions >= 1, ErrorKind::Domain, "at least one session must be recorded");
  require(repetitions >= 1, ErrorKind::Domain, "protocol repetitions must be >= 1");
  require(speed_min > 0 && speed_min <= speed_max, ErrorKind::Domain, "invalid speed range");
  require(hold_min_s >= 0 && hold_min_s <= hold_max_s, ErrorKind::Domain, "invalid hold range");
}

SessionDataset record_series_session(const ParticipantModel& participant,
                                     const SeriesOptions& options, std::uint64_t seed,
                                     std::size_t index) {
  options.validate();
  require(index < options.sessions, ErrorKind::Domain, "session index outside the series");
  const std::uint64_t base = detail::mix_seed(seed, 1000 + index);
  const SleevePlacement placement = don_sleeve(participant, options.don, detail::mix_seed(base, 0));
  std::mt19937_64 rng(detail::mix_seed(base, 1));
  std::uniform_real_distribution<double> speed(options.speed_min, options.speed_max);
  std::uniform_real_distribution<double> hold(options.hold_min_s, options.hold_max_s);
  RecordingProtocol protocol;
  protocol.repetitions = options.repetitions;
  for (std::size_t d = 0; d < kDof; ++d) {
    protocol.speed_scale[d] = speed(rng);
    protocol.hold_s[d] = hold(rng);
  }
  char name[32];
  std::snprintf(name, sizeof name, "session_%03zu", index);
  return record_session(participant, placement, protocol, detail::mix_seed(base, 2), name);
}

std::vector<SessionDataset> record_series(const ParticipantModel& participant,
                                          const SeriesOptions& options, std::uint64_t seed) {
  options.validate();
  std::vector<SessionDataset> out;
  out.reserve(options.sessions);
  for (std::size_t i = 0; i < options.sessions; ++i)
    out.push_back(record_series_session(participant, options, seed, i));
  return out;
}

void SessionDataset::validate() const {
  require(n_channels > 0, ErrorKind::Shape, "dataset needs at least one channel");
  require(labels.size() % kDof == 0, ErrorKind::Shape, "label buffer is not [n x 6]");
  require(features.size() == n_ticks() * n_channels, ErrorKind::Shape,
          "feature and label tick counts differ");
  for (float v : features)
    require(std::isfinite(v) && v >= 0, ErrorKind::Domain, "features must be finite and >= 0");
  for (float v : labels)
    require(std::isfinite(v) && v >= -1 && v <= 1, ErrorKind::Domain, "labels must lie in [-1, 1]");
  std::size_t total = 0;
  for (std::size_t s : metadata.segments) total += s;
  require(total == n_ticks(), ErrorKind::Shape, "session segments do not cover the dataset");
}

std::string tool_version() { return "myoloop 1.0.0"; }

SessionDataset record_session(const ParticipantModel& participant, const SleevePlacement& placement,
                              const RecordingProtocol& protocol, std::uint64_t seed,
                              const std::string& session_id) {
  protocol.validate();
  std::vector<KinematicState> kin;
  for (int movement = 0; movement < static_cast<int>(kDof); ++movement) {
    const auto d = static_cast<std::size_t>(movement);
    for (int rep = 0; rep < protocol.repetitions; ++rep) {
      auto part = generate_trajectory(movement, protocol.speed_scale[d], protocol.hold_s[d]);
      kin.insert(kin.end(), part.begin(), part.end());
    }
  }
  const RawEmgBlock emg = synthesize_emg(participant, placement, kin, detail::mix_seed(seed, 1));
  const auto frames = mav_stream(emg);
  const std::size_t n = std::min(frames.size(), kin.size());

  SessionDataset ds;
  ds.n_channels = kElectrodes;
  ds.features.reserve(n * kElectrodes);
  ds.labels.reserve(n * kDof);
  for (std::size_t t = 0; t < n; ++t) {
    for (double v : frames[t].values) ds.features.push_back(static_cast<float>(v));
    for (double v : kin[t]) ds.labels.push_back(static_cast<float>(v));
  }
  auto& m = ds.metadata;
  m.session_id = session_id;
  m.participant_seed = participant.seed;
  m.placement = placement;
  m.protocol_seed = seed;
  m.protocol = protocol;
  m.created_by = tool_version();
  m.sessions = {session_id};
  m.segments = {n};
  return ds;
}

std::vector<Activity> steady_state_activity(const SessionDataset& ds, std::size_t settle_ticks) {
  const std::size_t n = ds.n_ticks();
  std::vector<Activity> out(n, Activity::Ignore);
  // 0 = rest, 1 + dof*2 + sign = full-scale single DOF, -1 = anything else
  auto state_of = [&](std::size_t t) {
    int code = 0;
    for (std::size_t d = 0; d < kDof; ++d) {
      const float v = ds.labels[t * kDof + d];
      if (v == 0.0f) continue;
      if (code != 0 || std::abs(v) < 0.999f) return -1;
      code = 1 + static_cast<int>(2 * d) + (v < 0 ? 1 : 0);
    }
    return code;
  };
  std::size_t seg_start = 0;
  for (std::size_t len : ds.metadata.segments) {
    int prev = -2;
    std::size_t run = 0;
    for (std::size_t t = seg_start; t < seg_start + len; ++t) {
      const int s = state_of(t);
      run = s == prev ? run + 1 : 1;
      prev = s;
      if (s >= 0 && run > settle_ticks) out[t] = s == 0 ? Activity::Rest : Activity::Movement;
    }
    seg_start += len;
  }
  return out;
}

std::vector<FeatureFrame> frames_of(const SessionDataset& ds) {
  std::vector<FeatureFrame> frames(ds.n_ticks());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    frames[t].tick_index = static_cast<std::int64_t>(t);
    frames[t].values.assign(ds.features.begin() + static_cast<std::ptrdiff_t>(t * ds.n_channels),
                            ds.features.begin() + static_cast<std::ptrdiff_t>((t + 1) * ds.n_channels));
  }
  return frames;
}

std::string encode_dataset(const SessionDataset& ds) {
  ds.validate();
  ojson header;
  header["magic"] = kMagic;
  header["version"] = kVersion;
  header["n_ticks"] = ds.n_ticks();
  header["n_channels"] = ds.n_channels;
  header["n_dof"] = kDof;
  header["metadata"] = metadata_json(ds.metadata);
  std::string out = header.dump();
  out.push_back('\n');
  out.reserve(out.size() + 4 * (ds.features.size() + ds.labels.size()));
  for (float v : ds.features) detail::append_f32_le(out, v);
  for (float v : ds.labels) detail::append_f32_le(out, v);
  return out;
}

SessionDataset decode_dataset(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  const std::string magic_prefix = std::string("{\"magic\":\"") + kMagic + "\"";
  if (bytes.compare(0, magic_prefix.size(), magic_prefix) != 0) {
    // a file cut inside the magic itself is still recognisably truncated
    if (bytes.size() < magic_prefix.size() && magic_prefix.compare(0, bytes.size(), bytes) == 0 &&
        !bytes.empty())
      fail(ErrorKind::ParseTruncated, "dataset file ends inside its header");
    fail(ErrorKind::ParseMagic, "not an EMGS1 dataset file");
  }
  require(nl != std::string::npos, ErrorKind::ParseTruncated, "dataset header line is incomplete");

  ojson header;
  try {
    header = ojson::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("dataset header: ") + e.what());
  }
  SessionDataset ds;
  std::size_t n_ticks = 0;
  try {
    require(header.at("version").get<int>() == kVersion, ErrorKind::ParseVersion,
            "unsupported dataset version " + header.at("version").dump());
    n_ticks = header.at("n_ticks").get<std::size_t>();
    ds.n_channels = header.at("n_channels").get<std::size_t>();
    require(header.at("n_dof").get<std::size_t>() == kDof, ErrorKind::Parse, "n_dof must be 6");
    ds.metadata = metadata_from(header.at("metadata"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("dataset header: ") + e.what());
  }
  require(ds.n_channels > 0, ErrorKind::Parse, "n_channels must be positive");

  const std::size_t nf = n_ticks * ds.n_channels;
  const std::size_t nl_count = n_ticks * kDof;
  const std::size_t payload = bytes.size() - nl - 1;
  const std::size_t expected = 4 * (nf + nl_count);
  require(payload >= expected, ErrorKind::ParseTruncated,
          "dataset payload truncated: " + std::to_string(payload) + " of " +
              std::to_string(expected) + " bytes");
  require(payload == expected, ErrorKind::Parse, "dataset payload has trailing bytes");

  const char* p = bytes.data() + nl + 1;
  ds.features.resize(nf);
  for (std::size_t i = 0; i < nf; ++i, p += 4) ds.features[i] = detail::read_f32_le(p);
  ds.labels.resize(nl_count);
  for (std::size_t i = 0; i < nl_count; ++i, p += 4) ds.labels[i] = detail::read_f32_le(p);
  ds.validate();
  return ds;
}

void save_dataset(const SessionDataset& ds, const std::string& path) {
  const std::string bytes = encode_dataset(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path);
}

SessionDataset load_dataset(const std::string& path) {
  return decode_dataset(detail::read_text_file(path));
}

SessionDataset accumulate(std::span<const SessionDataset> sessions) {
  require(!sessions.empty(), ErrorKind::Domain, "accumulate needs at least one session");
  SessionDataset out;
  out.n_channels = sessions.front().n_channels;
  std::string id = "accumulated(";
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const auto& s = sessions[i];
    require(s.n_channels == out.n_channels, ErrorKind::Shape,
            "cannot accumulate sessions with different channel counts");
    out.features.insert(out.features.end(), s.features.begin(), s.features.end());
    out.labels.insert(out.labels.end(), s.labels.begin(), s.labels.end());
    out.metadata.sessions.insert(out.metadata.sessions.end(), s.metadata.sessions.begin(),
                                 s.metadata.sessions.end());
    out.metadata.segments.insert(out.metadata.segments.end(), s.metadata.segments.begin(),
                                 s.metadata.segments.end());
    id += (i ? "," : "") + s.metadata.session_id;
  }
  out.metadata.session_id = sessions.size() == 1 ? sessions.front().metadata.session_id : id + ")";
  out.metadata.participant_seed = sessions.front().metadata.participant_seed;
  out.metadata.created_by = tool_version();
  if (sessions.size() == 1) {
    out.metadata.placement = sessions.front().metadata.placement;
    out.metadata.protocol = sessions.front().metadata.protocol;
    out.metadata.protocol_seed = sessions.front().metadata.protocol_seed;
  }
  return out;
}

Split split(const SessionDataset& ds, const SplitSpec& spec) {
  require(spec.train_fraction > 0 && spec.train_fraction < 1, ErrorKind::Domain,
          "train_fraction must lie in (0, 1)");
  require(ds.n_ticks() >= 34, ErrorKind::Domain, "split needs at least 34 ticks");
  Split out;
  std::size_t start = 0;
  for (std::size_t len : ds.metadata.segments) {
    const auto n_val = static_cast<std::size_t>(
        std::ceil(static_cast<double>(len) * (1.0 - spec.train_fraction) - 1e-9));
    require(n_val >= 1 && n_val < len, ErrorKind::Domain,
            "session too short to hold out a validation tail");
    for (std::size_t t = start; t < start + len - n_val; ++t) out.train_ticks.push_back(t);
    for (std::size_t t = start + len - n_val; t < start + len; ++t) out.validation_ticks.push_back(t);
    start += len;
  }

  auto take = [&](const std::vector<std::size_t>& ticks, const std::string& suffix) {
    SessionDataset part;
    part.n_channels = ds.n_channels;
    part.metadata = ds.metadata;
    part.metadata.session_id += suffix;
    part.metadata.segments.clear();
    std::size_t seg_start = 0, seg = 0, run = 0;
    for (std::size_t t : ticks) {
      while (t >= seg_start + ds.metadata.segments[seg]) {
        if (run) part.metadata.segments.push_back(run);
        run = 0;
        seg_start += ds.metadata.segments[seg++];
      }
      ++run;
      part.features.insert(part.features.end(),
                           ds.features.begin() + static_cast<std::ptrdiff_t>(t * ds.n_channels),
                           ds.features.begin() + static_cast<std::ptrdiff_t>((t + 1) * ds.n_channels));
      part.labels.insert(part.labels.end(), ds.labels.begin() + static_cast<std::ptrdiff_t>(t * kDof),
                         ds.labels.begin() + static_cast<std::ptrdiff_t>((t + 1) * kDof));
    }
    if (run) part.metadata.segments.push_back(run);
    return part;
  };
  out.train = take(out.train_ticks, ":train");
  out.validation = take(out.validation_ticks, ":validation");
  return out;
}

ImageSet::ImageSet(const SessionDataset& ds, std::span<const std::size_t> ticks)
    : features_(std::make_shared<const std::vector<float>>(ds.features)),
      labels_(std::make_shared<const std::vector<float>>(ds.labels)),
      n_channels_(ds.n_channels) {
  require(ds.n_channels == kElectrodes, ErrorKind::Shape,
          "network images need 32 single-ended channels");
  // segment start of every tick
  std::vector<std::size_t> seg_start(ds.n_ticks());
  std::size_t start = 0;
  for (std::size_t len : ds.metadata.segments) {
    for (std::size_t t = start; t < start + len; ++t) seg_start[t] = start;
    start += len;
  }
  for (std::size_t t : ticks) {
    require(t < ds.n_ticks(), ErrorKind::Shape, "image tick out of range");
    if (t - seg_start[t] + 1 >= kImageTicks) ends_.push_back(t);
  }
}

void ImageSet::image(std::size_t i, std::span<float> out) const {
  require(out.size() == kElectrodes * kImageTicks, ErrorKind::Shape, "image buffer must hold 1024 values");
  const std::size_t first = ends_[i] + 1 - kImageTicks;
  const float* f = features_->data();
  for (std::size_t col = 0; col < kImageTicks; ++col) {
    const float* row = f + (first + col) * n_channels_;
    for (std::size_t c = 0; c < kElectrodes; ++c) out[c * kImageTicks + col] = row[c];
  }
}

std::span<const float> ImageSet::label(std::size_t i) const {
  return {labels_->data() + ends_[i] * kDof, kDof};
}

std::span<const float> ImageSet::feature_row(std::size_t tick) const {
  return {features_->data() + tick * n_channels_, n_channels_};
}

ImageSet all_images(const SessionDataset& ds) {
  std::vector<std::size_t> ticks(ds.n_ticks());
  for (std::size_t t = 0; t < ticks.size(); ++t) ticks[t] = t;
  return ImageSet(ds, ticks);
}

}  // namespace myo
