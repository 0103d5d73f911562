#include "myoloop/synthem.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "json_detail.hpp"
#include "myoloop/error.hpp"

namespace myo {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_angle(double theta) {
  double t = std::fmod(theta, kTwoPi);
  if (t < 0) t += kTwoPi;
  return t;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double folded_normal_mean(double mu, double sigma) {
  if (sigma == 0) return std::abs(mu);
  return sigma * std::sqrt(2.0 / std::numbers::pi) * std::exp(-mu * mu / (2 * sigma * sigma)) +
         mu * (1 - 2 * normal_cdf(-mu / sigma));
}

}  // namespace

Activation activation(const KinematicState& k) {
  Activation a{};
  for (std::size_t d = 0; d < kDof; ++d) {
    a[2 * d] = std::max(k[d], 0.0);
    a[2 * d + 1] = std::max(-k[d], 0.0);
  }
  return a;
}

KinematicState clamp_state(const KinematicState& k) {
  KinematicState out{};
  for (std::size_t d = 0; d < kDof; ++d)
    out[d] = std::isfinite(k[d]) ? std::clamp(k[d], -1.0, 1.0) : 0.0;
  return out;
}

void ParticipantConfig::validate() const {
  require(forearm_radius_mm > 0, ErrorKind::Domain, "forearm_radius_mm must be positive");
  require(source_scale_mm > 0, ErrorKind::Domain, "source_scale_mm must be positive");
  require(rest_noise_floor > 0, ErrorKind::Domain, "rest_noise_floor must be positive");
  require(rest_floor_jitter >= 0, ErrorKind::Domain, "rest_floor_jitter must be non-negative");
  require(target_snr > 1, ErrorKind::Domain, "target_snr must exceed 1");
  require(activation_latency_ms >= 0, ErrorKind::Domain, "activation latency must be non-negative");
  require(strength_min > 0 && strength_max >= strength_min, ErrorKind::Domain,
          "source strengths must be positive");
}

int ParticipantModel::latency_samples() const {
  return static_cast<int>(std::lround(config.activation_latency_ms * kSampleRateHz / 1000.0));
}

std::array<ElectrodePosition, kElectrodes> nominal_electrodes() {
  std::array<ElectrodePosition, kElectrodes> e{};
  for (std::size_t ring = 0; ring < 4; ++ring)
    for (std::size_t col = 0; col < 8; ++col)
      e[ring * 8 + col] = {50.0 + 40.0 * static_cast<double>(ring),
                           kTwoPi * (static_cast<double>(col) + 0.5) / 8.0};
  return e;
}

ParticipantModel make_participant(const ParticipantConfig& config, std::uint64_t seed) {
  config.validate();
  ParticipantModel p;
  p.config = config;
  p.seed = seed;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Six sources per side on a jittered 3 (around) x 2 (along) lattice;
  // flexors on theta in (0, pi), extensors on (pi, 2 pi).
  for (int side = 0; side < 2; ++side) {
    std::array<int, kDof> slots{};
    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(slots.begin(), slots.end(), rng);
    for (std::size_t d = 0; d < kDof; ++d) {
      const int slot = slots[d];
      const double theta_c = std::numbers::pi * (0.2 + 0.3 * (slot % 3)) + side * std::numbers::pi;
      const double z_c = slot < 3 ? 75.0 : 145.0;
      MuscleSource& s = p.sources[2 * d + static_cast<std::size_t>(side)];
      s.theta_rad = wrap_angle(theta_c + (unit(rng) - 0.5) * 0.16 * std::numbers::pi);
      s.z_mm = z_c + (unit(rng) - 0.5) * 30.0;
      s.scale_mm = config.source_scale_mm;
      s.strength = config.strength_min + (config.strength_max - config.strength_min) * unit(rng);
    }
  }
  for (double& b : p.rest_floor)
    b = config.rest_noise_floor * std::exp(config.rest_floor_jitter * normal(rng));

  // Steady-state SNR over all channels and unit directional activations:
  //   mean_{c,m}(b_c + g G[c][m]) / mean_c b_c = target
  SleevePlacement nominal;
  nominal.electrodes = nominal_electrodes();
  nominal.posture_gain.fill(1.0);
  p.snr_gain = 1.0;
  const GainMatrix g = gain_matrix(p, nominal);
  double g_sum = 0;
  for (const auto& row : g)
    for (double v : row) g_sum += v;
  const double g_mean = g_sum / static_cast<double>(kElectrodes * kSources);
  const double b_mean =
      std::accumulate(p.rest_floor.begin(), p.rest_floor.end(), 0.0) / static_cast<double>(kElectrodes);
  p.snr_gain = (config.target_snr - 1.0) * b_mean / g_mean;
  return p;
}

double SleevePlacement::shift_magnitude_mm() const { return std::hypot(shift_z_mm, shift_arc_mm); }

double folded_normal_location(double mean, double sigma) {
  require(mean >= 0 && sigma >= 0, ErrorKind::Domain, "folded normal needs non-negative parameters");
  if (folded_normal_mean(0.0, sigma) >= mean) return 0.0;
  double lo = 0.0, hi = mean;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (folded_normal_mean(mid, sigma) < mean ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

SleevePlacement don_sleeve(const ParticipantModel& participant, const DonOptions& options,
                           std::uint64_t seed) {
  require(options.shift_mean_mm >= 0, ErrorKind::Domain, "shift_mean_mm must be non-negative");
  require(options.shift_sigma_mm >= 0 && options.posture_sigma >= 0, ErrorKind::Domain,
          "don options must be non-negative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Small requested means cannot be met with the default spread; shrink it.
  const double min_sigma_mean = options.shift_sigma_mm * std::sqrt(2.0 / std::numbers::pi);
  const double sigma = options.shift_mean_mm < min_sigma_mean
                           ? options.shift_mean_mm / std::sqrt(2.0 / std::numbers::pi)
                           : options.shift_sigma_mm;
  const double mu = folded_normal_location(options.shift_mean_mm, sigma);

  const double direction = kTwoPi * unit(rng);
  const double magnitude = std::abs(mu + sigma * normal(rng));

  SleevePlacement pl;
  pl.seed = seed;
  pl.shift_z_mm = magnitude * std::cos(direction);
  pl.shift_arc_mm = magnitude * std::sin(direction);
  const double radius = participant.config.forearm_radius_mm;
  pl.electrodes = nominal_electrodes();
  for (auto& e : pl.electrodes) {
    e.z_mm += pl.shift_z_mm;
    e.theta_rad = wrap_angle(e.theta_rad + pl.shift_arc_mm / radius);
  }
  for (double& g : pl.posture_gain) g = std::exp(options.posture_sigma * normal(rng));
  return pl;
}

double cylinder_distance(const ElectrodePosition& a, double z_mm, double theta_rad,
                         double radius_mm) {
  double dtheta = std::abs(wrap_angle(a.theta_rad) - wrap_angle(theta_rad));
  dtheta = std::min(dtheta, kTwoPi - dtheta);
  return std::hypot(a.z_mm - z_mm, radius_mm * dtheta);
}

GainMatrix gain_matrix(const ParticipantModel& participant, const SleevePlacement& placement) {
  GainMatrix g{};
  for (std::size_t c = 0; c < kElectrodes; ++c) {
    for (std::size_t m = 0; m < kSources; ++m) {
      const MuscleSource& s = participant.sources[m];
      const double d = cylinder_distance(placement.electrodes[c], s.z_mm, s.theta_rad,
                                         participant.config.forearm_radius_mm);
      g[c][m] = s.strength * std::exp(-d * d / (2 * s.scale_mm * s.scale_mm));
    }
  }
  return g;
}

std::array<double, kElectrodes> envelope(const ParticipantModel& participant,
                                         const SleevePlacement& placement,
                                         const Activation& act) {
  const GainMatrix g = gain_matrix(participant, placement);
  std::array<double, kElectrodes> e{};
  for (std::size_t c = 0; c < kElectrodes; ++c) {
    double drive = 0;
    for (std::size_t m = 0; m < kSources; ++m) drive += g[c][m] * placement.posture_gain[m] * act[m];
    e[c] = participant.rest_floor[c] + participant.snr_gain * drive;
  }
  return e;
}

EmgSynthesizer::EmgSynthesizer(const ParticipantModel& participant,
                               const SleevePlacement& placement, std::uint64_t seed)
    : rng_(seed) {
  const GainMatrix g = gain_matrix(participant, placement);
  for (std::size_t c = 0; c < kElectrodes; ++c)
    for (std::size_t m = 0; m < kSources; ++m)
      mix_[c][m] = participant.snr_gain * g[c][m] * placement.posture_gain[m];
  floor_ = participant.rest_floor;
  delay_.assign(static_cast<std::size_t>(participant.latency_samples()), Activation{});
}

void EmgSynthesizer::tick(const KinematicState& intent, std::vector<double>& out) {
  const Activation now = activation(clamp_state(intent));
  const std::int64_t last = tick_sample(tick_);
  while (sample_ <= last) {
    Activation act = now;
    if (!delay_.empty()) {
      delay_.push_back(now);
      act = delay_.front();
      delay_.pop_front();
    }
    for (std::size_t c = 0; c < kElectrodes; ++c) {
      double e = floor_[c];
      for (std::size_t m = 0; m < kSources; ++m) e += mix_[c][m] * act[m];
      out.push_back(e * normal_(rng_));
    }
    ++sample_;
  }
  ++tick_;
}

RawEmgBlock synthesize_emg(const ParticipantModel& participant, const SleevePlacement& placement,
                           std::span<const KinematicState> kinematics, std::uint64_t seed) {
  require(!kinematics.empty(), ErrorKind::Domain, "synthesize_emg needs a non-empty trajectory");
  EmgSynthesizer synth(participant, placement, seed);
  RawEmgBlock block;
  block.samples.reserve(static_cast<std::size_t>(tick_sample(static_cast<std::int64_t>(kinematics.size()) - 1) + 1) *
                        kElectrodes);
  for (const auto& k : kinematics) synth.tick(k, block.samples);
  return block;
}

std::vector<TrajectorySegment> trajectory_segments(double speed_scale, double hold_s) {
  require(speed_scale > 0, ErrorKind::Domain, "speed_scale must be positive");
  require(hold_s >= 0, ErrorKind::Domain, "hold_s must be non-negative");
  const double ramp = kBaseRampS / speed_scale;
  return {
      {kRestS, 0, 0},   {ramp, 0, 1},  {hold_s, 1, 1},   {ramp, 1, 0}, {kRestS, 0, 0},
      {ramp, 0, -1},    {hold_s, -1, -1}, {ramp, -1, 0}, {kRestS, 0, 0},
  };
}

std::vector<KinematicState> generate_trajectory(int movement_id, double speed_scale,
                                                double hold_s) {
  require(movement_id >= 0 && movement_id < static_cast<int>(kDof), ErrorKind::Domain,
          "movement_id must be in 0..5");
  const auto segments = trajectory_segments(speed_scale, hold_s);
  double total = 0;
  for (const auto& s : segments) total += s.duration_s;
  const auto n = static_cast<std::size_t>(std::llround(total * kTickRateHz));

  std::vector<KinematicState> out(n, KinematicState{});
  std::size_t seg = 0;
  double seg_start = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double t = static_cast<double>(j) / kTickRateHz;
    while (seg + 1 < segments.size() && t >= seg_start + segments[seg].duration_s) {
      seg_start += segments[seg].duration_s;
      ++seg;
    }
    const auto& s = segments[seg];
    const double u = s.duration_s > 0 ? std::clamp((t - seg_start) / s.duration_s, 0.0, 1.0) : 1.0;
    out[j][static_cast<std::size_t>(movement_id)] = s.from + (s.to - s.from) * u;
  }
  return out;
}

namespace detail {

using nlohmann::json;

json to_json(const ParticipantModel& p) {
  json j;
  j["kind"] = "myoloop.participant";
  j["version"] = 1;
  j["seed"] = p.seed;
  const auto& c = p.config;
  j["config"] = {{"forearm_radius_mm", c.forearm_radius_mm},
                 {"source_scale_mm", c.source_scale_mm},
                 {"rest_noise_floor", c.rest_noise_floor},
                 {"rest_floor_jitter", c.rest_floor_jitter},
                 {"target_snr", c.target_snr},
                 {"activation_latency_ms", c.activation_latency_ms},
                 {"strength_min", c.strength_min},
                 {"strength_max", c.strength_max}};
  json sources = json::array();
  for (const auto& s : p.sources)
    sources.push_back({{"z_mm", s.z_mm}, {"theta_rad", s.theta_rad}, {"scale_mm", s.scale_mm},
                       {"strength", s.strength}});
  j["sources"] = sources;
  j["rest_floor"] = p.rest_floor;
  j["snr_gain"] = p.snr_gain;
  return j;
}

ParticipantModel participant_from(const json& j) {
  try {
    require(j.at("kind") == "myoloop.participant", ErrorKind::ParseMagic,
            "not a participant document");
    require(j.at("version") == 1, ErrorKind::ParseVersion, "unsupported participant version");
    ParticipantModel p;
    p.seed = j.at("seed").get<std::uint64_t>();
    const auto& c = j.at("config");
    p.config.forearm_radius_mm = c.at("forearm_radius_mm");
    p.config.source_scale_mm = c.at("source_scale_mm");
    p.config.rest_noise_floor = c.at("rest_noise_floor");
    p.config.rest_floor_jitter = c.at("rest_floor_jitter");
    p.config.target_snr = c.at("target_snr");
    p.config.activation_latency_ms = c.at("activation_latency_ms");
    p.config.strength_min = c.at("strength_min");
    p.config.strength_max = c.at("strength_max");
    p.config.validate();
    const auto& s = j.at("sources");
    require(s.size() == kSources, ErrorKind::Shape, "participant needs 12 sources");
    for (std::size_t m = 0; m < kSources; ++m) {
      p.sources[m].z_mm = s[m].at("z_mm");
      p.sources[m].theta_rad = s[m].at("theta_rad");
      p.sources[m].scale_mm = s[m].at("scale_mm");
      p.sources[m].strength = s[m].at("strength");
      require(p.sources[m].scale_mm > 0 && p.sources[m].strength > 0, ErrorKind::Domain,
              "source scale and strength must be positive");
    }
    const auto& b = j.at("rest_floor");
    require(b.size() == kElectrodes, ErrorKind::Shape, "participant needs 32 rest floors");
    for (std::size_t ch = 0; ch < kElectrodes; ++ch) {
      p.rest_floor[ch] = b[ch];
      require(p.rest_floor[ch] > 0, ErrorKind::Domain, "rest floor must be positive");
    }
    p.snr_gain = j.at("snr_gain");
    return p;
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string("participant document: ") + e.what());
  }
}

json to_json(const SleevePlacement& p) {
  json e = json::array();
  for (const auto& x : p.electrodes) e.push_back({x.z_mm, x.theta_rad});
  return {{"seed", p.seed},
          {"shift_z_mm", p.shift_z_mm},
          {"shift_arc_mm", p.shift_arc_mm},
          {"electrodes", e},
          {"posture_gain", p.posture_gain}};
}

SleevePlacement placement_from(const json& j) {
  try {
    SleevePlacement p;
    p.seed = j.at("seed").get<std::uint64_t>();
    p.shift_z_mm = j.at("shift_z_mm");
    p.shift_arc_mm = j.at("shift_arc_mm");
    const auto& e = j.at("electrodes");
    require(e.size() == kElectrodes, ErrorKind::Shape, "placement needs 32 electrodes");
    for (std::size_t c = 0; c < kElectrodes; ++c) {
      p.electrodes[c].z_mm = e[c].at(0);
      p.electrodes[c].theta_rad = e[c].at(1);
    }
    const auto& g = j.at("posture_gain");
    require(g.size() == kSources, ErrorKind::Shape, "placement needs 12 posture gains");
    for (std::size_t m = 0; m < kSources; ++m) p.posture_gain[m] = g[m];
    return p;
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string("placement document: ") + e.what());
  }
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
  out << text;
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path);
}

}  // namespace detail

std::string participant_to_json(const ParticipantModel& p) { return detail::to_json(p).dump(2); }

ParticipantModel participant_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("participant JSON: ") + e.what());
  }
  return detail::participant_from(j);
}

std::string placement_to_json(const SleevePlacement& p) { return detail::to_json(p).dump(2); }

SleevePlacement placement_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("placement JSON: ") + e.what());
  }
  return detail::placement_from(j);
}

void save_participant(const ParticipantModel& p, const std::string& path) {
  detail::write_text_file(path, participant_to_json(p) + "\n");
}

ParticipantModel load_participant(const std::string& path) {
  return participant_from_json(detail::read_text_file(path));
}

}  // namespace myo
