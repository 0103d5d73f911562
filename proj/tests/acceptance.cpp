// Acceptance run: one PASS/FAIL line per criterion, exit status = number of
// failures. Usage: acceptance MYOLOOP_CLI_BINARY
//
// The closed-loop criteria train real decoders on a synthetic 20-session
// series. The deep network uses reduced stage widths and an epoch cap so the
// whole run fits a single laptop core; see kDeepWidths / kDeepEpochs.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "myoloop/dataset.hpp"
#include "myoloop/kalman.hpp"
#include "myoloop/nnet.hpp"
#include "myoloop/sigproc.hpp"
#include "myoloop/stats.hpp"
#include "myoloop/synthem.hpp"
#include "myoloop/taskbench.hpp"

using namespace myo;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kParticipantSeed = 11;
constexpr std::uint64_t kSeriesSeed = 21;
constexpr std::size_t kSeriesSessions = 20;
constexpr std::size_t kAccumulated = 10;
constexpr std::size_t kBlocks = 20;
constexpr std::array<std::size_t, 3> kDeepWidths{4, 8, 16};
constexpr int kDeepEpochs = 8;
constexpr std::size_t kFreshPlacements = 10;
constexpr std::size_t kTrialsPerPlacement = 10;

int failures = 0;

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void verdict(int id, const char* name, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::printf("%s [%d] %s: %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double msfd(std::span<const KinematicState> x) {
  double s = 0;
  for (std::size_t t = 1; t < x.size(); ++t)
    for (std::size_t d = 0; d < kDof; ++d) s += (x[t][d] - x[t - 1][d]) * (x[t][d] - x[t - 1][d]);
  return s / static_cast<double>((x.size() - 1) * kDof);
}

// ---------------------------------------------------------------------------

void mav_oracle() {
  Stopwatch sw;
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> len(1, 4000);
  std::normal_distribution<double> g(0, 1);
  double worst = 0;
  std::size_t frames_checked = 0;
  bool counts_ok = true;
  for (int b = 0; b < 100; ++b) {
    RawEmgBlock block;
    const std::size_t n = len(rng);
    const double scale = std::exp(3 * g(rng));
    block.samples.resize(n * kElectrodes);
    for (auto& v : block.samples) v = scale * g(rng);
    const auto frames = mav_stream(block);
    counts_ok &= frames.size() == static_cast<std::size_t>(ticks_for_samples(static_cast<std::int64_t>(n)));
    for (const auto& f : frames) {
      const auto s = tick_sample(f.tick_index);
      for (std::size_t ch = 0; ch < kElectrodes; ++ch) {
        double sum = 0;
        for (std::int64_t i = std::max<std::int64_t>(0, s - 299); i <= s; ++i)
          sum += std::abs(block.at(static_cast<std::size_t>(i), ch));
        worst = std::max(worst, std::abs(f.values[ch] - sum / 300.0) / std::max(1.0, scale));
      }
      ++frames_checked;
    }
  }
  const double t = sw.seconds();
  verdict(1, "MAV oracle equivalence", counts_ok && worst <= 1e-9 && t < 5,
          fmt("%zu frames, max scaled error %.2e, %.2f s", frames_checked, worst, t));
}

void gradients() {
  Stopwatch sw;
  NetworkSpec dense;
  dense.input = {6, 1, 1};
  dense.layers = {LayerSpec::dense(8), LayerSpec::relu(), LayerSpec::dense(5), LayerSpec::relu(),
                  LayerSpec::linear_output(3)};
  NetworkSpec conv;
  conv.input = {1, 8, 8};
  conv.layers = {LayerSpec::conv(3), LayerSpec::batch_norm(), LayerSpec::relu(),
                 LayerSpec::residual({LayerSpec::conv(4, 3, 2), LayerSpec::batch_norm(), LayerSpec::relu(),
                                      LayerSpec::conv(4), LayerSpec::batch_norm()},
                                     {LayerSpec::conv(4, 1, 2), LayerSpec::batch_norm()}),
                 LayerSpec::relu(),
                 LayerSpec::residual({LayerSpec::conv(4), LayerSpec::batch_norm(), LayerSpec::relu(),
                                      LayerSpec::conv(4), LayerSpec::batch_norm()}),
                 LayerSpec::relu(), LayerSpec::global_avg_pool(), LayerSpec::linear_output(6)};
  const auto a = grad_check(dense, 101);
  const auto b = grad_check(conv, 102);
  const double t = sw.seconds();
  verdict(2, "Gradient correctness",
          a.max_relative_error < 1e-6 && b.max_relative_error < 1e-4 && a.kink_skipped == 0 &&
              b.kink_skipped == 0 && t < 60,
          fmt("dense %.2e (%zu params), conv+BN+residual %.2e (%zu params, %zu probes redone "
              "with a smaller step after crossing a ReLU kink, %zu skipped), %.1f s",
              a.max_relative_error, a.parameters, b.max_relative_error, b.parameters, b.kink_retries,
              b.kink_skipped, t));
}

KalmanParams scalar_params(double a, double w, double h, double q) {
  KalmanParams p;
  p.A = Eigen::MatrixXd::Constant(1, 1, a);
  p.W = Eigen::MatrixXd::Constant(1, 1, w);
  p.H = Eigen::MatrixXd::Constant(1, 1, h);
  p.Q = Eigen::MatrixXd::Constant(1, 1, q);
  return p;
}

double gauss(double x, double mean, double var) {
  return std::exp(-(x - mean) * (x - mean) / (2 * var)) / std::sqrt(2 * std::numbers::pi * var);
}

void kalman() {
  // scalar step: A = W = H = 1, Q = 2, prior x = 0, P = 1, observation 4
  const auto s = kalman_step(scalar_params(1, 1, 1, 2),
                             {Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, 1)},
                             Eigen::VectorXd::Constant(1, 4));
  const bool step_ok = std::abs(s.x(0) - 2) <= 1e-12 && std::abs(s.P(0, 0) - 1) <= 1e-12;

  // discretised Bayes filter on a grid
  const double a = 0.8, w = 0.3, h = 1.5, q = 0.6;
  const auto params = scalar_params(a, w, h, q);
  const int n = 4000;
  const double lo = -10, dx = 20.0 / (n - 1);
  std::vector<double> dens(n), pred(n);
  KalmanState ks{Eigen::VectorXd::Constant(1, -0.4), Eigen::MatrixXd::Constant(1, 1, 0.9)};
  for (int i = 0; i < n; ++i) dens[i] = gauss(lo + i * dx, -0.4, 0.9);
  double grid_err = 0;
  for (double z : {1.2, 0.3, -0.8, 2.5, 1.1}) {
    ks = kalman_step(params, ks, Eigen::VectorXd::Constant(1, z));
    for (int i = 0; i < n; ++i) {
      double acc = 0;
      for (int j = 0; j < n; ++j) acc += gauss(lo + i * dx, a * (lo + j * dx), w) * dens[j];
      pred[i] = acc * dx;
    }
    double norm = 0, mean = 0, var = 0;
    for (int i = 0; i < n; ++i) norm += (dens[i] = pred[i] * gauss(z, h * (lo + i * dx), q)) * dx;
    for (int i = 0; i < n; ++i) mean += (lo + i * dx) * (dens[i] /= norm) * dx;
    for (int i = 0; i < n; ++i) var += (lo + i * dx - mean) * (lo + i * dx - mean) * dens[i] * dx;
    grid_err = std::max({grid_err, std::abs(ks.x(0) - mean), std::abs(ks.P(0, 0) - var)});
  }

  // smoothing of noisy decodes of a slow 6-DOF trajectory
  auto decodes = [](std::size_t T, std::uint64_t seed, std::vector<double>* truth) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0, 0.15);
    std::vector<std::array<double, 6>> z(T);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < 6; ++d) {
        const double x = 0.7 * std::sin(2 * std::numbers::pi * (0.1 + 0.04 * d) * t / 30.0 + d);
        if (truth) truth->push_back(x);
        z[t][d] = x + g(rng);
      }
    return z;
  };
  std::vector<double> truth;
  const auto train_z = decodes(3000, 7, &truth);
  std::vector<double> flat;
  for (const auto& r : train_z) flat.insert(flat.end(), r.begin(), r.end());
  const auto fitted = fit_kalman(truth, flat, 6, 6);
  const auto test_z = decodes(1500, 8, nullptr);
  const auto smoothed = smooth_stream(fitted, test_z);
  std::vector<KinematicState> zs(test_z.begin(), test_z.end()), ss(smoothed.begin(), smoothed.end());
  const double reduction = 1 - msfd(ss) / msfd(zs);

  verdict(3, "Kalman correctness", step_ok && grid_err <= 1e-3 && reduction >= 0.2,
          fmt("scalar step x=%.15g P=%.15g, grid max error %.2e, MSFD reduction %.1f%%", s.x(0),
              s.P(0, 0), grid_err, 100 * reduction));
}

void hold_metric() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  TargetSpec spec;
  spec.selected_dofs = {4};
  spec.target[4] = -0.6;
  std::size_t mismatches = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const double p_in = u(rng);
    std::vector<KinematicState> traj(kTrialTicks, KinematicState{});
    std::vector<int> in(kTrialTicks);
    for (std::size_t t = 0; t < kTrialTicks; ++t) {
      in[t] = u(rng) < p_in;
      traj[t][4] = in[t] ? -0.6 + 0.199 * (2 * u(rng) - 1) : (u(rng) < 0.5 ? -0.81 : -0.39);
    }
    std::size_t best = 0, run = 0;
    for (int f : in) best = std::max(best, run = f ? run + 1 : 0);
    if (hold_duration(traj, spec) != static_cast<double>(best) / 30.0) ++mismatches;
  }
  const std::vector<KinematicState> on(kTrialTicks, spec.target), off(kTrialTicks, KinematicState{});
  const double full = hold_duration(on, spec), none = hold_duration(off, spec);
  verdict(4, "Hold-duration metric", mismatches == 0 && full == 7.0 && none == 0.0,
          fmt("%zu/1000 mismatches, full %.17g s, empty %.17g s", mismatches, full, none));
}

void snr_calibration() {
  Stopwatch sw;
  ParticipantConfig cfg;
  cfg.target_snr = 14;
  const auto p = make_participant(cfg, kParticipantSeed);
  RecordingProtocol protocol;
  protocol.repetitions = 3;
  const auto ds = record_session(p, don_sleeve(p, DonOptions{}, 3), protocol, 5);
  const auto labels = steady_state_activity(ds, 13);
  const auto frames = frames_of(ds);
  const double measured = snr(frames, labels).snr;
  const double t = sw.seconds();
  verdict(5, "SNR calibration", measured >= 11 && measured <= 17 && t < 30,
          fmt("measured SNR %.2f for target 14, %.1f s", measured, t));
}

// ---------------------------------------------------------------------------

struct Series {
  ParticipantModel participant;
  std::vector<SessionDataset> sessions;
};

std::shared_ptr<const Decoder> train_shared(std::span<const SessionDataset> sessions, PipelineConfig cfg) {
  return std::make_shared<const Decoder>(train_on_sessions(sessions, cfg));
}

ExperimentReport compare(const Series& s, const SleevePlacement& placement,
                         std::vector<std::string> names, std::vector<const TrialDecoder*> decoders,
                         std::uint64_t seed) {
  ExperimentPlan plan;
  plan.conditions = std::move(names);
  plan.blocks = kBlocks;
  plan.seed = seed;
  ExperimentEnvironment env{s.participant, placement, PursuitController{}, std::move(decoders), 1};
  return run_experiment(plan, env);
}

void accumulation(const Series& s) {
  Stopwatch sw;
  PipelineConfig cfg;
  cfg.train.seed = 31;
  const auto sessions = std::span(s.sessions).first(kAccumulated);
  const auto many = train_shared(sessions, cfg);
  const auto fresh = train_shared(sessions.last(1), cfg);
  NetTrialDecoder a(many, false), b(fresh, false);
  const auto r = compare(s, *sessions.back().metadata.placement, {"shallow10", "shallow1"}, {&a, &b}, 41);
  const auto& pw = r.pairwise[0];
  verdict(6, "Dataset-accumulation ordering",
          r.summaries[0].mean > r.summaries[1].mean && pw.test.p < 0.05 && r.holds[0].size() >= 20,
          fmt("shallow(10) %.3f +/- %.3f s vs shallow(1 fresh) %.3f +/- %.3f s, t(%g)=%.3f, p=%.3g, n=%zu, %.0f s",
              r.summaries[0].mean, r.summaries[0].sem, r.summaries[1].mean, r.summaries[1].sem,
              pw.test.df, pw.test.t, pw.test.p, r.holds[0].size(), sw.seconds()));
}

void smoothing(const Series& s) {
  Stopwatch sw;
  PipelineConfig cfg;
  cfg.arch = Architecture::Deep;
  cfg.deep_widths = kDeepWidths;
  cfg.train.max_epochs = kDeepEpochs;
  cfg.train.seed = 32;
  cfg.fit_smoother = true;
  const auto deep = train_shared(s.sessions, cfg);
  NetTrialDecoder raw(deep, false), kf(deep, true);
  const auto& placement = *s.sessions.back().metadata.placement;
  const auto r = compare(s, placement, {"deep", "deep+kf"}, {&raw, &kf}, 42);
  const auto& pw = r.pairwise[0];
  const double d_raw = r.summaries[0].mean, d_kf = r.summaries[1].mean;
  const bool significant = pw.test.p < 0.05;
  const bool hold_ok = significant ? d_kf >= d_raw : true;
  const char* outcome = significant ? (d_kf >= d_raw ? "KF better" : "KF worse") : "tie (p >= 0.05)";

  // identical inputs: replay the intents of oracle-driven trials through both
  std::mt19937_64 rng(43);
  std::size_t lower = 0;
  const std::size_t replays = 10;
  double m_raw = 0, m_kf = 0;
  for (std::size_t i = 0; i < replays; ++i) {
    const auto target = sample_target(rng);
    TrialOptions opt;
    opt.seed = 500 + i;
    OracleDecoder oracle;
    TrialOptions ext = opt;
    ext.source = IntentSource::External;
    ext.external_intent = run_trial(oracle, s.participant, placement, target, opt).intended;
    const double a = msfd(run_trial(raw, s.participant, placement, target, ext).decoded);
    const double b = msfd(run_trial(kf, s.participant, placement, target, ext).decoded);
    m_raw += a / replays;
    m_kf += b / replays;
    lower += b < a;
  }
  verdict(7, "Smoothing benefit ordering", hold_ok && lower == replays,
          fmt("deep(20) %.3f +/- %.3f s vs deep(20)+KF %.3f +/- %.3f s, t(%g)=%.3f, p=%.3g: %s; "
              "MSFD on identical inputs raw %.2e vs KF %.2e (KF lower in %zu/%zu); widths %zu/%zu/%zu, "
              "%d epochs max (kept %d, validation RMSE %.3f), %.0f s",
              d_raw, r.summaries[0].sem, d_kf, r.summaries[1].sem, pw.test.df, pw.test.t, pw.test.p,
              outcome, m_raw, m_kf, lower, replays, kDeepWidths[0], kDeepWidths[1], kDeepWidths[2],
              kDeepEpochs, deep->history.stopped_epoch,
              deep->history.validation_rmse[static_cast<std::size_t>(deep->history.stopped_epoch - 1)],
              sw.seconds()));
}

void stability(const Series& s) {
  Stopwatch sw;
  PipelineConfig cfg;
  cfg.train.seed = 33;
  const auto first = train_shared(std::span(s.sessions).first(1), cfg);
  NetTrialDecoder dec(first, false);
  const auto evaluate = [&](const SleevePlacement& placement, std::uint64_t seed) {
    ExperimentPlan plan;
    plan.conditions = {"session1"};
    plan.blocks = kTrialsPerPlacement;
    plan.seed = seed;
    ExperimentEnvironment env{s.participant, placement, PursuitController{}, {&dec}, 1};
    return run_evaluation(plan, env).summaries[0].mean;
  };
  const double own = evaluate(*s.sessions.front().metadata.placement, 699);
  std::string holds;
  std::size_t positive = 0;
  for (std::size_t k = 0; k < kFreshPlacements; ++k) {
    const double mean = evaluate(don_sleeve(s.participant, DonOptions{}, 900 + k), 700 + k);
    positive += mean > 0;
    holds += fmt("%s%.2f", k ? " " : "", mean);
  }
  verdict(8, "Longitudinal stability", positive == kFreshPlacements,
          fmt("mean hold per fresh placement [%s] s over %zu trials each, %zu/%zu > 0; same decoder "
              "on its own session-1 placement %.2f s; training kept epoch %d; %.0f s",
              holds.c_str(), kTrialsPerPlacement, positive, kFreshPlacements, own,
              first->history.stopped_epoch, sw.seconds()));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int shell(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

void determinism(const std::string& cli) {
  Stopwatch sw;
  const auto root = fs::temp_directory_path() / fmt("myoloop_accept_%d", static_cast<int>(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  const auto q = [](const fs::path& p) { return "'" + p.string() + "'"; };
  const std::string exe = "'" + cli + "' --seed 77 ";
  bool ran = shell(exe + "participant --out " + q(root / "p.json")) == 0;
  std::size_t compared = 0, identical = 0;
  for (const char* run : {"a", "b"}) {
    ran &= shell(exe + "record --participant " + q(root / "p.json") + " --sessions 2 --out " +
                 q(root / run)) == 0;
    ran &= shell(exe + "train --kf --data " + q(root / run / "session_000.emgs") + " " +
                 q(root / run / "session_001.emgs") + " --out " + q(root / run / "model.emgm")) == 0;
  }
  for (const char* f : {"session_000.emgs", "session_001.emgs", "model.emgm"}) {
    const auto x = slurp(root / "a" / f), y = slurp(root / "b" / f);
    ++compared;
    identical += !x.empty() && x == y;
  }
  fs::remove_all(root);
  verdict(9, "Determinism", ran && identical == compared,
          fmt("%zu/%zu output files bit-identical across two runs (record, train), %.1f s", identical,
              compared, sw.seconds()));
}

void statistics() {
  const std::vector<double> a{2, 4, 6}, b{1, 2, 3};
  const auto t = paired_t_test(a, b);
  const std::vector<std::vector<double>> groups{{1, 2, 3}, {2, 3, 4}, {3, 4, 5}};
  const auto f = one_way_anova(groups);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0, 1);
  double identity = 0;
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<std::vector<double>> groups(2);
    for (int i = 0; i < 4 + rep % 9; ++i) groups[0].push_back(g(rng));
    for (int i = 0; i < 3 + rep % 7; ++i) groups[1].push_back(g(rng) + 0.3);
    const auto ft = one_way_anova(groups);
    const auto tt = unpaired_t_test(groups[0], groups[1]);
    identity = std::max(identity, std::abs(ft.F - tt.t * tt.t));
  }
  const bool ok = std::abs(t.t - 3.4641) < 1e-3 && std::abs(t.p - 0.0742) < 1e-3 &&
                  std::abs(f.F - 3.0) < 1e-3 && std::abs(f.p - 0.125) < 1e-3 && identity < 1e-10;
  verdict(10, "Statistics", ok,
          fmt("paired t=%.4f p=%.4f, ANOVA F=%.4f p=%.4f, max |F - t^2| %.1e", t.t, t.p, f.F, f.p,
              identity));
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s MYOLOOP_CLI_BINARY\n", argv[0]);
    return 64;
  }
  Stopwatch total;
  const auto guarded = [](int id, const char* name, const std::function<void()>& body) {
    try {
      body();
    } catch (const std::exception& e) {
      verdict(id, name, false, std::string("exception: ") + e.what());
    }
  };
  guarded(1, "MAV oracle equivalence", mav_oracle);
  guarded(2, "Gradient correctness", gradients);
  guarded(3, "Kalman correctness", kalman);
  guarded(4, "Hold-duration metric", hold_metric);
  guarded(5, "SNR calibration", snr_calibration);

  Series series{make_participant(ParticipantConfig{}, kParticipantSeed), {}};
  try {
    SeriesOptions so;
    so.sessions = kSeriesSessions;
    so.repetitions = 3;
    series.sessions = record_series(series.participant, so, kSeriesSeed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "recording the series failed: %s\n", e.what());
  }
  guarded(6, "Dataset-accumulation ordering", [&] { accumulation(series); });
  guarded(7, "Smoothing benefit ordering", [&] { smoothing(series); });
  guarded(8, "Longitudinal stability", [&] { stability(series); });
  guarded(9, "Determinism", [&] { determinism(argv[1]); });
  guarded(10, "Statistics", statistics);
  std::printf("%d failed, total %.0f s\n", failures, total.seconds());
  return failures;
}
