#include "myoloop/taskbench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "util.hpp"

namespace myo {

void TargetSpec::validate() const {
  require(window_fraction > 0 && window_fraction <= 1, ErrorKind::Domain,
          "window fraction must lie in (0, 1]");
  std::array<bool, kDof> selected{};
  for (int d : selected_dofs) {
    require(d >= 0 && d < static_cast<int>(kDof), ErrorKind::Domain, "selected DOF out of range");
    require(!selected[static_cast<std::size_t>(d)], ErrorKind::Domain, "selected DOF listed twice");
    selected[static_cast<std::size_t>(d)] = true;
  }
  for (std::size_t d = 0; d < kDof; ++d) {
    require(std::isfinite(target[d]) && std::abs(target[d]) <= 1, ErrorKind::Domain,
            "target components must lie in [-1, 1]");
    require(selected[d] || target[d] == 0.0, ErrorKind::Domain, "unselected DOFs must target 0");
  }
}

TargetSpec sample_target(std::mt19937_64& rng, std::size_t n_selected) {
  require(n_selected >= 1 && n_selected <= kDof, ErrorKind::Domain,
          "between one and six DOFs can be selected");
  std::array<int, kDof> dofs{};
  std::iota(dofs.begin(), dofs.end(), 0);
  std::shuffle(dofs.begin(), dofs.end(), rng);
  std::uniform_real_distribution<double> magnitude(0.3, 0.9);
  std::bernoulli_distribution negative(0.5);
  TargetSpec spec;
  spec.selected_dofs.assign(dofs.begin(), dofs.begin() + static_cast<std::ptrdiff_t>(n_selected));
  std::sort(spec.selected_dofs.begin(), spec.selected_dofs.end());
  for (int d : spec.selected_dofs) {
    const double m = magnitude(rng);
    spec.target[static_cast<std::size_t>(d)] = negative(rng) ? -m : m;
  }
  return spec;
}

bool in_window(const KinematicState& state, const TargetSpec& spec) {
  const double hw = spec.half_width();
  for (std::size_t d = 0; d < kDof; ++d)
    if (!(std::abs(state[d] - spec.target[d]) <= hw)) return false;
  return true;
}

double longest_run_seconds(std::span<const bool> flags) {
  std::size_t run = 0, best = 0;
  for (bool f : flags) {
    run = f ? run + 1 : 0;
    best = std::max(best, run);
  }
  return static_cast<double>(best) / kTickRateHz;
}

double hold_duration(std::span<const KinematicState> trajectory, const TargetSpec& spec) {
  require(trajectory.size() == kTrialTicks, ErrorKind::Shape,
          "hold_duration needs a full 210-tick trajectory");
  std::size_t run = 0, best = 0;
  for (const auto& state : trajectory) {
    run = in_window(state, spec) ? run + 1 : 0;
    best = std::max(best, run);
  }
  return static_cast<double>(best) / kTickRateHz;
}

// ---------------------------------------------------------------------------

NetTrialDecoder::NetTrialDecoder(std::shared_ptr<const Decoder> decoder, bool use_smoother)
    : source_(std::move(decoder)), net_(*source_) {
  if (use_smoother) {
    require(net_.smoother.has_value(), ErrorKind::Domain, "decoder has no fitted smoother");
    smoother_.emplace(*net_.smoother);
  }
}

void NetTrialDecoder::reset() {
  if (smoother_) smoother_->reset();
}

KinematicState NetTrialDecoder::step(const FeatureImage& image, const FeatureFrame&,
                                     const KinematicState&) {
  KinematicState k = forward(net_, image, Mode::Eval);
  if (smoother_) k = smoother_->step(k);
  return k;
}

std::unique_ptr<TrialDecoder> NetTrialDecoder::clone() const {
  return std::make_unique<NetTrialDecoder>(source_, smoother_.has_value());
}

std::string NetTrialDecoder::name() const {
  return std::string(to_string(net_.arch)) + (smoother_ ? "+kf" : "");
}

KalmanFeatureDecoder::KalmanFeatureDecoder(KalmanParams params) : params_(std::move(params)) {
  params_.validate();
  require(params_.state_dim() == static_cast<Eigen::Index>(kDof), ErrorKind::Shape,
          "feature decoder state must be the six DOFs");
}

void KalmanFeatureDecoder::reset() { state_.reset(); }

KinematicState KalmanFeatureDecoder::step(const FeatureImage&, const FeatureFrame& newest,
                                          const KinematicState&) {
  require(static_cast<Eigen::Index>(newest.values.size()) == params_.obs_dim(), ErrorKind::Shape,
          "feature frame does not match the Kalman observation size");
  if (!state_) state_ = KalmanState{Eigen::VectorXd::Zero(kDof), params_.W};
  const Eigen::VectorXd z = Eigen::Map<const Eigen::VectorXd>(
      newest.values.data(), static_cast<Eigen::Index>(newest.values.size()));
  *state_ = kalman_step(params_, *state_, z);
  KinematicState k{};
  for (std::size_t d = 0; d < kDof; ++d)
    k[d] = std::clamp(state_->x(static_cast<Eigen::Index>(d)), -1.0, 1.0);
  return k;
}

std::unique_ptr<TrialDecoder> KalmanFeatureDecoder::clone() const {
  return std::make_unique<KalmanFeatureDecoder>(params_);
}

KalmanParams fit_feature_kalman(const SessionDataset& ds) {
  ds.validate();
  std::vector<double> states(ds.labels.begin(), ds.labels.end());
  std::vector<double> obs(ds.features.begin(), ds.features.end());
  return fit_kalman(states, obs, kDof, ds.n_channels);
}

// ---------------------------------------------------------------------------

std::size_t PursuitController::delay_ticks() const {
  return static_cast<std::size_t>(std::llround(delay_s * kTickRateHz));
}

double PursuitController::alpha() const {
  return 1.0 - std::exp(-1.0 / (kTickRateHz * time_constant_s));
}

void PursuitController::validate() const {
  require(time_constant_s > 0 && std::isfinite(time_constant_s), ErrorKind::Domain,
          "pursuit time constant must be positive");
  require(delay_s >= 0 && noise_sigma >= 0, ErrorKind::Domain,
          "pursuit delay and noise must be non-negative");
}

std::uint64_t emg_seed(std::uint64_t trial_seed) { return detail::mix_seed(trial_seed, 1); }

PursuitAgent::PursuitAgent(const TargetSpec& target, const PursuitController& controller,
                           std::uint64_t seed)
    : target_(target), controller_(controller), rng_(detail::mix_seed(seed, 2)) {
  target_.validate();
  controller_.validate();
}

KinematicState PursuitAgent::intent() {
  const std::size_t delay = controller_.delay_ticks();
  if (seen_.size() > delay) {
    const KinematicState& y = seen_[seen_.size() - 1 - delay];
    const double a = controller_.alpha();
    for (std::size_t d = 0; d < kDof; ++d)
      u_[d] = std::clamp(u_[d] + a * (target_.target[d] - y[d]), -1.0, 1.0);
  }
  KinematicState out{};
  for (std::size_t d = 0; d < kDof; ++d) {
    const double n = noise_(rng_);
    out[d] = std::clamp(u_[d] + controller_.noise_sigma * n, -1.0, 1.0);
  }
  return out;
}

void PursuitAgent::observe(const KinematicState& decoded) { seen_.push_back(decoded); }

DecodePipeline::DecodePipeline(const ParticipantModel& participant,
                               const SleevePlacement& placement, std::uint64_t emg_seed)
    : synth_(participant, placement, emg_seed) {}

KinematicState DecodePipeline::advance(TrialDecoder& decoder, const KinematicState& intent) {
  samples_.clear();
  frames_.clear();
  synth_.tick(intent, samples_);
  mav_.push(samples_, frames_);
  require(frames_.size() == 1, ErrorKind::Numeric, "tick did not produce exactly one feature frame");
  history_.push(frames_.front());
  return clamp_state(decoder.step(history_.image(), history_.newest(), intent));
}

TrialEngine::TrialEngine(TrialDecoder& decoder, const ParticipantModel& participant,
                         const SleevePlacement& placement, TargetSpec target, std::uint64_t seed)
    : decoder_(decoder), pipeline_(participant, placement, emg_seed(seed)), target_(std::move(target)) {
  target_.validate();
  result_.seed = seed;
  decoder_.reset();
  for (std::size_t t = 0; t < kWarmupTicks; ++t) pipeline_.advance(decoder_, KinematicState{});
}

TickOutcome TrialEngine::step(const KinematicState& raw_intent) {
  require(!done(), ErrorKind::Domain, "trial already finished");
  const KinematicState intent = clamp_state(raw_intent);
  TickOutcome o;
  o.tick = tick();
  o.intent = intent;
  o.decoded = pipeline_.advance(decoder_, intent);
  for (double v : o.decoded)
    require(std::isfinite(v), ErrorKind::Numeric, "decoder produced a non-finite state");
  o.in_window = in_window(o.decoded, target_);
  run_ = o.in_window ? run_ + 1 : 0;
  best_ = std::max(best_, run_);
  o.hold_run_ticks = run_;
  o.best_run_ticks = best_;
  result_.intended.push_back(intent);
  result_.decoded.push_back(o.decoded);
  result_.in_window.push_back(o.in_window);
  return o;
}

TrialResult TrialEngine::result() const {
  TrialResult r = result_;
  r.hold_duration_s = static_cast<double>(best_) / kTickRateHz;
  r.partial = !done();
  return r;
}

TrialResult run_trial(TrialDecoder& decoder, const ParticipantModel& participant,
                      const SleevePlacement& placement, const TargetSpec& target,
                      const TrialOptions& options) {
  TrialEngine engine(decoder, participant, placement, target, options.seed);
  if (options.source == IntentSource::Synthetic) {
    PursuitAgent agent(target, options.controller, options.seed);
    while (!engine.done()) agent.observe(engine.step(agent.intent()).decoded);
  } else {
    require(options.external_intent.size() == kTrialTicks, ErrorKind::Shape,
            "external intent must cover all 210 ticks");
    for (const auto& k : options.external_intent) engine.step(k);
  }
  TrialResult r = engine.result();
  r.condition = options.condition;
  return r;
}

// ---------------------------------------------------------------------------

namespace {

void validate_plan_fields(const ExperimentPlan& plan) {
  const auto& conditions = plan.conditions;
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    require(!conditions[i].empty() && conditions[i].find_first_of(",\"\n") == std::string::npos,
            ErrorKind::Domain, "condition names must be non-empty without commas, quotes or newlines");
    for (std::size_t j = 0; j < i; ++j)
      require(conditions[i] != conditions[j], ErrorKind::Domain, "condition names must be unique");
  }
  require(plan.blocks >= 1, ErrorKind::Domain, "an experiment needs at least one block");
  require(plan.selected_dofs >= 1 && plan.selected_dofs <= kDof, ErrorKind::Domain,
          "selected_dofs must lie in 1..6");
}

ExperimentReport run_blocks(const ExperimentPlan& plan, const ExperimentEnvironment& env);

}  // namespace

void ExperimentPlan::validate() const {
  require(conditions.size() >= 2, ErrorKind::Domain,
          "a cross-over experiment needs at least two conditions");
  validate_plan_fields(*this);
}

std::vector<std::vector<std::size_t>> block_orders(const ExperimentPlan& plan) {
  validate_plan_fields(plan);
  require(!plan.conditions.empty(), ErrorKind::Domain, "a plan needs at least one condition");
  const std::size_t k = plan.conditions.size();
  std::mt19937_64 rng(detail::mix_seed(plan.seed, 7));
  // random relabelling of the Latin-square symbols
  std::vector<std::size_t> label(k);
  std::iota(label.begin(), label.end(), std::size_t{0});
  std::shuffle(label.begin(), label.end(), rng);

  std::vector<std::vector<std::size_t>> orders;
  std::vector<std::size_t> rows(k);
  while (orders.size() < plan.blocks) {
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t r : rows) {
      if (orders.size() == plan.blocks) break;
      std::vector<std::size_t> order(k);
      for (std::size_t j = 0; j < k; ++j) order[j] = label[(r + j) % k];
      orders.push_back(std::move(order));
    }
  }
  return orders;
}

ExperimentReport run_experiment(const ExperimentPlan& plan, const ExperimentEnvironment& env) {
  plan.validate();
  return run_blocks(plan, env);
}

ExperimentReport run_evaluation(const ExperimentPlan& plan, const ExperimentEnvironment& env) {
  require(plan.conditions.size() == 1, ErrorKind::Domain, "an evaluation has exactly one condition");
  validate_plan_fields(plan);
  return run_blocks(plan, env);
}

namespace {

ExperimentReport run_blocks(const ExperimentPlan& plan, const ExperimentEnvironment& env) {
  require(env.decoders.size() == plan.conditions.size(), ErrorKind::Domain,
          "need exactly one decoder per condition");
  for (const auto* d : env.decoders) require(d != nullptr, ErrorKind::Domain, "null decoder");
  env.controller.validate();

  const auto orders = block_orders(plan);
  ExperimentReport report;
  report.conditions = plan.conditions;
  for (std::size_t b = 0; b < plan.blocks; ++b) {
    const std::uint64_t seed = detail::mix_seed(plan.seed, 100 + b);
    std::mt19937_64 rng(seed);
    const TargetSpec target = sample_target(rng, plan.selected_dofs);
    for (std::size_t p = 0; p < orders[b].size(); ++p)
      report.trials.push_back({b, p, orders[b][p], seed, target, 0.0});
  }

  const std::size_t jobs = std::max<std::size_t>(1, std::min(env.jobs, report.trials.size()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    try {
      std::vector<std::unique_ptr<TrialDecoder>> local;
      for (const auto* d : env.decoders) local.push_back(d->clone());
      for (std::size_t i = next++; i < report.trials.size(); i = next++) {
        auto& rec = report.trials[i];
        TrialOptions opt;
        opt.controller = env.controller;
        opt.seed = rec.seed;
        rec.hold_duration_s =
            run_trial(*local[rec.condition], env.participant, env.placement, rec.target, opt)
                .hold_duration_s;
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = report.trials.size();
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  report.holds.assign(plan.conditions.size(), std::vector<double>(plan.blocks, 0.0));
  for (const auto& r : report.trials) report.holds[r.condition][r.block] = r.hold_duration_s;
  for (const auto& h : report.holds) report.summaries.push_back(summarize(h));
  report.pairwise = pairwise_tests(report.holds, true);
  try {
    report.anova = one_way_anova(report.holds);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Domain) throw;
  }
  return report;
}

}  // namespace

std::string report_to_json(const ExperimentReport& report) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["kind"] = "myoloop.experiment";
  j["version"] = 1;
  j["conditions"] = report.conditions;
  ordered_json summary = ordered_json::array();
  for (std::size_t c = 0; c < report.conditions.size(); ++c) {
    const auto& s = report.summaries[c];
    summary.push_back({{"condition", report.conditions[c]},
                       {"n", s.n},
                       {"mean_hold_s", s.mean},
                       {"sd_hold_s", s.sd},
                       {"sem_hold_s", s.sem}});
  }
  j["summary"] = summary;
  ordered_json pairs = ordered_json::array();
  for (const auto& p : report.pairwise)
    pairs.push_back({{"a", report.conditions[p.a]},
                     {"b", report.conditions[p.b]},
                     {"test", "paired_t"},
                     {"t", p.test.t},
                     {"df", p.test.df},
                     {"p", p.test.p},
                     {"p_bonferroni", p.p_bonferroni}});
  j["pairwise"] = pairs;
  if (report.anova)
    j["anova"] = {{"F", report.anova->F},
                  {"df_between", report.anova->df_between},
                  {"df_within", report.anova->df_within},
                  {"p", report.anova->p}};
  else
    j["anova"] = nullptr;
  ordered_json trials = ordered_json::array();
  for (const auto& t : report.trials)
    trials.push_back({{"block", t.block},
                      {"position", t.position},
                      {"condition", report.conditions[t.condition]},
                      {"seed", t.seed},
                      {"selected_dofs", t.target.selected_dofs},
                      {"target", t.target.target},
                      {"hold_duration_s", t.hold_duration_s}});
  j["trials"] = trials;
  return j.dump(2);
}

std::string report_to_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "block,position,condition,seed,hold_duration_s\n";
  for (const auto& t : report.trials)
    out << t.block << ',' << t.position << ',' << report.conditions[t.condition] << ',' << t.seed
        << ',' << t.hold_duration_s << '\n';
  return out.str();
}

}  // namespace myo
