#include "myoloop/myoloop.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include <json.hpp>

#include "myoloop/dataset.hpp"
#include "myoloop/error.hpp"
#include "myoloop/loopserver.hpp"
#include "myoloop/nnet.hpp"
#include "myoloop/synthem.hpp"
#include "myoloop/taskbench.hpp"

struct myo_participant {
  myo::ParticipantModel v;
};
struct myo_placement {
  myo::SleevePlacement v;
};
struct myo_dataset {
  myo::SessionDataset v;
};
struct myo_model {
  std::shared_ptr<const myo::Decoder> v;
};
struct myo_decoder {
  std::unique_ptr<myo::TrialDecoder> v;
};
struct myo_report {
  myo::ExperimentReport v;
};
struct myo_server {
  std::unique_ptr<myo::LoopServer> v;
};

namespace {

thread_local std::string last_error;

myo_status status_of(myo::ErrorKind kind) {
  switch (kind) {
    case myo::ErrorKind::Shape: return MYO_E_SHAPE;
    case myo::ErrorKind::Domain: return MYO_E_DOMAIN;
    case myo::ErrorKind::Io: return MYO_E_IO;
    case myo::ErrorKind::ParseMagic: return MYO_E_PARSE_MAGIC;
    case myo::ErrorKind::ParseVersion: return MYO_E_PARSE_VERSION;
    case myo::ErrorKind::ParseTruncated: return MYO_E_PARSE_TRUNCATED;
    case myo::ErrorKind::Parse: return MYO_E_PARSE;
    case myo::ErrorKind::Fit: return MYO_E_FIT;
    case myo::ErrorKind::Numeric: return MYO_E_NUMERIC;
  }
  return MYO_E_INTERNAL;
}

myo_status failure(myo_status status, const std::string& message) {
  last_error = message;
  return status;
}

/// Runs `body`, translating exceptions into status codes.
template <class F>
myo_status guarded(F&& body) {
  try {
    body();
    return MYO_OK;
  } catch (const myo::Error& e) {
    return failure(status_of(e.kind()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return failure(MYO_E_PARSE, e.what());
  } catch (const std::bad_alloc&) {
    return failure(MYO_E_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return failure(MYO_E_INTERNAL, e.what());
  } catch (...) {
    return failure(MYO_E_INTERNAL, "unknown error");
  }
}

#define MYO_REQUIRE_ARG(cond, what)                        \
  do {                                                     \
    if (!(cond)) return failure(MYO_E_ARGUMENT, (what));   \
  } while (0)

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::vector<myo::SessionDataset> gather(const myo_dataset* const* sessions, std::size_t count) {
  std::vector<myo::SessionDataset> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    myo::require(sessions[i] != nullptr, myo::ErrorKind::Domain, "null dataset handle");
    out.push_back(sessions[i]->v);
  }
  return out;
}

myo::SeriesOptions series_options(const myo_record_options& o) {
  myo::SeriesOptions s;
  s.sessions = o.sessions;
  s.don.shift_mean_mm = o.shift_mm;
  s.repetitions = o.repetitions;
  myo::require(std::isfinite(o.shift_mm) && o.shift_mm >= 0, myo::ErrorKind::Domain,
               "shift_mm must be a non-negative number");
  return s;
}

}  // namespace

extern "C" {

const char* myo_version(void) {
  static const std::string v = myo::tool_version();
  return v.c_str();
}

const char* myo_status_name(myo_status status) {
  switch (status) {
    case MYO_OK: return "ok";
    case MYO_E_ARGUMENT: return "argument";
    case MYO_E_SHAPE: return "shape";
    case MYO_E_DOMAIN: return "domain";
    case MYO_E_IO: return "io";
    case MYO_E_PARSE_MAGIC: return "parse-magic";
    case MYO_E_PARSE_VERSION: return "parse-version";
    case MYO_E_PARSE_TRUNCATED: return "parse-truncated";
    case MYO_E_PARSE: return "parse";
    case MYO_E_FIT: return "fit";
    case MYO_E_NUMERIC: return "numeric";
    case MYO_E_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* myo_last_error(void) { return last_error.c_str(); }

void myo_string_free(char* s) { std::free(s); }

// ---- participants ----------------------------------------------------------

myo_status myo_participant_create(uint64_t seed, double target_snr, myo_participant** out) {
  MYO_REQUIRE_ARG(out, "out is null");
  return guarded([&] {
    myo::ParticipantConfig cfg;
    cfg.target_snr = target_snr;
    *out = new myo_participant{myo::make_participant(cfg, seed)};
  });
}

myo_status myo_participant_load(const char* path, myo_participant** out) {
  MYO_REQUIRE_ARG(path && out, "path or out is null");
  return guarded([&] { *out = new myo_participant{myo::load_participant(path)}; });
}

myo_status myo_participant_save(const myo_participant* p, const char* path) {
  MYO_REQUIRE_ARG(p && path, "participant or path is null");
  return guarded([&] { myo::save_participant(p->v, path); });
}

myo_status myo_participant_to_json(const myo_participant* p, char** out) {
  MYO_REQUIRE_ARG(p && out, "participant or out is null");
  return guarded([&] { *out = copy_string(myo::participant_to_json(p->v)); });
}

void myo_participant_free(myo_participant* p) { delete p; }

// ---- placements ------------------------------------------------------------

myo_status myo_placement_don(const myo_participant* p, double shift_mm, uint64_t seed,
                             myo_placement** out) {
  MYO_REQUIRE_ARG(p && out, "participant or out is null");
  return guarded([&] {
    myo::require(std::isfinite(shift_mm) && shift_mm >= 0, myo::ErrorKind::Domain,
                 "shift_mm must be a non-negative number");
    myo::DonOptions opt;
    opt.shift_mean_mm = shift_mm;
    *out = new myo_placement{myo::don_sleeve(p->v, opt, seed)};
  });
}

myo_status myo_placement_from_dataset(const myo_dataset* d, myo_placement** out) {
  MYO_REQUIRE_ARG(d && out, "dataset or out is null");
  return guarded([&] {
    myo::require(d->v.metadata.placement.has_value(), myo::ErrorKind::Domain,
                 "dataset does not record a single placement");
    *out = new myo_placement{*d->v.metadata.placement};
  });
}

myo_status myo_placement_shift_mm(const myo_placement* pl, double* out) {
  MYO_REQUIRE_ARG(pl && out, "placement or out is null");
  *out = pl->v.shift_magnitude_mm();
  return MYO_OK;
}

void myo_placement_free(myo_placement* pl) { delete pl; }

// ---- sessions --------------------------------------------------------------

void myo_record_options_default(myo_record_options* o) {
  if (!o) return;
  const myo::SeriesOptions s;
  o->sessions = s.sessions;
  o->shift_mm = s.don.shift_mean_mm;
  o->repetitions = s.repetitions;
}

myo_status myo_record_session(const myo_participant* p, const myo_record_options* o,
                              uint64_t seed, size_t index, myo_dataset** out) {
  MYO_REQUIRE_ARG(p && o && out, "participant, options or out is null");
  return guarded([&] {
    *out = new myo_dataset{myo::record_series_session(p->v, series_options(*o), seed, index)};
  });
}

myo_status myo_dataset_load(const char* path, myo_dataset** out) {
  MYO_REQUIRE_ARG(path && out, "path or out is null");
  return guarded([&] { *out = new myo_dataset{myo::load_dataset(path)}; });
}

myo_status myo_dataset_save(const myo_dataset* d, const char* path) {
  MYO_REQUIRE_ARG(d && path, "dataset or path is null");
  return guarded([&] { myo::save_dataset(d->v, path); });
}

myo_status myo_dataset_ticks(const myo_dataset* d, size_t* out) {
  MYO_REQUIRE_ARG(d && out, "dataset or out is null");
  *out = d->v.n_ticks();
  return MYO_OK;
}

myo_status myo_dataset_channels(const myo_dataset* d, size_t* out) {
  MYO_REQUIRE_ARG(d && out, "dataset or out is null");
  *out = d->v.n_channels;
  return MYO_OK;
}

myo_status myo_dataset_id(const myo_dataset* d, char** out) {
  MYO_REQUIRE_ARG(d && out, "dataset or out is null");
  return guarded([&] { *out = copy_string(d->v.metadata.session_id); });
}

void myo_dataset_free(myo_dataset* d) { delete d; }

// ---- training --------------------------------------------------------------

void myo_train_options_default(myo_train_options* o) {
  if (!o) return;
  const myo::PipelineConfig p;
  o->arch = MYO_ARCH_SHALLOW;
  o->learning_rate = p.train.learning_rate;
  o->momentum = p.train.momentum;
  o->batch_size = p.train.batch_size;
  o->max_epochs = p.train.max_epochs;
  o->seed = p.train.seed;
  o->fit_smoother = 0;
  for (int i = 0; i < 3; ++i) o->deep_widths[i] = p.deep_widths[static_cast<std::size_t>(i)];
}

myo_status myo_train(const myo_dataset* const* sessions, size_t count, const myo_train_options* o,
                     myo_model** out) {
  MYO_REQUIRE_ARG(sessions && o && out, "sessions, options or out is null");
  MYO_REQUIRE_ARG(o->arch == MYO_ARCH_SHALLOW || o->arch == MYO_ARCH_DEEP, "unknown architecture");
  return guarded([&] {
    myo::PipelineConfig cfg;
    cfg.arch = o->arch == MYO_ARCH_DEEP ? myo::Architecture::Deep : myo::Architecture::Shallow;
    cfg.train.learning_rate = o->learning_rate;
    cfg.train.momentum = o->momentum;
    cfg.train.batch_size = o->batch_size;
    cfg.train.max_epochs = o->max_epochs;
    cfg.train.seed = o->seed;
    cfg.fit_smoother = o->fit_smoother != 0;
    for (std::size_t i = 0; i < 3; ++i) {
      myo::require(o->deep_widths[i] > 0, myo::ErrorKind::Domain, "deep widths must be positive");
      cfg.deep_widths[i] = o->deep_widths[i];
    }
    const auto data = gather(sessions, count);
    auto decoder = std::make_shared<myo::Decoder>(myo::train_on_sessions(data, cfg));
    *out = new myo_model{std::move(decoder)};
  });
}

myo_status myo_model_info_get(const myo_model* m, myo_model_info* out) {
  MYO_REQUIRE_ARG(m && out, "model or out is null");
  return guarded([&] {
    const auto& d = *m->v;
    const auto& h = d.history;
    myo_model_info info{};
    info.arch = d.arch == myo::Architecture::Deep ? MYO_ARCH_DEEP : MYO_ARCH_SHALLOW;
    info.parameters = d.net.parameter_count();
    info.epochs_run = static_cast<int>(h.validation_rmse.size());
    info.stopped_epoch = h.stopped_epoch;
    info.early_stopped = h.early_stopped ? 1 : 0;
    if (h.stopped_epoch >= 1 && static_cast<std::size_t>(h.stopped_epoch) <= h.validation_rmse.size()) {
      info.final_train_rmse = h.train_rmse[static_cast<std::size_t>(h.stopped_epoch - 1)];
      info.final_validation_rmse = h.validation_rmse[static_cast<std::size_t>(h.stopped_epoch - 1)];
    }
    info.wall_time_s = h.wall_time_s;
    info.has_smoother = d.smoother.has_value() ? 1 : 0;
    *out = info;
  });
}

myo_status myo_model_history_json(const myo_model* m, char** out) {
  MYO_REQUIRE_ARG(m && out, "model or out is null");
  return guarded([&] {
    const auto& h = m->v->history;
    nlohmann::ordered_json j{{"train_rmse", h.train_rmse},
                             {"validation_rmse", h.validation_rmse},
                             {"stopped_epoch", h.stopped_epoch},
                             {"early_stopped", h.early_stopped}};
    *out = copy_string(j.dump());
  });
}

myo_status myo_model_load(const char* path, myo_model** out) {
  MYO_REQUIRE_ARG(path && out, "path or out is null");
  return guarded([&] {
    *out = new myo_model{std::make_shared<myo::Decoder>(myo::load_model(path))};
  });
}

myo_status myo_model_save(const myo_model* m, const char* path) {
  MYO_REQUIRE_ARG(m && path, "model or path is null");
  return guarded([&] { myo::save_model(*m->v, path); });
}

void myo_model_free(myo_model* m) { delete m; }

// ---- decoders --------------------------------------------------------------

myo_status myo_decoder_from_model(const myo_model* m, int use_smoother, myo_decoder** out) {
  MYO_REQUIRE_ARG(m && out, "model or out is null");
  return guarded([&] {
    *out = new myo_decoder{std::make_unique<myo::NetTrialDecoder>(m->v, use_smoother != 0)};
  });
}

myo_status myo_decoder_feature_kalman(const myo_dataset* const* sessions, size_t count,
                                      myo_decoder** out) {
  MYO_REQUIRE_ARG(sessions && out && count > 0, "sessions or out is null");
  return guarded([&] {
    const auto data = gather(sessions, count);
    auto params = myo::fit_feature_kalman(myo::accumulate(data));
    *out = new myo_decoder{std::make_unique<myo::KalmanFeatureDecoder>(std::move(params))};
  });
}

myo_status myo_decoder_oracle(myo_decoder** out) {
  MYO_REQUIRE_ARG(out, "out is null");
  return guarded([&] { *out = new myo_decoder{std::make_unique<myo::OracleDecoder>()}; });
}

myo_status myo_decoder_zero(myo_decoder** out) {
  MYO_REQUIRE_ARG(out, "out is null");
  return guarded([&] { *out = new myo_decoder{std::make_unique<myo::ZeroDecoder>()}; });
}

void myo_decoder_free(myo_decoder* d) { delete d; }

// ---- experiments -----------------------------------------------------------

void myo_experiment_options_default(myo_experiment_options* o) {
  if (!o) return;
  const myo::ExperimentPlan plan;
  const myo::PursuitController c;
  o->blocks = plan.blocks;
  o->selected_dofs = plan.selected_dofs;
  o->seed = plan.seed;
  o->jobs = 1;
  o->pursuit_time_constant_s = c.time_constant_s;
  o->reaction_delay_s = c.delay_s;
  o->motor_noise = c.noise_sigma;
}

namespace {

myo_status run_plan(const myo_decoder* const* decoders, const char* const* names, size_t count,
                    const myo_participant* p, const myo_placement* pl,
                    const myo_experiment_options* o, myo_report** out, bool evaluation) {
  return guarded([&] {
    myo::ExperimentPlan plan;
    plan.blocks = o->blocks;
    plan.selected_dofs = o->selected_dofs;
    plan.seed = o->seed;
    myo::ExperimentEnvironment env{p->v, pl->v, {}, {}, o->jobs};
    env.controller.time_constant_s = o->pursuit_time_constant_s;
    env.controller.delay_s = o->reaction_delay_s;
    env.controller.noise_sigma = o->motor_noise;
    for (std::size_t i = 0; i < count; ++i) {
      myo::require(decoders[i] != nullptr, myo::ErrorKind::Domain, "null decoder handle");
      plan.conditions.push_back(names && names[i] ? std::string(names[i]) : decoders[i]->v->name());
      env.decoders.push_back(decoders[i]->v.get());
    }
    *out = new myo_report{evaluation ? myo::run_evaluation(plan, env)
                                     : myo::run_experiment(plan, env)};
  });
}

}  // namespace

myo_status myo_run_experiment(const myo_decoder* const* decoders, const char* const* names,
                              size_t count, const myo_participant* p, const myo_placement* pl,
                              const myo_experiment_options* o, myo_report** out) {
  MYO_REQUIRE_ARG(decoders && p && pl && o && out, "null argument");
  MYO_REQUIRE_ARG(count >= 2, "at least two decoders are required");
  return run_plan(decoders, names, count, p, pl, o, out, false);
}

myo_status myo_run_evaluation(const myo_decoder* decoder, const char* name,
                              const myo_participant* p, const myo_placement* pl,
                              const myo_experiment_options* o, myo_report** out) {
  MYO_REQUIRE_ARG(decoder && p && pl && o && out, "null argument");
  const char* names[] = {name};
  return run_plan(&decoder, names, 1, p, pl, o, out, true);
}

myo_status myo_report_json(const myo_report* r, char** out) {
  MYO_REQUIRE_ARG(r && out, "report or out is null");
  return guarded([&] { *out = copy_string(myo::report_to_json(r->v)); });
}

myo_status myo_report_csv(const myo_report* r, char** out) {
  MYO_REQUIRE_ARG(r && out, "report or out is null");
  return guarded([&] { *out = copy_string(myo::report_to_csv(r->v)); });
}

myo_status myo_report_summary(const myo_report* r, size_t condition, double* mean, double* sem,
                              size_t* n) {
  MYO_REQUIRE_ARG(r, "report is null");
  MYO_REQUIRE_ARG(condition < r->v.summaries.size(), "condition index out of range");
  const auto& s = r->v.summaries[condition];
  if (mean) *mean = s.mean;
  if (sem) *sem = s.sem;
  if (n) *n = s.n;
  return MYO_OK;
}

void myo_report_free(myo_report* r) { delete r; }

// ---- server ----------------------------------------------------------------

void myo_server_options_default(myo_server_options* o) {
  if (!o) return;
  o->host = nullptr;
  o->port = 0;
  o->lockstep = 0;
  o->seed = 0;
  o->handle_signals = 0;
}

myo_status myo_server_create(const myo_decoder* d, const myo_participant* p,
                             const myo_placement* pl, const myo_server_options* o,
                             myo_server** out) {
  MYO_REQUIRE_ARG(d && p && pl && o && out, "null argument");
  return guarded([&] {
    myo::ServerOptions opt;
    if (o->host) opt.host = o->host;
    opt.port = o->port;
    opt.lockstep = o->lockstep != 0;
    opt.handle_signals = o->handle_signals != 0;
    myo::LoopCore core(d->v->clone(), p->v, pl->v, o->seed);
    *out = new myo_server{std::make_unique<myo::LoopServer>(std::move(core), opt)};
  });
}

myo_status myo_server_port(const myo_server* s, uint16_t* out) {
  MYO_REQUIRE_ARG(s && out, "server or out is null");
  return guarded([&] { *out = s->v->port(); });
}

myo_status myo_server_run(myo_server* s) {
  MYO_REQUIRE_ARG(s, "server is null");
  return guarded([&] { s->v->run(); });
}

myo_status myo_server_stop(myo_server* s) {
  MYO_REQUIRE_ARG(s, "server is null");
  return guarded([&] { s->v->stop(); });
}

void myo_server_free(myo_server* s) { delete s; }

}  // extern "C"
