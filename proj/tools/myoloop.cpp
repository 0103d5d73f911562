// myoloop command-line tool. Talks to the library exclusively through the C API.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "myoloop/myoloop.h"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

int exit_code(myo_status s) {
  switch (s) {
    case MYO_OK: return kOk;
    case MYO_E_ARGUMENT:
    case MYO_E_DOMAIN: return kUsage;
    case MYO_E_SHAPE:
    case MYO_E_IO:
    case MYO_E_PARSE_MAGIC:
    case MYO_E_PARSE_VERSION:
    case MYO_E_PARSE_TRUNCATED:
    case MYO_E_PARSE: return kData;
    case MYO_E_FIT:
    case MYO_E_NUMERIC:
    case MYO_E_INTERNAL: return kRuntime;
  }
  return kRuntime;
}

/// Thrown to unwind a subcommand with a given exit code.
struct Failure {
  int code;
};

void check(myo_status s, const std::string& context) {
  if (s == MYO_OK) return;
  std::cerr << "myoloop: " << context << ": " << myo_last_error() << " [" << myo_status_name(s)
            << "]\n";
  throw Failure{exit_code(s)};
}

[[noreturn]] void usage_error(const std::string& message) {
  std::cerr << "myoloop: " << message << "\n";
  throw Failure{kUsage};
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Participant = std::unique_ptr<myo_participant, Deleter<myo_participant, myo_participant_free>>;
using Placement = std::unique_ptr<myo_placement, Deleter<myo_placement, myo_placement_free>>;
using Dataset = std::unique_ptr<myo_dataset, Deleter<myo_dataset, myo_dataset_free>>;
using Model = std::unique_ptr<myo_model, Deleter<myo_model, myo_model_free>>;
using DecoderH = std::unique_ptr<myo_decoder, Deleter<myo_decoder, myo_decoder_free>>;
using Report = std::unique_ptr<myo_report, Deleter<myo_report, myo_report_free>>;
using Server = std::unique_ptr<myo_server, Deleter<myo_server, myo_server_free>>;

std::string take_string(char* s) {
  std::string out = s ? s : "";
  myo_string_free(s);
  return out;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!(f << text)) {
    std::cerr << "myoloop: cannot write " << path << "\n";
    throw Failure{kData};
  }
}

Participant load_participant(const std::string& path) {
  myo_participant* p = nullptr;
  check(myo_participant_load(path.c_str(), &p), "loading participant " + path);
  return Participant(p);
}

Model load_model(const std::string& path) {
  myo_model* m = nullptr;
  check(myo_model_load(path.c_str(), &m), "loading model " + path);
  return Model(m);
}

/// The evaluation placement: the one a recorded session was made with, or a
/// fresh donning.
Placement resolve_placement(const myo_participant* p, const std::string& from_session,
                            double shift_mm, std::uint64_t seed) {
  myo_placement* pl = nullptr;
  if (!from_session.empty()) {
    myo_dataset* d = nullptr;
    check(myo_dataset_load(from_session.c_str(), &d), "loading " + from_session);
    Dataset hold(d);
    check(myo_placement_from_dataset(d, &pl), "placement of " + from_session);
  } else {
    check(myo_placement_don(p, shift_mm, seed, &pl), "donning the sleeve");
  }
  return Placement(pl);
}

struct Globals {
  std::optional<std::uint64_t> seed;
  bool verbose = false;

  std::uint64_t resolved_seed() const {
    if (seed) return *seed;
    if (const char* env = std::getenv("MYOLOOP_SEED")) {
      try {
        std::size_t used = 0;
        const auto v = std::stoull(env, &used, 10);
        if (used == std::string(env).size()) return v;
      } catch (const std::exception&) {
      }
      usage_error(std::string("MYOLOOP_SEED is not an unsigned integer: ") + env);
    }
    return 0;
  }
};

// ---------------------------------------------------------------------------

struct ParticipantArgs {
  std::string out;
  double target_snr = 14.0;
};

int cmd_participant(const Globals& g, const ParticipantArgs& a) {
  myo_participant* p = nullptr;
  check(myo_participant_create(g.resolved_seed(), a.target_snr, &p), "creating participant");
  Participant hold(p);
  check(myo_participant_save(p, a.out.c_str()), "writing " + a.out);
  if (g.verbose) std::cerr << "wrote " << a.out << "\n";
  return kOk;
}

struct RecordArgs {
  std::string participant;
  std::size_t sessions = 1;
  double shift_mm = 7.32;
  int repetitions = 3;
  std::string out;
};

int cmd_record(const Globals& g, const RecordArgs& a) {
  if (a.sessions < 1) usage_error("--sessions must be at least 1");
  auto p = load_participant(a.participant);
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) {
    std::cerr << "myoloop: cannot create " << a.out << ": " << ec.message() << "\n";
    return kData;
  }
  myo_record_options opt;
  myo_record_options_default(&opt);
  opt.sessions = a.sessions;
  opt.shift_mm = a.shift_mm;
  opt.repetitions = a.repetitions;
  const auto seed = g.resolved_seed();
  for (std::size_t i = 0; i < a.sessions; ++i) {
    myo_dataset* d = nullptr;
    check(myo_record_session(p.get(), &opt, seed, i, &d), "recording session " + std::to_string(i));
    Dataset hold(d);
    char name[32];
    std::snprintf(name, sizeof name, "session_%03zu.emgs", i);
    const std::string path = (fs::path(a.out) / name).string();
    check(myo_dataset_save(d, path.c_str()), "writing " + path);
    if (g.verbose) {
      size_t ticks = 0;
      myo_dataset_ticks(d, &ticks);
      std::cerr << "wrote " << path << " (" << ticks << " ticks)\n";
    }
  }
  return kOk;
}

struct TrainArgs {
  std::string arch = "shallow";
  std::vector<std::string> data;
  bool kf = false;
  std::string out;
  int max_epochs = 200;
  double learning_rate = 0.001;
  std::vector<std::size_t> widths{8, 16, 32};
  std::string history;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  myo_train_options opt;
  myo_train_options_default(&opt);
  opt.arch = a.arch == "deep" ? MYO_ARCH_DEEP : MYO_ARCH_SHALLOW;
  opt.fit_smoother = a.kf ? 1 : 0;
  opt.max_epochs = a.max_epochs;
  opt.learning_rate = a.learning_rate;
  opt.seed = g.resolved_seed();
  if (a.widths.size() != 3) usage_error("--widths takes exactly three values");
  for (std::size_t i = 0; i < 3; ++i) opt.deep_widths[i] = a.widths[i];

  std::vector<Dataset> sessions;
  std::vector<const myo_dataset*> raw;
  for (const auto& path : a.data) {
    myo_dataset* d = nullptr;
    check(myo_dataset_load(path.c_str(), &d), "loading " + path);
    sessions.emplace_back(d);
    raw.push_back(d);
  }
  myo_model* m = nullptr;
  check(myo_train(raw.data(), raw.size(), &opt, &m), "training");
  Model model(m);
  check(myo_model_save(m, a.out.c_str()), "writing " + a.out);

  myo_model_info info{};
  check(myo_model_info_get(m, &info), "model info");
  if (!a.history.empty()) {
    char* h = nullptr;
    check(myo_model_history_json(m, &h), "training history");
    write_file(a.history, take_string(h) + "\n");
  }
  std::printf("arch=%s sessions=%zu params=%zu epochs=%d kept_epoch=%d%s kf=%s time=%.1fs\n",
              a.arch.c_str(), raw.size(), info.parameters, info.epochs_run, info.stopped_epoch,
              info.early_stopped ? " (early stop)" : "", info.has_smoother ? "yes" : "no",
              info.wall_time_s);
  std::printf("validation_rmse=%.6f\n", info.final_validation_rmse);
  return kOk;
}

struct ExperimentArgs {
  std::string participant;
  std::string placement_from;
  double shift_mm = 7.32;
  std::size_t selected_dofs = 1;
  std::size_t jobs = 1;
  std::string out;
  std::string csv;
  double tau = 0.5;
  double delay = 0.15;
  double noise = 0.05;
};

myo_experiment_options experiment_options(const Globals& g, const ExperimentArgs& a,
                                          std::size_t blocks) {
  myo_experiment_options o;
  myo_experiment_options_default(&o);
  o.blocks = blocks;
  o.selected_dofs = a.selected_dofs;
  o.seed = g.resolved_seed();
  o.jobs = a.jobs;
  o.pursuit_time_constant_s = a.tau;
  o.reaction_delay_s = a.delay;
  o.motor_noise = a.noise;
  return o;
}

int finish_report(myo_report* r, const ExperimentArgs& a, std::size_t conditions,
                  const std::vector<std::string>& names) {
  char* json = nullptr;
  check(myo_report_json(r, &json), "report");
  write_file(a.out, take_string(json) + "\n");
  if (!a.csv.empty()) {
    char* csv = nullptr;
    check(myo_report_csv(r, &csv), "report");
    write_file(a.csv, take_string(csv));
  }
  for (std::size_t c = 0; c < conditions; ++c) {
    double mean = 0, sem = 0;
    size_t n = 0;
    check(myo_report_summary(r, c, &mean, &sem, &n), "summary");
    std::printf("%-24s hold %.3f +/- %.3f s (n=%zu)\n", names[c].c_str(), mean, sem, n);
  }
  return kOk;
}

struct EvalArgs {
  ExperimentArgs common;
  std::string model;
  bool oracle = false;
  bool kf = false;
  std::size_t trials = 10;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  if (a.trials < 1) usage_error("--trials must be at least 1");
  if (a.oracle == !a.model.empty()) usage_error("give exactly one of --model or --oracle");
  auto p = load_participant(a.common.participant);
  auto pl = resolve_placement(p.get(), a.common.placement_from, a.common.shift_mm,
                              g.resolved_seed() ^ 0x5eed0001ull);
  myo_decoder* d = nullptr;
  std::string name;
  Model model;
  if (a.oracle) {
    check(myo_decoder_oracle(&d), "oracle decoder");
    name = "oracle";
  } else {
    model = load_model(a.model);
    check(myo_decoder_from_model(model.get(), a.kf, &d), "decoder");
    name = fs::path(a.model).stem().string() + (a.kf ? "+kf" : "");
  }
  DecoderH dec(d);
  const auto opt = experiment_options(g, a.common, a.trials);
  myo_report* r = nullptr;
  check(myo_run_evaluation(d, name.c_str(), p.get(), pl.get(), &opt, &r), "evaluation");
  Report report(r);
  return finish_report(r, a.common, 1, {name});
}

struct CompareArgs {
  ExperimentArgs common;
  std::vector<std::string> models;
  std::vector<std::string> names;
  std::size_t blocks = 10;
};

int cmd_compare(const Globals& g, const CompareArgs& a) {
  if (a.models.size() < 2) usage_error("--models needs at least two conditions");
  if (!a.names.empty() && a.names.size() != a.models.size())
    usage_error("--names must give one name per model");
  if (a.blocks < 1) usage_error("--blocks must be at least 1");
  auto p = load_participant(a.common.participant);
  auto pl = resolve_placement(p.get(), a.common.placement_from, a.common.shift_mm,
                              g.resolved_seed() ^ 0x5eed0001ull);

  std::vector<Model> models;
  std::vector<DecoderH> decoders;
  std::vector<const myo_decoder*> raw;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < a.models.size(); ++i) {
    // PATH or PATH:kf (the model's output smoother switched on)
    std::string path = a.models[i];
    bool kf = false;
    if (path.size() > 3 && path.compare(path.size() - 3, 3, ":kf") == 0) {
      kf = true;
      path.resize(path.size() - 3);
    }
    models.push_back(load_model(path));
    myo_decoder* d = nullptr;
    check(myo_decoder_from_model(models.back().get(), kf, &d), "decoder for " + a.models[i]);
    decoders.emplace_back(d);
    raw.push_back(d);
    names.push_back(a.names.empty() ? fs::path(path).stem().string() + (kf ? "+kf" : "")
                                    : a.names[i]);
  }
  std::vector<const char*> cnames;
  for (const auto& n : names) cnames.push_back(n.c_str());
  const auto opt = experiment_options(g, a.common, a.blocks);
  myo_report* r = nullptr;
  check(myo_run_experiment(raw.data(), cnames.data(), raw.size(), p.get(), pl.get(), &opt, &r),
        "experiment");
  Report report(r);
  return finish_report(r, a.common, raw.size(), names);
}

struct ServeArgs {
  std::string model;
  bool kf = false;
  std::string participant;
  std::string placement_from;
  double shift_mm = 7.32;
  std::string host = "127.0.0.1";
  int port = 8765;
  bool lockstep = false;
};

int cmd_serve(const Globals& g, const ServeArgs& a) {
  if (a.port < 0 || a.port > 65535) usage_error("--port must lie in 0..65535");
  auto model = load_model(a.model);
  auto p = load_participant(a.participant);
  auto pl = resolve_placement(p.get(), a.placement_from, a.shift_mm, g.resolved_seed() ^ 0x5eed0001ull);
  myo_decoder* d = nullptr;
  check(myo_decoder_from_model(model.get(), a.kf, &d), "decoder");
  DecoderH dec(d);
  myo_server_options opt;
  myo_server_options_default(&opt);
  opt.host = a.host.c_str();
  opt.port = static_cast<uint16_t>(a.port);
  opt.lockstep = a.lockstep;
  opt.seed = g.resolved_seed();
  opt.handle_signals = 1;
  myo_server* s = nullptr;
  check(myo_server_create(d, p.get(), pl.get(), &opt, &s), "starting server");
  Server server(s);
  uint16_t port = 0;
  check(myo_server_port(s, &port), "server port");
  std::printf("listening on ws://%s:%u/ws\n", a.host.c_str(), static_cast<unsigned>(port));
  std::fflush(stdout);
  check(myo_server_run(s), "serving");
  return kOk;
}

void add_experiment_flags(CLI::App* cmd, ExperimentArgs& a) {
  cmd->add_option("--participant", a.participant, "Participant JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--placement-from", a.placement_from,
                  "Evaluate on the placement stored in this session file instead of a fresh donning")
      ->check(CLI::ExistingFile);
  cmd->add_option("--shift-mm", a.shift_mm, "Mean electrode shift of a fresh donning")->capture_default_str();
  cmd->add_option("--selected-dofs", a.selected_dofs, "DOFs moved per target")->capture_default_str();
  cmd->add_option("--jobs", a.jobs, "Worker threads (results do not depend on it)")->capture_default_str();
  cmd->add_option("--out", a.out, "JSON report")->required();
  cmd->add_option("--csv", a.csv, "Per-trial CSV");
  cmd->add_option("--pursuit-tau", a.tau, "Synthetic participant pursuit time constant, s")->capture_default_str();
  cmd->add_option("--reaction-delay", a.delay, "Synthetic participant visual delay, s")->capture_default_str();
  cmd->add_option("--motor-noise", a.noise, "Synthetic participant intent noise")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"myoloop: synthetic myoelectric decoding and closed-loop evaluation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Global seed (falls back to $MYOLOOP_SEED, then 0)");
  app.add_flag("--verbose,-v", g.verbose, "Progress messages on stderr");
  app.set_version_flag("--version", std::string(myo_version()));

  ParticipantArgs pa;
  auto* participant = app.add_subcommand("participant", "Create a synthetic participant");
  participant->add_option("--out", pa.out, "Participant JSON to write")->required();
  participant->add_option("--target-snr", pa.target_snr, "Steady-state EMG SNR")->capture_default_str();

  RecordArgs ra;
  auto* record = app.add_subcommand("record", "Record mimicry training sessions");
  record->add_option("--participant", ra.participant, "Participant JSON")->required()->check(CLI::ExistingFile);
  record->add_option("--sessions", ra.sessions, "Number of sessions")->capture_default_str();
  record->add_option("--shift-mm", ra.shift_mm, "Mean electrode shift per donning")->capture_default_str();
  record->add_option("--repetitions", ra.repetitions, "Repetitions of each movement")->capture_default_str();
  record->add_option("--out", ra.out, "Output directory")->required();

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "Train a decoder");
  trainc->add_option("--arch", ta.arch, "shallow or deep")
      ->check(CLI::IsMember({"shallow", "deep"}))
      ->capture_default_str();
  trainc->add_option("--data", ta.data, "Session files")->required()->check(CLI::ExistingFile);
  trainc->add_flag("--kf", ta.kf, "Fit the output Kalman smoother");
  trainc->add_option("--out", ta.out, "Model file to write")->required();
  trainc->add_option("--max-epochs", ta.max_epochs, "Epoch cap")->capture_default_str();
  trainc->add_option("--learning-rate", ta.learning_rate, "SGD learning rate")->capture_default_str();
  trainc->add_option("--widths", ta.widths, "Deep net stage widths")->expected(3)->capture_default_str();
  trainc->add_option("--history", ta.history, "Write per-epoch RMSE history JSON here");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Closed-loop evaluation of one decoder");
  eval->add_option("--model", ea.model, "Model file")->check(CLI::ExistingFile);
  eval->add_flag("--oracle", ea.oracle, "Debug: decode the intended state exactly");
  eval->add_flag("--kf", ea.kf, "Use the model's output smoother");
  eval->add_option("--trials", ea.trials, "Number of trials")->capture_default_str();
  add_experiment_flags(eval, ea.common);

  CompareArgs ca;
  auto* compare = app.add_subcommand("compare", "Counterbalanced cross-over between decoders");
  compare->add_option("--models", ca.models, "Model files; append :kf to enable the smoother")->required();
  compare->add_option("--names", ca.names, "Condition names, one per model");
  compare->add_option("--blocks", ca.blocks, "Blocks (one trial per condition each)")->capture_default_str();
  add_experiment_flags(compare, ca.common);

  ServeArgs sa;
  auto* serve = app.add_subcommand("serve", "Run the live 30 Hz loop with a websocket at /ws");
  serve->add_option("--model", sa.model, "Model file")->required();
  serve->add_flag("--kf", sa.kf, "Use the model's output smoother");
  serve->add_option("--participant", sa.participant, "Participant JSON")->required();
  serve->add_option("--placement-from", sa.placement_from, "Use the placement of this session file")
      ->check(CLI::ExistingFile);
  serve->add_option("--shift-mm", sa.shift_mm, "Mean electrode shift of a fresh donning")->capture_default_str();
  serve->add_option("--host", sa.host, "Listen address")->capture_default_str();
  serve->add_option("--port", sa.port, "Listen port (0 = OS-assigned)")->capture_default_str();
  serve->add_flag("--lockstep", sa.lockstep, "Advance one tick per controller intent (replay mode)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*participant) return cmd_participant(g, pa);
    if (*record) return cmd_record(g, ra);
    if (*trainc) return cmd_train(g, ta);
    if (*eval) return cmd_eval(g, ea);
    if (*compare) return cmd_compare(g, ca);
    if (*serve) return cmd_serve(g, sa);
  } catch (const Failure& f) {
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "myoloop: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
