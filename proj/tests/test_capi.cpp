#include <doctest.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>

#include "myoloop/myoloop.h"

namespace fs = std::filesystem;

namespace {

std::string take(char* s) {
  std::string out(s ? s : "");
  myo_string_free(s);
  return out;
}

std::string temp(const std::string& name) { return (fs::temp_directory_path() / name).string(); }

struct Session {
  myo_participant* p = nullptr;
  myo_dataset* d = nullptr;
  Session() {
    REQUIRE(myo_participant_create(7, 14.0, &p) == MYO_OK);
    myo_record_options ro;
    myo_record_options_default(&ro);
    ro.repetitions = 1;
    REQUIRE(myo_record_session(p, &ro, 3, 0, &d) == MYO_OK);
  }
  ~Session() {
    myo_dataset_free(d);
    myo_participant_free(p);
  }
};

}  // namespace

TEST_CASE("basics") {
  CHECK(std::string(myo_version()).size() > 0);
  CHECK(std::string(myo_status_name(MYO_OK)) == "ok");
  CHECK(std::string(myo_status_name(MYO_E_PARSE_TRUNCATED)) == "parse-truncated");
  CHECK(myo_participant_create(1, 14.0, nullptr) == MYO_E_ARGUMENT);
  CHECK(std::string(myo_last_error()).size() > 0);
  myo_participant* p = nullptr;
  CHECK(myo_participant_create(1, 0.5, &p) == MYO_E_DOMAIN);
  CHECK(p == nullptr);
  myo_participant_free(nullptr);
  myo_dataset_free(nullptr);
  myo_string_free(nullptr);
}

TEST_CASE("participants and datasets") {
  Session s;
  const auto json = [&] {
    char* out = nullptr;
    REQUIRE(myo_participant_to_json(s.p, &out) == MYO_OK);
    return take(out);
  }();
  CHECK(json.find("myoloop.participant") != std::string::npos);

  const auto ppath = temp("capi_participant.json");
  REQUIRE(myo_participant_save(s.p, ppath.c_str()) == MYO_OK);
  myo_participant* back = nullptr;
  REQUIRE(myo_participant_load(ppath.c_str(), &back) == MYO_OK);
  char* back_json = nullptr;
  REQUIRE(myo_participant_to_json(back, &back_json) == MYO_OK);
  CHECK(take(back_json) == json);
  myo_participant_free(back);
  fs::remove(ppath);

  size_t ticks = 0, channels = 0;
  REQUIRE(myo_dataset_ticks(s.d, &ticks) == MYO_OK);
  REQUIRE(myo_dataset_channels(s.d, &channels) == MYO_OK);
  CHECK(ticks > 500);
  CHECK(channels == 32);
  char* id = nullptr;
  REQUIRE(myo_dataset_id(s.d, &id) == MYO_OK);
  CHECK(take(id) == "session_000");

  const auto dpath = temp("capi_session.emgs");
  REQUIRE(myo_dataset_save(s.d, dpath.c_str()) == MYO_OK);
  myo_dataset* loaded = nullptr;
  REQUIRE(myo_dataset_load(dpath.c_str(), &loaded) == MYO_OK);
  size_t ticks2 = 0;
  myo_dataset_ticks(loaded, &ticks2);
  CHECK(ticks2 == ticks);
  myo_dataset_free(loaded);

  // truncate and corrupt
  const auto size = fs::file_size(dpath);
  fs::resize_file(dpath, size - 100);
  CHECK(myo_dataset_load(dpath.c_str(), &loaded) == MYO_E_PARSE_TRUNCATED);
  {
    std::ofstream(dpath, std::ios::binary) << "definitely not a dataset";
  }
  CHECK(myo_dataset_load(dpath.c_str(), &loaded) == MYO_E_PARSE_MAGIC);
  fs::remove(dpath);
  CHECK(myo_dataset_load("/nonexistent/x.emgs", &loaded) == MYO_E_IO);

  myo_placement* pl = nullptr;
  REQUIRE(myo_placement_from_dataset(s.d, &pl) == MYO_OK);
  double shift = -1;
  REQUIRE(myo_placement_shift_mm(pl, &shift) == MYO_OK);
  CHECK(shift >= 0);
  myo_placement_free(pl);
}

TEST_CASE("train, decode, evaluate") {
  Session s;
  myo_train_options to;
  myo_train_options_default(&to);
  CHECK(to.arch == MYO_ARCH_SHALLOW);
  to.max_epochs = 2;
  to.fit_smoother = 1;
  const myo_dataset* list[] = {s.d};
  myo_model* m = nullptr;
  REQUIRE(myo_train(list, 1, &to, &m) == MYO_OK);

  myo_model_info info;
  REQUIRE(myo_model_info_get(m, &info) == MYO_OK);
  CHECK(info.arch == MYO_ARCH_SHALLOW);
  CHECK(info.stopped_epoch >= 1);
  CHECK(info.has_smoother == 1);
  CHECK(info.final_validation_rmse > 0);
  char* hist = nullptr;
  REQUIRE(myo_model_history_json(m, &hist) == MYO_OK);
  CHECK(take(hist).find("validation_rmse") != std::string::npos);

  const auto mpath = temp("capi_model.emgm");
  REQUIRE(myo_model_save(m, mpath.c_str()) == MYO_OK);
  myo_model* loaded = nullptr;
  REQUIRE(myo_model_load(mpath.c_str(), &loaded) == MYO_OK);
  fs::remove(mpath);

  myo_decoder *raw = nullptr, *kf = nullptr, *oracle = nullptr;
  REQUIRE(myo_decoder_from_model(loaded, 0, &raw) == MYO_OK);
  REQUIRE(myo_decoder_from_model(loaded, 1, &kf) == MYO_OK);
  REQUIRE(myo_decoder_oracle(&oracle) == MYO_OK);

  myo_placement* pl = nullptr;
  REQUIRE(myo_placement_from_dataset(s.d, &pl) == MYO_OK);
  myo_experiment_options eo;
  myo_experiment_options_default(&eo);
  eo.blocks = 3;

  myo_report* ev = nullptr;
  REQUIRE(myo_run_evaluation(oracle, "oracle", s.p, pl, &eo, &ev) == MYO_OK);
  double mean = 0, sem = 0;
  size_t n = 0;
  REQUIRE(myo_report_summary(ev, 0, &mean, &sem, &n) == MYO_OK);
  CHECK(n == 3);
  CHECK(mean > 5.0);
  CHECK(myo_report_summary(ev, 1, &mean, &sem, &n) == MYO_E_ARGUMENT);
  myo_report_free(ev);

  const myo_decoder* decs[] = {raw, kf};
  const char* names[] = {"raw", "kf"};
  myo_report* r = nullptr;
  CHECK(myo_run_experiment(decs, names, 1, s.p, pl, &eo, &r) == MYO_E_ARGUMENT);
  REQUIRE(myo_run_experiment(decs, names, 2, s.p, pl, &eo, &r) == MYO_OK);
  char* json = nullptr;
  REQUIRE(myo_report_json(r, &json) == MYO_OK);
  CHECK(take(json).find("\"pairwise\"") != std::string::npos);
  char* csv = nullptr;
  REQUIRE(myo_report_csv(r, &csv) == MYO_OK);
  CHECK(take(csv).rfind("block,position,condition,seed,hold_duration_s", 0) == 0);

  // determinism across runs and thread counts
  eo.jobs = 2;
  myo_report* r2 = nullptr;
  REQUIRE(myo_run_experiment(decs, names, 2, s.p, pl, &eo, &r2) == MYO_OK);
  char *c1 = nullptr, *c2 = nullptr;
  myo_report_csv(r, &c1);
  myo_report_csv(r2, &c2);
  CHECK(take(c1) == take(c2));

  myo_report_free(r);
  myo_report_free(r2);
  myo_placement_free(pl);
  myo_decoder_free(raw);
  myo_decoder_free(kf);
  myo_decoder_free(oracle);
  myo_model_free(loaded);

  to.fit_smoother = 0;
  myo_model* plain = nullptr;
  REQUIRE(myo_train(list, 1, &to, &plain) == MYO_OK);
  myo_decoder* bad = nullptr;
  CHECK(myo_decoder_from_model(plain, 1, &bad) != MYO_OK);
  myo_model_free(plain);
  myo_model_free(m);
}

TEST_CASE("server lifecycle") {
  Session s;
  myo_decoder* d = nullptr;
  const myo_dataset* list[] = {s.d};
  REQUIRE(myo_decoder_feature_kalman(list, 1, &d) == MYO_OK);
  myo_placement* pl = nullptr;
  REQUIRE(myo_placement_don(s.p, 7.32, 5, &pl) == MYO_OK);
  myo_server_options so;
  myo_server_options_default(&so);
  myo_server* srv = nullptr;
  REQUIRE(myo_server_create(d, s.p, pl, &so, &srv) == MYO_OK);
  uint16_t port = 0;
  REQUIRE(myo_server_port(srv, &port) == MYO_OK);
  CHECK(port != 0);
  std::thread t([&] { CHECK(myo_server_run(srv) == MYO_OK); });
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  CHECK(myo_server_stop(srv) == MYO_OK);
  t.join();
  myo_server_free(srv);

  so.port = port;
  myo_server* a = nullptr;
  REQUIRE(myo_server_create(d, s.p, pl, &so, &a) == MYO_OK);
  myo_server* b = nullptr;
  CHECK(myo_server_create(d, s.p, pl, &so, &b) == MYO_E_IO);
  myo_server_free(a);
  myo_decoder_free(d);
  myo_placement_free(pl);
}
