#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "myoloop/dataset.hpp"
#include "myoloop/error.hpp"

using namespace myo;

namespace {

SessionDataset synthetic(std::size_t n, std::uint64_t seed, const std::string& id = "s") {
  SessionDataset ds;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> f(0, 5), l(-1, 1);
  ds.features.resize(n * kElectrodes);
  ds.labels.resize(n * kDof);
  for (auto& v : ds.features) v = f(rng);
  for (auto& v : ds.labels) v = l(rng);
  ds.metadata.session_id = id;
  ds.metadata.sessions = {id};
  ds.metadata.segments = {n};
  return ds;
}

std::vector<float> row(const SessionDataset& ds, std::size_t t) {
  std::vector<float> r(ds.features.begin() + static_cast<std::ptrdiff_t>(t * ds.n_channels),
                       ds.features.begin() + static_cast<std::ptrdiff_t>((t + 1) * ds.n_channels));
  r.insert(r.end(), ds.labels.begin() + static_cast<std::ptrdiff_t>(t * kDof),
           ds.labels.begin() + static_cast<std::ptrdiff_t>((t + 1) * kDof));
  return r;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("record_session") {
  const auto p = make_participant(ParticipantConfig{}, 3);
  const auto pl = don_sleeve(p, DonOptions{}, 3);
  RecordingProtocol proto;
  const auto ds = record_session(p, pl, proto, 5);
  CHECK_NOTHROW(ds.validate());
  CHECK(ds.features.size() == ds.n_ticks() * kElectrodes);
  std::size_t one_movement = generate_trajectory(0, 1, 1).size();
  CHECK(ds.n_ticks() >= 6 * one_movement - 1);
  CHECK(record_session(p, pl, proto, 5) == ds);
  CHECK(record_session(p, pl, proto, 6).features != ds.features);
  CHECK(ds.metadata.placement == pl);

  proto.repetitions = 0;
  CHECK_THROWS_AS(record_session(p, pl, proto, 5), Error);
}

TEST_CASE("rest frames sit at the rest floor") {
  ParticipantConfig cfg;
  cfg.activation_latency_ms = 0;
  const auto p = make_participant(cfg, 8);
  DonOptions none;
  none.shift_mean_mm = 0;
  const auto ds = record_session(p, don_sleeve(p, none, 1), RecordingProtocol{}, 2);
  const auto act = steady_state_activity(ds, 10);
  double measured = 0, expected = 0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < ds.n_ticks(); ++t) {
    if (act[t] != Activity::Rest) continue;
    for (std::size_t c = 0; c < kElectrodes; ++c) {
      measured += ds.features[t * kElectrodes + c];
      expected += p.rest_floor[c] * std::sqrt(2 / std::numbers::pi);
    }
    ++n;
  }
  REQUIRE(n > 50);
  CHECK(measured / expected == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("series sessions are independent and distinct") {
  const auto p = make_participant(ParticipantConfig{}, 3);
  SeriesOptions o;
  o.sessions = 4;
  const auto all = record_series(p, o, 21);
  REQUIRE(all.size() == 4);
  CHECK(record_series_session(p, o, 21, 2) == all[2]);
  CHECK(all[2].metadata.session_id == "session_002");
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < i; ++j) CHECK(!(all[i].metadata.placement == all[j].metadata.placement));
  CHECK_THROWS_AS(record_series_session(p, o, 21, 4), Error);
}

TEST_CASE("encode / decode round trip") {
  const auto p = make_participant(ParticipantConfig{}, 1);
  const auto real = record_session(p, don_sleeve(p, DonOptions{}, 1), RecordingProtocol{}, 1);
  CHECK(decode_dataset(encode_dataset(real)) == real);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto ds = synthetic(1 + s * 7, s);
    CHECK(decode_dataset(encode_dataset(ds)) == ds);
  }
  const auto path = temp_path("myoloop_test.emgs");
  save_dataset(real, path);
  CHECK(load_dataset(path) == real);
  std::filesystem::remove(path);
}

TEST_CASE("decode errors") {
  const auto bytes = encode_dataset(synthetic(50, 2));
  SUBCASE("truncated payload") {
    try {
      decode_dataset(bytes.substr(0, bytes.size() - 10));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ParseTruncated);
    }
  }
  SUBCASE("truncated header") {
    try {
      decode_dataset(bytes.substr(0, 30));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ParseTruncated);
    }
  }
  SUBCASE("trailing bytes") {
    try {
      decode_dataset(bytes + "xxxx");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Parse);
    }
  }
  SUBCASE("wrong magic") {
    try {
      decode_dataset("hello world\n");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ParseMagic);
    }
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_dataset("/nonexistent/x.emgs"), Error); }
}

TEST_CASE("empty dataset loads") {
  SessionDataset empty;
  empty.metadata.session_id = "empty";
  const auto back = decode_dataset(encode_dataset(empty));
  CHECK(back.n_ticks() == 0);
  CHECK(back == empty);
}

TEST_CASE("accumulate") {
  const auto a = synthetic(40, 1, "a");
  const auto b = synthetic(60, 2, "b");
  SUBCASE("identity") {
    const std::vector<SessionDataset> one{a};
    const auto acc = accumulate(one);
    CHECK(acc.features == a.features);
    CHECK(acc.labels == a.labels);
  }
  SUBCASE("lengths add, order matters only for order") {
    const std::vector<SessionDataset> ab{a, b}, ba{b, a};
    const auto x = accumulate(ab), y = accumulate(ba);
    CHECK(x.n_ticks() == 100);
    CHECK(x.n_channels == kElectrodes);
    CHECK(x.metadata.segments == std::vector<std::size_t>{40, 60});
    std::vector<std::vector<float>> rx, ry;
    for (std::size_t t = 0; t < 100; ++t) {
      rx.push_back(row(x, t));
      ry.push_back(row(y, t));
    }
    CHECK(rx != ry);
    std::sort(rx.begin(), rx.end());
    std::sort(ry.begin(), ry.end());
    CHECK(rx == ry);
  }
  SUBCASE("channel mismatch") {
    auto odd = synthetic(10, 3);
    odd.n_channels = 16;
    odd.features.resize(10 * 16);
    const std::vector<SessionDataset> mixed{a, odd};
    CHECK_THROWS_AS(accumulate(mixed), Error);
  }
}

TEST_CASE("split") {
  const auto one = synthetic(100, 1);
  SUBCASE("single session") {
    const auto s = split(one);
    CHECK(s.train.n_ticks() == 97);
    CHECK(s.validation.n_ticks() == 3);
    CHECK(s.validation_ticks == std::vector<std::size_t>{97, 98, 99});
    CHECK(row(s.validation, 0) == row(one, 97));
  }
  SUBCASE("two sessions") {
    const std::vector<SessionDataset> two{one, synthetic(100, 2)};
    const auto acc = accumulate(two);
    const auto s = split(acc);
    CHECK(s.train.n_ticks() == 194);
    CHECK(s.validation.n_ticks() == 6);
    CHECK(s.validation_ticks == std::vector<std::size_t>{97, 98, 99, 197, 198, 199});
    std::vector<std::size_t> all = s.train_ticks;
    all.insert(all.end(), s.validation_ticks.begin(), s.validation_ticks.end());
    std::sort(all.begin(), all.end());
    for (std::size_t t = 0; t < 200; ++t) CHECK(all[t] == t);
    CHECK(s.train.metadata.segments == std::vector<std::size_t>{97, 97});
  }
  SUBCASE("bad fraction") { CHECK_THROWS_AS(split(one, SplitSpec{1.0}), Error); }
}

TEST_CASE("image set excludes windows that cross sessions") {
  const std::vector<SessionDataset> two{synthetic(40, 1), synthetic(40, 2)};
  const auto acc = accumulate(two);
  const auto set = all_images(acc);
  // ticks 31..39 and 71..79
  CHECK(set.size() == 18);
  CHECK(set.end_tick(0) == 31);
  CHECK(set.end_tick(9) == 71);
  std::vector<float> img(kElectrodes * kImageTicks);
  set.image(9, img);
  for (std::size_t col = 0; col < kImageTicks; ++col)
    for (std::size_t c = 0; c < kElectrodes; ++c)
      REQUIRE(img[c * kImageTicks + col] == acc.features[(40 + col) * kElectrodes + c]);
  const auto lab = set.label(9);
  for (std::size_t d = 0; d < kDof; ++d) CHECK(lab[d] == acc.labels[71 * kDof + d]);
}
