#include <fstream>

#include <json.hpp>

#include "json_detail.hpp"
#include "myoloop/nnet.hpp"
#include "util.hpp"

namespace myo {

namespace {

using ojson = nlohmann::ordered_json;

constexpr const char* kMagic = "EMGM1";
constexpr int kVersion = 1;

Architecture arch_from(const std::string& s) {
  for (auto a : {Architecture::Shallow, Architecture::Deep, Architecture::Custom})
    if (s == to_string(a)) return a;
  fail(ErrorKind::Parse, "unknown architecture '" + s + "'");
}

}  // namespace

// Wall time is deliberately left out of the header so that retraining with
// the same seed reproduces the file byte for byte.
std::string encode_model(const Decoder& decoder) {
  ojson header;
  header["magic"] = kMagic;
  header["version"] = kVersion;
  header["arch"] = to_string(decoder.arch);
  header["spec"] = ojson::parse(spec_to_json(decoder.net.spec()));
  header["input_norm"] = {{"mean", decoder.norm.mean}, {"stddev", decoder.norm.stddev}};
  header["seed"] = decoder.seed;
  header["history"] = {{"train_rmse", decoder.history.train_rmse},
                       {"validation_rmse", decoder.history.validation_rmse},
                       {"stopped_epoch", decoder.history.stopped_epoch},
                       {"early_stopped", decoder.history.early_stopped}};
  header["kalman"] = decoder.smoother ? ojson::parse(kalman_to_json(*decoder.smoother)) : ojson(nullptr);
  header["n_weights"] = decoder.net.state_size();

  std::string out = header.dump();
  out.push_back('\n');
  for (const auto* buf : decoder.net.state_buffers())
    for (float v : *buf) detail::append_f32_le(out, v);
  return out;
}

Decoder decode_model(const std::string& bytes) {
  const std::string prefix = std::string("{\"magic\":\"") + kMagic + "\"";
  if (bytes.compare(0, prefix.size(), prefix) != 0) {
    if (!bytes.empty() && bytes.size() < prefix.size() && prefix.compare(0, bytes.size(), bytes) == 0)
      fail(ErrorKind::ParseTruncated, "model file ends inside its header");
    fail(ErrorKind::ParseMagic, "not an EMGM1 model file");
  }
  const auto nl = bytes.find('\n');
  require(nl != std::string::npos, ErrorKind::ParseTruncated, "model header line is incomplete");

  ojson header;
  try {
    header = ojson::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("model header: ") + e.what());
  }

  try {
    require(header.at("version").get<int>() == kVersion, ErrorKind::ParseVersion,
            "unsupported model version " + header.at("version").dump());
    const auto spec = spec_from_json(header.at("spec").dump());
    const auto seed = header.at("seed").get<std::uint64_t>();
    Decoder d(arch_from(header.at("arch").get<std::string>()), Network<float>(spec, seed));
    d.seed = seed;
    d.norm.mean = header.at("input_norm").at("mean").get<std::array<float, kElectrodes>>();
    d.norm.stddev = header.at("input_norm").at("stddev").get<std::array<float, kElectrodes>>();
    const auto& h = header.at("history");
    d.history.train_rmse = h.at("train_rmse").get<std::vector<double>>();
    d.history.validation_rmse = h.at("validation_rmse").get<std::vector<double>>();
    d.history.stopped_epoch = h.at("stopped_epoch").get<int>();
    d.history.early_stopped = h.at("early_stopped").get<bool>();
    if (!header.at("kalman").is_null()) d.smoother = kalman_from_json(header.at("kalman").dump());

    const auto n_weights = header.at("n_weights").get<std::size_t>();
    require(n_weights == d.net.state_size(), ErrorKind::Parse,
            "model header weight count does not match its network spec");
    const std::size_t payload = bytes.size() - nl - 1;
    require(payload >= 4 * n_weights, ErrorKind::ParseTruncated,
            "model payload truncated: " + std::to_string(payload) + " of " +
                std::to_string(4 * n_weights) + " bytes");
    require(payload == 4 * n_weights, ErrorKind::Parse, "model payload has trailing bytes");

    const char* p = bytes.data() + nl + 1;
    for (auto* buf : d.net.state_buffers())
      for (float& v : *buf) {
        v = detail::read_f32_le(p);
        p += 4;
      }
    return d;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("model header: ") + e.what());
  }
}

void save_model(const Decoder& decoder, const std::string& path) {
  const std::string bytes = encode_model(decoder);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path);
}

Decoder load_model(const std::string& path) {
  return decode_model(detail::read_text_file(path));
}

}  // namespace myo
