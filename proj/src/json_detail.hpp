#pragma once

// JSON conversions shared between modules; not part of the public surface.

#include <json.hpp>

#include "myoloop/synthem.hpp"

namespace myo::detail {

nlohmann::json to_json(const ParticipantModel& p);
ParticipantModel participant_from(const nlohmann::json& j);
nlohmann::json to_json(const SleevePlacement& p);
SleevePlacement placement_from(const nlohmann::json& j);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace myo::detail
