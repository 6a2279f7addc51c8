#pragma once

#include <json.hpp>

#include "bevrefine/geometry.hpp"

// Internal JSON helpers shared between translation units.

namespace bevrefine::detail {

nlohmann::json camera_json(const CameraModel& cam);
CameraModel camera_parse(const nlohmann::json& j);

}  // namespace bevrefine::detail
