#pragma once

#include <string>

#include "dtmx/data.hpp"
#include "dtmx/network.hpp"
#include "json.hpp"

namespace dtmx {

// JSON bridges shared by the model file format and the CLI config parser.
// `context` prefixes error messages (file name or config path).

nlohmann::json networkSpecToJson(const NetworkSpec& spec);
NetworkSpec networkSpecFromJson(const nlohmann::json& j, const std::string& context);

nlohmann::json schemaToJson(const TabularSchema& schema);
TabularSchema schemaFromJson(const nlohmann::json& j, const std::string& context);

nlohmann::json encodingStatsToJson(const EncodingStats& stats);
EncodingStats encodingStatsFromJson(const nlohmann::json& j, const std::string& context);

}  // namespace dtmx
