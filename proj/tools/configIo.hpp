#pragma once

#include <string>
#include <vector>

#include "dtmx/data.hpp"
#include "dtmx/network.hpp"
#include "dtmx/training.hpp"
#include "dtmx/xai.hpp"
#include "json.hpp"

namespace dtmxcli {

using nlohmann::json;

/// Parses the config file; a missing path or malformed JSON is a usage error.
json loadConfigFile(const std::string& path);

/// Rejects keys outside `known` so typos fail loudly instead of silently
/// falling back to defaults.
void requireKnownKeys(const json& obj, const std::vector<std::string>& known,
                      const std::string& where);

double getNumber(const json& obj, const std::string& key, double fallback,
                 const std::string& where);
int64_t getInt(const json& obj, const std::string& key, int64_t fallback,
               const std::string& where);
bool getBool(const json& obj, const std::string& key, bool fallback, const std::string& where);
std::string getString(const json& obj, const std::string& key, const std::string& fallback,
                      const std::string& where);
std::array<int64_t, 3> getExtents(const json& obj, const std::string& key,
                                  std::array<int64_t, 3> fallback, const std::string& where);

/// Section builders fill `resolved` with every default they applied, so the
/// snapshot written next to the outputs is self-describing.
dtmx::TrainConfig trainConfigFrom(const json& cfg, json& resolved);
dtmx::SyntheticSpec syntheticFrom(const json& cfg, json& resolved);
dtmx::OcclusionConfig occlusionFrom(const json& cfg, json& resolved);
dtmx::NetworkSpec networkFrom(const json& node, std::array<int64_t, 3> extents);
json networkJson(const dtmx::NetworkSpec& spec);
std::vector<dtmx::Variant> variantsFrom(const json& cfg, json& resolved);

/// Refuses a non-empty target unless `force`; creates the directory tree.
void prepareOutDir(const std::string& dir, bool force);

std::string readTextFile(const std::string& path);
void writeTextFile(const std::string& path, const std::string& content);

/// The config key must name an existing file.
std::string existingPath(const json& cfg, const std::string& key, const std::string& where);

}  // namespace dtmxcli
