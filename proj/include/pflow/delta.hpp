#pragma once

#include <map>
#include <string>

#include <json.hpp>

namespace pflow {

using json = nlohmann::json;

/// Key/value change description shared by the dataelements, endpoints and
/// attributes topics: added {k: v}, deleted {k: old}, changed {k: {from, to}}.
struct ContextDelta {
  json added = json::object();
  json deleted = json::object();
  json changed = json::object();

  bool empty() const { return added.empty() && deleted.empty() && changed.empty(); }
  json to_json() const { return {{"added", added}, {"deleted", deleted}, {"changed", changed}}; }
  static ContextDelta from_json(const json& j);
  bool operator==(const ContextDelta&) const = default;
};

/// Delta turning `before` into `after` (both JSON objects).
ContextDelta diff_objects(const json& before, const json& after);

/// Applies a delta to an object. Keys listed in `deleted` are removed.
void apply_delta(json& target, const ContextDelta& delta);

json to_json_object(const std::map<std::string, std::string>& m);
std::map<std::string, std::string> to_string_map(const json& j);

} // namespace pflow
