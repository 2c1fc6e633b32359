#include "pflow/delta.hpp"

#include <stdexcept>

namespace pflow {

ContextDelta ContextDelta::from_json(const json& j) {
  ContextDelta d;
  if (j.contains("added")) d.added = j.at("added");
  if (j.contains("deleted")) {
    const auto& del = j.at("deleted");
    if (del.is_array()) {
      for (const auto& k : del) d.deleted[k.get<std::string>()] = nullptr;
    } else {
      d.deleted = del;
    }
  }
  if (j.contains("changed")) d.changed = j.at("changed");
  if (!d.added.is_object() || !d.deleted.is_object() || !d.changed.is_object()) {
    throw std::invalid_argument("delta members must be objects");
  }
  return d;
}

ContextDelta diff_objects(const json& before, const json& after) {
  ContextDelta d;
  for (const auto& [k, v] : after.items()) {
    auto it = before.find(k);
    if (it == before.end()) {
      d.added[k] = v;
    } else if (*it != v) {
      d.changed[k] = {{"from", *it}, {"to", v}};
    }
  }
  for (const auto& [k, v] : before.items()) {
    if (!after.contains(k)) d.deleted[k] = v;
  }
  return d;
}

void apply_delta(json& target, const ContextDelta& delta) {
  if (!target.is_object()) target = json::object();
  for (const auto& [k, v] : delta.deleted.items()) target.erase(k);
  for (const auto& [k, v] : delta.added.items()) target[k] = v;
  for (const auto& [k, v] : delta.changed.items()) {
    target[k] = v.is_object() && v.contains("to") ? v.at("to") : v;
  }
}

json to_json_object(const std::map<std::string, std::string>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[k] = v;
  return j;
}

std::map<std::string, std::string> to_string_map(const json& j) {
  std::map<std::string, std::string> m;
  for (const auto& [k, v] : j.items()) {
    m[k] = v.is_string() ? v.get<std::string>() : v.dump();
  }
  return m;
}

} // namespace pflow
