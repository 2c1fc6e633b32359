#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace pflow {

using json = nlohmann::json;
using InstanceId = std::int64_t;

inline constexpr std::array<std::string_view, 10> topics{
    "state", "activity", "position", "status", "dataelements",
    "description", "endpoints", "attributes", "condition", "task"};

bool is_known_topic(std::string_view topic);

/// (topic, event) pairs a subscriber may vote on.
bool is_votable(std::string_view topic, std::string_view event);

/// Timestamped topic/event message with instance context. Serialized as
/// {topic, event, timestamp, instance, instance-uuid, content}.
struct EngineEvent {
  std::string topic;
  std::string event;
  std::string timestamp;
  InstanceId instance = 0;
  std::string instance_uuid;
  json content = json::object();

  std::string name() const { return topic + "/" + event; }
  json to_json() const;
  static EngineEvent from_json(const json& j);
};

EngineEvent make_event(std::string topic, std::string event, InstanceId instance, std::string uuid, json content);

} // namespace pflow
