#include "pflow/events.hpp"

#include <algorithm>

#include "pflow/util.hpp"

namespace pflow {

bool is_known_topic(std::string_view topic) {
  return std::find(topics.begin(), topics.end(), topic) != topics.end();
}

bool is_votable(std::string_view topic, std::string_view event) {
  if (topic == "state" || topic == "dataelements" || topic == "endpoints" || topic == "attributes" ||
      topic == "description") {
    return event == "change" || event == "*";
  }
  if (topic == "condition") return event == "eval" || event == "*";
  if (topic == "activity") return event == "syncing_before" || event == "syncing_after" || event == "*";
  return false;
}

json EngineEvent::to_json() const {
  return {{"topic", topic},       {"event", event},
          {"timestamp", timestamp}, {"instance", instance},
          {"instance-uuid", instance_uuid}, {"content", content}};
}

EngineEvent EngineEvent::from_json(const json& j) {
  EngineEvent e;
  e.topic = j.value("topic", "");
  e.event = j.value("event", "");
  e.timestamp = j.value("timestamp", "");
  e.instance = j.value("instance", InstanceId{0});
  e.instance_uuid = j.value("instance-uuid", "");
  if (j.contains("content")) e.content = j.at("content");
  return e;
}

EngineEvent make_event(std::string topic, std::string event, InstanceId instance, std::string uuid, json content) {
  EngineEvent e;
  e.topic = std::move(topic);
  e.event = std::move(event);
  e.timestamp = now_timestamp();
  e.instance = instance;
  e.instance_uuid = std::move(uuid);
  e.content = std::move(content);
  return e;
}

} // namespace pflow
