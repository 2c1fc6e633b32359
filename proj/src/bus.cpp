#include "pflow/bus.hpp"

#include <algorithm>

namespace pflow {

std::string_view to_string(MessageKind k) {
  switch (k) {
    case MessageKind::event: return "event";
    case MessageKind::vote: return "vote";
    case MessageKind::vote_response: return "vote_response";
    case MessageKind::command: return "command";
  }
  return "event";
}

json BusMessage::to_json() const {
  json j{{"kind", to_string(kind)}, {"message", event.to_json()}};
  if (correlation_id) j["correlation_id"] = *correlation_id;
  return j;
}

BusMessage BusMessage::from_json(const json& j) {
  BusMessage m;
  auto k = j.value("kind", "event");
  if (k == "vote") m.kind = MessageKind::vote;
  else if (k == "vote_response") m.kind = MessageKind::vote_response;
  else if (k == "command") m.kind = MessageKind::command;
  m.event = EngineEvent::from_json(j.at("message"));
  if (j.contains("correlation_id")) m.correlation_id = j.at("correlation_id").get<std::string>();
  return m;
}

bool Bus::Filter::matches(const BusMessage& m) const {
  if (kind && *kind != m.kind) return false;
  if (topic && *topic != m.event.topic) return false;
  if (instance && *instance != m.event.instance) return false;
  return true;
}

Bus::SubscriptionId Bus::subscribe(Filter filter, Handler handler) {
  std::lock_guard lock(mu_);
  auto id = next_id_++;
  entries_.push_back({id, std::move(filter), std::move(handler)});
  return id;
}

void Bus::unsubscribe(SubscriptionId id) {
  std::lock_guard lock(mu_);
  std::erase_if(entries_, [id](const Entry& e) { return e.id == id; });
}

void Bus::publish(const BusMessage& message) {
  if (closed_) throw BusClosed();
  auto start = std::chrono::steady_clock::now();
  std::lock_guard lock(mu_);
  for (const auto& e : entries_) {
    if (e.filter.matches(message)) e.handler(message);
  }
  auto elapsed = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start);
  if (latencies_.size() < latency_window) {
    latencies_.push_back(elapsed.count());
  } else {
    latencies_[latency_cursor_] = elapsed.count();
    latency_cursor_ = (latency_cursor_ + 1) % latency_window;
  }
}

void Bus::close() { closed_ = true; }

Bus::LatencyStats Bus::publish_latency() const {
  std::vector<std::int64_t> copy;
  {
    std::lock_guard lock(mu_);
    copy = latencies_;
  }
  LatencyStats s;
  s.samples = copy.size();
  if (copy.empty()) return s;
  auto mid = copy.begin() + static_cast<std::ptrdiff_t>(copy.size() / 2);
  std::nth_element(copy.begin(), mid, copy.end());
  s.median = std::chrono::nanoseconds(*mid);
  s.max = std::chrono::nanoseconds(*std::max_element(copy.begin(), copy.end()));
  return s;
}

} // namespace pflow
