#include "pflow/services/xes_logger.hpp"

#include <condition_variable>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

namespace pflow::services {

std::string xml_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

namespace {

void attribute(std::ostringstream& os, const char* type, const std::string& key, const std::string& value,
               const char* indent = "      ") {
  os << indent << "<" << type << " key=\"" << xml_escape(key) << "\" value=\"" << xml_escape(value) << "\"/>\n";
}

std::string str(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) return {};
  return it->is_string() ? it->get<std::string>() : it->dump();
}

/// Standard lifecycle names where one exists.
std::string lifecycle_of(const std::string& event) {
  if (event == "calling") return "start";
  if (event == "done") return "complete";
  return event;
}

void write_event(std::ostringstream& os, const EngineEvent& e) {
  os << "    <event>\n";
  const auto& c = e.content;
  if (e.topic == "activity" || e.topic == "task") {
    auto label = str(c, "label");
    attribute(os, "string", "concept:name", label.empty() ? str(c, "activity") : label);
    attribute(os, "string", "concept:instance", str(c, "activity"));
    if (e.topic == "activity") attribute(os, "string", "lifecycle:transition", lifecycle_of(e.event));
    else attribute(os, "string", "task:transition", e.event);
    if (c.contains("enactment")) attribute(os, "string", "engine:enactment", str(c, "enactment"));
  } else {
    attribute(os, "string", "concept:name", e.name());
  }
  attribute(os, "date", "time:timestamp", e.timestamp);
  attribute(os, "string", "engine:topic", e.topic);
  attribute(os, "string", "engine:event", e.event);
  attribute(os, "string", "engine:payload", c.dump());
  os << "    </event>\n";
}

} // namespace

XesLogger::XesLogger(std::filesystem::path directory, std::chrono::milliseconds flush_interval)
    : dir_(std::move(directory)), interval_(flush_interval) {
  if (dir_.empty()) return;
  std::filesystem::create_directories(dir_);
  writer_ = std::jthread([this](std::stop_token st) {
    std::mutex m;
    std::condition_variable_any cv;
    while (!st.stop_requested()) {
      std::unique_lock lock(m);
      cv.wait_for(lock, st, interval_, [] { return false; });
      flush();
    }
  });
}

XesLogger::~XesLogger() {
  detach();
  if (writer_.joinable()) {
    writer_.request_stop();
    writer_.join();
  }
  flush();
}

void XesLogger::consume(const EngineEvent& event) {
  std::lock_guard lock(mu_);
  auto& t = traces_[event.instance_uuid];
  t.instance = event.instance;
  t.events.push_back(event);
  dirty_.insert(event.instance_uuid);
}

void XesLogger::attach(Bus& bus) {
  detach();
  bus_ = &bus;
  sub_ = bus.subscribe({MessageKind::event, std::nullopt, std::nullopt}, [this](const BusMessage& m) { consume(m.event); });
}

void XesLogger::detach() {
  if (bus_) bus_->unsubscribe(sub_);
  bus_ = nullptr;
}

std::size_t XesLogger::event_count(const std::string& uuid) const {
  std::lock_guard lock(mu_);
  auto it = traces_.find(uuid);
  return it == traces_.end() ? 0 : it->second.events.size();
}

std::map<std::string, std::size_t> XesLogger::histogram(const std::string& uuid) const {
  std::lock_guard lock(mu_);
  std::map<std::string, std::size_t> out;
  auto it = traces_.find(uuid);
  if (it == traces_.end()) return out;
  for (const auto& e : it->second.events) ++out[e.name()];
  return out;
}

std::vector<std::string> XesLogger::traces() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [uuid, t] : traces_) out.push_back(uuid);
  return out;
}

std::string XesLogger::to_xml(const std::string& uuid) const {
  std::lock_guard lock(mu_);
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<log xes.version=\"1.0\" xes.features=\"nested-attributes\">\n"
     << "  <extension name=\"Concept\" prefix=\"concept\" uri=\"http://www.xes-standard.org/concept.xesext\"/>\n"
     << "  <extension name=\"Lifecycle\" prefix=\"lifecycle\" uri=\"http://www.xes-standard.org/lifecycle.xesext\"/>\n"
     << "  <extension name=\"Time\" prefix=\"time\" uri=\"http://www.xes-standard.org/time.xesext\"/>\n"
     << "  <extension name=\"Task\" prefix=\"task\" uri=\"urn:pflow:task.xesext\"/>\n"
     << "  <extension name=\"Engine\" prefix=\"engine\" uri=\"urn:pflow:engine.xesext\"/>\n"
     << "  <trace>\n";
  auto it = traces_.find(uuid);
  attribute(os, "string", "concept:name", uuid, "    ");
  if (it != traces_.end()) attribute(os, "string", "engine:instance", std::to_string(it->second.instance), "    ");
  if (it != traces_.end()) {
    for (const auto& e : it->second.events) write_event(os, e);
  }
  os << "  </trace>\n</log>\n";
  return os.str();
}

std::filesystem::path XesLogger::path_of(const std::string& uuid) const { return dir_ / (uuid + ".xes"); }

void XesLogger::flush() {
  if (dir_.empty()) return;
  std::lock_guard writing(write_mu_);
  std::set<std::string> dirty;
  {
    std::lock_guard lock(mu_);
    dirty.swap(dirty_);
  }
  for (const auto& uuid : dirty) {
    auto xml = to_xml(uuid);
    auto target = path_of(uuid);
    auto tmp = target;
    tmp += ".tmp";
    std::ofstream out(tmp, std::ios::trunc);
    out << xml;
    out.close();
    if (!out) {
      spdlog::error("xes: cannot write {}", target.string());
      std::lock_guard lock(mu_);
      dirty_.insert(uuid);
      continue;
    }
    std::filesystem::rename(tmp, target);
  }
}

} // namespace pflow::services
