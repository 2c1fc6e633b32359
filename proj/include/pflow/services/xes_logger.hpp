#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "pflow/bus.hpp"
#include "pflow/events.hpp"

namespace pflow::services {

/// Writes one XES trace per instance uuid. Activity events carry the
/// standard lifecycle:transition, task events a separate task lifecycle
/// attribute, everything else its topic and event name.
class XesLogger {
 public:
  /// Empty directory: traces stay in memory.
  explicit XesLogger(std::filesystem::path directory = {},
                     std::chrono::milliseconds flush_interval = std::chrono::milliseconds(500));
  ~XesLogger();
  XesLogger(const XesLogger&) = delete;
  XesLogger& operator=(const XesLogger&) = delete;

  void consume(const EngineEvent& event);
  /// In-process consumption straight from a bus.
  void attach(Bus& bus);
  void detach();

  std::size_t event_count(const std::string& uuid) const;
  /// Number of events per topic/event name in one trace.
  std::map<std::string, std::size_t> histogram(const std::string& uuid) const;
  std::vector<std::string> traces() const;
  std::string to_xml(const std::string& uuid) const;
  std::filesystem::path path_of(const std::string& uuid) const;
  void flush();

 private:
  struct Trace {
    InstanceId instance = 0;
    std::vector<EngineEvent> events;
  };

  std::filesystem::path dir_;
  std::chrono::milliseconds interval_;
  mutable std::mutex mu_;
  std::map<std::string, Trace> traces_;
  std::set<std::string> dirty_;
  std::mutex write_mu_;
  Bus* bus_ = nullptr;
  Bus::SubscriptionId sub_ = 0;
  std::jthread writer_;
};

std::string xml_escape(std::string_view s);

} // namespace pflow::services
