#pragma once

#include <chrono>
#include <memory>
#include <string>

#include "pflow/engine.hpp"
#include "pflow/gateway.hpp"

namespace pflow {

struct ControlApiConfig {
  /// Path of the instance collection; instances live at <prefix>/<id>.
  std::string prefix = "/flow/engine";
  /// Public host part of generated URLs. Empty: http://<bind host>:<port>.
  std::string public_origin;
  std::chrono::milliseconds heartbeat{15000};
  std::size_t threads = 64;
};

/// REST surface of the engine. Routes, relative to the prefix:
///
///   POST   /                         create instance
///   GET    /                         list instances
///   GET    /{id}                     overview
///   DELETE /{id}                     purge
///   GET    /{id}/model               PUT replaces it
///   GET    /{id}/state               PUT {"state": ...}
///   GET    /{id}/{dataelements|endpoints|attributes|positions}, PATCH
///   GET    /{id}/callbacks           open callback records
///   PUT    /{id}/callbacks/{cbid}    operation callback
///   POST   /subscriptions            GET lists them
///   GET    /subscriptions/{sid}      DELETE removes it
///   GET    /subscriptions/{sid}/sse  event stream
///   PUT    /votes/{vid}              vote answer
class ControlApi {
 public:
  ControlApi(Engine& engine, Gateway& gateway, ControlApiConfig config = {});
  ~ControlApi();
  ControlApi(const ControlApi&) = delete;
  ControlApi& operator=(const ControlApi&) = delete;

  /// Binds (port 0 picks a free one), points engine and gateway URLs at the
  /// bound address and returns the port. Throws std::runtime_error.
  int bind(const std::string& host, int port);
  /// Serves on a background thread.
  void start();
  /// Serves on the calling thread until stop().
  void run();
  void stop();

  /// e.g. http://localhost:9298/flow/engine/
  std::string base_url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

} // namespace pflow
