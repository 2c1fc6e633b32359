#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>

#include <json.hpp>

#include "pflow/http.hpp"
#include "pflow/services/callback_sender.hpp"

namespace pflow::services {

struct SpawnerConfig {
  /// Where engines can reach this service, e.g. http://localhost:9302/
  std::string public_base;
  std::shared_ptr<http::Client> client;
};

/// Starts a sub-process instance on any engine and reports it back with
/// CPEE-INSTANTIATION. When the caller offered a callback, the activity is
/// answered once the child finishes.
///
/// Arguments: {engine: <instance collection URL>, model: {...},
///             dataelements: {...}}
class Spawner {
 public:
  Spawner(SpawnerConfig config, CallbackSender& sender);

  void set_public_base(std::string url);
  http::Response invoke(const http::Headers& headers, const json& args);
  /// Receives pushed state events of a child.
  http::Response on_event(const std::string& token, const std::string& body);
  json children() const;

 private:
  struct Child {
    std::string url;
    std::string engine;
    std::string subscription;
    std::string callback;
    std::string state = "ready";
  };

  http::Response request(const std::string& method, const std::string& url, const json& body);

  SpawnerConfig config_;
  CallbackSender& sender_;
  mutable std::mutex mu_;
  std::map<std::string, Child> children_;
  std::uint64_t next_ = 1;
};

} // namespace pflow::services
