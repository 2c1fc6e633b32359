#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <string>

#include "pflow/http.hpp"
#include "pflow/services/callback_sender.hpp"
#include "pflow/services/spawner.hpp"
#include "pflow/services/timeout_service.hpp"
#include "pflow/services/worklist.hpp"
#include "pflow/services/xes_logger.hpp"

namespace pflow::services {

struct ServiceHostConfig {
  WorklistConfig worklist;
  /// Empty: XES traces stay in memory.
  std::filesystem::path log_directory;
  std::string public_origin;
  std::chrono::milliseconds deadline_tick{1000};
  std::size_t threads = 32;
  std::shared_ptr<http::Client> client;
};

/// The reference services behind one HTTP server:
///
///   POST /worklist/tasks                        new task (async)
///   GET  /worklist/tasks?user=u                 all tasks, or those u may see
///   GET  /worklist/tasks/{tid}
///   POST /worklist/tasks/{tid}/{take|return|complete}   {user, result}
///   POST /worklist/deadlines                    check deadlines now
///   POST /log                                   pushed engine event
///   GET  /log                                   trace uuids
///   GET  /log/{uuid}                            XES document
///   POST /timeout                               {duration} seconds (async)
///   POST /spawn                                 {engine, model, dataelements}
///   POST /spawn/events/{token}                  child state events
class ServiceHost {
 public:
  explicit ServiceHost(ServiceHostConfig config = {});
  ~ServiceHost();
  ServiceHost(const ServiceHost&) = delete;
  ServiceHost& operator=(const ServiceHost&) = delete;

  int bind(const std::string& host, int port);
  void start();
  void run();
  void stop();
  /// e.g. http://localhost:9302/
  std::string base_url() const;

  Worklist& worklist();
  XesLogger& logger();
  TimeoutService& timeouts();
  Spawner& spawner();
  CallbackSender& sender();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

} // namespace pflow::services
