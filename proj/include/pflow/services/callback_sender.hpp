#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <map>
#include <thread>

#include <json.hpp>

#include "pflow/http.hpp"

namespace pflow::services {

using json = nlohmann::json;

struct CallbackPut {
  std::string url;
  json body = json::object();
  bool update = false;
  bool failure = false;
  std::optional<std::string> event;  // CPEE-EVENT
};

struct CallbackSenderConfig {
  std::shared_ptr<http::Client> client;
  std::chrono::milliseconds timeout{5000};
  /// 503 (instance stopped) and transport errors are retried at this pace.
  std::chrono::milliseconds retry_interval{200};
  std::chrono::milliseconds give_up_after{600000};
};

/// Delivers callback PUTs from one worker thread. PUTs to the same URL keep
/// their submission order; a URL answering 503 backs off without holding up
/// the others.
class CallbackSender {
 public:
  explicit CallbackSender(CallbackSenderConfig config = {});
  ~CallbackSender();
  CallbackSender(const CallbackSender&) = delete;
  CallbackSender& operator=(const CallbackSender&) = delete;

  void send(CallbackPut put);
  /// Blocks until the queue is empty or the timeout passes.
  bool drain(std::chrono::milliseconds timeout);
  std::size_t delivered() const;
  std::size_t abandoned() const;
  /// Status of the most recent attempt per URL, for tests.
  std::optional<int> last_status(const std::string& url) const;

 private:
  void worker(std::stop_token stop);
  int attempt(const CallbackPut& put);

  CallbackSenderConfig config_;
  mutable std::mutex mu_;
  std::condition_variable_any cv_;
  struct Lane {
    std::deque<CallbackPut> queue;
    std::chrono::steady_clock::time_point not_before;
    std::chrono::steady_clock::time_point give_up;
  };
  std::map<std::string, Lane> lanes_;
  std::size_t pending_ = 0;
  std::size_t sends_ = 0;
  bool busy_ = false;
  std::size_t delivered_ = 0;
  std::size_t abandoned_ = 0;
  std::map<std::string, int> last_;
  std::jthread thread_;
};

} // namespace pflow::services
