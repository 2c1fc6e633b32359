#pragma once

#include <chrono>
#include <condition_variable>
#include <map>
#include <mutex>
#include <string>
#include <thread>

#include <json.hpp>

#include "pflow/services/callback_sender.hpp"

namespace pflow::services {

/// Answers every invocation after a delay with one final callback.
class TimeoutService {
 public:
  explicit TimeoutService(CallbackSender& sender);
  ~TimeoutService();
  TimeoutService(const TimeoutService&) = delete;
  TimeoutService& operator=(const TimeoutService&) = delete;

  void schedule(std::string callback_url, std::chrono::milliseconds delay, json body);
  std::size_t pending() const;

 private:
  CallbackSender& sender_;
  mutable std::mutex mu_;
  std::condition_variable_any cv_;
  std::multimap<std::chrono::steady_clock::time_point, CallbackPut> due_;
  std::jthread thread_;
};

} // namespace pflow::services
