#include "pflow/services/timeout_service.hpp"

namespace pflow::services {

TimeoutService::TimeoutService(CallbackSender& sender) : sender_(sender) {
  thread_ = std::jthread([this](std::stop_token st) {
    std::unique_lock lock(mu_);
    while (!st.stop_requested()) {
      if (due_.empty()) {
        cv_.wait(lock, st, [&] { return !due_.empty(); });
        continue;
      }
      auto next = due_.begin()->first;
      if (next > std::chrono::steady_clock::now()) {
        cv_.wait_until(lock, st, next, [&] { return due_.begin()->first < next; });
        continue;
      }
      auto put = std::move(due_.begin()->second);
      due_.erase(due_.begin());
      lock.unlock();
      sender_.send(std::move(put));
      lock.lock();
    }
  });
}

TimeoutService::~TimeoutService() {
  thread_.request_stop();
  cv_.notify_all();
}

void TimeoutService::schedule(std::string callback_url, std::chrono::milliseconds delay, json body) {
  CallbackPut put;
  put.url = std::move(callback_url);
  put.body = std::move(body);
  {
    std::lock_guard lock(mu_);
    due_.emplace(std::chrono::steady_clock::now() + delay, std::move(put));
  }
  cv_.notify_all();
}

std::size_t TimeoutService::pending() const {
  std::lock_guard lock(mu_);
  return due_.size();
}

} // namespace pflow::services
