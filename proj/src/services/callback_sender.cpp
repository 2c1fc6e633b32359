#include "pflow/services/callback_sender.hpp"

#include <spdlog/spdlog.h>

#include "pflow/protocol.hpp"

namespace pflow::services {

CallbackSender::CallbackSender(CallbackSenderConfig config) : config_(std::move(config)) {
  if (!config_.client) config_.client = std::make_shared<http::HttplibClient>();
  thread_ = std::jthread([this](std::stop_token st) { worker(st); });
}

CallbackSender::~CallbackSender() {
  thread_.request_stop();
  cv_.notify_all();
}

void CallbackSender::send(CallbackPut put) {
  {
    std::lock_guard lock(mu_);
    auto& lane = lanes_[put.url];
    if (lane.queue.empty()) lane.give_up = std::chrono::steady_clock::now() + config_.give_up_after;
    lane.queue.push_back(std::move(put));
    ++pending_;
    ++sends_;
  }
  cv_.notify_all();
}

bool CallbackSender::drain(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  return cv_.wait_for(lock, timeout, [&] { return pending_ == 0 && !busy_; });
}

std::size_t CallbackSender::delivered() const {
  std::lock_guard lock(mu_);
  return delivered_;
}

std::size_t CallbackSender::abandoned() const {
  std::lock_guard lock(mu_);
  return abandoned_;
}

std::optional<int> CallbackSender::last_status(const std::string& url) const {
  std::lock_guard lock(mu_);
  auto it = last_.find(url);
  if (it == last_.end()) return std::nullopt;
  return it->second;
}

int CallbackSender::attempt(const CallbackPut& put) {
  http::Request req;
  req.method = "PUT";
  req.url = put.url;
  req.timeout = config_.timeout;
  req.headers["Content-Type"] = "application/json";
  if (put.update) req.headers[protocol::headers::update] = "true";
  if (put.failure) req.headers[protocol::headers::failure] = "true";
  if (put.event) req.headers[protocol::headers::event] = *put.event;
  req.body = put.body.dump();
  try {
    return config_.client->send(req).status;
  } catch (const http::TransportError& e) {
    spdlog::debug("callback {}: {}", put.url, e.what());
    return 0;
  }
}

void CallbackSender::worker(std::stop_token stop) {
  using clock = std::chrono::steady_clock;
  std::unique_lock lock(mu_);
  while (!stop.stop_requested()) {
    auto now = clock::now();
    auto wake = clock::time_point::max();
    Lane* ready = nullptr;
    for (auto& [url, lane] : lanes_) {
      if (lane.queue.empty()) continue;
      if (lane.not_before <= now) {
        ready = &lane;
        break;
      }
      wake = std::min(wake, lane.not_before);
    }
    if (!ready) {
      std::erase_if(lanes_, [](const auto& kv) { return kv.second.queue.empty(); });
      if (wake == clock::time_point::max()) cv_.wait(lock, stop, [&] { return pending_ > 0; });
      else cv_.wait_until(lock, stop, wake, [&, seen = sends_] { return sends_ != seen; });
      continue;
    }
    auto put = ready->queue.front();
    busy_ = true;
    lock.unlock();
    int status = attempt(put);
    lock.lock();
    busy_ = false;
    last_[put.url] = status;
    auto& lane = lanes_[put.url];
    bool retry = status == 0 || status == 503;
    if (retry && clock::now() < lane.give_up) {
      lane.not_before = clock::now() + config_.retry_interval;
      continue;
    }
    lane.queue.pop_front();
    --pending_;
    lane.give_up = clock::now() + config_.give_up_after;
    if (status >= 200 && status < 300) {
      ++delivered_;
    } else {
      ++abandoned_;
      spdlog::warn("callback {} gave up with status {}", put.url, status);
    }
    cv_.notify_all();
  }
}

} // namespace pflow::services
