#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pflow/bus.hpp"
#include "pflow/events.hpp"
#include "pflow/http.hpp"
#include "pflow/votes.hpp"

namespace pflow {

using json = nlohmann::json;

class SubscriptionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Selection {
  std::string topic;
  std::string event = "*";
  bool vote = false;

  bool matches(std::string_view t, std::string_view e) const;
  bool operator==(const Selection&) const = default;
};

/// What a subscriber wants. Without an endpoint, delivery goes through SSE.
struct SubscriptionSpec {
  std::optional<std::string> endpoint;
  std::optional<InstanceId> instance;
  std::vector<Selection> selections;

  json to_json() const;
  /// Throws SubscriptionError on unknown topics or votes on non-votable pairs.
  static SubscriptionSpec from_json(const json& j);
  void validate() const;
};

/// Formats one server-sent-events frame.
std::string sse_frame(std::string_view event, std::string_view data);
std::string sse_heartbeat();

/// One attached SSE connection: a bounded frame queue.
class SseSink {
 public:
  explicit SseSink(std::size_t capacity) : capacity_(capacity) {}

  /// False when the oldest frame had to be dropped.
  bool push(std::string frame);
  /// Next frame, or nullopt after `wait` without one (time for a heartbeat)
  /// or once closed.
  std::optional<std::string> next(std::chrono::milliseconds wait);
  void close();
  bool closed() const;

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> frames_;
  bool closed_ = false;
};

/// Anything able to run a vote to completion.
class VoteCollector {
 public:
  virtual ~VoteCollector() = default;
  /// Final responses of every vote subscriber. Timeouts count as ack.
  virtual std::vector<VoteResponse> collect(const EngineEvent& vote) = 0;
};

struct GatewayConfig {
  std::chrono::milliseconds push_timeout{5000};
  int push_retries = 3;
  std::chrono::milliseconds retry_delay{100};
  std::size_t queue_capacity = 10000;
  std::chrono::milliseconds vote_timeout{10000};
  std::chrono::milliseconds vote_callback_ceiling{60000};
  /// Votes are answered by PUT to <vote_base>/<vote-id>.
  std::string vote_base = "http://localhost:9298/flow/engine/votes/";
  std::function<std::shared_ptr<http::Client>()> client_factory;
};

/// Data stream interface: subscription registry, fan-out of bus events to
/// push endpoints and SSE streams, and vote collection.
class Gateway : public VoteCollector {
 public:
  Gateway(Bus& bus, GatewayConfig config);
  ~Gateway() override;
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  std::string subscribe(SubscriptionSpec spec);
  bool unsubscribe(const std::string& id);
  std::optional<SubscriptionSpec> find(const std::string& id) const;
  std::map<std::string, SubscriptionSpec> list() const;

  /// nullptr for unknown or push subscriptions.
  std::shared_ptr<SseSink> attach(const std::string& id);
  void detach(const std::string& id, const std::shared_ptr<SseSink>& sink);

  std::vector<VoteResponse> collect(const EngineEvent& vote) override;
  /// Delivers an answer to an outstanding vote. False if unknown.
  bool answer(const std::string& vote_id, const VoteResponse& response);
  std::size_t outstanding_votes() const;

  /// Events dropped on overflow or after exhausted retries.
  std::size_t dropped() const { return dropped_.load(); }
  const GatewayConfig& config() const { return config_; }
  void set_vote_base(std::string url);
  std::string vote_base() const;

  void shutdown();

 private:
  struct Subscription;
  struct PendingVote;

  void on_event(const BusMessage& m);
  void push_worker(std::stop_token stop, std::shared_ptr<Subscription> sub);
  void warn(const EngineEvent& about, const std::string& text);
  std::shared_ptr<http::Client> make_client() const;

  Bus& bus_;
  GatewayConfig config_;
  Bus::SubscriptionId bus_sub_ = 0;
  mutable std::mutex base_mu_;
  std::string vote_base_;

  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Subscription>> subs_;

  mutable std::mutex votes_mu_;
  std::condition_variable votes_cv_;
  std::map<std::string, std::shared_ptr<PendingVote>> votes_;

  std::atomic<std::size_t> dropped_{0};
  std::atomic<bool> shut_{false};
};

} // namespace pflow
