#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pflow/events.hpp"

namespace pflow {

enum class MessageKind { event, vote, vote_response, command };

std::string_view to_string(MessageKind k);

/// Envelope for everything travelling over the engine-internal bus.
struct BusMessage {
  MessageKind kind = MessageKind::event;
  EngineEvent event;
  std::optional<std::string> correlation_id;  // vote id for vote / vote_response

  json to_json() const;
  static BusMessage from_json(const json& j);
};

class BusClosed : public std::runtime_error {
 public:
  BusClosed() : std::runtime_error("bus closed") {}
};

/// In-process publish/subscribe broker. Dispatch is synchronous and
/// serialized, so every subscriber observes one global publish order.
/// Handlers run inside publish() and must not block or publish again.
class Bus {
 public:
  using Handler = std::function<void(const BusMessage&)>;
  using SubscriptionId = std::uint64_t;

  struct Filter {
    std::optional<MessageKind> kind;
    std::optional<std::string> topic;
    std::optional<InstanceId> instance;
    bool matches(const BusMessage& m) const;
  };

  SubscriptionId subscribe(Filter filter, Handler handler);
  void unsubscribe(SubscriptionId id);
  void publish(const BusMessage& message);
  void close();
  bool closed() const { return closed_.load(); }

  /// Median and count of recent publish() durations.
  struct LatencyStats {
    std::size_t samples = 0;
    std::chrono::nanoseconds median{0};
    std::chrono::nanoseconds max{0};
  };
  LatencyStats publish_latency() const;

 private:
  struct Entry {
    SubscriptionId id;
    Filter filter;
    Handler handler;
  };

  mutable std::mutex mu_;
  std::vector<Entry> entries_;
  SubscriptionId next_id_ = 1;
  std::atomic<bool> closed_{false};

  static constexpr std::size_t latency_window = 65536;
  std::vector<std::int64_t> latencies_;
  std::size_t latency_cursor_ = 0;
};

} // namespace pflow
