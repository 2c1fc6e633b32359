#pragma once

#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <vector>

#include <json.hpp>

#include "pflow/events.hpp"
#include "pflow/http.hpp"

namespace pflow::protocol {

using json = nlohmann::json;

namespace headers {
inline constexpr const char* base = "CPEE-BASE";
inline constexpr const char* instance = "CPEE-INSTANCE";
inline constexpr const char* instance_url = "CPEE-INSTANCE-URL";
inline constexpr const char* instance_uuid = "CPEE-INSTANCE-UUID";
inline constexpr const char* callback = "CPEE-CALLBACK";
inline constexpr const char* callback_id = "CPEE-CALLBACK-ID";
inline constexpr const char* activity = "CPEE-ACTIVITY";
inline constexpr const char* label = "CPEE-LABEL";
inline constexpr const char* update = "CPEE-UPDATE";
inline constexpr const char* salvage = "CPEE-SALVAGE";
inline constexpr const char* instantiation = "CPEE-INSTANTIATION";
inline constexpr const char* event = "CPEE-EVENT";
/// Callback PUTs only: the functionality gave up; the enactment fails.
inline constexpr const char* failure = "CPEE-FAILURE";
} // namespace headers

/// Who is calling: carried as the eight request headers.
struct InvocationContext {
  std::string base;          // engine base, e.g. https://cpee.org/flow/engine/
  InstanceId instance = 0;
  std::string instance_url;
  std::string instance_uuid;
  std::string activity;
  std::string label;
  std::string callback_id;
};

/// <base>/<instance>/callbacks/<callback-id>
std::string callback_url(const std::string& base, InstanceId instance, const std::string& callback_id);

http::Headers request_headers(const InvocationContext& ctx);

struct Outcome {
  enum class Pattern { synchronous, asynchronous, salvage, failure };

  Pattern pattern = Pattern::failure;
  std::string body;          // synchronous result, raw bytes
  std::string content_type;
  std::optional<std::string> event;    // CPEE-EVENT value
  std::optional<std::string> spawned;  // instance URL from a CPEE-INSTANTIATION response
  std::string error;         // failure reason
};

/// Maps a functionality's response onto an interaction pattern.
Outcome classify(const http::Response& response);

/// Sends the invocation and classifies the answer. Transport problems
/// (connect failure, timeout) come back as Pattern::failure.
Outcome invoke(http::Client& client, const std::string& endpoint, const std::string& method,
               const json& arguments, const InvocationContext& ctx, std::chrono::milliseconds timeout);

struct CallbackMessage {
  std::string body;  // forwarded untouched
  std::string content_type;
  bool update = false;
  bool failure = false;
  std::optional<std::string> event;

  /// JSON value of the body when it parses, the raw string otherwise.
  json payload() const;
  json to_json() const;
  static CallbackMessage from_json(const json& j);
  static CallbackMessage from_headers(const http::Headers& h, std::string body);
};

struct CallbackRecord {
  std::string callback_id;
  InstanceId instance = 0;
  std::string activity;
  std::string enactment;
  std::string created_at;
  bool suspended = false;
  bool closed = false;  // final answer received, awaiting pickup
  std::deque<CallbackMessage> pending;

  json to_json() const;
  static CallbackRecord from_json(const json& j);
};

enum class DeliveryStatus { accepted, unknown, suspended };

/// The engine's list of outstanding callback addresses. Each record owns a
/// mailbox; deliveries are queued in PUT order and picked up by the
/// waiting enactment.
class CallbackRegistry {
 public:
  void add(CallbackRecord record);
  DeliveryStatus deliver(InstanceId instance, const std::string& callback_id, CallbackMessage message);
  /// Blocks until a message is queued for `callback_id` or `stop` fires.
  /// nullopt on stop or when the record disappeared.
  std::optional<CallbackMessage> await(const std::string& callback_id, std::stop_token stop);
  /// Drains queued messages without waiting.
  std::optional<CallbackMessage> poll(const std::string& callback_id);
  bool remove(const std::string& callback_id);

  /// Flip suspension for every record of the instance; returns how many
  /// records the instance has.
  std::size_t suspend(InstanceId instance);
  std::size_t resume(InstanceId instance);
  std::size_t remove_instance(InstanceId instance);

  std::optional<CallbackRecord> find(const std::string& callback_id) const;
  std::vector<CallbackRecord> records(InstanceId instance) const;
  std::size_t size() const;

 private:
  std::size_t set_suspended(InstanceId instance, bool value);

  mutable std::mutex mu_;
  std::condition_variable_any cv_;
  std::map<std::string, CallbackRecord> records_;
};

/// Service-side helper: the callback URL to answer later, or nullopt if the
/// caller did not offer one (then only a synchronous answer is possible).
std::optional<std::string> async_target(const http::Headers& request_headers);

/// Response headers announcing "answer comes later".
http::Headers async_ack_headers();

} // namespace pflow::protocol
