#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace pflow {

using json = nlohmann::json;

/// One subscriber's answer to a vote.
struct VoteResponse {
  enum class Kind { ack, callback, skip, stop, start, value };

  Kind kind = Kind::ack;
  std::string target;  // value only: condition | dataelement | endpoint | attribute
  std::string name;    // value only; empty for conditions
  json value;          // value only

  static VoteResponse ack() { return {}; }
  static VoteResponse skip() { return {Kind::skip, {}, {}, nullptr}; }
  static VoteResponse stop() { return {Kind::stop, {}, {}, nullptr}; }
  static VoteResponse start() { return {Kind::start, {}, {}, nullptr}; }
  static VoteResponse callback() { return {Kind::callback, {}, {}, nullptr}; }
  static VoteResponse set(std::string target, std::string name, json value) {
    return {Kind::value, std::move(target), std::move(name), std::move(value)};
  }

  /// {"response":"value","target":"dataelement","name":"x","value":5}
  json to_json() const;
  /// Accepts the object form or a bare kind string. An empty body is ack.
  static VoteResponse from_json(const json& j);
  static VoteResponse from_body(const std::string& body);

  bool operator==(const VoteResponse&) const = default;
};

std::string_view to_string(VoteResponse::Kind kind);

struct Verdict {
  enum class Action { set_values, start_instance, skip_activity, stop_instance, proceed };

  struct Assignment {
    std::string target;
    std::string name;
    json value;
    bool operator==(const Assignment&) const = default;
  };

  std::vector<Action> actions;
  std::vector<Assignment> values;  // payload of set_values, sorted by (target, name)
  bool blocked = false;            // start and stop both requested: nothing happens

  bool has(Action a) const;
  json to_json() const;
  bool operator==(const Verdict&) const = default;
};

std::string_view to_string(Verdict::Action action);

/// Folds final responses into one verdict. Values agreeing per (target,
/// name) are set; disagreeing values for a name stop the instance. skip,
/// stop and start add their action; start together with stop blocks.
/// `callback` responses are not final and count as ack.
Verdict combine_votes(const std::vector<VoteResponse>& responses);

} // namespace pflow
