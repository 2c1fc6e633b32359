#include "pflow/votes.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "pflow/util.hpp"

namespace pflow {

std::string_view to_string(VoteResponse::Kind kind) {
  switch (kind) {
    case VoteResponse::Kind::ack: return "ack";
    case VoteResponse::Kind::callback: return "callback";
    case VoteResponse::Kind::skip: return "skip";
    case VoteResponse::Kind::stop: return "stop";
    case VoteResponse::Kind::start: return "start";
    case VoteResponse::Kind::value: return "value";
  }
  return "ack";
}

std::string_view to_string(Verdict::Action action) {
  switch (action) {
    case Verdict::Action::set_values: return "set_values";
    case Verdict::Action::start_instance: return "start_instance";
    case Verdict::Action::skip_activity: return "skip_activity";
    case Verdict::Action::stop_instance: return "stop_instance";
    case Verdict::Action::proceed: return "proceed";
  }
  return "proceed";
}

json VoteResponse::to_json() const {
  json j{{"response", to_string(kind)}};
  if (kind == Kind::value) {
    j["target"] = target;
    if (!name.empty()) j["name"] = name;
    j["value"] = value;
  }
  return j;
}

VoteResponse VoteResponse::from_json(const json& j) {
  std::string kind;
  if (j.is_null()) return ack();
  if (j.is_string()) kind = j.get<std::string>();
  else if (j.is_object()) kind = j.value("response", "ack");
  else throw std::invalid_argument("vote response must be a string or an object");

  if (kind == "ack") return ack();
  if (kind == "callback") return callback();
  if (kind == "skip") return skip();
  if (kind == "stop") return stop();
  if (kind == "start") return start();
  if (kind == "value") {
    if (!j.is_object() || !j.contains("value")) throw std::invalid_argument("value response without value");
    auto target = j.value("target", "dataelement");
    if (target != "condition" && target != "dataelement" && target != "endpoint" && target != "attribute") {
      throw std::invalid_argument("unknown value target: " + target);
    }
    return set(target, j.value("name", ""), j.at("value"));
  }
  throw std::invalid_argument("unknown vote response: " + kind);
}

VoteResponse VoteResponse::from_body(const std::string& body) {
  auto t = trim(body);
  if (t.empty()) return ack();
  auto j = json::parse(t, nullptr, false);
  if (j.is_discarded()) return from_json(json(t));
  return from_json(j);
}

bool Verdict::has(Action a) const { return std::find(actions.begin(), actions.end(), a) != actions.end(); }

json Verdict::to_json() const {
  json acts = json::array();
  for (auto a : actions) acts.push_back(to_string(a));
  json vals = json::array();
  for (const auto& v : values) vals.push_back({{"target", v.target}, {"name", v.name}, {"value", v.value}});
  return {{"actions", acts}, {"values", vals}, {"blocked", blocked}};
}

Verdict combine_votes(const std::vector<VoteResponse>& responses) {
  bool skip = false, stop = false, start = false;
  std::map<std::pair<std::string, std::string>, std::vector<json>> proposals;

  for (const auto& r : responses) {
    switch (r.kind) {
      case VoteResponse::Kind::ack:
      case VoteResponse::Kind::callback: break;
      case VoteResponse::Kind::skip: skip = true; break;
      case VoteResponse::Kind::stop: stop = true; break;
      case VoteResponse::Kind::start: start = true; break;
      case VoteResponse::Kind::value: proposals[{r.target, r.name}].push_back(r.value); break;
    }
  }

  Verdict v;
  for (const auto& [key, vals] : proposals) {
    bool agree = std::all_of(vals.begin(), vals.end(), [&](const json& x) { return x == vals.front(); });
    if (agree) v.values.push_back({key.first, key.second, vals.front()});
    else stop = true;
  }

  if (start && stop) {
    v.values.clear();
    v.blocked = true;
    return v;
  }
  if (!v.values.empty()) v.actions.push_back(Verdict::Action::set_values);
  if (start) v.actions.push_back(Verdict::Action::start_instance);
  if (skip) v.actions.push_back(Verdict::Action::skip_activity);
  if (stop) v.actions.push_back(Verdict::Action::stop_instance);
  if (!skip && !stop) v.actions.push_back(Verdict::Action::proceed);
  return v;
}

} // namespace pflow
