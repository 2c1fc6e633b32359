#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "pflow/lifecycle.hpp"
#include "pflow/services/worklist.hpp"
#include "pflow/votes.hpp"

namespace pflow::testing {

/// Instance lifecycle written out edge by edge, as "from>to:cause".
inline bool lifecycle_oracle(InstanceState from, InstanceState to, TransitionCause cause) {
  static const std::set<std::string> edges{
      "ready>running:command",      "ready>abandoned:command",    "running>stopping:command",
      "running>stopping:error",     "running>finished:completion", "running>purged:command",
      "stopping>stopped:completion", "stopping>stopped:error",     "stopped>running:command",
      "stopped>abandoned:command",  "abandoned>purged:command",
  };
  std::string key = std::string(to_string(from)) + ">" + std::string(to_string(to)) + ":" + std::string(to_string(cause));
  return edges.count(key) > 0;
}

/// Vote verdicts as a decision table over what the responses contain.
inline Verdict vote_oracle(const std::vector<VoteResponse>& responses) {
  using K = VoteResponse::Kind;
  using A = Verdict::Action;
  auto count = [&](K k) { return std::count_if(responses.begin(), responses.end(), [&](auto& r) { return r.kind == k; }); };
  bool skip = count(K::skip) > 0;
  bool stop = count(K::stop) > 0;
  bool start = count(K::start) > 0;

  std::map<std::pair<std::string, std::string>, std::set<std::string>> seen;
  for (const auto& r : responses) {
    if (r.kind == K::value) seen[{r.target, r.name}].insert(r.value.dump());
  }
  bool disagree = false;
  std::vector<Verdict::Assignment> values;
  for (const auto& [key, vals] : seen) {
    if (vals.size() > 1) disagree = true;
    else values.push_back({key.first, key.second, json::parse(*vals.begin())});
  }
  bool stopping = stop || disagree;

  Verdict v;
  // Dissenting start and stop: nothing happens, the state stays.
  if (start && stopping) {
    v.blocked = true;
    return v;
  }
  // Rows: (skip, stop, start) -> actions after the optional set_values.
  static const std::map<std::tuple<bool, bool, bool>, std::vector<A>> table{
      {{false, false, false}, {A::proceed}},
      {{true, false, false}, {A::skip_activity}},
      {{false, true, false}, {A::stop_instance}},
      {{true, true, false}, {A::skip_activity, A::stop_instance}},
      {{false, false, true}, {A::start_instance, A::proceed}},
      {{true, false, true}, {A::start_instance, A::skip_activity}},
  };
  if (!values.empty()) v.actions.push_back(A::set_values);
  for (auto a : table.at({skip, stopping, start})) v.actions.push_back(a);
  v.values = values;
  return v;
}

/// Every user in `eligible` with the best skill score, by exhaustive search.
inline std::set<std::string> best_skill_users(const std::set<std::string>& eligible,
                                              const services::SkillVector& required,
                                              const std::map<std::string, services::SkillVector>& skills) {
  double best = -std::numeric_limits<double>::infinity();
  std::set<std::string> winners;
  for (const auto& u : eligible) {
    double score = 0;
    for (const auto& [skill, weight] : required) {
      auto it = skills.find(u);
      if (it == skills.end()) continue;
      auto s = it->second.find(skill);
      if (s != it->second.end()) score += weight * s->second;
    }
    if (score > best + 1e-12) {
      best = score;
      winners = {u};
    } else if (std::abs(score - best) <= 1e-12) {
      winners.insert(u);
    }
  }
  return winners;
}

} // namespace pflow::testing
