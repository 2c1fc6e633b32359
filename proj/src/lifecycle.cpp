#include "pflow/lifecycle.hpp"

namespace pflow {

namespace {

struct Edge {
  InstanceState from;
  InstanceState to;
  TransitionCause cause;
};

using S = InstanceState;
using C = TransitionCause;

constexpr Edge legal_edges[] = {
    {S::ready, S::running, C::command},
    {S::ready, S::abandoned, C::command},
    {S::running, S::stopping, C::command},
    {S::running, S::stopping, C::error},
    {S::running, S::finished, C::completion},
    {S::running, S::purged, C::command},
    {S::stopping, S::stopped, C::completion},
    {S::stopping, S::stopped, C::error},  // drain timeout
    {S::stopped, S::running, C::command},
    {S::stopped, S::abandoned, C::command},
    {S::abandoned, S::purged, C::command},
};

} // namespace

std::string_view to_string(InstanceState s) {
  switch (s) {
    case S::ready: return "ready";
    case S::running: return "running";
    case S::stopping: return "stopping";
    case S::stopped: return "stopped";
    case S::finished: return "finished";
    case S::abandoned: return "abandoned";
    case S::purged: return "purged";
  }
  return "unknown";
}

std::optional<InstanceState> instance_state_from_string(std::string_view s) {
  for (auto st : all_instance_states) {
    if (to_string(st) == s) return st;
  }
  return std::nullopt;
}

std::string_view to_string(TransitionCause c) {
  switch (c) {
    case C::command: return "command";
    case C::error: return "error";
    case C::completion: return "completion";
  }
  return "unknown";
}

bool is_legal_transition(InstanceState from, InstanceState to, TransitionCause cause) {
  for (const auto& e : legal_edges) {
    if (e.from == from && e.to == to && e.cause == cause) return true;
  }
  return false;
}

bool is_terminal(InstanceState s) { return s == S::finished || s == S::purged; }

IllegalTransition::IllegalTransition(InstanceState from, InstanceState to)
    : std::runtime_error("illegal transition from " + std::string(to_string(from)) + " to " +
                         std::string(to_string(to))),
      from_(from), to_(to) {}

} // namespace pflow
