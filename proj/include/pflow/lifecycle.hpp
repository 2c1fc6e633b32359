#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pflow {

enum class InstanceState { ready, running, stopping, stopped, finished, abandoned, purged };

inline constexpr std::array<InstanceState, 7> all_instance_states{
    InstanceState::ready,    InstanceState::running,   InstanceState::stopping, InstanceState::stopped,
    InstanceState::finished, InstanceState::abandoned, InstanceState::purged};

/// Why a transition is requested. `command` comes from the control
/// interface, `error` from a failing execution, `completion` from the
/// execution unit finishing its work (or draining after a stop).
enum class TransitionCause { command, error, completion };

inline constexpr std::array<TransitionCause, 3> all_transition_causes{
    TransitionCause::command, TransitionCause::error, TransitionCause::completion};

std::string_view to_string(InstanceState s);
std::optional<InstanceState> instance_state_from_string(std::string_view s);
std::string_view to_string(TransitionCause c);

/// The legal-edge table of the instance lifecycle.
bool is_legal_transition(InstanceState from, InstanceState to, TransitionCause cause);
bool is_terminal(InstanceState s);
/// States in which model, context and positions may be changed from outside.
inline bool is_editable(InstanceState s) { return s == InstanceState::ready || s == InstanceState::stopped; }

class IllegalTransition : public std::runtime_error {
 public:
  IllegalTransition(InstanceState from, InstanceState to);
  InstanceState from() const { return from_; }
  InstanceState to() const { return to_; }

 private:
  InstanceState from_;
  InstanceState to_;
};

class VoteRejected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IllegalState : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

} // namespace pflow
