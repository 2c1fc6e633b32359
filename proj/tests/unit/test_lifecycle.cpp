#include <doctest.h>

#include "pflow/lifecycle.hpp"
#include "support/oracles.hpp"

using namespace pflow;

TEST_CASE("legal-edge table matches the written-out lifecycle") {
  int legal = 0;
  for (auto from : all_instance_states) {
    for (auto to : all_instance_states) {
      for (auto cause : all_transition_causes) {
        CAPTURE(to_string(from));
        CAPTURE(to_string(to));
        CAPTURE(to_string(cause));
        CHECK(is_legal_transition(from, to, cause) == testing::lifecycle_oracle(from, to, cause));
        legal += is_legal_transition(from, to, cause);
      }
    }
  }
  CHECK(legal == 11);
}

TEST_CASE("finished and purged are never left") {
  for (auto to : all_instance_states) {
    for (auto cause : all_transition_causes) {
      CHECK_FALSE(is_legal_transition(InstanceState::finished, to, cause));
      CHECK_FALSE(is_legal_transition(InstanceState::purged, to, cause));
    }
  }
}

TEST_CASE("finished is reached only by completion") {
  for (auto from : all_instance_states) {
    CHECK_FALSE(is_legal_transition(from, InstanceState::finished, TransitionCause::command));
    CHECK_FALSE(is_legal_transition(from, InstanceState::finished, TransitionCause::error));
  }
}

TEST_CASE("state names round-trip") {
  for (auto s : all_instance_states) CHECK(instance_state_from_string(to_string(s)) == s);
  CHECK_FALSE(instance_state_from_string("paused").has_value());
}

TEST_CASE("only ready and stopped are editable") {
  for (auto s : all_instance_states) {
    CHECK(is_editable(s) == (s == InstanceState::ready || s == InstanceState::stopped));
  }
}

TEST_CASE("illegal transition names both states") {
  IllegalTransition e(InstanceState::finished, InstanceState::running);
  CHECK(std::string(e.what()) == "illegal transition from finished to running");
  CHECK(e.from() == InstanceState::finished);
}
