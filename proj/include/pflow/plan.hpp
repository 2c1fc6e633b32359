#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "pflow/model.hpp"

namespace pflow::exec {

enum class OpCode {
  enter,       // node starts; activities update the position set
  exit,        // node done
  enact,       // call activity
  manipulate,  // script-only activity
  cond,        // alternative: condition false jumps to `target`
  loop_test,   // pre-test loop head: condition false jumps to `target`
  loop_back,   // post-test loop tail: condition true jumps to `target`
  jump,
  fork,        // start `branches`, wait for `wait` of them, continue at pc+1
  terminate,
  end,         // thread ends
};

std::string_view to_string(OpCode op);

struct Instruction {
  OpCode op = OpCode::end;
  std::string node_id;
  std::size_t target = 0;
  /// cond / loop_test: ids of every node inside the guarded block.
  std::set<std::string> scope;
  /// fork: entry pc and node scope per branch; `wait` branches needed.
  std::vector<std::size_t> branches;
  std::vector<std::set<std::string>> branch_scopes;
  std::size_t wait = 0;
};

/// A process model compiled into a flat program. Branch bodies of a fork
/// are separate code ranges ending in `end`; the main program starts at 0.
class Plan {
 public:
  /// Throws ModelValidationError for structurally invalid models or call
  /// nodes whose endpoint key is bound neither in the model nor in
  /// `endpoints`.
  static std::shared_ptr<const Plan> compile(const ProcessModel& model,
                                             const std::map<std::string, std::string>& endpoints = {});

  const std::vector<Instruction>& code() const { return code_; }
  const ProcessModel& model() const { return model_; }
  const Node& node(const std::string& id) const;
  /// Every node id in the tree rooted at `id`, including `id`.
  const std::set<std::string>& scope_of(const std::string& id) const;
  /// True when `a` and `b` sit in different branches of one parallel, so
  /// a single thread can never be at both.
  bool concurrent(const std::string& a, const std::string& b) const;
  /// One line per instruction, e.g. "enact a1".
  std::vector<std::string> listing() const;

 private:
  Plan() = default;
  void emit(const Node& n);
  std::size_t push(Instruction ins);

  ProcessModel model_;
  std::map<std::string, const Node*> index_;
  std::map<std::string, std::set<std::string>> scopes_;
  std::map<std::string, std::string> parents_;
  std::vector<Instruction> code_;
  std::vector<std::pair<std::size_t, const Node*>> pending_branches_;
};

} // namespace pflow::exec
