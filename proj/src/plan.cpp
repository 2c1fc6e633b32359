#include "pflow/plan.hpp"

namespace pflow::exec {

std::string_view to_string(OpCode op) {
  switch (op) {
    case OpCode::enter: return "enter";
    case OpCode::exit: return "exit";
    case OpCode::enact: return "enact";
    case OpCode::manipulate: return "manipulate";
    case OpCode::cond: return "cond";
    case OpCode::loop_test: return "loop_test";
    case OpCode::loop_back: return "loop_back";
    case OpCode::jump: return "jump";
    case OpCode::fork: return "fork";
    case OpCode::terminate: return "terminate";
    case OpCode::end: return "end";
  }
  return "end";
}

namespace {

void collect_scopes(const Node& n, std::map<std::string, std::set<std::string>>& scopes,
                    std::map<std::string, const Node*>& index, std::map<std::string, std::string>& parents) {
  index[n.id] = &n;
  std::set<std::string> s{n.id};
  for (const auto& c : n.children) {
    parents[c.id] = n.id;
    collect_scopes(c, scopes, index, parents);
    const auto& cs = scopes.at(c.id);
    s.insert(cs.begin(), cs.end());
  }
  scopes[n.id] = std::move(s);
}

std::set<std::string> children_scope(const Node& n, const std::map<std::string, std::set<std::string>>& scopes) {
  std::set<std::string> s;
  for (const auto& c : n.children) {
    const auto& cs = scopes.at(c.id);
    s.insert(cs.begin(), cs.end());
  }
  return s;
}

} // namespace

std::shared_ptr<const Plan> Plan::compile(const ProcessModel& model, const std::map<std::string, std::string>& endpoints) {
  auto errors = validate_structure(model);
  auto missing = missing_endpoints(model, endpoints);
  errors.insert(errors.end(), missing.begin(), missing.end());
  if (!errors.empty()) throw ModelValidationError(std::move(errors));

  std::shared_ptr<Plan> plan(new Plan());
  plan->model_ = model;
  collect_scopes(plan->model_.root, plan->scopes_, plan->index_, plan->parents_);
  plan->emit(plan->model_.root);
  plan->push({OpCode::end, plan->model_.root.id});
  // Branch bodies are laid out after the main program, breadth first.
  for (std::size_t i = 0; i < plan->pending_branches_.size(); ++i) {
    auto [fork_pc, branch] = plan->pending_branches_[i];
    auto entry = plan->code_.size();
    plan->code_[fork_pc].branches.push_back(entry);
    plan->emit(*branch);
    plan->push({OpCode::end, branch->id});
  }
  plan->pending_branches_.clear();
  return plan;
}

std::size_t Plan::push(Instruction ins) {
  code_.push_back(std::move(ins));
  return code_.size() - 1;
}

void Plan::emit(const Node& n) {
  push({OpCode::enter, n.id});
  switch (n.kind) {
    case NodeKind::call:
      push({OpCode::enact, n.id});
      break;
    case NodeKind::manipulate:
      push({OpCode::manipulate, n.id});
      break;
    case NodeKind::terminate:
      push({OpCode::terminate, n.id});
      break;
    case NodeKind::sequence:
    case NodeKind::parallel_branch:
    case NodeKind::alternative:
    case NodeKind::otherwise:
      for (const auto& c : n.children) emit(c);
      break;
    case NodeKind::choose: {
      std::vector<std::size_t> exits;
      for (const auto& alt : n.children) {
        if (alt.kind == NodeKind::otherwise) continue;
        Instruction test{OpCode::cond, alt.id};
        test.scope = scopes_.at(alt.id);
        auto at = push(std::move(test));
        emit(alt);
        exits.push_back(push({OpCode::jump, n.id}));
        code_[at].target = code_.size();
      }
      for (const auto& alt : n.children) {
        if (alt.kind == NodeKind::otherwise) emit(alt);
      }
      for (auto pc : exits) code_[pc].target = code_.size();
      break;
    }
    case NodeKind::loop:
      if (n.loop_mode == LoopMode::pre_test) {
        Instruction test{OpCode::loop_test, n.id};
        test.scope = children_scope(n, scopes_);
        auto head = push(std::move(test));
        for (const auto& c : n.children) emit(c);
        auto back = push({OpCode::jump, n.id});
        code_[back].target = head;
        code_[head].target = code_.size();
      } else {
        auto head = code_.size();
        for (const auto& c : n.children) emit(c);
        auto tail = push({OpCode::loop_back, n.id});
        code_[tail].target = head;
      }
      break;
    case NodeKind::parallel: {
      Instruction fork{OpCode::fork, n.id};
      fork.wait = n.wait ? static_cast<std::size_t>(*n.wait) : n.children.size();
      for (const auto& b : n.children) fork.branch_scopes.push_back(scopes_.at(b.id));
      auto pc = push(std::move(fork));
      for (const auto& b : n.children) pending_branches_.emplace_back(pc, &b);
      break;
    }
  }
  push({OpCode::exit, n.id});
}

const Node& Plan::node(const std::string& id) const { return *index_.at(id); }

const std::set<std::string>& Plan::scope_of(const std::string& id) const { return scopes_.at(id); }

bool Plan::concurrent(const std::string& a, const std::string& b) const {
  std::set<std::string> up{a};
  for (auto it = parents_.find(a); it != parents_.end(); it = parents_.find(it->second)) up.insert(it->second);
  std::string common = b;
  while (!up.count(common)) {
    auto it = parents_.find(common);
    if (it == parents_.end()) return false;
    common = it->second;
  }
  return common != a && common != b && node(common).kind == NodeKind::parallel;
}

std::vector<std::string> Plan::listing() const {
  std::vector<std::string> out;
  for (const auto& ins : code_) {
    std::string line(to_string(ins.op));
    line += " " + ins.node_id;
    switch (ins.op) {
      case OpCode::cond:
      case OpCode::loop_test:
      case OpCode::loop_back:
      case OpCode::jump:
        line += " -> " + std::to_string(ins.target);
        break;
      case OpCode::fork:
        line += " [";
        for (std::size_t i = 0; i < ins.branches.size(); ++i) line += (i ? " " : "") + std::to_string(ins.branches[i]);
        line += "] wait " + std::to_string(ins.wait);
        break;
      default:
        break;
    }
    out.push_back(std::move(line));
  }
  return out;
}

} // namespace pflow::exec
