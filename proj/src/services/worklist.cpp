#include "pflow/services/worklist.hpp"

#include <algorithm>

namespace pflow::services {

namespace {

using S = TaskState;

struct Edge {
  S from;
  S to;
};

constexpr Edge task_edges[] = {
    {S::added, S::assigned},    {S::added, S::taken},       {S::added, S::deleted},
    {S::added, S::invalid},     {S::added, S::timeout},     {S::assigned, S::finished},
    {S::assigned, S::returned}, {S::assigned, S::timeout},  {S::returned, S::assigned},
    {S::returned, S::taken},    {S::taken, S::finished},    {S::taken, S::returned},
    {S::taken, S::assigned},    {S::taken, S::timeout},     {S::timeout, S::assigned},
    {S::timeout, S::failed},    {S::invalid, S::failed},    {S::deleted, S::finished},
};

} // namespace

std::string_view to_string(TaskState s) {
  switch (s) {
    case S::added: return "added";
    case S::assigned: return "assigned";
    case S::taken: return "taken";
    case S::returned: return "returned";
    case S::timeout: return "timeout";
    case S::invalid: return "invalid";
    case S::deleted: return "deleted";
    case S::failed: return "failed";
    case S::finished: return "finished";
  }
  return "added";
}

std::optional<TaskState> task_state_from_string(std::string_view s) {
  for (auto st : all_task_states) {
    if (to_string(st) == s) return st;
  }
  return std::nullopt;
}

bool is_legal_task_transition(TaskState from, TaskState to) {
  return std::any_of(std::begin(task_edges), std::end(task_edges),
                     [&](const Edge& e) { return e.from == from && e.to == to; });
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::round_robin: return "round_robin";
    case Strategy::workload: return "workload";
    case Strategy::skill_based: return "skill_based";
  }
  return "round_robin";
}

std::optional<Strategy> strategy_from_string(std::string_view s) {
  for (auto st : {Strategy::round_robin, Strategy::workload, Strategy::skill_based}) {
    if (to_string(st) == s) return st;
  }
  return std::nullopt;
}

std::optional<UserAction> user_action_from_string(std::string_view s) {
  if (s == "take") return UserAction::take;
  if (s == "return") return UserAction::give_back;
  if (s == "complete") return UserAction::complete;
  return std::nullopt;
}

double skill_score(const SkillVector& required, const SkillVector& user) {
  double sum = 0;
  for (const auto& [skill, weight] : required) {
    auto it = user.find(skill);
    if (it != user.end()) sum += weight * it->second;
  }
  return sum;
}

std::optional<std::string> Assigner::choose(const std::string& role, const std::vector<std::string>& members,
                                            const std::set<std::string>& eligible,
                                            const std::map<std::string, int>& open, const SkillVector& required,
                                            const std::map<std::string, SkillVector>& skills) {
  std::vector<std::string> candidates;
  for (const auto& m : members) {
    if (eligible.count(m)) candidates.push_back(m);
  }
  for (const auto& e : eligible) {
    if (std::find(members.begin(), members.end(), e) == members.end()) candidates.push_back(e);
  }
  if (candidates.empty()) return std::nullopt;

  switch (strategy_) {
    case Strategy::round_robin: {
      auto& cursor = cursor_[role];
      const auto n = members.size();
      for (std::size_t i = 0; i < n; ++i) {
        const auto& m = members[(cursor + i) % n];
        if (eligible.count(m)) {
          cursor = (cursor + i + 1) % n;
          return m;
        }
      }
      return candidates.front();
    }
    case Strategy::workload: {
      auto count = [&](const std::string& u) {
        auto it = open.find(u);
        return it == open.end() ? 0 : it->second;
      };
      int best = count(candidates.front());
      for (const auto& c : candidates) best = std::min(best, count(c));
      std::vector<std::string> tied;
      for (const auto& c : candidates) {
        if (count(c) == best) tied.push_back(c);
      }
      std::uniform_int_distribution<std::size_t> pick(0, tied.size() - 1);
      return tied[pick(rng_)];
    }
    case Strategy::skill_based: {
      static const SkillVector none;
      std::optional<std::string> best;
      double best_score = 0;
      for (const auto& c : candidates) {
        auto it = skills.find(c);
        double s = skill_score(required, it == skills.end() ? none : it->second);
        if (!best || s > best_score) {
          best = c;
          best_score = s;
        }
      }
      return best;
    }
  }
  return std::nullopt;
}

WorklistConfig WorklistConfig::from_json(const json& j) {
  WorklistConfig c;
  if (j.contains("strategy")) {
    auto s = strategy_from_string(j.at("strategy").get<std::string>());
    if (!s) throw std::invalid_argument("unknown strategy " + j.at("strategy").dump());
    c.strategy = *s;
  }
  c.self_service = j.value("self_service", false);
  c.reassign_on_timeout = j.value("reassign_on_timeout", true);
  c.seed = j.value("seed", std::uint64_t{42});
  if (j.contains("roles")) c.roles = j.at("roles").get<std::map<std::string, std::vector<std::string>>>();
  if (j.contains("skills")) c.skills = j.at("skills").get<std::map<std::string, SkillVector>>();
  return c;
}

TaskRequest TaskRequest::from_arguments(const json& args) {
  TaskRequest r;
  if (!args.is_object()) throw std::invalid_argument("task arguments must be an object");
  r.role = args.value("role", "");
  if (r.role.empty()) throw std::invalid_argument("task needs a role");
  r.form = args.value("form", json::object());
  r.payload = args.value("payload", json::object());
  if (args.contains("excluded_users")) {
    const auto& ex = args.at("excluded_users");
    if (ex.is_array()) {
      for (const auto& u : ex) r.excluded_users.insert(u.get<std::string>());
    } else if (ex.is_string() && !ex.get<std::string>().empty()) {
      r.excluded_users.insert(ex.get<std::string>());
    }
  }
  if (auto it = args.find("bound_user"); it != args.end() && it->is_string() && !it->get<std::string>().empty()) {
    r.bound_user = it->get<std::string>();
  }
  if (args.contains("skills")) r.required = args.at("skills").get<SkillVector>();
  if (auto it = args.find("deadline"); it != args.end() && it->is_number()) {
    r.deadline = std::chrono::milliseconds(static_cast<long long>(it->get<double>() * 1000));
  }
  return r;
}

json Task::to_json() const {
  json hist = json::array();
  for (auto s : history) hist.push_back(to_string(s));
  return {{"id", id},
          {"state", to_string(state)},
          {"role", request.role},
          {"activity", request.activity},
          {"label", request.label},
          {"instance", request.instance},
          {"form", request.form},
          {"payload", request.payload},
          {"assigned_user", assigned_user ? json(*assigned_user) : json(nullptr)},
          {"excluded_users", request.excluded_users},
          {"bound_user", request.bound_user ? json(*request.bound_user) : json(nullptr)},
          {"worked_by", worked_by},
          {"history", hist}};
}

Worklist::Worklist(WorklistConfig config, Notifier notifier)
    : config_(std::move(config)), notifier_(std::move(notifier)), assigner_(config_.strategy, config_.seed) {}

void Worklist::transition(Task& t, TaskState to, Notices& out, json final_body, bool failure) {
  if (!is_legal_task_transition(t.state, to)) {
    throw std::logic_error("illegal task transition " + std::string(to_string(t.state)) + " -> " +
                           std::string(to_string(to)));
  }
  t.state = to;
  t.history.push_back(to);
  TaskNotice n;
  n.callback_url = t.request.callback_url;
  n.event = "worklist/task-" + std::string(to_string(to));
  n.final = is_terminal(to);
  n.failure = failure;
  if (n.final) {
    n.body = final_body.is_null() ? json{{"result", t.result}, {"worked_by", t.worked_by}} : final_body;
  } else {
    n.body = {{"task", t.id}, {"state", to_string(to)}, {"user", t.assigned_user ? json(*t.assigned_user) : json(nullptr)}};
  }
  out.push_back(std::move(n));
}

std::set<std::string> Worklist::eligible(const Task& t) const {
  std::set<std::string> out;
  if (t.request.bound_user) {
    if (!t.request.excluded_users.count(*t.request.bound_user)) out.insert(*t.request.bound_user);
    return out;
  }
  auto it = config_.roles.find(t.request.role);
  if (it == config_.roles.end()) return out;
  for (const auto& u : it->second) {
    if (!t.request.excluded_users.count(u)) out.insert(u);
  }
  return out;
}

std::map<std::string, int> Worklist::open_counts_locked() const {
  std::map<std::string, int> out;
  for (const auto& [role, users] : config_.roles) {
    for (const auto& u : users) out[u];
  }
  for (const auto& [id, t] : tasks_) {
    if ((t.state == S::assigned || t.state == S::taken) && t.assigned_user) ++out[*t.assigned_user];
  }
  return out;
}

std::map<std::string, int> Worklist::open_counts() const {
  std::lock_guard lock(mu_);
  return open_counts_locked();
}

bool Worklist::auto_assign(Task& t, Notices& out, const std::optional<std::string>& avoid) {
  auto pool = eligible(t);
  if (avoid && pool.size() > 1) pool.erase(*avoid);
  static const std::vector<std::string> no_members;
  auto it = config_.roles.find(t.request.role);
  const auto& members = it == config_.roles.end() ? no_members : it->second;
  auto user = assigner_.choose(t.request.role, members, pool, open_counts_locked(), t.request.required, config_.skills);
  if (!user) return false;
  t.assigned_user = *user;
  if (std::find(t.worked_by.begin(), t.worked_by.end(), *user) == t.worked_by.end()) t.worked_by.push_back(*user);
  transition(t, S::assigned, out);
  return true;
}

void Worklist::notify(const Notices& notices) {
  if (!notifier_) return;
  for (const auto& n : notices) notifier_(n);
}

std::string Worklist::create(TaskRequest request) {
  Notices out;
  std::unique_lock lock(mu_);
  auto id = "task-" + std::to_string(next_id_++);
  std::optional<std::string> original;
  for (const auto& [oid, old] : tasks_) {
    if (!is_terminal(old.state) && old.request.instance == request.instance && old.request.activity == request.activity) {
      original = oid;
    }
  }
  Task t;
  t.id = id;
  t.request = std::move(request);
  if (t.request.deadline) t.due = std::chrono::steady_clock::now() + *t.request.deadline;
  t.history.push_back(S::added);
  out.push_back({t.request.callback_url, "worklist/task-added", false, false,
                 {{"task", id}, {"state", "added"}, {"user", nullptr}}});
  if (original) {
    t.due.reset();
    transition(t, S::deleted, out);
    transition(t, S::finished, out, {{"result", nullptr}, {"worked_by", json::array()}, {"duplicate_of", *original}});
  } else if (eligible(t).empty()) {
    transition(t, S::invalid, out);
    transition(t, S::failed, out, {{"error", "no eligible user for role " + t.request.role}, {"worked_by", json::array()}}, true);
  } else if (!config_.self_service) {
    auto_assign(t, out);
  }
  tasks_[id] = std::move(t);
  std::lock_guard order(notify_mu_);
  lock.unlock();
  notify(out);
  return id;
}

ActionResult Worklist::act(const std::string& task_id, const std::string& user, UserAction action, json result) {
  Notices out;
  std::unique_lock lock(mu_);
  auto it = tasks_.find(task_id);
  if (it == tasks_.end()) return {false, S::failed, "unknown task"};
  auto& t = it->second;
  auto reject = [&](const std::string& why) { return ActionResult{false, t.state, why}; };
  switch (action) {
    case UserAction::take: {
      if (!config_.self_service) return reject("tasks on this worklist are assigned, not taken");
      if (t.state != S::added && t.state != S::returned) return reject("task is " + std::string(to_string(t.state)));
      if (t.request.excluded_users.count(user)) return reject("separation of duty: " + user + " is excluded");
      if (t.request.bound_user && *t.request.bound_user != user) {
        return reject("binding of duty: task is bound to " + *t.request.bound_user);
      }
      if (!eligible(t).count(user)) return reject(user + " does not hold role " + t.request.role);
      t.assigned_user = user;
      if (std::find(t.worked_by.begin(), t.worked_by.end(), user) == t.worked_by.end()) t.worked_by.push_back(user);
      transition(t, S::taken, out);
      break;
    }
    case UserAction::give_back: {
      if (t.state != S::assigned && t.state != S::taken) return reject("task is " + std::string(to_string(t.state)));
      if (t.assigned_user != user) return reject("task belongs to " + t.assigned_user.value_or("nobody"));
      transition(t, S::returned, out);
      auto previous = t.assigned_user;
      t.assigned_user.reset();
      if (!config_.self_service) auto_assign(t, out, previous);
      break;
    }
    case UserAction::complete: {
      if (t.state != S::assigned && t.state != S::taken) return reject("task is " + std::string(to_string(t.state)));
      if (t.request.excluded_users.count(user)) return reject("separation of duty: " + user + " is excluded");
      if (t.request.bound_user && *t.request.bound_user != user) {
        return reject("binding of duty: task is bound to " + *t.request.bound_user);
      }
      if (t.assigned_user != user) return reject("task belongs to " + t.assigned_user.value_or("nobody"));
      t.result = std::move(result);
      transition(t, S::finished, out);
      break;
    }
  }
  ActionResult r{true, t.state, ""};
  std::lock_guard order(notify_mu_);
  lock.unlock();
  notify(out);
  return r;
}

std::vector<std::string> Worklist::check_deadlines(std::chrono::steady_clock::time_point now) {
  Notices out;
  std::vector<std::string> expired;
  std::unique_lock lock(mu_);
  for (auto& [id, t] : tasks_) {
    if (!t.due || *t.due > now) continue;
    if (t.state != S::added && t.state != S::assigned && t.state != S::taken) continue;
    expired.push_back(id);
    auto previous = t.assigned_user;
    transition(t, S::timeout, out);
    t.assigned_user.reset();
    if (config_.reassign_on_timeout && auto_assign(t, out, previous)) {
      t.due = now + *t.request.deadline;
    } else {
      t.due.reset();
      transition(t, S::failed, out, {{"error", "deadline passed"}, {"worked_by", t.worked_by}}, true);
    }
  }
  std::lock_guard order(notify_mu_);
  lock.unlock();
  notify(out);
  return expired;
}

std::optional<Task> Worklist::find(const std::string& task_id) const {
  std::lock_guard lock(mu_);
  auto it = tasks_.find(task_id);
  if (it == tasks_.end()) return std::nullopt;
  return it->second;
}

std::vector<Task> Worklist::tasks() const {
  std::lock_guard lock(mu_);
  std::vector<Task> out;
  for (const auto& [id, t] : tasks_) out.push_back(t);
  return out;
}

std::vector<Task> Worklist::visible(const std::string& user) const {
  std::lock_guard lock(mu_);
  std::vector<Task> out;
  for (const auto& [id, t] : tasks_) {
    if (is_terminal(t.state)) continue;
    if (t.assigned_user) {
      if (*t.assigned_user == user && (t.state == S::assigned || t.state == S::taken)) out.push_back(t);
      continue;
    }
    if ((t.state == S::added || t.state == S::returned) && config_.self_service && eligible(t).count(user)) {
      out.push_back(t);
    }
  }
  return out;
}

} // namespace pflow::services
