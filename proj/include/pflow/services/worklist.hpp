#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace pflow::services {

using json = nlohmann::json;

enum class TaskState { added, assigned, taken, returned, timeout, invalid, deleted, failed, finished };

inline constexpr std::array<TaskState, 9> all_task_states{
    TaskState::added,   TaskState::assigned, TaskState::taken,  TaskState::returned, TaskState::timeout,
    TaskState::invalid, TaskState::deleted,  TaskState::failed, TaskState::finished};

std::string_view to_string(TaskState s);
std::optional<TaskState> task_state_from_string(std::string_view s);
bool is_legal_task_transition(TaskState from, TaskState to);
inline bool is_terminal(TaskState s) { return s == TaskState::failed || s == TaskState::finished; }

enum class Strategy { round_robin, workload, skill_based };

std::string_view to_string(Strategy s);
std::optional<Strategy> strategy_from_string(std::string_view s);

using SkillVector = std::map<std::string, double>;

/// Dot product over the skills the task requires.
double skill_score(const SkillVector& required, const SkillVector& user);

/// Picks the user for a task. Deterministic for a given seed and call order.
class Assigner {
 public:
  Assigner(Strategy strategy, std::uint64_t seed) : strategy_(strategy), rng_(seed) {}

  /// `members` is the role in its configured order, `eligible` the subset
  /// allowed for this task, `open` the current open-task count per user.
  std::optional<std::string> choose(const std::string& role, const std::vector<std::string>& members,
                                    const std::set<std::string>& eligible, const std::map<std::string, int>& open,
                                    const SkillVector& required, const std::map<std::string, SkillVector>& skills);

 private:
  Strategy strategy_;
  std::mt19937_64 rng_;
  std::map<std::string, std::size_t> cursor_;
};

struct WorklistConfig {
  Strategy strategy = Strategy::round_robin;
  /// Users take tasks themselves instead of being assigned.
  bool self_service = false;
  std::map<std::string, std::vector<std::string>> roles;
  std::map<std::string, SkillVector> skills;
  std::uint64_t seed = 42;
  bool reassign_on_timeout = true;

  static WorklistConfig from_json(const json& j);
};

struct TaskRequest {
  std::string callback_url;
  std::string instance;  // instance uuid, or url
  std::string activity;
  std::string label;
  std::string role;
  json form = json::object();
  json payload = json::object();
  std::set<std::string> excluded_users;  // separation of duty
  std::optional<std::string> bound_user;  // binding of duty
  SkillVector required;
  std::optional<std::chrono::milliseconds> deadline;

  /// Reads the invocation arguments: role, form, payload, excluded_users,
  /// bound_user, skills, deadline (seconds).
  static TaskRequest from_arguments(const json& args);
};

struct Task {
  std::string id;
  TaskRequest request;
  TaskState state = TaskState::added;
  std::optional<std::string> assigned_user;
  std::vector<std::string> worked_by;
  std::optional<std::chrono::steady_clock::time_point> due;
  json result;
  std::vector<TaskState> history;

  json to_json() const;
};

/// One state change to report to the engine. `final` ones close the callback.
struct TaskNotice {
  std::string callback_url;
  std::string event;  // worklist/task-<state>
  bool final = false;
  bool failure = false;
  json body;
};

enum class UserAction { take, give_back, complete };

std::optional<UserAction> user_action_from_string(std::string_view s);

struct ActionResult {
  bool ok = false;
  TaskState state = TaskState::added;
  std::string reason;
};

/// Task store and lifecycle. Every transition produces a TaskNotice, handed
/// to the notifier outside the lock in transition order.
class Worklist {
 public:
  using Notifier = std::function<void(const TaskNotice&)>;

  explicit Worklist(WorklistConfig config, Notifier notifier = {});

  std::string create(TaskRequest request);
  ActionResult act(const std::string& task_id, const std::string& user, UserAction action, json result = nullptr);
  /// Moves overdue tasks to timeout, then reassigns or fails them.
  std::vector<std::string> check_deadlines(std::chrono::steady_clock::time_point now);

  std::optional<Task> find(const std::string& task_id) const;
  std::vector<Task> tasks() const;
  /// Tasks a user may see: assigned to them, or open for their roles.
  std::vector<Task> visible(const std::string& user) const;
  std::map<std::string, int> open_counts() const;
  const WorklistConfig& config() const { return config_; }

 private:
  using Notices = std::vector<TaskNotice>;

  void transition(Task& t, TaskState to, Notices& out, json final_body = nullptr, bool failure = false);
  std::set<std::string> eligible(const Task& t) const;
  bool auto_assign(Task& t, Notices& out, const std::optional<std::string>& avoid = std::nullopt);
  std::map<std::string, int> open_counts_locked() const;
  void notify(const Notices& notices);

  WorklistConfig config_;
  Notifier notifier_;
  Assigner assigner_;
  mutable std::mutex mu_;
  std::mutex notify_mu_;
  std::map<std::string, Task> tasks_;
  std::uint64_t next_id_ = 1;
};

} // namespace pflow::services
