#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pflow/http.hpp"
#include "pflow/model.hpp"
#include "pflow/plan.hpp"
#include "pflow/protocol.hpp"
#include "pflow/script.hpp"
#include "pflow/votes.hpp"

namespace pflow::exec {

using json = nlohmann::json;
using Generation = std::uint64_t;

struct RunOutcome {
  enum class Kind { completed, stopped };
  Kind kind = Kind::completed;
  std::vector<Position> positions;  // where to resume, for `stopped`
  std::size_t enactments = 0;
  std::size_t peak_threads = 0;
  std::chrono::milliseconds duration{0};
};

struct ConditionResult {
  bool value = false;
  json dataelements = json::object();  // every dataelement the expression read
};

/// What a runner needs from the instance it executes. Calls carrying a
/// generation are ignored by the host once that runner was silenced.
class ExecutionHost {
 public:
  virtual ~ExecutionHost() = default;

  virtual void emit(Generation gen, const std::string& topic, const std::string& event, json content) = 0;
  /// Runs a vote and combines the answers; no subscribers gives [proceed].
  virtual Verdict vote(Generation gen, const std::string& topic, const std::string& event, json content) = 0;
  virtual void apply_values(Generation gen, const std::vector<Verdict::Assignment>& values) = 0;

  /// Copy of the context for prepare scripts and argument evaluation.
  virtual script::Environment scoped_environment() = 0;
  /// Runs a finalize/update/rescue script atomically on the live context
  /// and emits the resulting change events. Throws script::ScriptError.
  virtual std::optional<script::StatusValue> run_script(Generation gen, const std::string& source,
                                                        const json& result) = 0;
  /// Throws script::ScriptError.
  virtual ConditionResult evaluate(const std::string& condition) = 0;

  virtual int next_enactment(const std::string& activity) = 0;
  virtual protocol::InvocationContext invocation(const Node& node, const std::string& callback_id) = 0;
  virtual protocol::CallbackRegistry& callbacks() = 0;
  virtual http::Client& client() = 0;

  virtual void positions_changed(Generation gen, const std::vector<Position>& active, json transition) = 0;
  virtual void spawned(Generation gen, const std::string& url) = 0;
  /// The execution asks for running -> stopping (rescue verdict, vote).
  virtual void request_stop(Generation gen, const std::string& reason) = 0;
  /// Last thread ended.
  virtual void finished(Generation gen, RunOutcome outcome) = 0;
};

struct RunnerConfig {
  std::chrono::milliseconds call_timeout{30000};
  std::chrono::milliseconds retry_delay{1000};
  int max_retries = 5;
};

/// One in-flight enactment, for forced drains.
struct InFlight {
  std::string activity;
  std::string label;
  std::string enactment;
};

/// Executes a plan on threads: one for the main program and one per started
/// parallel branch. Resuming from positions runs the plan in search mode,
/// skipping work until every target position is reached.
class Runner {
 public:
  Runner(std::shared_ptr<ExecutionHost> host, std::shared_ptr<const Plan> plan, RunnerConfig config, Generation gen);
  ~Runner();
  Runner(const Runner&) = delete;
  Runner& operator=(const Runner&) = delete;

  void start(std::vector<Position> from = {});
  /// Soft stop: threads halt at their next checkpoint, asynchronous waits
  /// give up and keep their callback open.
  void request_stop();
  bool stop_requested() const { return stop_.stop_requested(); }
  bool done() const { return done_.load(); }
  Generation generation() const { return gen_; }
  std::vector<InFlight> in_flight() const;
  /// Joins all threads. Must not be called from a runner thread.
  void join();

 private:
  struct Join;
  struct Thread;

  void spawn(Thread t);
  void run(Thread t);
  void thread_done(const Thread& t, bool completed);

  enum class Step { next, halt };
  Step enact(Thread& t, const Node& node, std::optional<std::string> passthrough);
  Step manipulate(Thread& t, const Node& node);
  std::optional<bool> condition(Thread& t, const Node& node);

  void set_position(Thread& t, std::optional<Position> pos);
  void record_halt(const Position& p);
  void emit(const std::string& topic, const std::string& event, json content);
  bool halting() const { return stop_.stop_requested() || terminated_.load(); }
  bool sleep_interruptible(std::chrono::milliseconds d);

  std::shared_ptr<ExecutionHost> host_;
  std::shared_ptr<const Plan> plan_;
  RunnerConfig config_;
  Generation gen_;
  std::stop_source stop_;
  std::atomic<bool> terminated_{false};
  std::atomic<bool> done_{false};
  std::chrono::steady_clock::time_point started_;

  mutable std::mutex mu_;
  std::condition_variable_any sleep_cv_;
  std::vector<std::jthread> threads_;
  std::size_t live_ = 0;
  std::size_t peak_ = 0;
  std::size_t next_thread_id_ = 0;
  std::map<std::size_t, Position> active_;
  std::map<std::size_t, InFlight> in_flight_;
  std::vector<Position> halted_;
  std::vector<std::string> completed_ends_;
  std::atomic<std::size_t> enactments_{0};
};

/// DataScript expressions ("!expr") inside argument values are evaluated;
/// everything else is passed through.
json evaluate_arguments(const json& arguments, script::Environment& env);

} // namespace pflow::exec
