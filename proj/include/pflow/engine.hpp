#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pflow/bus.hpp"
#include "pflow/delta.hpp"
#include "pflow/events.hpp"
#include "pflow/executor.hpp"
#include "pflow/gateway.hpp"
#include "pflow/http.hpp"
#include "pflow/lifecycle.hpp"
#include "pflow/model.hpp"
#include "pflow/persistence.hpp"
#include "pflow/protocol.hpp"

namespace pflow {

struct EngineConfig {
  /// Public base of the instance collection, e.g. http://host:9298/flow/engine/
  std::string base_url = "http://localhost:9298/flow/engine/";
  std::chrono::milliseconds call_timeout{30000};
  std::chrono::milliseconds drain_timeout{60000};
  std::chrono::milliseconds retry_delay{1000};
  int max_retries = 5;
  std::chrono::milliseconds persist_interval{100};
  std::shared_ptr<http::Client> client;             // default: one connection per request
  std::shared_ptr<PersistenceAdapter> store;        // optional
};

enum class ContextCategory { dataelements, endpoints, attributes };

std::string_view to_string(ContextCategory c);

/// Instance registry and lifecycle. Commands on one instance are
/// serialized; every change is published on the bus as an EngineEvent.
class Engine {
 public:
  explicit Engine(EngineConfig config = {});
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  Bus& bus() { return bus_; }
  protocol::CallbackRegistry& callbacks() { return callbacks_; }
  const EngineConfig& config() const { return config_; }
  void set_base_url(std::string url);
  void set_vote_collector(VoteCollector* collector) { votes_.store(collector); }

  InstanceId create();
  std::vector<InstanceId> ids() const;
  bool exists(InstanceId id) const;
  std::string instance_url(InstanceId id) const;

  json overview(InstanceId id) const;
  json list() const;
  InstanceState state(InstanceId id) const;
  std::string uuid(InstanceId id) const;
  ProcessModel model(InstanceId id) const;
  json context(InstanceId id, ContextCategory c) const;
  std::vector<Position> positions(InstanceId id) const;
  json spawned(InstanceId id) const;

  /// Control-interface transition. Same state is a no-op.
  /// Throws NotFound, IllegalTransition, VoteRejected, IllegalState.
  InstanceState set_state(InstanceId id, InstanceState target);
  /// Throws NotFound, IllegalState, ModelValidationError, VoteRejected.
  void load_model(InstanceId id, const ProcessModel& model);
  /// Applies a change to one context category and returns the delta that
  /// actually took effect. Throws NotFound, IllegalState, VoteRejected,
  /// std::invalid_argument.
  ContextDelta patch(InstanceId id, ContextCategory c, const ContextDelta& delta);
  /// Throws NotFound, IllegalState, std::invalid_argument.
  void set_positions(InstanceId id, std::vector<Position> positions);

  protocol::DeliveryStatus deliver_callback(InstanceId id, const std::string& callback_id,
                                            protocol::CallbackMessage message);

  bool wait_for_state(InstanceId id, InstanceState target, std::chrono::milliseconds timeout) const;

  json snapshot(InstanceId id) const;
  /// Loads every stored instance. Running or stopping instances come back
  /// stopped.
  std::size_t restore();
  void flush();

  void shutdown();

 private:
  struct Unit;
  friend struct Unit;

  std::shared_ptr<Unit> get(InstanceId id) const;
  std::string base() const;
  void publish(EngineEvent event);
  void start(const std::shared_ptr<Unit>& u);
  void stop(const std::shared_ptr<Unit>& u);
  void purge(const std::shared_ptr<Unit>& u);
  void runtime_stop(const std::shared_ptr<Unit>& u, exec::Generation gen, const std::string& reason);
  void arm_watchdog(const std::shared_ptr<Unit>& u, exec::Generation gen);
  void force_stop(const std::shared_ptr<Unit>& u, exec::Generation gen);
  void bury(std::shared_ptr<exec::Runner> runner);
  Verdict vote(const std::shared_ptr<Unit>& u, const std::string& topic, const std::string& event, json content);
  void writer_loop(std::stop_token stop);

  EngineConfig config_;
  Bus bus_;
  protocol::CallbackRegistry callbacks_;
  std::atomic<VoteCollector*> votes_{nullptr};
  mutable std::mutex base_mu_;

  mutable std::mutex mu_;
  std::map<InstanceId, std::shared_ptr<Unit>> units_;
  InstanceId next_id_ = 1;
  std::atomic<exec::Generation> next_gen_{1};

  std::mutex graveyard_mu_;
  std::vector<std::shared_ptr<exec::Runner>> graveyard_;

  std::mutex dirty_mu_;
  std::set<InstanceId> dirty_;
  Bus::SubscriptionId persist_sub_ = 0;
  std::jthread writer_;
  std::atomic<bool> shut_{false};
};

} // namespace pflow
