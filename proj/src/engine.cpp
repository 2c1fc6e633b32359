#include "pflow/engine.hpp"

#include <condition_variable>

#include <spdlog/spdlog.h>

#include "pflow/util.hpp"

namespace pflow {

std::string_view to_string(ContextCategory c) {
  switch (c) {
    case ContextCategory::dataelements: return "dataelements";
    case ContextCategory::endpoints: return "endpoints";
    case ContextCategory::attributes: return "attributes";
  }
  return "dataelements";
}

namespace {

std::string value_target(ContextCategory c) {
  switch (c) {
    case ContextCategory::dataelements: return "dataelement";
    case ContextCategory::endpoints: return "endpoint";
    case ContextCategory::attributes: return "attribute";
  }
  return "dataelement";
}

json as_string_value(const json& v) { return v.is_string() ? v : json(v.dump()); }

json split_positions(const std::vector<Position>& ps) {
  json at = json::array(), after = json::array();
  for (const auto& p : ps) (p.mode == Position::Mode::at ? at : after).push_back(p.node_id);
  return {{"at", at}, {"after", after}};
}

Verdict proceed() { return combine_votes({}); }

} // namespace

struct Engine::Unit : exec::ExecutionHost, std::enable_shared_from_this<Engine::Unit> {
  Unit(Engine& e, InstanceId i, std::string u) : engine(e), id(i), uuid(std::move(u)) {}

  Engine& engine;
  const InstanceId id;
  const std::string uuid;

  std::mutex command_mu;
  mutable std::mutex mu;
  mutable std::condition_variable_any state_cv;
  InstanceState state = InstanceState::ready;
  ProcessModel model;
  bool loaded = false;
  json dataelements = json::object();
  json endpoints = json::object();
  json attributes = json::object();
  std::vector<Position> positions;
  script::StatusValue status;
  std::map<std::string, int> counters;
  std::vector<std::string> spawned_urls;
  std::shared_ptr<exec::Runner> runner;
  exec::Generation active_gen = 0;
  std::jthread watchdog;

  void emit_locked(const std::string& topic, const std::string& event, json content) {
    engine.publish(make_event(topic, event, id, uuid, std::move(content)));
  }

  void set_state_locked(InstanceState to, TransitionCause cause, const json& extra = json::object()) {
    json c{{"state", to_string(to)}, {"from", to_string(state)}, {"cause", to_string(cause)}};
    for (const auto& [k, v] : extra.items()) c[k] = v;
    state = to;
    emit_locked("state", "change", std::move(c));
    state_cv.notify_all();
  }

  json& category(ContextCategory c) {
    switch (c) {
      case ContextCategory::dataelements: return dataelements;
      case ContextCategory::endpoints: return endpoints;
      case ContextCategory::attributes: return attributes;
    }
    return dataelements;
  }

  void commit_locked(ContextCategory c, const json& after) {
    auto& current = category(c);
    auto delta = diff_objects(current, after);
    if (delta.empty()) return;
    current = after;
    emit_locked(std::string(to_string(c)), "change", delta.to_json());
  }

  void apply_assignments_locked(const std::vector<Verdict::Assignment>& values) {
    json d = dataelements, e = endpoints, a = attributes;
    for (const auto& v : values) {
      if (v.target == "dataelement") d[v.name] = v.value;
      else if (v.target == "endpoint" && v.value.is_string()) e[v.name] = v.value;
      else if (v.target == "attribute") a[v.name] = as_string_value(v.value);
    }
    commit_locked(ContextCategory::dataelements, d);
    commit_locked(ContextCategory::endpoints, e);
    commit_locked(ContextCategory::attributes, a);
  }

  void emit(exec::Generation gen, const std::string& topic, const std::string& event, json content) override {
    std::lock_guard lock(mu);
    if (gen != active_gen) return;
    emit_locked(topic, event, std::move(content));
  }

  Verdict vote(exec::Generation gen, const std::string& topic, const std::string& event, json content) override {
    {
      std::lock_guard lock(mu);
      if (gen != active_gen) return proceed();
    }
    return engine.vote(shared_from_this(), topic, event, std::move(content));
  }

  void apply_values(exec::Generation gen, const std::vector<Verdict::Assignment>& values) override {
    std::lock_guard lock(mu);
    if (gen != active_gen) return;
    apply_assignments_locked(values);
  }

  script::Environment scoped_environment() override {
    std::lock_guard lock(mu);
    script::Environment env;
    env.data = dataelements;
    env.endpoints = endpoints;
    return env;
  }

  std::optional<script::StatusValue> run_script(exec::Generation gen, const std::string& source,
                                                const json& result) override {
    std::lock_guard lock(mu);
    if (gen != active_gen) return std::nullopt;
    script::Environment env;
    env.data = dataelements;
    env.endpoints = endpoints;
    env.result = result;
    script::run_atomically(source, env);
    commit_locked(ContextCategory::dataelements, env.data);
    commit_locked(ContextCategory::endpoints, env.endpoints);
    if (env.status) {
      status = *env.status;
      emit_locked("status", "change", {{"code", status.code}, {"text", status.text}});
    }
    return env.status;
  }

  exec::ConditionResult evaluate(const std::string& condition) override {
    std::lock_guard lock(mu);
    script::Environment env;
    env.data = dataelements;
    env.endpoints = endpoints;
    exec::ConditionResult r;
    r.value = script::evaluate_condition(condition, env);
    for (const auto& name : env.data_reads) {
      if (dataelements.contains(name)) r.dataelements[name] = dataelements.at(name);
    }
    return r;
  }

  int next_enactment(const std::string& activity) override {
    std::lock_guard lock(mu);
    return ++counters[activity];
  }

  protocol::InvocationContext invocation(const Node& node, const std::string& callback_id) override {
    protocol::InvocationContext ctx;
    ctx.base = engine.base();
    ctx.instance = id;
    ctx.instance_url = engine.instance_url(id);
    ctx.instance_uuid = uuid;
    ctx.activity = node.id;
    ctx.label = node.label;
    ctx.callback_id = callback_id;
    return ctx;
  }

  protocol::CallbackRegistry& callbacks() override { return engine.callbacks_; }
  http::Client& client() override { return *engine.config_.client; }

  void positions_changed(exec::Generation gen, const std::vector<Position>& active, json transition) override {
    std::lock_guard lock(mu);
    if (gen != active_gen) return;
    positions = active;
    json c = split_positions(active);
    if (!transition.is_null()) c["transition"] = std::move(transition);
    emit_locked("position", "change", std::move(c));
  }

  void spawned(exec::Generation gen, const std::string& url) override {
    std::lock_guard lock(mu);
    if (gen != active_gen) return;
    spawned_urls.push_back(url);
  }

  void request_stop(exec::Generation gen, const std::string& reason) override {
    engine.runtime_stop(shared_from_this(), gen, reason);
  }

  void finished(exec::Generation gen, exec::RunOutcome outcome) override {
    std::lock_guard lock(mu);
    if (gen != active_gen) return;
    active_gen = 0;
    json util{{"enactments", outcome.enactments},
              {"threads", outcome.peak_threads},
              {"duration_ms", outcome.duration.count()}};
    if (state == InstanceState::running) {
      positions.clear();
      engine.callbacks_.remove_instance(id);
      emit_locked("status", "resource_utilization", util);
      set_state_locked(InstanceState::finished, TransitionCause::completion);
    } else if (state == InstanceState::stopping) {
      if (outcome.kind == exec::RunOutcome::Kind::stopped) positions = outcome.positions;
      else positions = {Position{model.root.id, Position::Mode::after, std::nullopt}};
      engine.callbacks_.suspend(id);
      json pc = split_positions(positions);
      pc["stored"] = positions_to_json(positions);
      emit_locked("position", "change", pc);
      emit_locked("status", "resource_utilization", util);
      set_state_locked(InstanceState::stopped, TransitionCause::completion);
    }
  }

  json snapshot_locked() const {
    json counters_json = json::object();
    for (const auto& [k, v] : counters) counters_json[k] = v;
    json cbs = json::array();
    for (const auto& r : engine.callbacks_.records(id)) cbs.push_back(r.to_json());
    return {{"id", id},
            {"uuid", uuid},
            {"state", to_string(state)},
            {"loaded", loaded},
            {"model", model_to_json(model)},
            {"dataelements", dataelements},
            {"endpoints", endpoints},
            {"attributes", attributes},
            {"positions", positions_to_json(positions)},
            {"status", {{"code", status.code}, {"text", status.text}}},
            {"enactment_counters", counters_json},
            {"spawned", spawned_urls},
            {"callbacks", cbs}};
  }
};

Engine::Engine(EngineConfig config) : config_(std::move(config)) {
  if (!config_.client) config_.client = std::make_shared<http::HttplibClient>();
  if (config_.store) {
    persist_sub_ = bus_.subscribe({MessageKind::event, std::nullopt, std::nullopt}, [this](const BusMessage& m) {
      std::lock_guard lock(dirty_mu_);
      dirty_.insert(m.event.instance);
    });
    writer_ = std::jthread([this](std::stop_token st) { writer_loop(st); });
  }
}

Engine::~Engine() {
  shutdown();
  std::lock_guard lock(mu_);
  units_.clear();
}

void Engine::set_base_url(std::string url) {
  if (url.empty() || url.back() != '/') url += '/';
  std::lock_guard lock(base_mu_);
  config_.base_url = std::move(url);
}

std::string Engine::base() const {
  std::lock_guard lock(base_mu_);
  return config_.base_url;
}

std::string Engine::instance_url(InstanceId id) const { return http::join(base(), std::to_string(id)); }

void Engine::publish(EngineEvent event) {
  BusMessage m;
  m.event = std::move(event);
  try {
    bus_.publish(m);
  } catch (const BusClosed&) {
  }
}

std::shared_ptr<Engine::Unit> Engine::get(InstanceId id) const {
  std::lock_guard lock(mu_);
  auto it = units_.find(id);
  if (it == units_.end()) throw NotFound("instance " + std::to_string(id) + " not found");
  return it->second;
}

InstanceId Engine::create() {
  if (shut_) throw IllegalState("engine is shutting down");
  std::shared_ptr<Unit> u;
  {
    std::lock_guard lock(mu_);
    auto id = next_id_++;
    u = std::make_shared<Unit>(*this, id, make_uuid());
    units_[id] = u;
  }
  std::lock_guard lock(u->mu);
  u->emit_locked("state", "change", {{"state", to_string(InstanceState::ready)}});
  return u->id;
}

std::vector<InstanceId> Engine::ids() const {
  std::lock_guard lock(mu_);
  std::vector<InstanceId> out;
  for (const auto& [id, u] : units_) out.push_back(id);
  return out;
}

bool Engine::exists(InstanceId id) const {
  std::lock_guard lock(mu_);
  return units_.count(id) > 0;
}

json Engine::overview(InstanceId id) const {
  auto u = get(id);
  std::lock_guard lock(u->mu);
  json counters = json::object();
  for (const auto& [k, v] : u->counters) counters[k] = v;
  return {{"id", u->id},
          {"uuid", u->uuid},
          {"url", instance_url(u->id)},
          {"state", to_string(u->state)},
          {"positions", positions_to_json(u->positions)},
          {"dataelements", u->dataelements},
          {"endpoints", u->endpoints},
          {"attributes", u->attributes},
          {"status", {{"code", u->status.code}, {"text", u->status.text}}},
          {"spawned", u->spawned_urls},
          {"enactments", counters},
          {"callbacks", callbacks_.records(u->id).size()}};
}

json Engine::list() const {
  std::vector<std::shared_ptr<Unit>> units;
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, u] : units_) units.push_back(u);
  }
  json out = json::array();
  for (const auto& u : units) {
    std::lock_guard lock(u->mu);
    out.push_back({{"id", u->id}, {"uuid", u->uuid}, {"state", to_string(u->state)}, {"url", instance_url(u->id)}});
  }
  return out;
}

InstanceState Engine::state(InstanceId id) const {
  auto u = get(id);
  std::lock_guard lock(u->mu);
  return u->state;
}

std::string Engine::uuid(InstanceId id) const { return get(id)->uuid; }

ProcessModel Engine::model(InstanceId id) const {
  auto u = get(id);
  std::lock_guard lock(u->mu);
  return u->model;
}

json Engine::context(InstanceId id, ContextCategory c) const {
  auto u = get(id);
  std::lock_guard lock(u->mu);
  return u->category(c);
}

std::vector<Position> Engine::positions(InstanceId id) const {
  auto u = get(id);
  std::lock_guard lock(u->mu);
  return u->positions;
}

json Engine::spawned(InstanceId id) const {
  auto u = get(id);
  std::lock_guard lock(u->mu);
  return u->spawned_urls;
}

Verdict Engine::vote(const std::shared_ptr<Unit>& u, const std::string& topic, const std::string& event, json content) {
  auto* collector = votes_.load();
  if (!collector || shut_) return proceed();
  return combine_votes(collector->collect(make_event(topic, event, u->id, u->uuid, std::move(content))));
}

InstanceState Engine::set_state(InstanceId id, InstanceState target) {
  auto u = get(id);
  std::lock_guard command(u->command_mu);
  InstanceState from;
  {
    std::lock_guard lock(u->mu);
    from = u->state;
  }
  if (from == target) return from;
  if (!is_legal_transition(from, target, TransitionCause::command)) throw IllegalTransition(from, target);
  switch (target) {
    case InstanceState::running:
      start(u);
      break;
    case InstanceState::stopping:
      stop(u);
      break;
    case InstanceState::abandoned: {
      std::lock_guard lock(u->mu);
      if (!is_legal_transition(u->state, target, TransitionCause::command)) throw IllegalTransition(u->state, target);
      callbacks_.remove_instance(u->id);
      u->set_state_locked(InstanceState::abandoned, TransitionCause::command);
      break;
    }
    case InstanceState::purged:
      purge(u);
      break;
    default:
      throw IllegalTransition(from, target);
  }
  return target;
}

void Engine::start(const std::shared_ptr<Unit>& u) {
  InstanceState from;
  {
    std::lock_guard lock(u->mu);
    from = u->state;
  }
  auto v = vote(u, "state", "change", {{"state", "running"}, {"from", to_string(from)}});
  if (v.blocked || v.has(Verdict::Action::stop_instance) || v.has(Verdict::Action::skip_activity)) {
    throw VoteRejected("start vetoed by a subscriber");
  }
  std::shared_ptr<exec::Runner> old, fresh;
  std::vector<Position> resume;
  {
    std::lock_guard lock(u->mu);
    if (u->state != InstanceState::ready && u->state != InstanceState::stopped) {
      throw IllegalTransition(u->state, InstanceState::running);
    }
    if (v.has(Verdict::Action::set_values)) u->apply_assignments_locked(v.values);
    std::shared_ptr<const exec::Plan> plan;
    try {
      plan = exec::Plan::compile(u->model, to_string_map(u->endpoints));
    } catch (const ModelValidationError& e) {
      std::string msg = "model is not executable";
      for (const auto& err : e.errors()) msg += "; " + (err.node_id.empty() ? "" : err.node_id + ": ") + err.message;
      throw IllegalState(msg);
    }
    auto gen = next_gen_++;
    u->active_gen = gen;
    old = std::move(u->runner);
    exec::RunnerConfig rc{config_.call_timeout, config_.retry_delay, config_.max_retries};
    fresh = std::make_shared<exec::Runner>(u, plan, rc, gen);
    u->runner = fresh;
    resume = u->positions;
    callbacks_.resume(u->id);
    u->set_state_locked(InstanceState::running, TransitionCause::command);
  }
  if (old) {
    if (old->done()) old->join();
    else bury(old);
  }
  fresh->start(std::move(resume));
}

void Engine::stop(const std::shared_ptr<Unit>& u) {
  auto v = vote(u, "state", "change", {{"state", "stopping"}, {"from", "running"}});
  if (v.blocked || v.has(Verdict::Action::start_instance) || v.has(Verdict::Action::skip_activity)) {
    throw VoteRejected("stop vetoed by a subscriber");
  }
  std::shared_ptr<exec::Runner> runner;
  exec::Generation gen;
  {
    std::lock_guard lock(u->mu);
    if (u->state != InstanceState::running) throw IllegalTransition(u->state, InstanceState::stopping);
    if (v.has(Verdict::Action::set_values)) u->apply_assignments_locked(v.values);
    u->set_state_locked(InstanceState::stopping, TransitionCause::command);
    runner = u->runner;
    gen = u->active_gen;
  }
  if (runner) runner->request_stop();
  arm_watchdog(u, gen);
}

void Engine::runtime_stop(const std::shared_ptr<Unit>& u, exec::Generation gen, const std::string& reason) {
  std::shared_ptr<exec::Runner> runner;
  {
    std::lock_guard lock(u->mu);
    if (gen != u->active_gen || u->state != InstanceState::running) return;
    u->set_state_locked(InstanceState::stopping, TransitionCause::error, {{"reason", reason}});
    runner = u->runner;
  }
  if (runner) runner->request_stop();
  arm_watchdog(u, gen);
}

void Engine::arm_watchdog(const std::shared_ptr<Unit>& u, exec::Generation gen) {
  std::weak_ptr<Unit> weak = u;
  auto timeout = config_.drain_timeout;
  std::jthread fresh([this, weak, gen, timeout](std::stop_token st) {
    auto unit = weak.lock();
    if (!unit) return;
    bool drained;
    {
      std::unique_lock lock(unit->mu);
      drained = unit->state_cv.wait_for(lock, st, timeout, [&] {
        return unit->state != InstanceState::stopping || unit->active_gen != gen;
      });
    }
    if (!drained && !st.stop_requested()) force_stop(unit, gen);
  });
  std::jthread old;
  {
    std::lock_guard lock(u->mu);
    old = std::move(u->watchdog);
    u->watchdog = std::move(fresh);
  }
}

void Engine::force_stop(const std::shared_ptr<Unit>& u, exec::Generation gen) {
  std::shared_ptr<exec::Runner> runner;
  {
    std::lock_guard lock(u->mu);
    if (u->state != InstanceState::stopping || u->active_gen != gen) return;
    runner = u->runner;
  }
  auto flying = runner ? runner->in_flight() : std::vector<exec::InFlight>{};
  {
    std::lock_guard lock(u->mu);
    if (u->state != InstanceState::stopping || u->active_gen != gen) return;
    u->active_gen = 0;
    for (const auto& f : flying) {
      json base{{"activity", f.activity}, {"label", f.label}};
      if (!f.enactment.empty()) base["enactment"] = f.enactment;
      json failed = base;
      failed["error"] = "drain timeout";
      u->emit_locked("activity", "failed", failed);
      json st = base;
      st["verdict"] = "stop";
      u->emit_locked("activity", "status", st);
      u->emit_locked("activity", "done", base);
      bool placed = false;
      for (auto& p : u->positions) {
        if (p.node_id == f.activity) {
          p.mode = Position::Mode::at;
          placed = true;
        }
      }
      if (!placed) u->positions.push_back({f.activity, Position::Mode::at, std::nullopt});
    }
    callbacks_.suspend(u->id);
    u->set_state_locked(InstanceState::stopped, TransitionCause::error, {{"reason", "drain timeout"}});
    u->runner.reset();
  }
  spdlog::warn("instance {}: drain timeout, forced stop with {} activities in flight", u->id, flying.size());
  if (runner) {
    runner->request_stop();
    bury(runner);
  }
}

void Engine::bury(std::shared_ptr<exec::Runner> runner) {
  std::lock_guard lock(graveyard_mu_);
  std::erase_if(graveyard_, [](const auto& r) {
    if (!r->done()) return false;
    r->join();
    return true;
  });
  graveyard_.push_back(std::move(runner));
}

void Engine::purge(const std::shared_ptr<Unit>& u) {
  std::shared_ptr<exec::Runner> runner;
  std::jthread watchdog;
  {
    std::lock_guard lock(u->mu);
    if (!is_legal_transition(u->state, InstanceState::purged, TransitionCause::command)) {
      throw IllegalTransition(u->state, InstanceState::purged);
    }
    u->active_gen = 0;
    u->set_state_locked(InstanceState::purged, TransitionCause::command);
    runner = std::move(u->runner);
    watchdog = std::move(u->watchdog);
  }
  callbacks_.remove_instance(u->id);
  if (runner) {
    runner->request_stop();
    bury(runner);
  }
  {
    std::lock_guard lock(mu_);
    units_.erase(u->id);
  }
  if (config_.store) {
    {
      std::lock_guard lock(dirty_mu_);
      dirty_.erase(u->id);
    }
    config_.store->remove(u->id);
  }
}

void Engine::load_model(InstanceId id, const ProcessModel& model) {
  auto u = get(id);
  std::lock_guard command(u->command_mu);
  ChangeSet changes;
  {
    std::lock_guard lock(u->mu);
    if (!is_editable(u->state)) {
      throw IllegalState("model can only be replaced while ready or stopped, instance is " +
                         std::string(to_string(u->state)));
    }
    auto missing = missing_endpoints(model, to_string_map(u->endpoints));
    if (!missing.empty()) throw ModelValidationError(std::move(missing));
    changes = diff_models(u->model, model);
  }
  auto v = vote(u, "description", "change", changes.to_json());
  if (v.blocked || v.has(Verdict::Action::skip_activity) || v.has(Verdict::Action::stop_instance)) {
    throw VoteRejected("model change vetoed by a subscriber");
  }
  std::lock_guard lock(u->mu);
  if (!is_editable(u->state)) throw IllegalState("instance left an editable state");
  const bool repair = u->loaded;
  json d = u->dataelements, e = u->endpoints, a = u->attributes;
  if (!repair) {
    for (const auto& [k, val] : model.endpoints) e[k] = val;
    for (const auto& [k, val] : model.dataelements.items()) d[k] = val;
    for (const auto& [k, val] : model.attributes) a[k] = val;
  } else {
    for (const auto& [k, val] : model.endpoints) {
      if (!e.contains(k)) e[k] = val;
    }
    for (const auto& [k, val] : model.dataelements.items()) {
      if (!d.contains(k)) d[k] = val;
    }
    a["singleton"] = "true";
  }
  u->model = model;
  u->loaded = true;
  json dc = changes.to_json();
  dc["model"] = model_to_json(model);
  dc["singleton"] = repair;
  u->emit_locked("description", "change", std::move(dc));
  u->commit_locked(ContextCategory::endpoints, e);
  u->commit_locked(ContextCategory::dataelements, d);
  u->commit_locked(ContextCategory::attributes, a);
  std::vector<Position> kept;
  for (const auto& p : u->positions) {
    if (check_positions(model, {p}).empty()) kept.push_back(p);
  }
  u->positions = std::move(kept);
}

ContextDelta Engine::patch(InstanceId id, ContextCategory c, const ContextDelta& delta) {
  if (c != ContextCategory::dataelements) {
    for (const auto& [k, val] : delta.added.items()) {
      if (!val.is_string()) throw std::invalid_argument(std::string(to_string(c)) + " values must be strings: " + k);
    }
    for (const auto& [k, val] : delta.changed.items()) {
      const auto& to = val.is_object() && val.contains("to") ? val.at("to") : val;
      if (!to.is_string()) throw std::invalid_argument(std::string(to_string(c)) + " values must be strings: " + k);
    }
  }
  auto u = get(id);
  std::lock_guard command(u->command_mu);
  {
    std::lock_guard lock(u->mu);
    if (!is_editable(u->state)) {
      throw IllegalState(std::string(to_string(c)) + " can only be changed while ready or stopped, instance is " +
                         std::string(to_string(u->state)));
    }
  }
  auto v = vote(u, std::string(to_string(c)), "change", delta.to_json());
  if (v.blocked || v.has(Verdict::Action::skip_activity) || v.has(Verdict::Action::stop_instance)) {
    throw VoteRejected(std::string(to_string(c)) + " change vetoed by a subscriber");
  }
  std::lock_guard lock(u->mu);
  if (!is_editable(u->state)) throw IllegalState("instance left an editable state");
  json before = u->category(c);
  json after = before;
  apply_delta(after, delta);
  const auto target = value_target(c);
  for (const auto& val : v.values) {
    if (val.target == target) after[val.name] = c == ContextCategory::dataelements ? val.value : as_string_value(val.value);
  }
  auto effective = diff_objects(before, after);
  u->commit_locked(c, after);
  return effective;
}

void Engine::set_positions(InstanceId id, std::vector<Position> positions) {
  auto u = get(id);
  std::lock_guard command(u->command_mu);
  std::lock_guard lock(u->mu);
  if (!is_editable(u->state)) {
    throw IllegalState("positions can only be changed while ready or stopped, instance is " +
                       std::string(to_string(u->state)));
  }
  auto errors = check_positions(u->model, positions);
  if (!errors.empty()) {
    std::string msg;
    for (const auto& e : errors) msg += (msg.empty() ? "" : "; ") + e;
    throw std::invalid_argument(msg);
  }
  u->positions = std::move(positions);
  json c = split_positions(u->positions);
  c["stored"] = positions_to_json(u->positions);
  u->emit_locked("position", "change", std::move(c));
}

protocol::DeliveryStatus Engine::deliver_callback(InstanceId id, const std::string& callback_id,
                                                  protocol::CallbackMessage message) {
  return callbacks_.deliver(id, callback_id, std::move(message));
}

bool Engine::wait_for_state(InstanceId id, InstanceState target, std::chrono::milliseconds timeout) const {
  std::shared_ptr<Unit> u;
  try {
    u = get(id);
  } catch (const NotFound&) {
    return target == InstanceState::purged;
  }
  std::unique_lock lock(u->mu);
  return u->state_cv.wait_for(lock, timeout, [&] { return u->state == target; });
}

json Engine::snapshot(InstanceId id) const {
  auto u = get(id);
  std::lock_guard lock(u->mu);
  return u->snapshot_locked();
}

std::size_t Engine::restore() {
  if (!config_.store) return 0;
  std::size_t n = 0;
  for (const auto& doc : config_.store->load_all()) {
    try {
      auto id = doc.at("id").get<InstanceId>();
      auto u = std::make_shared<Unit>(*this, id, doc.at("uuid").get<std::string>());
      auto st = instance_state_from_string(doc.at("state").get<std::string>()).value_or(InstanceState::stopped);
      const bool interrupted = st == InstanceState::running || st == InstanceState::stopping;
      if (interrupted) st = InstanceState::stopped;
      u->state = st;
      u->loaded = doc.value("loaded", false);
      u->model = model_from_json(doc.at("model"), ParseOptions{true});
      u->dataelements = doc.value("dataelements", json::object());
      u->endpoints = doc.value("endpoints", json::object());
      u->attributes = doc.value("attributes", json::object());
      u->positions = positions_from_json(doc.value("positions", json::array()));
      if (doc.contains("status")) {
        u->status.code = doc.at("status").value("code", 0);
        u->status.text = doc.at("status").value("text", "");
      }
      const json counters = doc.value("enactment_counters", json::object());
      for (const auto& [k, v] : counters.items()) u->counters[k] = v.get<int>();
      u->spawned_urls = doc.value("spawned", std::vector<std::string>{});
      for (const auto& r : doc.value("callbacks", json::array())) {
        auto rec = protocol::CallbackRecord::from_json(r);
        rec.suspended = st == InstanceState::stopped;
        if (interrupted) {
          for (auto& p : u->positions) {
            if (p.node_id == rec.activity && p.mode == Position::Mode::at && !p.passthrough) p.passthrough = rec.callback_id;
          }
        }
        callbacks_.add(std::move(rec));
      }
      {
        std::lock_guard lock(mu_);
        units_[id] = u;
        next_id_ = std::max(next_id_, id + 1);
      }
      if (interrupted) {
        std::lock_guard lock(dirty_mu_);
        dirty_.insert(id);
      }
      ++n;
    } catch (const std::exception& e) {
      spdlog::error("restore: skipping unreadable snapshot: {}", e.what());
    }
  }
  return n;
}

void Engine::flush() {
  if (!config_.store) return;
  std::set<InstanceId> dirty;
  {
    std::lock_guard lock(dirty_mu_);
    dirty.swap(dirty_);
  }
  for (auto id : dirty) {
    std::shared_ptr<Unit> u;
    {
      std::lock_guard lock(mu_);
      auto it = units_.find(id);
      if (it == units_.end()) continue;
      u = it->second;
    }
    json snap;
    {
      std::lock_guard lock(u->mu);
      if (u->state == InstanceState::purged) continue;
      snap = u->snapshot_locked();
    }
    try {
      config_.store->store(id, snap);
    } catch (const std::exception& e) {
      spdlog::error("persistence: instance {}: {}", id, e.what());
      std::lock_guard lock(dirty_mu_);
      dirty_.insert(id);
      continue;
    }
    if (!exists(id)) config_.store->remove(id);
  }
}

void Engine::writer_loop(std::stop_token stop) {
  std::mutex m;
  std::condition_variable_any cv;
  while (!stop.stop_requested()) {
    {
      std::unique_lock lock(m);
      cv.wait_for(lock, stop, config_.persist_interval, [] { return false; });
    }
    flush();
  }
}

void Engine::shutdown() {
  if (shut_.exchange(true)) return;
  flush();
  std::vector<std::shared_ptr<Unit>> units;
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, u] : units_) units.push_back(u);
  }
  std::vector<std::shared_ptr<exec::Runner>> runners;
  std::vector<std::jthread> watchdogs;
  for (const auto& u : units) {
    std::lock_guard lock(u->mu);
    u->active_gen = 0;
    if (u->runner) runners.push_back(u->runner);
    watchdogs.push_back(std::move(u->watchdog));
  }
  for (auto& r : runners) r->request_stop();
  for (auto& r : runners) r->join();
  watchdogs.clear();
  for (const auto& u : units) {
    std::lock_guard lock(u->mu);
    u->runner.reset();
  }
  {
    std::lock_guard lock(graveyard_mu_);
    for (auto& r : graveyard_) {
      r->request_stop();
      r->join();
    }
    graveyard_.clear();
  }
  if (writer_.joinable()) {
    writer_.request_stop();
    writer_.join();
  }
  if (persist_sub_) bus_.unsubscribe(persist_sub_);
}

} // namespace pflow
