#include "pflow/executor.hpp"

#include <algorithm>

#include "pflow/util.hpp"

namespace pflow::exec {

json evaluate_arguments(const json& arguments, script::Environment& env) {
  if (arguments.is_string()) {
    const auto& s = arguments.get_ref<const std::string&>();
    if (!s.empty() && s.front() == '!') return script::Expression::parse(std::string_view(s).substr(1)).evaluate(env);
    return arguments;
  }
  if (arguments.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : arguments.items()) out[k] = evaluate_arguments(v, env);
    return out;
  }
  if (arguments.is_array()) {
    json out = json::array();
    for (const auto& v : arguments) out.push_back(evaluate_arguments(v, env));
    return out;
  }
  return arguments;
}

struct Runner::Join {
  std::mutex mu;
  std::condition_variable cv;
  std::size_t started = 0;
  std::size_t ended = 0;
  std::size_t completed = 0;
};

struct Runner::Thread {
  std::size_t id = 0;
  std::size_t pc = 0;
  std::string end_node;
  std::vector<Position> targets;
  std::shared_ptr<Join> join;
  std::optional<std::string> passthrough;
};

Runner::Runner(std::shared_ptr<ExecutionHost> host, std::shared_ptr<const Plan> plan, RunnerConfig config,
               Generation gen)
    : host_(std::move(host)), plan_(std::move(plan)), config_(config), gen_(gen) {}

Runner::~Runner() {
  stop_.request_stop();
  join();
}

void Runner::start(std::vector<Position> from) {
  started_ = std::chrono::steady_clock::now();
  Thread main;
  main.pc = 0;
  main.end_node = plan_->model().root.id;
  main.targets = std::move(from);
  spawn(std::move(main));
}

void Runner::request_stop() {
  stop_.request_stop();
  sleep_cv_.notify_all();
}

std::vector<InFlight> Runner::in_flight() const {
  std::lock_guard lock(mu_);
  std::vector<InFlight> out;
  for (const auto& [id, f] : in_flight_) out.push_back(f);
  return out;
}

void Runner::join() {
  while (true) {
    std::vector<std::jthread> threads;
    {
      std::lock_guard lock(mu_);
      threads.swap(threads_);
    }
    if (threads.empty()) return;
    for (auto& t : threads) {
      if (t.joinable() && t.get_id() != std::this_thread::get_id()) t.join();
      else if (t.joinable()) t.detach();
    }
  }
}

void Runner::spawn(Thread t) {
  std::lock_guard lock(mu_);
  t.id = next_thread_id_++;
  ++live_;
  peak_ = std::max(peak_, live_);
  threads_.emplace_back([this, t = std::move(t)]() mutable { run(std::move(t)); });
}

void Runner::emit(const std::string& topic, const std::string& event, json content) {
  host_->emit(gen_, topic, event, std::move(content));
}

void Runner::set_position(Thread& t, std::optional<Position> pos) {
  std::lock_guard lock(mu_);
  json transition;
  auto it = active_.find(t.id);
  if (pos && it != active_.end() && it->second.mode == Position::Mode::after && pos->mode == Position::Mode::at) {
    transition = {{"from", it->second.node_id}, {"to", pos->node_id}};
  }
  if (pos) active_[t.id] = *pos;
  else active_.erase(t.id);
  std::vector<Position> all;
  for (const auto& [id, p] : active_) all.push_back(p);
  host_->positions_changed(gen_, all, std::move(transition));
}

void Runner::record_halt(const Position& p) {
  std::lock_guard lock(mu_);
  halted_.push_back(p);
}

bool Runner::sleep_interruptible(std::chrono::milliseconds d) {
  std::unique_lock lock(mu_);
  sleep_cv_.wait_for(lock, stop_.get_token(), d, [this] { return terminated_.load(); });
  return !halting();
}

void Runner::thread_done(const Thread& t, bool completed) {
  bool last = false;
  {
    std::lock_guard lock(mu_);
    active_.erase(t.id);
    in_flight_.erase(t.id);
    if (completed) completed_ends_.push_back(t.end_node);
    last = --live_ == 0;
  }
  if (t.join) {
    {
      std::lock_guard lock(t.join->mu);
      ++t.join->ended;
      if (completed) ++t.join->completed;
    }
    t.join->cv.notify_all();
  }
  if (!last) return;

  RunOutcome out;
  {
    std::lock_guard lock(mu_);
    out.enactments = enactments_.load();
    out.peak_threads = peak_;
    out.duration = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started_);
    if (stop_.stop_requested() && !terminated_) {
      out.kind = RunOutcome::Kind::stopped;
      out.positions = halted_;
      const auto& root = plan_->model().root.id;
      bool root_done = std::find(completed_ends_.begin(), completed_ends_.end(), root) != completed_ends_.end();
      for (const auto& end : completed_ends_) {
        if (end == root) continue;
        const auto& scope = plan_->scope_of(end);
        bool covers = std::any_of(halted_.begin(), halted_.end(), [&](const Position& p) { return scope.count(p.node_id) > 0; });
        if (covers) out.positions.push_back({end, Position::Mode::after, std::nullopt});
      }
      if (root_done) out.positions.push_back({root, Position::Mode::after, std::nullopt});
    }
  }
  done_ = true;
  host_->finished(gen_, std::move(out));
}

namespace {

bool intersects(const std::set<std::string>& scope, const std::vector<Position>& targets) {
  return std::any_of(targets.begin(), targets.end(), [&](const Position& p) { return scope.count(p.node_id) > 0; });
}

} // namespace

void Runner::run(Thread t) {
  const auto& code = plan_->code();
  while (true) {
    const auto& ins = code[t.pc];
    const bool searching = !t.targets.empty();
    switch (ins.op) {
      case OpCode::enter: {
        const auto& node = plan_->node(ins.node_id);
        if (searching) {
          auto it = std::find_if(t.targets.begin(), t.targets.end(), [&](const Position& p) {
            return p.node_id == ins.node_id && p.mode == Position::Mode::at;
          });
          if (it == t.targets.end() || !node.is_activity()) {
            ++t.pc;
            break;
          }
          t.passthrough = it->passthrough;
          t.targets.clear();
        }
        if (node.is_activity()) {
          if (halting()) {
            record_halt({node.id, Position::Mode::at, t.passthrough});
            thread_done(t, false);
            return;
          }
          set_position(t, Position{node.id, Position::Mode::at, std::nullopt});
        }
        ++t.pc;
        break;
      }
      case OpCode::exit: {
        const auto& node = plan_->node(ins.node_id);
        if (searching) {
          auto it = std::find_if(t.targets.begin(), t.targets.end(), [&](const Position& p) {
            return p.node_id == ins.node_id && p.mode == Position::Mode::after;
          });
          if (it != t.targets.end()) t.targets.clear();
          ++t.pc;
          break;
        }
        if (node.is_activity()) {
          set_position(t, Position{node.id, Position::Mode::after, std::nullopt});
          if (halting()) {
            record_halt({node.id, Position::Mode::after, std::nullopt});
            thread_done(t, false);
            return;
          }
        }
        ++t.pc;
        break;
      }
      case OpCode::enact:
      case OpCode::manipulate: {
        if (searching) {
          ++t.pc;
          break;
        }
        const auto& node = plan_->node(ins.node_id);
        auto step = ins.op == OpCode::enact ? enact(t, node, std::exchange(t.passthrough, std::nullopt))
                                            : manipulate(t, node);
        if (step == Step::halt) {
          thread_done(t, false);
          return;
        }
        ++t.pc;
        break;
      }
      case OpCode::cond:
      case OpCode::loop_test: {
        if (searching) {
          t.pc = intersects(ins.scope, t.targets) ? t.pc + 1 : ins.target;
          break;
        }
        auto r = condition(t, plan_->node(ins.node_id));
        if (!r) {
          std::optional<Position> here;
          {
            std::lock_guard lock(mu_);
            if (auto it = active_.find(t.id); it != active_.end()) here = it->second;
          }
          if (here) record_halt(*here);
          thread_done(t, false);
          return;
        }
        t.pc = *r ? t.pc + 1 : ins.target;
        break;
      }
      case OpCode::loop_back: {
        if (searching) {
          ++t.pc;
          break;
        }
        auto r = condition(t, plan_->node(ins.node_id));
        if (!r) {
          std::optional<Position> here;
          {
            std::lock_guard lock(mu_);
            if (auto it = active_.find(t.id); it != active_.end()) here = it->second;
          }
          if (here) record_halt(*here);
          thread_done(t, false);
          return;
        }
        t.pc = *r ? ins.target : t.pc + 1;
        break;
      }
      case OpCode::jump:
        t.pc = ins.target;
        break;
      case OpCode::fork: {
        const std::size_t total = ins.branches.size();
        std::vector<std::vector<Position>> branch_targets(total);
        std::vector<bool> start(total, !searching);
        std::size_t needed = ins.wait;
        if (searching) {
          std::vector<Position> rest;
          for (auto& p : t.targets) {
            bool placed = false;
            for (std::size_t i = 0; i < total && !placed; ++i) {
              if (ins.branch_scopes[i].count(p.node_id)) {
                branch_targets[i].push_back(p);
                start[i] = true;
                placed = true;
              }
            }
            if (!placed) rest.push_back(p);
          }
          std::size_t restarted = static_cast<std::size_t>(std::count(start.begin(), start.end(), true));
          std::size_t already = total - restarted;
          if (!rest.empty()) needed = 0;
          else needed = std::min(restarted, ins.wait > already ? ins.wait - already : 0);
          t.targets = std::move(rest);
        }
        auto join = std::make_shared<Join>();
        for (std::size_t i = 0; i < total; ++i) {
          if (!start[i]) continue;
          // Positions left by overlapping runs of one branch each get a thread.
          std::vector<std::vector<Position>> groups;
          for (auto& p : branch_targets[i]) {
            auto fits = [&](const std::vector<Position>& g) {
              return std::all_of(g.begin(), g.end(), [&](const Position& q) { return plan_->concurrent(p.node_id, q.node_id); });
            };
            auto g = std::find_if(groups.begin(), groups.end(), fits);
            if (g == groups.end()) groups.push_back({std::move(p)});
            else g->push_back(std::move(p));
          }
          if (groups.empty()) groups.emplace_back();
          for (auto& targets : groups) {
            ++join->started;
            Thread b;
            b.pc = ins.branches[i];
            b.end_node = plan_->node(code[ins.branches[i]].node_id).id;
            b.targets = std::move(targets);
            b.join = join;
            spawn(std::move(b));
          }
        }
        bool satisfied;
        {
          std::unique_lock lock(join->mu);
          join->cv.wait(lock, [&] { return join->completed >= needed || join->ended == join->started; });
          satisfied = join->completed >= needed;
        }
        if (!satisfied) {
          thread_done(t, false);
          return;
        }
        ++t.pc;
        break;
      }
      case OpCode::terminate:
        if (searching) {
          ++t.pc;
          break;
        }
        terminated_ = true;
        stop_.request_stop();
        sleep_cv_.notify_all();
        thread_done(t, true);
        return;
      case OpCode::end:
        thread_done(t, true);
        return;
    }
  }
}

std::optional<bool> Runner::condition(Thread&, const Node& node) {
  ConditionResult r;
  try {
    r = host_->evaluate(node.condition);
  } catch (const script::ScriptError& e) {
    host_->request_stop(gen_, "condition of " + node.id + ": " + e.what());
    return std::nullopt;
  }
  json content{{"node", node.id}, {"condition", node.condition}, {"dataelements", r.dataelements}, {"result", r.value}};
  auto verdict = host_->vote(gen_, "condition", "eval", content);
  bool result = r.value;
  std::vector<Verdict::Assignment> other;
  for (const auto& v : verdict.values) {
    if (v.target == "condition") {
      if (v.value.is_boolean()) result = v.value.get<bool>();
    } else {
      other.push_back(v);
    }
  }
  if (!other.empty()) host_->apply_values(gen_, other);
  if (verdict.has(Verdict::Action::skip_activity)) result = false;
  if (verdict.has(Verdict::Action::stop_instance)) host_->request_stop(gen_, "condition vote on " + node.id);
  content["result"] = result;
  emit("condition", "eval", std::move(content));
  return result;
}

Runner::Step Runner::manipulate(Thread& t, const Node& node) {
  json base{{"activity", node.id}, {"label", node.label}};
  {
    std::lock_guard lock(mu_);
    in_flight_[t.id] = {node.id, node.label, ""};
  }
  emit("activity", "manipulating", base);
  std::optional<std::string> failure;
  if (node.scripts.finalize) {
    try {
      host_->run_script(gen_, *node.scripts.finalize, nullptr);
    } catch (const script::ScriptError& e) {
      failure = e.what();
    }
  }
  if (failure) {
    json f = base;
    f["error"] = *failure;
    emit("activity", "failed", f);
  }
  json s = base;
  s["verdict"] = failure ? "stop" : "done";
  emit("activity", "status", s);
  emit("activity", "done", base);
  {
    std::lock_guard lock(mu_);
    in_flight_.erase(t.id);
  }
  if (failure) {
    host_->request_stop(gen_, "activity " + node.id + " failed: " + *failure);
    record_halt({node.id, Position::Mode::at, std::nullopt});
    return Step::halt;
  }
  return Step::next;
}

Runner::Step Runner::enact(Thread& t, const Node& node, std::optional<std::string> passthrough) {
  const std::string& a = node.id;
  auto base = [&](const std::string& enactment) {
    json c{{"activity", a}, {"label", node.label}};
    if (!enactment.empty()) c["enactment"] = enactment;
    return c;
  };
  auto& registry = host_->callbacks();

  std::string cbid;
  std::string enactment;
  bool resumed = false;
  if (passthrough) {
    if (auto rec = registry.find(*passthrough)) {
      cbid = rec->callback_id;
      enactment = rec->enactment;
      resumed = true;
      std::lock_guard lock(mu_);
      in_flight_[t.id] = {a, node.label, enactment};
    }
  }
  if (!resumed) {
    json vc = base("");
    vc["endpoint_key"] = node.endpoint_key;
    auto verdict = host_->vote(gen_, "activity", "syncing_before", vc);
    if (verdict.has(Verdict::Action::set_values)) host_->apply_values(gen_, verdict.values);
    if (verdict.has(Verdict::Action::stop_instance)) {
      host_->request_stop(gen_, "syncing_before vote on " + a);
      record_halt({a, Position::Mode::at, std::nullopt});
      return Step::halt;
    }
    if (verdict.has(Verdict::Action::skip_activity)) return Step::next;
  }

  // Applies one received message. Returns a failure reason, if any.
  auto process = [&](const protocol::CallbackMessage& msg) -> std::optional<std::string> {
    json payload = msg.payload();
    if (msg.event) {
      json tc = base(enactment);
      tc["received"] = payload;
      emit("task", *msg.event, tc);
    }
    json rc = base(enactment);
    rc["received"] = payload;
    emit("activity", "receiving", rc);
    emit("activity", "manipulating", base(enactment));
    if (msg.failure) return "functionality reported failure";
    const auto& src = msg.update ? node.scripts.update : node.scripts.finalize;
    if (src) {
      try {
        host_->run_script(gen_, *src, payload);
      } catch (const script::ScriptError& e) {
        return std::string(msg.update ? "update: " : "finalize: ") + e.what();
      }
    }
    return std::nullopt;
  };

  int retries = 0;
  while (true) {
    std::optional<std::string> failure;
    bool salvage = false;
    bool awaiting = resumed;

    if (!resumed) {
      enactment = a + "-enactment-" + std::to_string(host_->next_enactment(a));
      ++enactments_;
      auto env = host_->scoped_environment();
      json args = nullptr;
      std::string url;
      try {
        if (node.scripts.prepare) script::Program::parse(*node.scripts.prepare).execute(env);
        args = evaluate_arguments(node.parameters.arguments, env);
      } catch (const script::ScriptError& e) {
        failure = std::string("prepare: ") + e.what();
      }
      if (env.endpoints.contains(node.endpoint_key) && env.endpoints.at(node.endpoint_key).is_string()) {
        url = env.endpoints.at(node.endpoint_key).get<std::string>();
      } else if (!failure) {
        failure = "endpoint " + node.endpoint_key + " is not bound";
      }
      {
        std::lock_guard lock(mu_);
        in_flight_[t.id] = {a, node.label, enactment};
      }
      json cc = base(enactment);
      cc["endpoint"] = url;
      cc["method"] = node.parameters.method;
      cc["arguments"] = args;
      emit("activity", "calling", cc);

      if (!failure) {
        cbid = make_uuid();
        auto ctx = host_->invocation(node, cbid);
        protocol::CallbackRecord rec;
        rec.callback_id = cbid;
        rec.instance = ctx.instance;
        rec.activity = a;
        rec.enactment = enactment;
        rec.created_at = now_timestamp();
        registry.add(std::move(rec));
        auto out = protocol::invoke(host_->client(), url, node.parameters.method, args, ctx, config_.call_timeout);
        if (out.spawned) {
          json ic = base(enactment);
          ic["url"] = *out.spawned;
          emit("task", "instantiation", ic);
          host_->spawned(gen_, *out.spawned);
        }
        switch (out.pattern) {
          case protocol::Outcome::Pattern::synchronous: {
            registry.remove(cbid);
            protocol::CallbackMessage msg;
            msg.body = out.body;
            msg.content_type = out.content_type;
            msg.event = out.event;
            failure = process(msg);
            break;
          }
          case protocol::Outcome::Pattern::asynchronous:
            if (out.event) emit("task", *out.event, base(enactment));
            awaiting = true;
            break;
          case protocol::Outcome::Pattern::salvage:
            registry.remove(cbid);
            salvage = true;
            failure = out.error;
            break;
          case protocol::Outcome::Pattern::failure:
            registry.remove(cbid);
            failure = out.error;
            break;
        }
      }
    }

    while (awaiting) {
      auto msg = registry.await(cbid, stop_.get_token());
      if (!msg) {
        if (registry.find(cbid)) record_halt({a, Position::Mode::at, cbid});
        std::lock_guard lock(mu_);
        in_flight_.erase(t.id);
        return Step::halt;
      }
      failure = process(*msg);
      if (failure || !msg->update) {
        registry.remove(cbid);
        awaiting = false;
      }
    }
    resumed = false;

    if (!failure) {
      emit("activity", "status", base(enactment));
      emit("activity", "done", base(enactment));
      {
        std::lock_guard lock(mu_);
        in_flight_.erase(t.id);
      }
      auto after = host_->vote(gen_, "activity", "syncing_after", base(enactment));
      if (after.has(Verdict::Action::set_values)) host_->apply_values(gen_, after.values);
      if (after.has(Verdict::Action::stop_instance)) host_->request_stop(gen_, "syncing_after vote on " + a);
      return Step::next;
    }

    json fc = base(enactment);
    fc["error"] = *failure;
    fc["salvage"] = salvage;
    emit("activity", "failed", fc);

    enum class Decision { ignore, retry, stop } decision;
    if (node.scripts.rescue) {
      int code = -1;
      try {
        auto st = host_->run_script(gen_, *node.scripts.rescue, json{{"error", *failure}, {"salvage", salvage}});
        if (st) code = st->code;
      } catch (const script::ScriptError&) {
      }
      decision = code == 0 ? Decision::ignore : code == 1 ? Decision::retry : Decision::stop;
    } else {
      decision = salvage ? Decision::retry : Decision::stop;
    }
    if (decision == Decision::retry && retries >= config_.max_retries) decision = Decision::stop;

    json sc = base(enactment);
    sc["verdict"] = decision == Decision::ignore ? "ignore" : decision == Decision::retry ? "retry" : "stop";
    emit("activity", "status", sc);
    emit("activity", "done", base(enactment));
    {
      std::lock_guard lock(mu_);
      in_flight_.erase(t.id);
    }

    switch (decision) {
      case Decision::ignore: {
        auto after = host_->vote(gen_, "activity", "syncing_after", base(enactment));
        if (after.has(Verdict::Action::set_values)) host_->apply_values(gen_, after.values);
        if (after.has(Verdict::Action::stop_instance)) host_->request_stop(gen_, "syncing_after vote on " + a);
        return Step::next;
      }
      case Decision::retry:
        ++retries;
        if (!sleep_interruptible(config_.retry_delay)) {
          record_halt({a, Position::Mode::at, std::nullopt});
          return Step::halt;
        }
        continue;
      case Decision::stop:
        host_->request_stop(gen_, "activity " + a + " failed: " + *failure);
        record_halt({a, Position::Mode::at, std::nullopt});
        return Step::halt;
    }
  }
}

} // namespace pflow::exec
