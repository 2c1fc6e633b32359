// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "pflow/control_api.hpp"
#include "pflow/services/service_host.hpp"
#include "pflow/votes.hpp"
#include "support/fakes.hpp"
#include "support/oracles.hpp"
#include "support/random_model.hpp"
#include "support/worklist_scenarios.hpp"

extern char** environ;

using namespace pflow;
using namespace std::chrono_literals;
using testing::EventLog;
using testing::FakeClient;
using Clock = std::chrono::steady_clock;

namespace {

struct Result {
  bool ok = true;
  std::string detail;
};

class Failed : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

void expect(bool cond, const std::string& what) {
  if (!cond) throw Failed(what);
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt_seconds(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2fs", s);
  return buf;
}

bool settled(InstanceState s) {
  return s == InstanceState::finished || s == InstanceState::stopped || s == InstanceState::abandoned;
}

InstanceState wait_settled(const Engine& engine, InstanceId id, std::chrono::milliseconds timeout) {
  auto deadline = Clock::now() + timeout;
  while (true) {
    auto s = engine.state(id);
    if (settled(s) || Clock::now() > deadline) return s;
    std::this_thread::sleep_for(2ms);
  }
}

template <class Pred>
bool poll_until(Pred pred, std::chrono::milliseconds timeout) {
  auto deadline = Clock::now() + timeout;
  while (!pred()) {
    if (Clock::now() > deadline) return false;
    std::this_thread::sleep_for(5ms);
  }
  return true;
}

json call_node(const std::string& id, const std::string& key, json extra = json::object()) {
  json n{{"id", id}, {"kind", "call"}, {"endpoint_key", key}};
  for (auto& [k, v] : extra.items()) n[k] = v;
  return n;
}

json seq(const std::string& id, json children) { return {{"id", id}, {"kind", "sequence"}, {"children", children}}; }

json model_json(json root, json endpoints, json data = json::object()) {
  return {{"root", std::move(root)}, {"endpoints", std::move(endpoints)}, {"dataelements", std::move(data)}};
}

std::size_t count_requests(const FakeClient& c, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& r : c.requests()) n += r.url.rfind(prefix, 0) == 0;
  return n;
}

/// A gate that blocks service handlers until opened.
class Gate {
 public:
  void open() {
    std::lock_guard lock(mu_);
    open_ = true;
    cv_.notify_all();
  }
  bool wait(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    return cv_.wait_for(lock, timeout, [&] { return open_; });
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  bool open_ = false;
};

/// Engine over fake services.
struct Bench {
  std::shared_ptr<FakeClient> services = std::make_shared<FakeClient>();
  std::unique_ptr<Engine> engine;
  std::unique_ptr<EventLog> log;

  Bench() {
    EngineConfig cfg;
    cfg.client = services;
    cfg.retry_delay = 10ms;
    cfg.drain_timeout = 5s;
    engine = std::make_unique<Engine>(cfg);
    log = std::make_unique<EventLog>(engine->bus());
  }
  ~Bench() { engine->shutdown(); }
};

/// Engine, gateway and control API on a loopback port.
struct HttpBench {
  std::shared_ptr<FakeClient> services = std::make_shared<FakeClient>();
  std::unique_ptr<Engine> engine;
  std::unique_ptr<Gateway> gateway;
  std::unique_ptr<ControlApi> api;
  std::unique_ptr<EventLog> log;
  std::unique_ptr<httplib::Client> http;

  explicit HttpBench(bool fake_services = true) {
    EngineConfig cfg;
    if (fake_services) cfg.client = services;
    cfg.retry_delay = 10ms;
    cfg.drain_timeout = 5s;
    engine = std::make_unique<Engine>(cfg);
    gateway = std::make_unique<Gateway>(engine->bus(), GatewayConfig{});
    api = std::make_unique<ControlApi>(*engine, *gateway, ControlApiConfig{});
    int port = api->bind("127.0.0.1", 0);
    api->start();
    log = std::make_unique<EventLog>(engine->bus());
    http = std::make_unique<httplib::Client>("127.0.0.1", port);
    http->set_read_timeout(15s);
  }
  ~HttpBench() {
    api->stop();
    engine->shutdown();
    gateway->shutdown();
  }

  static std::string path(const std::string& rest = "") { return "/flow/engine/" + rest; }

  int status(const httplib::Result& r) { return r ? r->status : -1; }

  InstanceId create() {
    auto r = http->Post(path(), "", "application/json");
    expect(r && r->status == 201, "instance creation failed");
    return json::parse(r->body).at("id").get<InstanceId>();
  }
  int put(const std::string& rest, const json& body) { return status(http->Put(path(rest), body.dump(), "application/json")); }
  int patch(const std::string& rest, const json& body) {
    return status(http->Patch(path(rest), body.dump(), "application/json"));
  }
  json get(const std::string& rest) {
    auto r = http->Get(path(rest));
    expect(r && r->status == 200, "GET " + rest + " failed");
    return json::parse(r->body);
  }
  std::string state(InstanceId id) { return get(std::to_string(id) + "/state").at("state"); }

  /// PUT to an absolute callback URL issued by this engine.
  int callback(const std::string& url, const json& body, bool update) {
    auto at = url.find("/flow/engine/");
    httplib::Headers h;
    if (update) h.emplace(protocol::headers::update, "true");
    return status(http->Put(url.substr(at), h, body.dump(), "application/json"));
  }
};

std::string callback_header(const FakeClient& c, const std::string& prefix) {
  for (const auto& r : c.requests()) {
    if (r.url.rfind(prefix, 0) != 0) continue;
    if (auto cb = http::header(r.headers, protocol::headers::callback)) return *cb;
  }
  return "";
}

// 1 --------------------------------------------------------------------------

Result lifecycle_conformance() {
  auto t0 = Clock::now();
  std::size_t triples = 0;
  std::size_t legal = 0;
  for (auto from : all_instance_states) {
    for (auto to : all_instance_states) {
      for (auto cause : {TransitionCause::command, TransitionCause::error, TransitionCause::completion}) {
        ++triples;
        bool want = testing::lifecycle_oracle(from, to, cause);
        legal += want;
        expect(is_legal_transition(from, to, cause) == want,
               "table disagrees on " + std::string(to_string(from)) + ">" + std::string(to_string(to)) + ":" +
                   std::string(to_string(cause)));
      }
    }
  }

  Bench b;
  auto gate = std::make_shared<Gate>();
  b.services->route("http://svc.test/async", [](const http::Request&) { return testing::async_response(); });
  b.services->route("http://svc.test/block", [gate](const http::Request&) {
    gate->wait(10s);
    return testing::json_response("{}");
  });
  auto one_call = [](const std::string& url) {
    return model_from_json(model_json(seq("root", json::array({call_node("a1", "svc")})), {{"svc", url}}));
  };
  auto running_on = [&](const std::string& url) {
    auto id = b.engine->create();
    b.engine->load_model(id, one_call(url));
    b.engine->set_state(id, InstanceState::running);
    expect(b.log->wait_for(id, "activity/calling", 5s), "activity not called");
    return id;
  };
  auto make = [&](InstanceState s) -> InstanceId {
    switch (s) {
      case InstanceState::ready: {
        auto id = b.engine->create();
        b.engine->load_model(id, one_call("http://svc.test/async"));
        return id;
      }
      case InstanceState::running: return running_on("http://svc.test/async");
      case InstanceState::stopping: {
        auto id = running_on("http://svc.test/block");
        b.engine->set_state(id, InstanceState::stopping);
        return id;
      }
      case InstanceState::stopped: {
        auto id = running_on("http://svc.test/async");
        b.engine->set_state(id, InstanceState::stopping);
        expect(b.engine->wait_for_state(id, InstanceState::stopped, 5s), "drain did not finish");
        return id;
      }
      case InstanceState::finished: {
        auto id = b.engine->create();
        b.engine->load_model(id, model_from_json(model_json(seq("root", json::array()), json::object())));
        b.engine->set_state(id, InstanceState::running);
        expect(b.engine->wait_for_state(id, InstanceState::finished, 5s), "empty model did not finish");
        return id;
      }
      case InstanceState::abandoned: {
        auto id = b.engine->create();
        b.engine->set_state(id, InstanceState::abandoned);
        return id;
      }
      case InstanceState::purged: {
        auto id = b.engine->create();
        b.engine->set_state(id, InstanceState::abandoned);
        b.engine->set_state(id, InstanceState::purged);
        return id;
      }
    }
    return 0;
  };
  auto state_events = [&](InstanceId id) {
    std::size_t n = 0;
    for (const auto& e : b.log->of(id)) n += e.topic == "state";
    return n;
  };

  std::size_t probes = 0;
  std::size_t rejected = 0;
  for (auto from : all_instance_states) {
    for (auto to : all_instance_states) {
      if (from == to) continue;
      ++probes;
      auto id = make(from);
      std::string edge = std::string(to_string(from)) + ">" + std::string(to_string(to));
      if (from == InstanceState::purged) {
        bool not_found = false;
        try {
          b.engine->set_state(id, to);
        } catch (const NotFound&) {
          not_found = true;
        }
        expect(not_found, "purged instance accepted " + edge);
        ++rejected;
        continue;
      }
      auto before = state_events(id);
      bool want = testing::lifecycle_oracle(from, to, TransitionCause::command);
      bool threw = false;
      try {
        b.engine->set_state(id, to);
      } catch (const IllegalTransition&) {
        threw = true;
      }
      if (!want) {
        expect(threw, "illegal " + edge + " accepted");
        expect(b.engine->state(id) == from, "state corrupted by " + edge);
        expect(state_events(id) == before, "rejected " + edge + " emitted a state event");
        ++rejected;
      } else {
        expect(!threw, "legal " + edge + " rejected");
        if (to == InstanceState::purged) {
          expect(!b.engine->exists(id), edge + " left the instance behind");
        } else if (to == InstanceState::stopping) {
          auto s = b.engine->state(id);
          expect(s == InstanceState::stopping || s == InstanceState::stopped, edge + " ended " + std::string(to_string(s)));
        } else {
          expect(b.engine->state(id) == to, edge + " not applied");
        }
      }
    }
  }
  gate->open();
  double took = seconds_since(t0);
  expect(took < 1.0, "took " + fmt_seconds(took));
  return {true, std::to_string(triples) + " triples, " + std::to_string(legal) + " legal, " + std::to_string(probes) +
                    " engine probes, " + std::to_string(rejected) + " rejections, " + fmt_seconds(took)};
}

// 2 --------------------------------------------------------------------------

/// Delivers scripted asynchronous answers, one thread per call.
class Deliverer {
 public:
  struct Job {
    InstanceId instance;
    std::string callback_id;
    int updates;
    bool failure;
  };

  explicit Deliverer(Engine& engine) : engine_(engine) {}
  ~Deliverer() {
    std::lock_guard lock(mu_);
    workers_.clear();
  }

  void push(Job j) {
    std::lock_guard lock(mu_);
    workers_.emplace_back([this, j](std::stop_token st) { run(j, st); });
  }

 private:
  void run(const Job& j, std::stop_token st) {
    for (int i = 0; i < j.updates; ++i) {
      protocol::CallbackMessage u;
      u.body = R"({"step":1})";
      u.update = true;
      if (!deliver(j, u, st)) return;
    }
    protocol::CallbackMessage fin;
    fin.body = R"({"n":1})";
    fin.failure = j.failure;
    deliver(j, fin, st);
  }

  // A suspended instance takes the message once it runs again.
  bool deliver(const Job& j, const protocol::CallbackMessage& m, std::stop_token st) {
    while (!st.stop_requested()) {
      auto status = engine_.deliver_callback(j.instance, j.callback_id, m);
      if (status == protocol::DeliveryStatus::accepted) return true;
      if (status == protocol::DeliveryStatus::unknown) {
        if (std::getenv("ACCEPTANCE_DEBUG")) std::cerr << "unknown callback " << j.instance << " " << j.callback_id << std::endl;
        return false;
      }
      std::this_thread::sleep_for(1ms);
    }
    return false;
  }

  Engine& engine_;
  std::mutex mu_;
  std::vector<std::jthread> workers_;
};

Result activity_event_order() {
  auto t0 = Clock::now();
  Bench b;
  Deliverer deliverer(*b.engine);
  std::mutex rng_mu;
  std::mt19937_64 rng(2024);
  std::size_t failures_scripted = 0;
  b.services->route("http://svc.test/", [&](const http::Request& r) {
    int roll;
    int updates;
    {
      std::lock_guard lock(rng_mu);
      roll = std::uniform_int_distribution<int>(0, 99)(rng);
      updates = std::uniform_int_distribution<int>(0, 3)(rng);
    }
    if (roll < 70) return testing::json_response(R"({"n": 1})");
    bool failure = roll >= 97;
    failures_scripted += failure;
    deliverer.push({std::stoll(*http::header(r.headers, protocol::headers::instance)),
                    *http::header(r.headers, protocol::headers::callback_id), failure ? 0 : updates, failure});
    return testing::async_response();
  });

  testing::RandomModelOptions opt;
  opt.max_depth = 4;
  opt.max_activities = 20;
  testing::RandomModelGenerator gen(7, opt);
  const int models = 1000;
  const int batch = 25;
  std::vector<InstanceId> ids;
  std::size_t finished = 0;
  std::size_t stopped = 0;
  for (int done = 0; done < models; done += batch) {
    std::vector<InstanceId> wave;
    for (int i = 0; i < batch && done + i < models; ++i) {
      auto id = b.engine->create();
      b.engine->load_model(id, gen.next());
      b.engine->set_state(id, InstanceState::running);
      wave.push_back(id);
    }
    for (auto id : wave) {
      auto s = wait_settled(*b.engine, id, 20s);
      // A scripted failure stops the instance; restarting resumes the
      // open enactments and retries the failed one.
      for (int restarts = 0; s == InstanceState::stopped && restarts < 50; ++restarts) {
        ++stopped;
        b.engine->set_state(id, InstanceState::running);
        s = wait_settled(*b.engine, id, 20s);
      }
      expect(s == InstanceState::finished, "instance " + std::to_string(id) + " ended " + std::string(to_string(s)));
      ++finished;
      ids.push_back(id);
    }
  }

  std::map<InstanceId, std::vector<EngineEvent>> per_instance;
  for (auto& e : b.log->events()) per_instance[e.instance].push_back(std::move(e));
  static const std::regex shape("^calling( receiving manipulating)+( failed)? status done$");
  std::size_t enactments = 0;
  for (auto id : ids) {
    for (const auto& [enactment, trace] : testing::enactment_traces(per_instance[id])) {
      std::string joined;
      for (const auto& ev : trace) joined += (joined.empty() ? "" : " ") + ev;
      if (!std::regex_match(joined, shape)) {
        std::string dump;
        for (const auto& e : per_instance[id]) {
          if (e.topic == "activity" || e.topic == "state") dump += "\n  " + e.name() + " " + e.content.dump();
        }
        if (std::getenv("ACCEPTANCE_DEBUG")) std::cerr << model_to_json(b.engine->model(id)).dump() << dump << std::endl;
        throw Failed("instance " + std::to_string(id) + " " + enactment + ": " + joined);
      }
      ++enactments;
    }
  }
  expect(b.engine->callbacks().size() == 0, std::to_string(b.engine->callbacks().size()) + " callbacks left open");
  double took = seconds_since(t0);
  expect(took < 60.0, "took " + fmt_seconds(took));
  return {true, std::to_string(models) + " models, " + std::to_string(enactments) + " enactments, " +
                    std::to_string(finished) + " finished, " + std::to_string(stopped) + " restarts after scripted failures, " +
                    fmt_seconds(took)};
}

// 3 --------------------------------------------------------------------------

Result vote_combination() {
  std::vector<VoteResponse> symbols{VoteResponse::ack(),
                                    VoteResponse::skip(),
                                    VoteResponse::stop(),
                                    VoteResponse::start(),
                                    VoteResponse::callback(),
                                    VoteResponse::set("dataelement", "x", "a"),
                                    VoteResponse::set("dataelement", "x", "b"),
                                    VoteResponse::set("dataelement", "y", "a"),
                                    VoteResponse::set("condition", "", true),
                                    VoteResponse::set("condition", "", false)};
  std::size_t checked = 0;
  std::size_t blocked = 0;
  std::vector<VoteResponse> current;
  std::function<void(std::size_t)> rec = [&](std::size_t from) {
    auto got = combine_votes(current);
    auto want = testing::vote_oracle(current);
    if (!(got == want)) {
      json names = json::array();
      for (auto& r : current) names.push_back(r.to_json());
      throw Failed("mismatch on " + names.dump());
    }
    // Order must not matter either.
    auto reversed = current;
    std::reverse(reversed.begin(), reversed.end());
    expect(combine_votes(reversed) == got, "order dependence");
    ++checked;
    blocked += got.blocked;
    if (current.size() == 3) return;
    for (std::size_t i = from; i < symbols.size(); ++i) {
      current.push_back(symbols[i]);
      rec(i);
      current.pop_back();
    }
  };
  rec(0);
  expect(checked == 286, "enumerated " + std::to_string(checked));
  return {true, std::to_string(checked) + " multisets, 100% match, " + std::to_string(blocked) + " blocked by start/stop dissent"};
}

// 4 --------------------------------------------------------------------------

Result async_updates() {
  HttpBench h;
  h.services->route("http://svc.test/async", [](const http::Request&) { return testing::async_response(); });
  json a1 = call_node("a1", "svc", {{"scripts", {{"update", "data.u = data.u + 1"}, {"finalize", "data.f = data.f + 1"}}}});
  json model = model_json(seq("root", json::array({a1, call_node("a2", "next")})),
                          {{"svc", "http://svc.test/async"}, {"next", "http://svc.test/sync"}}, {{"u", 0}, {"f", 0}});
  for (int n = 0; n <= 10; ++n) {
    std::string tag = "N=" + std::to_string(n) + ": ";
    auto before_sync = count_requests(*h.services, "http://svc.test/sync");
    auto before_async = count_requests(*h.services, "http://svc.test/async");
    auto id = h.create();
    auto sid = std::to_string(id);
    expect(h.put(sid + "/model", model) == 200, tag + "model rejected");
    expect(h.put(sid + "/state", {{"state", "running"}}) == 200, tag + "start rejected");
    expect(poll_until([&] { return count_requests(*h.services, "http://svc.test/async") > before_async; }, 5s),
           tag + "service not called");
    std::string cb;
    for (const auto& r : h.services->requests()) {
      if (r.url.rfind("http://svc.test/async", 0) == 0 && http::header(r.headers, protocol::headers::instance) == sid) {
        cb = *http::header(r.headers, protocol::headers::callback);
      }
    }
    expect(!cb.empty(), tag + "no callback address offered");
    for (int i = 1; i <= n; ++i) expect(h.callback(cb, {{"i", i}}, true) == 200, tag + "update refused");
    expect(poll_until([&] { return h.get(sid + "/dataelements").at("u") == n; }, 5s), tag + "updates not applied");
    std::this_thread::sleep_for(20ms);
    expect(count_requests(*h.services, "http://svc.test/sync") == before_sync, tag + "continued before the final answer");
    expect(h.state(id) == "running", tag + "instance left running early");
    expect(h.callback(cb, {{"done", true}}, false) == 200, tag + "final answer refused");
    expect(h.engine->wait_for_state(id, InstanceState::finished, 5s), tag + "did not finish");
    auto data = h.get(sid + "/dataelements");
    expect(data.at("u") == n, tag + "update ran " + data.at("u").dump() + " times");
    expect(data.at("f") == 1, tag + "finalize ran " + data.at("f").dump() + " times");
    std::size_t receiving = 0;
    std::ptrdiff_t last_receiving = -1;
    std::ptrdiff_t a2_calling = -1;
    auto events = h.log->of(id);
    for (std::size_t i = 0; i < events.size(); ++i) {
      const auto& e = events[i];
      if (e.topic != "activity") continue;
      if (e.content.value("activity", "") == "a1" && e.event == "receiving") {
        ++receiving;
        last_receiving = static_cast<std::ptrdiff_t>(i);
      }
      if (e.content.value("activity", "") == "a2" && e.event == "calling") a2_calling = static_cast<std::ptrdiff_t>(i);
    }
    expect(receiving == static_cast<std::size_t>(n) + 1, tag + "received " + std::to_string(receiving) + " messages");
    expect(a2_calling > last_receiving, tag + "a2 called before the final answer was processed");
    expect(h.callback(cb, {{"late", true}}, false) == 404, tag + "post-final PUT not 404");
  }
  return {true, "N=0..10 each gave N updates, 1 finalize, continuation after the final PUT, 404 afterwards"};
}

// 5 --------------------------------------------------------------------------

Result stop_drain() {
  HttpBench h;
  auto gate = std::make_shared<Gate>();
  std::atomic<int> slow_calls{0};
  h.services->route("http://svc.test/slow", [gate, &slow_calls](const http::Request&) {
    ++slow_calls;
    gate->wait(10s);
    return testing::json_response(R"({"slow": true})");
  });
  h.services->route("http://svc.test/async", [](const http::Request&) { return testing::async_response(); });
  json branches = json::array({{{"id", "b1"}, {"kind", "parallel_branch"}, {"children", json::array({call_node("s1", "slow")})}},
                               {{"id", "b2"}, {"kind", "parallel_branch"}, {"children", json::array({call_node("s2", "svc")})}}});
  json par{{"id", "p"}, {"kind", "parallel"}, {"children", branches}};
  json model = model_json(seq("root", json::array({par})), {{"slow", "http://svc.test/slow"}, {"svc", "http://svc.test/async"}});

  auto id = h.create();
  auto sid = std::to_string(id);
  expect(h.put(sid + "/model", model) == 200, "model rejected");
  expect(h.put(sid + "/state", {{"state", "running"}}) == 200, "start rejected");
  expect(poll_until([&] { return slow_calls > 0 && !callback_header(*h.services, "http://svc.test/async").empty(); }, 5s),
         "branches not called");
  auto cb = callback_header(*h.services, "http://svc.test/async");

  std::jthread releaser([gate] {
    std::this_thread::sleep_for(150ms);
    gate->open();
  });
  expect(h.put(sid + "/state", {{"state", "stopping"}}) == 200, "stop rejected");
  expect(h.engine->wait_for_state(id, InstanceState::stopped, 10s), "never stopped");

  std::vector<std::string> seen;
  bool after_stop = false;
  for (const auto& e : h.log->of(id)) {
    std::string name;
    if (e.topic == "state") name = "state/" + e.content.value("state", "");
    else if (e.topic == "activity" && e.event == "receiving") name = "activity/receiving";
    else continue;
    if (name == "state/stopping") after_stop = true;
    if (after_stop) seen.push_back(name);
  }
  std::vector<std::string> want{"state/stopping", "activity/receiving", "state/stopped"};
  std::string seen_text;
  for (auto& s : seen) seen_text += s + " ";
  expect(seen == want, "order after stop: " + seen_text);

  int suspended = h.callback(cb, {{"n", 1}}, false);
  expect(suspended == 503, "callback while stopped answered " + std::to_string(suspended));
  expect(h.put(sid + "/state", {{"state", "running"}}) == 200, "restart rejected");
  int accepted = h.callback(cb, {{"n", 1}}, false);
  expect(accepted == 200, "callback after restart answered " + std::to_string(accepted));
  expect(h.engine->wait_for_state(id, InstanceState::finished, 5s), "did not finish after restart");
  expect(slow_calls == 1, "synchronous branch called " + std::to_string(slow_calls.load()) + " times");
  return {true, "[" + seen_text.substr(0, seen_text.size() - 1) + "], callback 503 while stopped, 200 after restart"};
}

// 6 --------------------------------------------------------------------------

Result loop_enactments() {
  Bench b;
  json inc{{"id", "inc"}, {"kind", "manipulate"}, {"scripts", {{"finalize", "data.i = data.i + 1"}}}};
  json loop{{"id", "l"},
            {"kind", "loop"},
            {"mode", "pre_test"},
            {"condition", "data.i < 5"},
            {"children", json::array({call_node("t1", "svc"), inc})}};
  auto m = model_from_json(model_json(seq("root", json::array({loop})), {{"svc", "http://svc.test/work"}}, {{"i", 0}}));
  auto id = b.engine->create();
  b.engine->load_model(id, m);
  b.engine->set_state(id, InstanceState::running);
  expect(b.engine->wait_for_state(id, InstanceState::finished, 5s), "did not finish");
  std::map<std::string, int> callings;
  for (const auto& e : b.log->of(id)) {
    if (e.topic == "activity" && e.event == "calling") ++callings[e.content.value("enactment", "")];
  }
  std::map<std::string, int> want;
  for (int i = 1; i <= 5; ++i) want["t1-enactment-" + std::to_string(i)] = 1;
  std::string got;
  for (auto& [k, v] : callings) got += k + "x" + std::to_string(v) + " ";
  expect(callings == want, "saw " + got);
  return {true, "t1-enactment-1 .. t1-enactment-5, each once"};
}

// 7 --------------------------------------------------------------------------

Result repair_singleton() {
  HttpBench h;
  h.services->route("http://svc.test/broken", [](const http::Request&) { return testing::json_response("{}", 500); });
  h.services->route("http://svc.test/ok", [](const http::Request&) { return testing::json_response("{}"); });
  auto endpoints = json{{"svc", "http://svc.test/broken"}};
  auto id = h.create();
  auto sid = std::to_string(id);
  expect(h.put(sid + "/model", model_json(seq("root", json::array({call_node("a1", "svc")})), endpoints)) == 200,
         "model rejected");
  expect(h.put(sid + "/state", {{"state", "running"}}) == 200, "start rejected");
  expect(h.engine->wait_for_state(id, InstanceState::stopped, 5s), "failure did not stop the instance");
  auto stored = h.get(sid + "/positions");
  expect(stored.dump().find("a1") != std::string::npos, "no stored position at a1: " + stored.dump());

  expect(h.patch(sid + "/endpoints", {{"change", {{"svc", "http://svc.test/ok"}}}}) == 200, "endpoint patch rejected");
  auto repaired = model_json(seq("root", json::array({call_node("a1", "svc"), call_node("a_new", "svc")})), endpoints);
  expect(h.put(sid + "/model", repaired) == 200, "repaired model rejected");
  expect(h.put(sid + "/state", {{"state", "running"}}) == 200, "restart rejected");
  expect(h.engine->wait_for_state(id, InstanceState::finished, 5s), "repaired instance did not finish");

  auto attributes = h.get(sid + "/attributes");
  expect(attributes.value("singleton", json()) == "true", "attributes: " + attributes.dump());
  auto names = h.log->names(id);
  auto has = [&](const std::string& n) { return std::find(names.begin(), names.end(), n) != names.end(); };
  expect(has("description/change"), "no description/change event");
  expect(has("endpoints/change"), "no endpoints/change event");
  std::vector<std::string> done;
  for (const auto& e : h.log->of(id)) {
    if (e.topic == "activity" && e.event == "done" && e.content.value("activity", "") != "a1") done.push_back(e.content.at("activity"));
  }
  expect(done == std::vector<std::string>{"a_new"}, "inserted activity did not run once");
  expect(count_requests(*h.services, "http://svc.test/ok") == 2, "resumed calls did not use the patched endpoint");
  return {true, "stopped at a1, repaired, restarted from the stored position, finished with singleton=true"};
}

// 8 --------------------------------------------------------------------------

Result worklist_strategies() {
  std::vector<std::pair<std::string, testing::ScenarioResult>> runs{
      {"round-robin", testing::round_robin_fairness()},
      {"workload", testing::workload_minimum(3, 100)},
      {"skill", testing::skill_matches_brute_force(5, 50)},
      {"duty", testing::duty_constraints(9, 200)}};
  std::string detail;
  for (auto& [name, r] : runs) {
    expect(r.ok(), name + ": " + r.failure);
    detail += name + " " + std::to_string(r.checks) + " checks, ";
  }
  return {true, detail.substr(0, detail.size() - 2)};
}

// 9 --------------------------------------------------------------------------

Result log_completeness() {
  auto t0 = Clock::now();
  services::ServiceHost host;
  host.bind("127.0.0.1", 0);
  host.start();

  Bench b;
  b.services->route("http://svc.test/", [](const http::Request&) { return testing::json_response(R"({"n": 1})"); });
  Gateway gateway(b.engine->bus(), GatewayConfig{});
  SubscriptionSpec spec;
  spec.endpoint = host.base_url() + "log";
  spec.selections = {{"activity", "*", false}, {"state", "*", false}};
  gateway.subscribe(spec);

  json calls = json::array();
  for (int i = 1; i <= 10; ++i) calls.push_back(call_node("a" + std::to_string(i), "svc"));
  auto model = model_from_json(model_json(seq("root", calls), {{"svc", "http://svc.test/work"}}));

  const int instances = 100;
  std::vector<InstanceId> ids;
  for (int i = 0; i < instances; ++i) {
    auto id = b.engine->create();
    b.engine->load_model(id, model);
    ids.push_back(id);
  }
  for (auto id : ids) b.engine->set_state(id, InstanceState::running);
  for (auto id : ids) expect(b.engine->wait_for_state(id, InstanceState::finished, 60s), "instance did not finish");
  double ran = seconds_since(t0);

  const std::size_t expected = 10 * 5 + 3;
  bool complete = poll_until(
      [&] {
        for (auto id : ids) {
          if (host.logger().event_count(b.engine->uuid(id)) < expected) return false;
        }
        return true;
      },
      30s);
  for (auto id : ids) {
    auto uuid = b.engine->uuid(id);
    auto hist = host.logger().histogram(uuid);
    std::map<std::string, std::size_t> want{{"activity/calling", 10}, {"activity/receiving", 10}, {"activity/manipulating", 10},
                                            {"activity/status", 10},  {"activity/done", 10},      {"state/change", 3}};
    std::string got;
    for (auto& [k, v] : hist) got += k + "=" + std::to_string(v) + " ";
    expect(complete && hist == want, "trace " + uuid + " holds " + got);
    auto xml = host.logger().to_xml(uuid);
    std::size_t events = 0;
    for (auto at = xml.find("<event>"); at != std::string::npos; at = xml.find("<event>", at + 1)) ++events;
    expect(events == expected, "XES document of " + uuid + " has " + std::to_string(events) + " events");
  }
  expect(gateway.dropped() == 0, std::to_string(gateway.dropped()) + " events dropped");
  auto latency = b.engine->bus().publish_latency();
  double median_us = std::chrono::duration<double, std::micro>(latency.median).count();
  gateway.shutdown();
  host.stop();
  expect(ran < 60.0, "run took " + fmt_seconds(ran));
  expect(median_us < 1000.0, "median emit latency " + std::to_string(median_us) + "us");
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d instances x 10 activities in %s, %zu events per trace, 0 lost, median emit %.1fus",
                instances, fmt_seconds(ran).c_str(), expected, median_us);
  return {true, buf};
}

// 10 -------------------------------------------------------------------------

/// A pf-engine child process on a free port.
class ChildEngine {
 public:
  ChildEngine() {
    int fds[2];
    expect(pipe(fds) == 0, "pipe failed");
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);
    posix_spawn_file_actions_addclose(&actions, fds[0]);
    std::vector<std::string> args{PF_ENGINE_BINARY, "--host", "127.0.0.1", "--port", "0", "--log-level", "warn"};
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    int rc = posix_spawn(&pid_, PF_ENGINE_BINARY, &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    close(fds[1]);
    expect(rc == 0, "cannot start " + std::string(PF_ENGINE_BINARY));
    out_ = fdopen(fds[0], "r");
    char line[512];
    while (std::fgets(line, sizeof line, out_)) {
      std::string s(line);
      if (s.rfind("listening ", 0) == 0) {
        base_ = s.substr(10);
        while (!base_.empty() && (base_.back() == '\n' || base_.back() == '\r')) base_.pop_back();
        break;
      }
    }
    expect(!base_.empty(), "child engine did not report its address");
  }
  ~ChildEngine() {
    if (pid_ > 0) {
      kill(pid_, SIGTERM);
      int status = 0;
      waitpid(pid_, &status, 0);
    }
    if (out_) std::fclose(out_);
  }
  const std::string& base() const { return base_; }

 private:
  pid_t pid_ = -1;
  FILE* out_ = nullptr;
  std::string base_;
};

json get_url(const std::string& url) {
  auto scheme = url.find("://");
  auto slash = url.find('/', scheme + 3);
  httplib::Client c(url.substr(0, slash));
  c.set_read_timeout(5s);
  auto r = c.Get(url.substr(slash));
  expect(r && r->status == 200, "GET " + url + " failed");
  return json::parse(r->body);
}

Result federation() {
  ChildEngine child;
  services::ServiceHost host;
  host.bind("127.0.0.1", 0);
  host.start();
  HttpBench parent(false);

  json child_model = model_json(
      seq("root", json::array({call_node("wait", "timer", {{"parameters", {{"arguments", {{"duration", 0.3}}}}}}),
                               {{"id", "calc"}, {"kind", "manipulate"}, {"scripts", {{"finalize", "data.answer = data.q * 2"}}}}})),
      {{"timer", host.base_url() + "timeout"}}, {{"q", 0}, {"answer", 0}});
  json spawn = call_node("spawn", "spawner",
                         {{"parameters", {{"arguments", {{"engine", child.base()}, {"model", child_model}, {"dataelements", {{"q", 21}}}}}}},
                          {"scripts", {{"finalize", "data.answer = result.dataelements.answer"}}}});
  json model = model_json(seq("root", json::array({spawn})), {{"spawner", host.base_url() + "spawn"}}, {{"answer", 0}});

  auto t0 = Clock::now();
  auto id = parent.create();
  auto sid = std::to_string(id);
  expect(parent.put(sid + "/model", model) == 200, "parent model rejected");
  expect(parent.put(sid + "/state", {{"state", "running"}}) == 200, "parent start rejected");
  expect(parent.log->wait_for(id, "task/instantiation", 10s), "no task/instantiation event");
  std::string child_url;
  for (const auto& e : parent.log->of(id)) {
    if (e.name() == "task/instantiation") child_url = e.content.value("url", "");
  }
  expect(child_url.rfind(child.base(), 0) == 0, "instantiation url " + child_url + " is not on " + child.base());
  auto child_state = get_url(child_url + "/state").at("state").get<std::string>();
  if (child_state != "finished") expect(parent.state(id) == "running", "parent moved on while the child ran");

  expect(parent.engine->wait_for_state(id, InstanceState::finished, 15s), "parent did not finish");
  double took = seconds_since(t0);
  expect(get_url(child_url + "/state").at("state") == "finished", "child not finished");
  auto data = parent.get(sid + "/dataelements");
  expect(data.at("answer") == 42, "parent data " + data.dump());
  expect(took >= 0.3, "parent finished before the child's timer could fire");
  host.stop();
  return {true, "child " + child_url + " spawned, parent resumed with the child's result after " + fmt_seconds(took)};
}

} // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  std::vector<std::pair<std::string, std::function<Result()>>> criteria{
      {"instance lifecycle conformance", lifecycle_conformance},
      {"activity event order", activity_event_order},
      {"vote combination oracle", vote_combination},
      {"asynchronous update protocol", async_updates},
      {"stop drain semantics", stop_drain},
      {"loop enactment identifiers", loop_enactments},
      {"repair and singleton", repair_singleton},
      {"worklist strategies", worklist_strategies},
      {"log completeness and scale", log_completeness},
      {"federation", federation},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Result r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, e.what()};
    }
    failed += !r.ok;
    std::cout << (r.ok ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << r.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
