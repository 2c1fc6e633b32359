#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "pflow/control_api.hpp"
#include "pflow/services/service_host.hpp"
#include "support/fakes.hpp"

using namespace pflow;
using namespace pflow::services;
using namespace std::chrono_literals;
using testing::FakeClient;

namespace {

template <class Pred>
bool eventually(Pred p, std::chrono::milliseconds limit = 5s) {
  auto until = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < until) {
    if (p()) return true;
    std::this_thread::sleep_for(5ms);
  }
  return p();
}

std::vector<http::Request> to(const FakeClient& c, const std::string& prefix) {
  std::vector<http::Request> out;
  for (auto& r : c.requests()) {
    if (r.url.rfind(prefix, 0) == 0) out.push_back(r);
  }
  return out;
}

} // namespace

TEST_CASE("callback sender retries 503 and keeps per-url order") {
  auto client = std::make_shared<FakeClient>();
  int busy = 3;
  client->route("http://e/1/", [&](const http::Request&) { return testing::json_response("{}", busy-- > 0 ? 503 : 200); });
  CallbackSender sender({client, 1s, 10ms, 5s});
  sender.send({"http://e/1/callbacks/a", {{"n", 1}}, true, false, "worklist/task-assigned"});
  sender.send({"http://e/1/callbacks/a", {{"n", 2}}, false, false, std::nullopt});
  sender.send({"http://e/2/callbacks/b", {{"n", 3}}, false, true, std::nullopt});
  REQUIRE(sender.drain(5s));
  CHECK(sender.delivered() == 3);
  CHECK(sender.last_status("http://e/1/callbacks/a") == 200);

  auto a = to(*client, "http://e/1/");
  REQUIRE(a.size() == 5);
  CHECK(json::parse(a.front().body).at("n") == 1);
  CHECK(json::parse(a.back().body).at("n") == 2);
  CHECK(json::parse(a[3].body).at("n") == 1);
  CHECK(http::header(a.front().headers, "CPEE-UPDATE") == "true");
  CHECK(http::header(a.front().headers, "CPEE-EVENT") == "worklist/task-assigned");
  CHECK_FALSE(http::header(a.back().headers, "CPEE-UPDATE").has_value());
  auto b = to(*client, "http://e/2/");
  REQUIRE(b.size() == 1);
  CHECK(http::header(b[0].headers, "CPEE-FAILURE") == "true");
}

TEST_CASE("callback sender gives up on 404 and after the deadline") {
  auto client = std::make_shared<FakeClient>();
  client->route("http://gone", [](const http::Request&) { return testing::json_response("{}", 404); });
  client->route("http://busy", [](const http::Request&) { return testing::json_response("{}", 503); });
  CallbackSender sender({client, 1s, 10ms, 100ms});
  sender.send({"http://gone/x", json::object()});
  sender.send({"http://busy/x", json::object()});
  REQUIRE(sender.drain(5s));
  CHECK(sender.abandoned() == 2);
  CHECK(to(*client, "http://gone").size() == 1);
  CHECK(to(*client, "http://busy").size() > 2);
}

TEST_CASE("timeout service answers after the delay") {
  auto client = std::make_shared<FakeClient>();
  CallbackSender sender({client});
  TimeoutService timeouts(sender);
  auto start = std::chrono::steady_clock::now();
  timeouts.schedule("http://e/late", 120ms, {{"which", "late"}});
  timeouts.schedule("http://e/early", 30ms, {{"which", "early"}});
  CHECK(timeouts.pending() == 2);
  REQUIRE(eventually([&] { return client->requests().size() == 2; }));
  CHECK(std::chrono::steady_clock::now() - start >= 120ms);
  CHECK(client->requests()[0].url == "http://e/early");
  CHECK(client->requests()[1].url == "http://e/late");
  CHECK(timeouts.pending() == 0);
}

TEST_CASE("xes traces") {
  auto dir = std::filesystem::temp_directory_path() / ("pflow-xes-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  {
    XesLogger log(dir, 20ms);
    log.consume(make_event("state", "change", 1, "u-1", {{"state", "running"}}));
    log.consume(make_event("activity", "calling", 1, "u-1", {{"activity", "a1"}, {"label", "Check <&>"}, {"enactment", "a1-enactment-1"}}));
    log.consume(make_event("activity", "done", 1, "u-1", {{"activity", "a1"}, {"enactment", "a1-enactment-1"}}));
    log.consume(make_event("task", "instantiation", 2, "u-2", {{"activity", "s1"}, {"url", "http://child/3"}}));
    CHECK(log.event_count("u-1") == 3);
    CHECK(log.event_count("nope") == 0);
    CHECK(log.histogram("u-1") == std::map<std::string, std::size_t>{{"activity/calling", 1}, {"activity/done", 1}, {"state/change", 1}});
    CHECK(log.traces() == std::vector<std::string>{"u-1", "u-2"});
    auto xml = log.to_xml("u-1");
    CHECK(xml.find("<string key=\"lifecycle:transition\" value=\"start\"/>") != std::string::npos);
    CHECK(xml.find("<string key=\"lifecycle:transition\" value=\"complete\"/>") != std::string::npos);
    CHECK(xml.find("Check &lt;&amp;&gt;") != std::string::npos);
    CHECK(log.to_xml("u-2").find("task:transition") != std::string::npos);
    log.flush();
    REQUIRE(std::filesystem::exists(log.path_of("u-1")));
    std::ifstream in(log.path_of("u-1"));
    std::string file((std::istreambuf_iterator<char>(in)), {});
    CHECK(file == xml);
  }
  std::filesystem::remove_all(dir);
  CHECK(xml_escape("a\"b'") == "a&quot;b&apos;");
}

TEST_CASE("xes logger attached to a bus sees every event") {
  Bus bus;
  XesLogger log;
  log.attach(bus);
  for (int i = 0; i < 50; ++i) bus.publish({MessageKind::event, make_event("activity", "calling", 1, "u", {{"activity", "a"}}), {}});
  bus.publish({MessageKind::vote, make_event("activity", "syncing_before", 1, "u", {}), std::string("v")});
  log.detach();
  bus.publish({MessageKind::event, make_event("activity", "done", 1, "u", {}), {}});
  CHECK(log.event_count("u") == 50);
}

TEST_CASE("spawner starts a child and reports its completion") {
  auto client = std::make_shared<FakeClient>();
  client->route("http://child/flow/engine/", [](const http::Request& r) {
    if (r.method == "POST" && r.url == "http://child/flow/engine/") {
      return testing::json_response(R"({"id":7,"url":"http://child/flow/engine/7"})", 201);
    }
    if (r.method == "POST") return testing::json_response(R"({"id":"sub-1"})", 201);
    if (r.method == "GET") return testing::json_response(R"({"answer":42})");
    return testing::json_response("{}");
  });
  CallbackSender sender({client, 1s, 10ms, 5s});
  Spawner spawner({"http://services/", client}, sender);

  json args{{"engine", "http://child/flow/engine"}, {"model", {{"root", {{"id", "r"}, {"kind", "sequence"}}}}}, {"dataelements", {{"q", 1}}}};
  auto res = spawner.invoke({{"CPEE-CALLBACK", "http://parent/flow/engine/1/callbacks/c1"}}, args);
  CHECK(res.status == 202);
  CHECK(http::header(res.headers, "CPEE-INSTANTIATION") == "true");
  CHECK(http::header(res.headers, "CPEE-CALLBACK") == "true");
  CHECK(res.body == "http://child/flow/engine/7");

  auto reqs = client->requests();
  REQUIRE(reqs.size() == 5);
  CHECK(reqs[1].url == "http://child/flow/engine/subscriptions");
  auto spec = json::parse(reqs[1].body);
  CHECK(spec.at("instance") == 7);
  auto endpoint = spec.at("endpoint").get<std::string>();
  auto token = endpoint.substr(endpoint.rfind('/') + 1);
  CHECK(reqs[2].method == "PUT");
  CHECK(reqs[3].method == "PATCH");
  CHECK(json::parse(reqs[4].body) == json{{"state", "running"}});
  CHECK(spawner.children().size() == 1);

  auto running = make_event("state", "change", 7, "c", {{"state", "running"}});
  CHECK(spawner.on_event(token, running.to_json().dump()).status == 200);
  auto finished = make_event("state", "change", 7, "c", {{"state", "finished"}});
  CHECK(spawner.on_event(token, finished.to_json().dump()).status == 200);
  REQUIRE(sender.drain(5s));
  auto back = to(*client, "http://parent/");
  REQUIRE(back.size() == 1);
  CHECK(json::parse(back[0].body).at("dataelements") == json{{"answer", 42}});
  CHECK(to(*client, "http://child/flow/engine/subscriptions/sub-1").size() == 1);
  CHECK(spawner.children().empty());
  CHECK(spawner.on_event(token, finished.to_json().dump()).status == 404);
}

TEST_CASE("spawner salvages when the engine is unreachable") {
  auto client = std::make_shared<FakeClient>();
  client->route("http://down", [](const http::Request&) -> http::Response {
    throw http::TransportError(http::TransportError::Kind::connect, "refused");
  });
  CallbackSender sender({client});
  Spawner spawner({"http://services/", client}, sender);
  auto res = spawner.invoke({}, {{"engine", "http://down/flow/engine/"}, {"model", json::object()}});
  CHECK(res.status == 200);
  CHECK(http::header(res.headers, "CPEE-SALVAGE") == "true");
  CHECK(spawner.invoke({}, {{"model", json::object()}}).status == 400);
}

TEST_CASE("worklist round trip through a running engine") {
  ServiceHostConfig scfg;
  scfg.worklist.roles["team"] = {"ann", "bob"};
  scfg.worklist.self_service = true;
  ServiceHost host(scfg);
  auto sport = host.bind("127.0.0.1", 0);
  host.start();

  EngineConfig ecfg;
  Engine engine(ecfg);
  Gateway gateway(engine.bus(), {});
  ControlApi api(engine, gateway);
  api.bind("127.0.0.1", 0);
  api.start();
  testing::EventLog log(engine.bus());

  json call{{"id", "approve"},
            {"kind", "call"},
            {"label", "Approve order"},
            {"endpoint_key", "worklist"},
            {"parameters", {{"arguments", {{"role", "team"}, {"form", {{"amount", "!data.amount"}}}}}}},
            {"scripts", {{"finalize", "data.approved = result.result.ok; data.by = result.worked_by"}}}};
  auto model = model_from_json({{"root", {{"id", "root"}, {"kind", "sequence"}, {"children", json::array({call})}}},
                                {"endpoints", {{"worklist", host.base_url() + "worklist/tasks"}}},
                                {"dataelements", {{"amount", 250}}}});
  auto id = engine.create();
  engine.load_model(id, model);
  engine.set_state(id, InstanceState::running);

  httplib::Client svc("127.0.0.1", sport);
  std::string task;
  REQUIRE(eventually([&] {
    auto r = svc.Get("/worklist/tasks?user=ann");
    if (!r || r->status != 200) return false;
    auto list = json::parse(r->body);
    if (list.empty()) return false;
    task = list[0].at("id");
    CHECK(list[0].at("form") == json{{"amount", 250}});
    CHECK(list[0].at("label") == "Approve order");
    return true;
  }));
  CHECK(svc.Post("/worklist/tasks/" + task + "/complete", R"({"user":"ann"})", "application/json")->status == 409);
  CHECK(svc.Post("/worklist/tasks/" + task + "/take", R"({"user":"zed"})", "application/json")->status == 409);
  CHECK(svc.Post("/worklist/tasks/" + task + "/take", R"({"user":"ann"})", "application/json")->status == 200);
  CHECK(json::parse(svc.Get("/worklist/tasks?user=bob")->body).empty());
  CHECK(svc.Post("/worklist/tasks/" + task + "/complete", R"({"user":"ann","result":{"ok":true}})", "application/json")->status == 200);
  CHECK(svc.Get("/worklist/tasks/nope")->status == 404);

  REQUIRE(engine.wait_for_state(id, InstanceState::finished, 10s));
  auto data = engine.context(id, ContextCategory::dataelements);
  CHECK(data.at("approved") == true);
  CHECK(data.at("by") == json::array({"ann"}));
  auto names = log.names(id, "activity");
  CHECK(std::count(names.begin(), names.end(), "activity/receiving") >= 2);

  api.stop();
  host.stop();
  engine.shutdown();
  gateway.shutdown();
}

TEST_CASE("service host rejects malformed requests") {
  ServiceHost host;
  auto port = host.bind("127.0.0.1", 0);
  host.start();
  httplib::Client c("127.0.0.1", port);
  CHECK(c.Post("/worklist/tasks", R"({"role":"x"})", "application/json")->status == 400);
  httplib::Headers cb{{"CPEE-CALLBACK", "http://127.0.0.1:1/cb"}};
  CHECK(c.Post("/worklist/tasks", cb, R"({"form":{}})", "application/json")->status == 400);
  CHECK(c.Post("/timeout", cb, R"({"duration":-1})", "application/json")->status == 400);
  CHECK(c.Post("/timeout", cb, R"({"duration":0.01})", "application/json")->status == 202);
  CHECK(c.Post("/log", "not json", "application/json")->status == 400);
  CHECK(c.Get("/log/none")->status == 404);
  CHECK(c.Post("/spawn/events/none", "{}", "application/json")->status == 404);
  host.stop();
}
