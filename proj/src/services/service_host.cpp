#include "pflow/services/service_host.hpp"

#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "pflow/events.hpp"
#include "pflow/protocol.hpp"

namespace pflow::services {

namespace {

using httplib::Request;
using httplib::Response;

void send_json(Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(Response& res, int status, const std::string& message) {
  send_json(res, json{{"error", message}}, status);
}

http::Headers headers_of(const Request& req) {
  http::Headers h;
  for (const auto& [k, v] : req.headers) h[k] = v;
  return h;
}

/// JSON body, or the form/query parameters when the body is not JSON.
json arguments_of(const Request& req) {
  if (!req.body.empty()) {
    auto j = json::parse(req.body, nullptr, false);
    if (!j.is_discarded()) return j;
  }
  json j = json::object();
  for (const auto& [k, v] : req.params) {
    auto parsed = json::parse(v, nullptr, false);
    j[k] = parsed.is_discarded() ? json(v) : parsed;
  }
  return j;
}

void reply(Response& res, const http::Response& r) {
  res.status = r.status;
  std::string type = "application/json";
  for (const auto& [k, v] : r.headers) {
    if (k == "Content-Type") type = v;
    else res.set_header(k, v);
  }
  res.set_content(r.body, type);
}

} // namespace

struct ServiceHost::Impl {
  explicit Impl(ServiceHostConfig cfg)
      : config(std::move(cfg)),
        sender(CallbackSenderConfig{config.client}),
        worklist(config.worklist, [this](const TaskNotice& n) { notify(n); }),
        logger(config.log_directory),
        timeouts(sender),
        spawner(SpawnerConfig{"", config.client}, sender) {
    server.new_task_queue = [n = config.threads] { return new httplib::ThreadPool(n); };
    routes();
  }

  void notify(const TaskNotice& n) {
    CallbackPut put;
    put.url = n.callback_url;
    put.body = n.body;
    put.update = !n.final;
    put.failure = n.failure;
    put.event = n.event;
    sender.send(std::move(put));
  }

  void routes();
  void tick(std::stop_token stop);

  ServiceHostConfig config;
  CallbackSender sender;
  Worklist worklist;
  XesLogger logger;
  TimeoutService timeouts;
  Spawner spawner;
  httplib::Server server;
  std::string base;
  std::jthread server_thread;
  std::jthread ticker;
  std::mutex tick_mu;
  std::condition_variable_any tick_cv;
};

void ServiceHost::Impl::tick(std::stop_token stop) {
  std::unique_lock lock(tick_mu);
  while (!stop.stop_requested()) {
    tick_cv.wait_for(lock, stop, config.deadline_tick, [] { return false; });
    if (stop.stop_requested()) break;
    lock.unlock();
    worklist.check_deadlines(std::chrono::steady_clock::now());
    lock.lock();
  }
}

void ServiceHost::Impl::routes() {
  server.set_exception_handler([](const Request&, Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const json::exception& e) {
      send_error(res, 400, e.what());
    } catch (const std::invalid_argument& e) {
      send_error(res, 400, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  });

  server.Post("/worklist/tasks", [this](const Request& req, Response& res) {
    auto headers = headers_of(req);
    auto callback = protocol::async_target(headers);
    if (!callback) return send_error(res, 400, "worklist tasks need a callback");
    auto request = TaskRequest::from_arguments(arguments_of(req));
    request.callback_url = *callback;
    request.instance = http::header(headers, protocol::headers::instance_uuid)
                           .value_or(http::header(headers, protocol::headers::instance_url).value_or(""));
    request.activity = http::header(headers, protocol::headers::activity).value_or("");
    request.label = http::header(headers, protocol::headers::label).value_or("");
    auto id = worklist.create(std::move(request));
    res.set_header(protocol::headers::callback, "true");
    send_json(res, json{{"task", id}}, 202);
  });
  server.Get("/worklist/tasks", [this](const Request& req, Response& res) {
    json out = json::array();
    auto list = req.has_param("user") ? worklist.visible(req.get_param_value("user")) : worklist.tasks();
    for (const auto& t : list) out.push_back(t.to_json());
    send_json(res, out);
  });
  server.Get(R"(/worklist/tasks/([^/]+))", [this](const Request& req, Response& res) {
    auto t = worklist.find(req.matches[1].str());
    if (!t) return send_error(res, 404, "unknown task");
    send_json(res, t->to_json());
  });
  server.Post(R"(/worklist/tasks/([^/]+)/(take|return|complete))", [this](const Request& req, Response& res) {
    auto id = req.matches[1].str();
    if (!worklist.find(id)) return send_error(res, 404, "unknown task");
    auto args = arguments_of(req);
    if (!args.contains("user") || !args.at("user").is_string()) return send_error(res, 400, "user missing");
    auto action = *user_action_from_string(req.matches[2].str());
    auto r = worklist.act(id, args.at("user").get<std::string>(), action, args.value("result", json()));
    json body{{"ok", r.ok}, {"state", std::string(to_string(r.state))}};
    if (!r.ok) body["error"] = r.reason;
    send_json(res, body, r.ok ? 200 : 409);
  });
  server.Post("/worklist/deadlines", [this](const Request&, Response& res) {
    send_json(res, json{{"timed_out", worklist.check_deadlines(std::chrono::steady_clock::now())}});
  });

  server.Post("/log", [this](const Request& req, Response& res) {
    logger.consume(EngineEvent::from_json(json::parse(req.body)));
    send_json(res, json::object());
  });
  server.Get("/log", [this](const Request&, Response& res) { send_json(res, logger.traces()); });
  server.Get(R"(/log/([^/]+))", [this](const Request& req, Response& res) {
    auto uuid = req.matches[1].str();
    if (logger.event_count(uuid) == 0) return send_error(res, 404, "unknown trace");
    res.set_content(logger.to_xml(uuid), "application/xml");
  });

  server.Post("/timeout", [this](const Request& req, Response& res) {
    auto callback = protocol::async_target(headers_of(req));
    if (!callback) return send_error(res, 400, "timeout needs a callback");
    auto args = arguments_of(req);
    double seconds = args.value("duration", 1.0);
    if (seconds < 0) return send_error(res, 400, "duration must not be negative");
    auto delay = std::chrono::milliseconds(static_cast<long long>(seconds * 1000));
    timeouts.schedule(*callback, delay, json{{"duration", seconds}});
    res.set_header(protocol::headers::callback, "true");
    send_json(res, json::object(), 202);
  });

  server.Post("/spawn", [this](const Request& req, Response& res) {
    reply(res, spawner.invoke(headers_of(req), arguments_of(req)));
  });
  server.Post(R"(/spawn/events/([^/]+))", [this](const Request& req, Response& res) {
    reply(res, spawner.on_event(req.matches[1].str(), req.body));
  });
  server.Get("/spawn", [this](const Request&, Response& res) { send_json(res, spawner.children()); });
}

ServiceHost::ServiceHost(ServiceHostConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

ServiceHost::~ServiceHost() { stop(); }

int ServiceHost::bind(const std::string& host, int port) {
  int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  auto origin = impl_->config.public_origin;
  if (origin.empty()) origin = "http://" + (host == "0.0.0.0" ? std::string("localhost") : host) + ":" + std::to_string(bound);
  impl_->base = http::join(origin, "/");
  impl_->spawner.set_public_base(impl_->base);
  return bound;
}

void ServiceHost::start() {
  impl_->ticker = std::jthread([this](std::stop_token st) { impl_->tick(st); });
  impl_->server_thread = std::jthread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void ServiceHost::run() {
  impl_->ticker = std::jthread([this](std::stop_token st) { impl_->tick(st); });
  impl_->server.listen_after_bind();
}

void ServiceHost::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->server_thread.joinable()) impl_->server_thread.join();
  if (impl_->ticker.joinable()) {
    impl_->ticker.request_stop();
    impl_->ticker.join();
  }
}

std::string ServiceHost::base_url() const { return impl_->base; }

Worklist& ServiceHost::worklist() { return impl_->worklist; }
XesLogger& ServiceHost::logger() { return impl_->logger; }
TimeoutService& ServiceHost::timeouts() { return impl_->timeouts; }
Spawner& ServiceHost::spawner() { return impl_->spawner; }
CallbackSender& ServiceHost::sender() { return impl_->sender; }

} // namespace pflow::services
