#include "pflow/control_api.hpp"

#include <set>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace pflow {

namespace {

using httplib::Request;
using httplib::Response;

struct HttpError : std::runtime_error {
  HttpError(int s, const std::string& what) : std::runtime_error(what), status(s) {}
  int status;
};

void send_json(Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(Response& res, int status, const std::string& message, json extra = json::object()) {
  extra["error"] = message;
  send_json(res, extra, status);
}

json parse_body(const Request& req) {
  if (req.body.empty()) throw HttpError(400, "request body is empty");
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw HttpError(400, std::string("malformed JSON: ") + e.what());
  }
}

InstanceId id_of(const Request& req) {
  try {
    return std::stoll(req.matches[1].str());
  } catch (const std::exception&) {
    throw HttpError(404, "unknown instance");
  }
}

http::Headers headers_of(const Request& req) {
  http::Headers h;
  for (const auto& [k, v] : req.headers) h[k] = v;
  return h;
}

std::optional<ContextCategory> category_of(const std::string& name) {
  if (name == "dataelements") return ContextCategory::dataelements;
  if (name == "endpoints") return ContextCategory::endpoints;
  if (name == "attributes") return ContextCategory::attributes;
  return std::nullopt;
}

/// {add, delete, change} (or the event spelling added/deleted/changed) is a
/// delta; any other object is a merge patch where null deletes.
ContextDelta delta_from_patch(const json& body, const json& current) {
  if (!body.is_object()) throw HttpError(400, "patch body must be a JSON object");
  static const std::set<std::string> triple{"add", "delete", "change", "added", "deleted", "changed"};
  bool is_triple = !body.empty();
  for (const auto& [k, v] : body.items()) {
    if (!triple.count(k) || !(v.is_object() || ((k == "delete" || k == "deleted") && v.is_array()))) is_triple = false;
  }
  if (is_triple) {
    json j = json::object();
    static const std::map<std::string, std::string> spelling{
        {"add", "added"}, {"delete", "deleted"}, {"change", "changed"},
        {"added", "added"}, {"deleted", "deleted"}, {"changed", "changed"}};
    for (const auto& [k, v] : body.items()) j[spelling.at(k)] = v;
    auto d = ContextDelta::from_json(j);
    for (auto& [k, v] : d.deleted.items()) {
      if (current.contains(k)) v = current.at(k);
    }
    return d;
  }
  ContextDelta d;
  for (const auto& [k, v] : body.items()) {
    auto it = current.find(k);
    if (v.is_null()) {
      if (it != current.end()) d.deleted[k] = *it;
    } else if (it == current.end()) {
      d.added[k] = v;
    } else if (*it != v) {
      d.changed[k] = {{"from", *it}, {"to", v}};
    }
  }
  return d;
}

std::string regex_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (std::string_view(".^$|()[]{}*+?\\").find(c) != std::string_view::npos) out += '\\';
    out += c;
  }
  return out;
}

} // namespace

struct ControlApi::Impl {
  Impl(Engine& e, Gateway& g, ControlApiConfig c) : engine(e), gateway(g), config(std::move(c)) {
    while (!config.prefix.empty() && config.prefix.back() == '/') config.prefix.pop_back();
    if (!config.prefix.empty() && config.prefix.front() != '/') config.prefix.insert(config.prefix.begin(), '/');
    auto threads = config.threads;
    server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    routes();
  }

  Engine& engine;
  Gateway& gateway;
  ControlApiConfig config;
  httplib::Server server;
  std::thread thread;
  std::string base;
  mutable std::mutex mu;
  std::set<std::shared_ptr<SseSink>> streams;
  std::atomic<bool> stopping{false};

  using Handler = std::function<void(const Request&, Response&)>;

  Handler guarded(Handler fn) {
    return [fn = std::move(fn)](const Request& req, Response& res) {
      try {
        fn(req, res);
      } catch (const HttpError& e) {
        send_error(res, e.status, e.what());
      } catch (const NotFound& e) {
        send_error(res, 404, e.what());
      } catch (const IllegalTransition& e) {
        send_error(res, 409, e.what(), {{"from", to_string(e.from())}, {"to", to_string(e.to())}});
      } catch (const IllegalState& e) {
        send_error(res, 409, e.what());
      } catch (const VoteRejected& e) {
        send_error(res, 422, e.what());
      } catch (const ModelValidationError& e) {
        send_error(res, 400, "invalid process model", {{"problems", e.to_json()}});
      } catch (const json::exception& e) {
        send_error(res, 400, e.what());
      } catch (const std::invalid_argument& e) {
        send_error(res, 400, e.what());
      } catch (const std::exception& e) {
        spdlog::error("control api: {} {}: {}", req.method, req.path, e.what());
        send_error(res, 500, e.what());
      }
    };
  }

  void routes() {
    const auto p = regex_escape(config.prefix);
    const std::string inst = p + R"(/(\d+))";

    server.Post(p + "/?", guarded([this](const Request&, Response& res) {
      auto id = engine.create();
      auto url = engine.instance_url(id);
      res.set_header("Location", url);
      send_json(res, {{"id", id}, {"uuid", engine.uuid(id)}, {"url", url}}, 201);
    }));
    server.Get(p + "/?", guarded([this](const Request&, Response& res) { send_json(res, engine.list()); }));

    server.Get(inst + "/?", guarded([this](const Request& req, Response& res) {
      send_json(res, engine.overview(id_of(req)));
    }));
    server.Delete(inst + "/?", guarded([this](const Request& req, Response& res) {
      engine.set_state(id_of(req), InstanceState::purged);
      send_json(res, {{"state", "purged"}});
    }));

    server.Get(inst + "/model", guarded([this](const Request& req, Response& res) {
      send_json(res, model_to_json(engine.model(id_of(req))));
    }));
    server.Put(inst + "/model", guarded([this](const Request& req, Response& res) {
      auto id = id_of(req);
      auto model = model_from_json(parse_body(req), ParseOptions{true});
      engine.load_model(id, model);
      send_json(res, model_to_json(engine.model(id)));
    }));

    server.Get(inst + "/state", guarded([this](const Request& req, Response& res) {
      send_json(res, {{"state", to_string(engine.state(id_of(req)))}});
    }));
    server.Put(inst + "/state", guarded([this](const Request& req, Response& res) {
      auto id = id_of(req);
      std::string name;
      auto body = json::parse(req.body, nullptr, false);
      if (body.is_object() && body.contains("state") && body.at("state").is_string()) name = body.at("state");
      else if (body.is_string()) name = body.get<std::string>();
      else name = req.body;
      auto target = instance_state_from_string(name);
      if (!target) throw HttpError(400, "unknown state '" + name + "'");
      if (engine.state(id) == *target) return send_json(res, {{"state", name}});
      if (*target == InstanceState::finished || *target == InstanceState::stopped || *target == InstanceState::ready) {
        throw HttpError(400, "state " + name + " cannot be set through the control interface");
      }
      engine.set_state(id, *target);
      send_json(res, {{"state", to_string(*target)}});
    }));

    server.Get(inst + "/positions", guarded([this](const Request& req, Response& res) {
      send_json(res, positions_to_json(engine.positions(id_of(req))));
    }));
    server.Patch(inst + "/positions", guarded([this](const Request& req, Response& res) {
      auto id = id_of(req);
      auto body = parse_body(req);
      if (body.is_object() && body.contains("positions")) body = body.at("positions");
      if (!body.is_array()) throw HttpError(400, "positions must be an array");
      engine.set_positions(id, positions_from_json(body));
      send_json(res, positions_to_json(engine.positions(id)));
    }));

    server.Get(inst + "/(dataelements|endpoints|attributes)", guarded([this](const Request& req, Response& res) {
      send_json(res, engine.context(id_of(req), *category_of(req.matches[2].str())));
    }));
    server.Patch(inst + "/(dataelements|endpoints|attributes)", guarded([this](const Request& req, Response& res) {
      auto id = id_of(req);
      auto c = *category_of(req.matches[2].str());
      auto delta = delta_from_patch(parse_body(req), engine.context(id, c));
      send_json(res, engine.patch(id, c, delta).to_json());
    }));

    server.Get(inst + "/callbacks", guarded([this](const Request& req, Response& res) {
      auto id = id_of(req);
      if (!engine.exists(id)) throw NotFound("instance " + std::to_string(id) + " not found");
      json out = json::array();
      for (const auto& r : engine.callbacks().records(id)) {
        auto j = r.to_json();
        j["url"] = protocol::callback_url(base_url(), id, r.callback_id);
        out.push_back(j);
      }
      send_json(res, out);
    }));
    server.Put(inst + R"(/callbacks/([^/]+))", guarded([this](const Request& req, Response& res) {
      auto id = id_of(req);
      auto msg = protocol::CallbackMessage::from_headers(headers_of(req), req.body);
      switch (engine.deliver_callback(id, req.matches[2].str(), std::move(msg))) {
        case protocol::DeliveryStatus::accepted:
          send_json(res, {{"accepted", true}});
          break;
        case protocol::DeliveryStatus::unknown:
          send_error(res, 404, "unknown callback");
          break;
        case protocol::DeliveryStatus::suspended:
          res.set_header("Retry-After", "1");
          send_error(res, 503, "instance is not running, retry later");
          break;
      }
    }));

    const std::string subs = p + "/subscriptions";
    server.Post(subs + "/?", guarded([this](const Request& req, Response& res) {
      auto spec = SubscriptionSpec::from_json(parse_body(req));
      auto sid = gateway.subscribe(spec);
      auto url = base_url() + "subscriptions/" + sid;
      json out{{"id", sid}, {"url", url}};
      if (!spec.endpoint) out["sse"] = url + "/sse";
      res.set_header("Location", url);
      send_json(res, out, 201);
    }));
    server.Get(subs + "/?", guarded([this](const Request&, Response& res) {
      json out = json::object();
      for (const auto& [sid, spec] : gateway.list()) out[sid] = spec.to_json();
      send_json(res, out);
    }));
    server.Get(subs + "/([^/]+)", guarded([this](const Request& req, Response& res) {
      auto spec = gateway.find(req.matches[1].str());
      if (!spec) throw HttpError(404, "unknown subscription");
      send_json(res, spec->to_json());
    }));
    server.Delete(subs + "/([^/]+)", guarded([this](const Request& req, Response& res) {
      if (!gateway.unsubscribe(req.matches[1].str())) throw HttpError(404, "unknown subscription");
      send_json(res, {{"deleted", true}});
    }));
    server.Get(subs + "/([^/]+)/sse", guarded([this](const Request& req, Response& res) { stream(req, res); }));

    server.Put(p + R"(/votes/([^/]+))", guarded([this](const Request& req, Response& res) {
      auto response = VoteResponse::from_body(req.body);
      if (!gateway.answer(req.matches[1].str(), response)) throw HttpError(404, "unknown or already answered vote");
      send_json(res, {{"accepted", true}});
    }));
  }

  void stream(const Request& req, Response& res) {
    auto sid = req.matches[1].str();
    auto spec = gateway.find(sid);
    if (!spec) throw HttpError(404, "unknown subscription");
    if (spec->endpoint) throw HttpError(409, "subscription delivers by push");
    auto sink = gateway.attach(sid);
    if (!sink) throw HttpError(404, "unknown subscription");
    {
      std::lock_guard lock(mu);
      streams.insert(sink);
    }
    res.set_header("Cache-Control", "no-cache");
    auto heartbeat = config.heartbeat;
    res.set_chunked_content_provider(
        "text/event-stream",
        [this, sink, heartbeat, first = true](std::size_t, httplib::DataSink& out) mutable {
          if (first) {
            first = false;
            auto hello = sse_heartbeat();
            return out.write(hello.data(), hello.size());
          }
          auto frame = sink->next(heartbeat);
          if (stopping || sink->closed()) return false;
          if (!frame) frame = sse_heartbeat();
          return out.write(frame->data(), frame->size());
        },
        [this, sid, sink](bool) {
          gateway.detach(sid, sink);
          std::lock_guard lock(mu);
          streams.erase(sink);
        });
  }

  std::string base_url() const {
    std::lock_guard lock(mu);
    return base;
  }

  void close_streams() {
    stopping = true;
    std::lock_guard lock(mu);
    for (const auto& s : streams) s->close();
  }
};

ControlApi::ControlApi(Engine& engine, Gateway& gateway, ControlApiConfig config)
    : impl_(std::make_unique<Impl>(engine, gateway, std::move(config))) {
  engine.set_vote_collector(&gateway);
}

ControlApi::~ControlApi() { stop(); }

int ControlApi::bind(const std::string& host, int port) {
  int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound <= 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  std::string origin = impl_->config.public_origin;
  if (origin.empty()) {
    auto h = host == "0.0.0.0" || host.empty() ? std::string("localhost") : host;
    origin = "http://" + h + ":" + std::to_string(bound);
  }
  while (!origin.empty() && origin.back() == '/') origin.pop_back();
  {
    std::lock_guard lock(impl_->mu);
    impl_->base = origin + impl_->config.prefix + "/";
  }
  impl_->engine.set_base_url(impl_->base);
  impl_->gateway.set_vote_base(impl_->base + "votes/");
  return bound;
}

void ControlApi::start() {
  impl_->thread = std::thread([this] { run(); });
  impl_->server.wait_until_ready();
}

void ControlApi::run() { impl_->server.listen_after_bind(); }

void ControlApi::stop() {
  impl_->close_streams();
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string ControlApi::base_url() const { return impl_->base_url(); }

} // namespace pflow
