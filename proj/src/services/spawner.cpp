#include "pflow/services/spawner.hpp"

#include <spdlog/spdlog.h>

#include "pflow/events.hpp"
#include "pflow/protocol.hpp"
#include "pflow/util.hpp"

namespace pflow::services {

namespace {

http::Response plain(int status, std::string body, http::Headers headers = {}) {
  http::Response r;
  r.status = status;
  r.headers = std::move(headers);
  r.headers["Content-Type"] = "application/json";
  r.body = std::move(body);
  return r;
}

http::Response salvage(const std::string& why) {
  http::Headers h;
  h[protocol::headers::salvage] = "true";
  return plain(200, json{{"error", why}}.dump(), std::move(h));
}

} // namespace

Spawner::Spawner(SpawnerConfig config, CallbackSender& sender) : config_(std::move(config)), sender_(sender) {
  if (!config_.client) config_.client = std::make_shared<http::HttplibClient>();
}

void Spawner::set_public_base(std::string url) {
  std::lock_guard lock(mu_);
  config_.public_base = std::move(url);
}

http::Response Spawner::request(const std::string& method, const std::string& url, const json& body) {
  http::Request req;
  req.method = method;
  req.url = url;
  req.timeout = std::chrono::seconds(10);
  if (!body.is_null()) {
    req.headers["Content-Type"] = "application/json";
    req.body = body.dump();
  }
  return config_.client->send(req);
}

http::Response Spawner::invoke(const http::Headers& headers, const json& args) {
  if (!args.is_object() || !args.contains("engine") || !args.at("engine").is_string()) {
    return plain(400, json{{"error", "spawn needs an engine URL"}}.dump());
  }
  if (!args.contains("model") || !args.at("model").is_object()) {
    return plain(400, json{{"error", "spawn needs a model"}}.dump());
  }
  auto engine = args.at("engine").get<std::string>();
  if (engine.back() != '/') engine += '/';
  auto callback = protocol::async_target(headers);

  std::string child_url;
  std::string token;
  try {
    auto created = request("POST", engine, nullptr);
    if (created.status != 201) return salvage("engine answered " + std::to_string(created.status));
    child_url = json::parse(created.body).at("url").get<std::string>();
    auto child_id = json::parse(created.body).at("id").get<InstanceId>();

    Child child;
    child.url = child_url;
    child.engine = engine;
    if (callback) {
      std::string base;
      {
        std::lock_guard lock(mu_);
        token = "child-" + std::to_string(next_++);
        base = config_.public_base;
      }
      child.callback = *callback;
      json spec{{"endpoint", http::join(base, "spawn/events/" + token)},
                {"instance", child_id},
                {"selections", {{{"topic", "state"}, {"event", "change"}}}}};
      auto sub = request("POST", http::join(engine, "subscriptions"), spec);
      if (sub.status != 201) return plain(502, json{{"error", "cannot subscribe to child: " + sub.body}}.dump());
      child.subscription = json::parse(sub.body).at("id").get<std::string>();
      std::lock_guard lock(mu_);
      children_[token] = child;
    }

    auto loaded = request("PUT", http::join(child_url, "model"), args.at("model"));
    if (loaded.status != 200) return plain(502, json{{"error", "child model rejected: " + loaded.body}}.dump());
    if (args.contains("dataelements") && args.at("dataelements").is_object() && !args.at("dataelements").empty()) {
      auto patched = request("PATCH", http::join(child_url, "dataelements"), args.at("dataelements"));
      if (patched.status != 200) return plain(502, json{{"error", "child data rejected: " + patched.body}}.dump());
    }
    auto started = request("PUT", http::join(child_url, "state"), json{{"state", "running"}});
    if (started.status != 200) return plain(502, json{{"error", "child did not start: " + started.body}}.dump());
  } catch (const http::TransportError& e) {
    if (!token.empty()) {
      std::lock_guard lock(mu_);
      children_.erase(token);
    }
    return salvage(e.what());
  } catch (const json::exception& e) {
    return plain(502, json{{"error", std::string("unexpected engine answer: ") + e.what()}}.dump());
  }

  http::Headers h;
  h[protocol::headers::instantiation] = "true";
  if (callback) h[protocol::headers::callback] = "true";
  auto r = plain(callback ? 202 : 200, child_url, std::move(h));
  r.headers["Content-Type"] = "text/plain";
  return r;
}

http::Response Spawner::on_event(const std::string& token, const std::string& body) {
  Child child;
  {
    std::lock_guard lock(mu_);
    auto it = children_.find(token);
    if (it == children_.end()) return plain(404, json{{"error", "unknown child"}}.dump());
    child = it->second;
  }
  EngineEvent e;
  try {
    e = EngineEvent::from_json(json::parse(body));
  } catch (const std::exception& ex) {
    return plain(400, json{{"error", ex.what()}}.dump());
  }
  auto state = e.content.value("state", "");
  {
    std::lock_guard lock(mu_);
    children_[token].state = state;
  }
  if (state != "finished" && state != "abandoned" && state != "purged") return plain(200, "{}");

  CallbackPut put;
  put.url = child.callback;
  put.event = "spawn/child-" + state;
  if (state == "finished") {
    json data = json::object();
    try {
      auto r = request("GET", http::join(child.url, "dataelements"), nullptr);
      if (r.status == 200) data = json::parse(r.body);
    } catch (const std::exception& ex) {
      spdlog::warn("spawner: cannot read child data {}: {}", child.url, ex.what());
    }
    put.body = {{"url", child.url}, {"state", state}, {"dataelements", data}};
  } else {
    put.failure = true;
    put.body = {{"url", child.url}, {"state", state}, {"error", "child " + state}};
  }
  sender_.send(std::move(put));
  try {
    request("DELETE", http::join(child.engine, "subscriptions/" + child.subscription), nullptr);
  } catch (const std::exception&) {
  }
  std::lock_guard lock(mu_);
  children_.erase(token);
  return plain(200, "{}");
}

json Spawner::children() const {
  std::lock_guard lock(mu_);
  json out = json::object();
  for (const auto& [token, c] : children_) out[token] = {{"url", c.url}, {"state", c.state}};
  return out;
}

} // namespace pflow::services
