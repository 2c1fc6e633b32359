#include "pflow/protocol.hpp"

#include <httplib.h>

#include "pflow/util.hpp"

namespace pflow::protocol {

std::string callback_url(const std::string& base, InstanceId instance, const std::string& callback_id) {
  return http::join(base, std::to_string(instance) + "/callbacks/" + callback_id);
}

http::Headers request_headers(const InvocationContext& ctx) {
  http::Headers h;
  h[headers::base] = ctx.base;
  h[headers::instance] = std::to_string(ctx.instance);
  h[headers::instance_url] = ctx.instance_url;
  h[headers::instance_uuid] = ctx.instance_uuid;
  h[headers::callback] = callback_url(ctx.base, ctx.instance, ctx.callback_id);
  h[headers::callback_id] = ctx.callback_id;
  h[headers::activity] = ctx.activity;
  h[headers::label] = ctx.label;
  return h;
}

namespace {

bool is_true(const std::string& v) { return iequals(trim(v), "true"); }

} // namespace

Outcome classify(const http::Response& response) {
  Outcome out;
  const auto& h = response.headers;
  out.event = http::header(h, headers::event);
  if (out.event) out.event = trim(*out.event);
  out.content_type = http::header(h, "Content-Type").value_or("");

  auto salvage = http::header(h, headers::salvage);
  auto callback = http::header(h, headers::callback);
  auto instantiation = http::header(h, headers::instantiation);

  if (salvage && !is_true(*salvage)) {
    out.error = "protocol error: CPEE-SALVAGE must be true";
    return out;
  }
  if (instantiation && !is_true(*instantiation)) {
    out.error = "protocol error: CPEE-INSTANTIATION must be true";
    return out;
  }
  if (callback && !is_true(*callback)) {
    out.error = "protocol error: CPEE-CALLBACK in a response must be true";
    return out;
  }
  if (salvage && callback) {
    out.error = "protocol error: CPEE-SALVAGE combined with CPEE-CALLBACK";
    return out;
  }
  if (salvage) {
    out.pattern = Outcome::Pattern::salvage;
    out.error = "functionality asked for salvage (status " + std::to_string(response.status) + ")";
    return out;
  }
  if (response.status >= 400) {
    out.error = "functionality answered HTTP " + std::to_string(response.status);
    return out;
  }
  if (instantiation) out.spawned = trim(response.body);
  if (callback) {
    out.pattern = Outcome::Pattern::asynchronous;
    return out;
  }
  out.pattern = Outcome::Pattern::synchronous;
  out.body = response.body;
  return out;
}

Outcome invoke(http::Client& client, const std::string& endpoint, const std::string& method,
               const json& arguments, const InvocationContext& ctx, std::chrono::milliseconds timeout) {
  http::Request req;
  req.method = method;
  for (auto& c : req.method) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  req.url = endpoint;
  req.headers = request_headers(ctx);
  req.timeout = timeout;
  if (req.method == "GET" || req.method == "DELETE") {
    httplib::Params params;
    for (const auto& [k, v] : arguments.items()) params.emplace(k, v.is_string() ? v.get<std::string>() : v.dump());
    if (!params.empty()) {
      req.url += (req.url.find('?') == std::string::npos ? "?" : "&") + httplib::detail::params_to_query_str(params);
    }
  } else {
    req.headers["Content-Type"] = "application/json";
    req.body = arguments.dump();
  }
  try {
    return classify(client.send(req));
  } catch (const http::TransportError& e) {
    Outcome out;
    out.error = e.what();
    return out;
  } catch (const std::invalid_argument& e) {
    Outcome out;
    out.error = std::string("bad endpoint: ") + e.what();
    return out;
  }
}

json CallbackMessage::payload() const {
  if (body.empty()) return nullptr;
  auto parsed = json::parse(body, nullptr, false);
  if (parsed.is_discarded()) return body;
  return parsed;
}

json CallbackMessage::to_json() const {
  json j{{"body", body}, {"content_type", content_type}, {"update", update}, {"failure", failure}};
  if (event) j["event"] = *event;
  return j;
}

CallbackMessage CallbackMessage::from_json(const json& j) {
  CallbackMessage m;
  m.body = j.value("body", "");
  m.content_type = j.value("content_type", "");
  m.update = j.value("update", false);
  m.failure = j.value("failure", false);
  if (j.contains("event")) m.event = j.at("event").get<std::string>();
  return m;
}

CallbackMessage CallbackMessage::from_headers(const http::Headers& h, std::string body) {
  CallbackMessage m;
  m.body = std::move(body);
  m.content_type = http::header(h, "Content-Type").value_or("");
  if (auto u = http::header(h, headers::update)) m.update = is_true(*u);
  if (auto f = http::header(h, headers::failure)) m.failure = is_true(*f);
  if (auto e = http::header(h, headers::event)) m.event = trim(*e);
  return m;
}

json CallbackRecord::to_json() const {
  json msgs = json::array();
  for (const auto& m : pending) msgs.push_back(m.to_json());
  return {{"callback_id", callback_id}, {"instance", instance}, {"activity", activity},
          {"enactment", enactment},     {"created_at", created_at}, {"suspended", suspended},
          {"closed", closed},           {"pending", msgs}};
}

CallbackRecord CallbackRecord::from_json(const json& j) {
  CallbackRecord r;
  r.callback_id = j.at("callback_id").get<std::string>();
  r.instance = j.at("instance").get<InstanceId>();
  r.activity = j.value("activity", "");
  r.enactment = j.value("enactment", "");
  r.created_at = j.value("created_at", "");
  r.suspended = j.value("suspended", false);
  r.closed = j.value("closed", false);
  if (j.contains("pending")) {
    for (const auto& m : j.at("pending")) r.pending.push_back(CallbackMessage::from_json(m));
  }
  return r;
}

void CallbackRegistry::add(CallbackRecord record) {
  {
    std::lock_guard lock(mu_);
    auto id = record.callback_id;
    records_[id] = std::move(record);
  }
  cv_.notify_all();
}

DeliveryStatus CallbackRegistry::deliver(InstanceId instance, const std::string& callback_id,
                                         CallbackMessage message) {
  {
    std::lock_guard lock(mu_);
    auto it = records_.find(callback_id);
    if (it == records_.end() || it->second.instance != instance || it->second.closed) return DeliveryStatus::unknown;
    if (it->second.suspended) return DeliveryStatus::suspended;
    if (!message.update) it->second.closed = true;
    it->second.pending.push_back(std::move(message));
  }
  cv_.notify_all();
  return DeliveryStatus::accepted;
}

std::optional<CallbackMessage> CallbackRegistry::await(const std::string& callback_id, std::stop_token stop) {
  std::unique_lock lock(mu_);
  bool ready = cv_.wait(lock, stop, [&] {
    auto it = records_.find(callback_id);
    return it == records_.end() || !it->second.pending.empty();
  });
  if (!ready) return std::nullopt;
  auto it = records_.find(callback_id);
  if (it == records_.end()) return std::nullopt;
  auto msg = std::move(it->second.pending.front());
  it->second.pending.pop_front();
  return msg;
}

std::optional<CallbackMessage> CallbackRegistry::poll(const std::string& callback_id) {
  std::lock_guard lock(mu_);
  auto it = records_.find(callback_id);
  if (it == records_.end() || it->second.pending.empty()) return std::nullopt;
  auto msg = std::move(it->second.pending.front());
  it->second.pending.pop_front();
  return msg;
}

bool CallbackRegistry::remove(const std::string& callback_id) {
  bool erased;
  {
    std::lock_guard lock(mu_);
    erased = records_.erase(callback_id) > 0;
  }
  cv_.notify_all();
  return erased;
}

std::size_t CallbackRegistry::set_suspended(InstanceId instance, bool value) {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (auto& [id, r] : records_) {
    if (r.instance == instance) {
      r.suspended = value;
      ++n;
    }
  }
  return n;
}

std::size_t CallbackRegistry::suspend(InstanceId instance) { return set_suspended(instance, true); }
std::size_t CallbackRegistry::resume(InstanceId instance) { return set_suspended(instance, false); }

std::size_t CallbackRegistry::remove_instance(InstanceId instance) {
  std::size_t n;
  {
    std::lock_guard lock(mu_);
    n = std::erase_if(records_, [&](const auto& kv) { return kv.second.instance == instance; });
  }
  cv_.notify_all();
  return n;
}

std::optional<CallbackRecord> CallbackRegistry::find(const std::string& callback_id) const {
  std::lock_guard lock(mu_);
  auto it = records_.find(callback_id);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

std::vector<CallbackRecord> CallbackRegistry::records(InstanceId instance) const {
  std::lock_guard lock(mu_);
  std::vector<CallbackRecord> out;
  for (const auto& [id, r] : records_) {
    if (r.instance == instance) out.push_back(r);
  }
  return out;
}

std::size_t CallbackRegistry::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

std::optional<std::string> async_target(const http::Headers& request_headers) {
  auto cb = http::header(request_headers, headers::callback);
  if (!cb || trim(*cb).empty()) return std::nullopt;
  return trim(*cb);
}

http::Headers async_ack_headers() {
  http::Headers h;
  h[headers::callback] = "true";
  return h;
}

} // namespace pflow::protocol
