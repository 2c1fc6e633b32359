#include "pflow/gateway.hpp"

#include <spdlog/spdlog.h>

#include "pflow/protocol.hpp"
#include "pflow/util.hpp"

namespace pflow {

bool Selection::matches(std::string_view t, std::string_view e) const {
  return topic == t && (event == "*" || event == e);
}

json SubscriptionSpec::to_json() const {
  json sels = json::array();
  for (const auto& s : selections) sels.push_back({{"topic", s.topic}, {"event", s.event}, {"vote", s.vote}});
  json j{{"selections", sels}};
  if (endpoint) j["endpoint"] = *endpoint;
  if (instance) j["instance"] = *instance;
  return j;
}

SubscriptionSpec SubscriptionSpec::from_json(const json& j) {
  if (!j.is_object()) throw SubscriptionError("subscription must be an object");
  SubscriptionSpec s;
  try {
    if (j.contains("endpoint") && !j.at("endpoint").is_null()) s.endpoint = j.at("endpoint").get<std::string>();
    if (j.contains("instance") && !j.at("instance").is_null()) s.instance = j.at("instance").get<InstanceId>();
    if (!j.contains("selections") || !j.at("selections").is_array()) throw SubscriptionError("selections missing");
    for (const auto& sel : j.at("selections")) {
      Selection x;
      x.topic = sel.at("topic").get<std::string>();
      x.event = sel.value("event", "*");
      x.vote = sel.value("vote", false);
      s.selections.push_back(std::move(x));
    }
  } catch (const json::exception& e) {
    throw SubscriptionError(std::string("malformed subscription: ") + e.what());
  }
  s.validate();
  return s;
}

void SubscriptionSpec::validate() const {
  if (selections.empty()) throw SubscriptionError("subscription without selections");
  if (endpoint) {
    try {
      http::Url::parse(*endpoint);
    } catch (const std::invalid_argument& e) {
      throw SubscriptionError(e.what());
    }
  }
  for (const auto& s : selections) {
    if (!is_known_topic(s.topic)) throw SubscriptionError("unknown topic: " + s.topic);
    if (s.event.empty()) throw SubscriptionError("empty event name for topic " + s.topic);
    if (s.vote && !is_votable(s.topic, s.event)) {
      throw SubscriptionError("not votable: " + s.topic + "/" + s.event);
    }
  }
}

std::string sse_frame(std::string_view event, std::string_view data) {
  std::string out = "event: ";
  out += event;
  out += "\ndata: ";
  out += data;
  out += "\n\n";
  return out;
}

std::string sse_heartbeat() { return ": heartbeat\n\n"; }

bool SseSink::push(std::string frame) {
  bool kept = true;
  {
    std::lock_guard lock(mu_);
    if (closed_) return true;
    if (frames_.size() >= capacity_) {
      frames_.pop_front();
      kept = false;
    }
    frames_.push_back(std::move(frame));
  }
  cv_.notify_one();
  return kept;
}

std::optional<std::string> SseSink::next(std::chrono::milliseconds wait) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, wait, [&] { return closed_ || !frames_.empty(); });
  if (frames_.empty()) return std::nullopt;
  auto f = std::move(frames_.front());
  frames_.pop_front();
  return f;
}

void SseSink::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool SseSink::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

struct Gateway::Subscription {
  std::string id;
  SubscriptionSpec spec;

  std::mutex mu;
  std::condition_variable_any cv;
  std::deque<EngineEvent> queue;
  std::size_t overflow = 0;
  std::vector<std::shared_ptr<SseSink>> sinks;
  std::jthread worker;

  bool in_scope(const EngineEvent& e) const { return !spec.instance || *spec.instance == e.instance; }
  bool wants_event(const EngineEvent& e) const {
    if (!in_scope(e)) return false;
    for (const auto& s : spec.selections) {
      if (!s.vote && s.matches(e.topic, e.event)) return true;
    }
    return false;
  }
  bool wants_vote(const EngineEvent& e) const {
    if (!in_scope(e)) return false;
    for (const auto& s : spec.selections) {
      if (s.vote && s.matches(e.topic, e.event)) return true;
    }
    return false;
  }
};

struct Gateway::PendingVote {
  std::optional<VoteResponse> answer;
  std::chrono::steady_clock::time_point deadline;
};

Gateway::Gateway(Bus& bus, GatewayConfig config) : bus_(bus), config_(std::move(config)), vote_base_(config_.vote_base) {
  bus_sub_ = bus_.subscribe({MessageKind::event, std::nullopt, std::nullopt}, [this](const BusMessage& m) { on_event(m); });
}

Gateway::~Gateway() { shutdown(); }

void Gateway::shutdown() {
  if (shut_.exchange(true)) return;
  bus_.unsubscribe(bus_sub_);
  std::map<std::string, std::shared_ptr<Subscription>> subs;
  {
    std::lock_guard lock(mu_);
    subs.swap(subs_);
  }
  for (auto& [id, sub] : subs) {
    std::vector<std::shared_ptr<SseSink>> sinks;
    {
      std::lock_guard lock(sub->mu);
      sinks = sub->sinks;
    }
    for (auto& s : sinks) s->close();
    if (sub->worker.joinable()) {
      sub->worker.request_stop();
      sub->worker.join();
    }
  }
  {
    std::lock_guard lock(votes_mu_);
    for (auto& [id, v] : votes_) {
      if (!v->answer) v->answer = VoteResponse::ack();
    }
  }
  votes_cv_.notify_all();
}

std::shared_ptr<http::Client> Gateway::make_client() const {
  if (config_.client_factory) return config_.client_factory();
  return std::make_shared<http::KeepAliveClient>();
}

std::string Gateway::subscribe(SubscriptionSpec spec) {
  spec.validate();
  auto sub = std::make_shared<Subscription>();
  sub->id = make_uuid();
  sub->spec = std::move(spec);
  if (sub->spec.endpoint) {
    sub->worker = std::jthread([this, sub](std::stop_token st) { push_worker(st, sub); });
  }
  std::lock_guard lock(mu_);
  subs_[sub->id] = sub;
  return sub->id;
}

bool Gateway::unsubscribe(const std::string& id) {
  std::shared_ptr<Subscription> sub;
  {
    std::lock_guard lock(mu_);
    auto it = subs_.find(id);
    if (it == subs_.end()) return false;
    sub = it->second;
    subs_.erase(it);
  }
  {
    std::lock_guard lock(sub->mu);
    for (auto& s : sub->sinks) s->close();
  }
  if (sub->worker.joinable()) {
    sub->worker.request_stop();
    sub->worker.join();
  }
  return true;
}

std::optional<SubscriptionSpec> Gateway::find(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = subs_.find(id);
  if (it == subs_.end()) return std::nullopt;
  return it->second->spec;
}

std::map<std::string, SubscriptionSpec> Gateway::list() const {
  std::lock_guard lock(mu_);
  std::map<std::string, SubscriptionSpec> out;
  for (const auto& [id, s] : subs_) out.emplace(id, s->spec);
  return out;
}

std::shared_ptr<SseSink> Gateway::attach(const std::string& id) {
  std::shared_ptr<Subscription> sub;
  {
    std::lock_guard lock(mu_);
    auto it = subs_.find(id);
    if (it == subs_.end() || it->second->spec.endpoint) return nullptr;
    sub = it->second;
  }
  auto sink = std::make_shared<SseSink>(config_.queue_capacity);
  std::lock_guard lock(sub->mu);
  sub->sinks.push_back(sink);
  return sink;
}

void Gateway::detach(const std::string& id, const std::shared_ptr<SseSink>& sink) {
  sink->close();
  std::shared_ptr<Subscription> sub;
  {
    std::lock_guard lock(mu_);
    auto it = subs_.find(id);
    if (it == subs_.end()) return;
    sub = it->second;
  }
  std::lock_guard lock(sub->mu);
  std::erase(sub->sinks, sink);
}

void Gateway::on_event(const BusMessage& m) {
  const auto& e = m.event;
  std::vector<std::shared_ptr<Subscription>> targets;
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, s] : subs_) {
      if (s->wants_event(e)) targets.push_back(s);
    }
  }
  if (targets.empty()) return;
  std::string frame;
  for (const auto& sub : targets) {
    if (sub->spec.endpoint) {
      {
        std::lock_guard lock(sub->mu);
        if (sub->queue.size() >= config_.queue_capacity) {
          sub->queue.pop_front();
          ++sub->overflow;
          ++dropped_;
        }
        sub->queue.push_back(e);
      }
      sub->cv.notify_one();
    } else {
      if (frame.empty()) frame = sse_frame(e.name(), e.to_json().dump());
      std::lock_guard lock(sub->mu);
      for (auto& sink : sub->sinks) {
        if (!sink->push(frame)) ++dropped_;
      }
    }
  }
}

void Gateway::warn(const EngineEvent& about, const std::string& text) {
  spdlog::warn("gateway: {}", text);
  if (about.topic == "status" && about.event == "warning") return;
  if (bus_.closed()) return;
  BusMessage m;
  m.event = make_event("status", "warning", about.instance, about.instance_uuid, {{"warning", text}});
  try {
    bus_.publish(m);
  } catch (const BusClosed&) {
  }
}

void Gateway::push_worker(std::stop_token stop, std::shared_ptr<Subscription> sub) {
  auto client = make_client();
  const std::string endpoint = *sub->spec.endpoint;
  while (!stop.stop_requested()) {
    EngineEvent ev;
    std::size_t overflow = 0;
    {
      std::unique_lock lock(sub->mu);
      if (!sub->cv.wait(lock, stop, [&] { return !sub->queue.empty(); })) break;
      ev = std::move(sub->queue.front());
      sub->queue.pop_front();
      overflow = std::exchange(sub->overflow, 0);
    }
    if (overflow > 0) {
      warn(ev, "subscription " + sub->id + " queue overflow, dropped " + std::to_string(overflow) + " events");
    }

    http::Request req;
    req.method = "POST";
    req.url = endpoint;
    req.headers["Content-Type"] = "application/json";
    req.body = ev.to_json().dump();
    req.timeout = config_.push_timeout;
    bool delivered = false;
    std::string reason;
    for (int attempt = 0; attempt <= config_.push_retries && !stop.stop_requested(); ++attempt) {
      try {
        auto res = client->send(req);
        if (res.status < 300) {
          delivered = true;
          break;
        }
        reason = "HTTP " + std::to_string(res.status);
      } catch (const std::exception& e) {
        reason = e.what();
      }
      if (attempt < config_.push_retries) std::this_thread::sleep_for(config_.retry_delay * (attempt + 1));
    }
    if (!delivered && !stop.stop_requested()) {
      ++dropped_;
      warn(ev, "push of " + ev.name() + " to " + endpoint + " dropped: " + reason);
    }
  }
}

std::vector<VoteResponse> Gateway::collect(const EngineEvent& vote) {
  std::vector<std::shared_ptr<Subscription>> voters;
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, s] : subs_) {
      if (s->wants_vote(vote)) voters.push_back(s);
    }
  }
  if (voters.empty() || shut_) return {};

  const auto start = std::chrono::steady_clock::now();
  std::vector<std::string> ids;
  {
    std::lock_guard lock(votes_mu_);
    for (std::size_t i = 0; i < voters.size(); ++i) {
      auto pv = std::make_shared<PendingVote>();
      pv->deadline = start + config_.vote_timeout;
      ids.push_back(make_uuid());
      votes_[ids.back()] = pv;
    }
  }
  {
    BusMessage m{MessageKind::vote, vote, ids.front()};
    try {
      bus_.publish(m);
    } catch (const BusClosed&) {
    }
  }

  std::vector<std::jthread> posts;
  const auto base = vote_base();
  for (std::size_t i = 0; i < voters.size(); ++i) {
    const auto& vid = ids[i];
    auto envelope = vote.to_json();
    auto url = http::join(base, vid);
    envelope["vote"] = vid;
    envelope["callback"] = url;
    const auto& sub = voters[i];
    if (sub->spec.endpoint) {
      posts.emplace_back([this, vid, url, body = envelope.dump(), endpoint = *sub->spec.endpoint] {
        http::Request req;
        req.method = "POST";
        req.url = endpoint;
        req.headers["Content-Type"] = "application/json";
        req.headers[protocol::headers::callback] = url;
        req.headers[protocol::headers::callback_id] = vid;
        req.body = body;
        req.timeout = config_.vote_timeout;
        VoteResponse r;
        try {
          auto res = make_client()->send(req);
          auto later = http::header(res.headers, protocol::headers::callback);
          if (later && iequals(trim(*later), "true")) r = VoteResponse::callback();
          else if (res.status < 300) r = VoteResponse::from_body(res.body);
        } catch (const std::exception& e) {
          spdlog::warn("gateway: vote {} to {} failed: {}", vid, endpoint, e.what());
        }
        answer(vid, r);
      });
    } else {
      bool heard = false;
      auto frame = sse_frame("vote", envelope.dump());
      {
        std::lock_guard lock(sub->mu);
        for (auto& sink : sub->sinks) {
          if (!sink->closed()) {
            sink->push(frame);
            heard = true;
          }
        }
      }
      if (!heard) answer(vid, VoteResponse::ack());
    }
  }

  std::vector<VoteResponse> out;
  {
    std::unique_lock lock(votes_mu_);
    for (const auto& vid : ids) {
      auto pv = votes_.at(vid);
      while (!pv->answer && std::chrono::steady_clock::now() < pv->deadline) {
        votes_cv_.wait_until(lock, pv->deadline);
      }
      out.push_back(pv->answer.value_or(VoteResponse::ack()));
      votes_.erase(vid);
    }
  }
  posts.clear();

  for (std::size_t i = 0; i < out.size(); ++i) {
    BusMessage m{MessageKind::vote_response, vote, ids[i]};
    m.event.content = out[i].to_json();
    try {
      bus_.publish(m);
    } catch (const BusClosed&) {
    }
  }
  return out;
}

void Gateway::set_vote_base(std::string url) {
  std::lock_guard lock(base_mu_);
  vote_base_ = std::move(url);
}

std::string Gateway::vote_base() const {
  std::lock_guard lock(base_mu_);
  return vote_base_;
}

bool Gateway::answer(const std::string& vote_id, const VoteResponse& response) {
  {
    std::lock_guard lock(votes_mu_);
    auto it = votes_.find(vote_id);
    if (it == votes_.end() || it->second->answer) return false;
    if (response.kind == VoteResponse::Kind::callback) {
      it->second->deadline = std::chrono::steady_clock::now() + config_.vote_callback_ceiling;
    } else {
      it->second->answer = response;
    }
  }
  votes_cv_.notify_all();
  return true;
}

std::size_t Gateway::outstanding_votes() const {
  std::lock_guard lock(votes_mu_);
  return votes_.size();
}

} // namespace pflow
