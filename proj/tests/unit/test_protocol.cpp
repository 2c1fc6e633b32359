#include <doctest.h>

#include <thread>

#include "pflow/protocol.hpp"
#include "support/fakes.hpp"

using namespace pflow;
using namespace std::chrono_literals;
using P = protocol::Outcome::Pattern;

namespace {

http::Response response(int status, http::Headers h = {}, std::string body = "{}") {
  http::Response r;
  r.status = status;
  r.headers = std::move(h);
  r.body = std::move(body);
  return r;
}

protocol::CallbackRecord record(const std::string& id, InstanceId instance = 1) {
  protocol::CallbackRecord r;
  r.callback_id = id;
  r.instance = instance;
  r.activity = "a1";
  return r;
}

protocol::CallbackMessage message(std::string body, bool update = false) {
  protocol::CallbackMessage m;
  m.body = std::move(body);
  m.update = update;
  return m;
}

} // namespace

TEST_CASE("responses map onto interaction patterns") {
  CHECK(protocol::classify(response(200)).pattern == P::synchronous);
  CHECK(protocol::classify(response(200, {}, "{\"n\":1}")).body == "{\"n\":1}");
  CHECK(protocol::classify(response(202, {{"CPEE-CALLBACK", "true"}})).pattern == P::asynchronous);
  CHECK(protocol::classify(response(200, {{"cpee-callback", "TRUE"}})).pattern == P::asynchronous);
  CHECK(protocol::classify(response(500, {{"CPEE-SALVAGE", "true"}})).pattern == P::salvage);
  CHECK(protocol::classify(response(200, {{"CPEE-SALVAGE", "true"}})).pattern == P::salvage);
  CHECK(protocol::classify(response(404)).pattern == P::failure);
  CHECK(protocol::classify(response(500)).pattern == P::failure);
  CHECK(protocol::classify(response(200, {{"CPEE-CALLBACK", "false"}})).pattern == P::failure);
  CHECK(protocol::classify(response(200, {{"CPEE-SALVAGE", "true"}, {"CPEE-CALLBACK", "true"}})).pattern == P::failure);

  auto spawned = protocol::classify(response(202, {{"CPEE-CALLBACK", "true"}, {"CPEE-INSTANTIATION", "true"}},
                                             "http://other/flow/engine/7\n"));
  CHECK(spawned.pattern == P::asynchronous);
  CHECK(spawned.spawned == "http://other/flow/engine/7");
  CHECK(protocol::classify(response(200, {{"CPEE-EVENT", " done "}})).event == "done");
}

TEST_CASE("invocation carries the correlation headers") {
  testing::FakeClient client;
  protocol::InvocationContext ctx;
  ctx.base = "http://engine/flow/engine/";
  ctx.instance = 4;
  ctx.instance_url = "http://engine/flow/engine/4";
  ctx.instance_uuid = "uuid-4";
  ctx.activity = "a1";
  ctx.label = "Check";
  ctx.callback_id = "cb9";
  auto out = protocol::invoke(client, "http://svc/x", "post", {{"k", 1}}, ctx, 1s);
  CHECK(out.pattern == P::synchronous);
  auto req = client.requests().at(0);
  CHECK(req.method == "POST");
  CHECK(http::header(req.headers, "CPEE-CALLBACK") == "http://engine/flow/engine/4/callbacks/cb9");
  CHECK(http::header(req.headers, "CPEE-CALLBACK-ID") == "cb9");
  CHECK(http::header(req.headers, "CPEE-INSTANCE") == "4");
  CHECK(http::header(req.headers, "CPEE-INSTANCE-UUID") == "uuid-4");
  CHECK(http::header(req.headers, "CPEE-ACTIVITY") == "a1");
  CHECK(http::header(req.headers, "CPEE-LABEL") == "Check");
  CHECK(json::parse(req.body) == json{{"k", 1}});

  protocol::invoke(client, "http://svc/x", "get", {{"k", "v w"}}, ctx, 1s);
  CHECK(client.requests().at(1).url.find("k=v") != std::string::npos);
  CHECK(client.requests().at(1).body.empty());
}

TEST_CASE("transport failures come back as failure outcomes") {
  testing::FakeClient client;
  client.route("http://down", [](const http::Request&) -> http::Response {
    throw http::TransportError(http::TransportError::Kind::connect, "refused");
  });
  auto out = protocol::invoke(client, "http://down/x", "post", json::object(), {}, 1s);
  CHECK(out.pattern == P::failure);
  CHECK(out.error.find("refused") != std::string::npos);
}

TEST_CASE("callback registry mailboxes") {
  protocol::CallbackRegistry reg;
  reg.add(record("c1"));
  SUBCASE("updates keep the record open, the final one closes it") {
    CHECK(reg.deliver(1, "c1", message("u1", true)) == protocol::DeliveryStatus::accepted);
    CHECK(reg.deliver(1, "c1", message("f")) == protocol::DeliveryStatus::accepted);
    CHECK(reg.deliver(1, "c1", message("late")) == protocol::DeliveryStatus::unknown);
    CHECK(reg.poll("c1")->body == "u1");
    CHECK(reg.poll("c1")->body == "f");
    CHECK_FALSE(reg.poll("c1").has_value());
  }
  SUBCASE("unknown ids and foreign instances") {
    CHECK(reg.deliver(1, "nope", message("x")) == protocol::DeliveryStatus::unknown);
    CHECK(reg.deliver(2, "c1", message("x")) == protocol::DeliveryStatus::unknown);
  }
  SUBCASE("suspension answers suspended until resumed") {
    CHECK(reg.suspend(1) == 1);
    CHECK(reg.deliver(1, "c1", message("x")) == protocol::DeliveryStatus::suspended);
    CHECK(reg.resume(1) == 1);
    CHECK(reg.deliver(1, "c1", message("x")) == protocol::DeliveryStatus::accepted);
  }
  SUBCASE("await wakes on delivery and on stop") {
    std::jthread t([&] {
      std::this_thread::sleep_for(20ms);
      reg.deliver(1, "c1", message("done"));
    });
    std::stop_source never;
    CHECK(reg.await("c1", never.get_token())->body == "done");
    std::stop_source src;
    src.request_stop();
    reg.add(record("c2"));
    CHECK_FALSE(reg.await("c2", src.get_token()).has_value());
  }
  SUBCASE("removal") {
    reg.add(record("c2", 2));
    CHECK(reg.remove_instance(1) == 1);
    CHECK(reg.size() == 1);
    CHECK(reg.remove("c2"));
    CHECK(reg.size() == 0);
  }
}

TEST_CASE("records and messages round-trip through json") {
  auto r = record("c7");
  r.pending.push_back(message("{\"a\":1}", true));
  auto back = protocol::CallbackRecord::from_json(r.to_json());
  CHECK(back.callback_id == "c7");
  CHECK(back.pending.size() == 1);
  CHECK(back.pending.front().update);
  CHECK(back.pending.front().payload() == json{{"a", 1}});
  CHECK(message("plain text").payload() == "plain text");
}

TEST_CASE("service side helpers") {
  CHECK(protocol::async_target({{"CPEE-CALLBACK", " http://e/1/callbacks/x "}}) == "http://e/1/callbacks/x");
  CHECK_FALSE(protocol::async_target({}).has_value());
  CHECK(http::header(protocol::async_ack_headers(), "cpee-callback") == "true");
}
