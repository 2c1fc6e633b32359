#include <doctest.h>

#include "pflow/model.hpp"
#include "support/random_model.hpp"

using namespace pflow;

namespace {

json doc(json root, json endpoints = {{"svc", "http://svc.test/"}}) {
  return {{"root", root}, {"endpoints", endpoints}};
}

json call(const std::string& id) { return {{"id", id}, {"kind", "call"}, {"endpoint_key", "svc"}}; }

std::vector<std::string> problems(const json& d) {
  try {
    model_from_json(d);
  } catch (const ModelValidationError& e) {
    std::vector<std::string> out;
    for (const auto& p : e.errors()) out.push_back(p.message);
    return out;
  }
  return {};
}

} // namespace

TEST_CASE("serialization round-trips random models") {
  testing::RandomModelGenerator gen(7);
  for (int i = 0; i < 200; ++i) {
    auto m = gen.next();
    auto text = serialize_model(m);
    auto back = parse_model(text);
    CHECK(back == m);
    CHECK(serialize_model(back) == text);
  }
}

TEST_CASE("applying a diff turns one model into the other") {
  testing::RandomModelGenerator a(11), b(12);
  for (int i = 0; i < 200; ++i) {
    auto before = a.next();
    auto after = b.next();
    auto cs = diff_models(before, after);
    CHECK(apply_changes(before, cs) == after);
    CHECK(diff_models(after, after).empty());
  }
}

TEST_CASE("diff reports an inserted activity and its new parent layout") {
  auto before = model_from_json(doc({{"id", "r"}, {"kind", "sequence"}, {"children", {call("a")}}}));
  auto after = model_from_json(doc({{"id", "r"}, {"kind", "sequence"}, {"children", {call("a"), call("b")}}}));
  auto cs = diff_models(before, after);
  CHECK(cs.inserted == std::vector<std::string>{"b"});
  CHECK(cs.deleted.empty());
  CHECK(cs.modified.empty());
  CHECK(cs.layout.at("r") == std::vector<std::string>{"a", "b"});
}

TEST_CASE("validation lists every problem") {
  SUBCASE("duplicate ids") {
    auto p = problems(doc({{"id", "r"}, {"kind", "sequence"}, {"children", {call("a"), call("a")}}}));
    CHECK(p.size() == 1);
  }
  SUBCASE("unknown kind and a numeric id together") {
    auto p = problems(doc({{"id", "r"}, {"kind", "sequence"}, {"children", {{{"kind", "dance"}, {"id", "d"}}, {{"kind", "call"}, {"id", 5}}}}}));
    CHECK(p.size() == 2);
  }
  SUBCASE("missing ids are assigned") {
    auto m = model_from_json(doc({{"id", "r"}, {"kind", "sequence"}, {"children", json::array({json{{"kind", "call"}, {"endpoint_key", "svc"}}, call("a")})}}));
    CHECK_FALSE(m.root.children.at(0).id.empty());
    CHECK(m.root.children.at(0).id != "a");
  }
  SUBCASE("unbound endpoint") {
    auto p = problems(doc({{"id", "r"}, {"kind", "sequence"}, {"children", {call("a")}}}, json::object()));
    CHECK(p.size() == 1);
    ParseOptions draft;
    draft.allow_draft = true;
    CHECK_NOTHROW(model_from_json(doc({{"id", "r"}, {"kind", "sequence"}, {"children", {call("a")}}}, json::object()), draft));
  }
  SUBCASE("parallel wait out of range") {
    json branch{{"id", "b1"}, {"kind", "parallel_branch"}, {"children", {call("a")}}};
    auto p = problems(doc({{"id", "r"}, {"kind", "parallel"}, {"wait", 3}, {"children", {branch}}}));
    CHECK_FALSE(p.empty());
  }
  SUBCASE("malformed JSON") { CHECK_THROWS_AS(parse_model("{"), ModelValidationError); }
  SUBCASE("valid model") { CHECK(problems(doc({{"id", "r"}, {"kind", "sequence"}, {"children", {call("a")}}})).empty()); }
}

TEST_CASE("positions") {
  auto m = model_from_json(doc({{"id", "r"}, {"kind", "sequence"}, {"children", {call("a"), call("b")}}}));
  std::vector<Position> ps{{"a", Position::Mode::at, std::nullopt}, {"b", Position::Mode::after, std::string("cb-1")}};
  CHECK(positions_from_json(positions_to_json(ps)) == ps);
  CHECK(check_positions(m, ps).empty());
  CHECK(check_positions(m, {{"zz", Position::Mode::at, std::nullopt}}).size() == 1);
  CHECK(check_positions(m, {{"r", Position::Mode::at, std::nullopt}}).size() == 1);
}

TEST_CASE("lookup helpers") {
  testing::RandomModelGenerator gen(3);
  auto m = gen.next();
  for (const auto* n : m.nodes()) CHECK(m.find(n->id) == n);
  for (const auto* a : m.activities()) CHECK(a->is_activity());
  CHECK(ProcessModel().empty());
  CHECK_FALSE(m.empty());
}
