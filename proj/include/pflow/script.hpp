#pragma once

// DataScript: the small, total scripting language used for activity scripts
// and conditions.
//
//   program   := statement { (';' | newline) statement }
//   statement := target '=' expr | 'status' '(' expr ',' expr ')'
//   target    := ('data' | 'endpoints') ('.' name | '[' expr ']')+
//   expr      := or-chain of and-chains of comparisons over + - * / %
//   primary   := number | string | true | false | null | [list] | {map}
//              | data | result | endpoints | '(' expr ')'
//
// `data.<name>` reads and writes dataelements, `result` is the received
// payload (read only), `endpoints.<key>` reads and rebinds endpoints.
// No loops, no calls: every program terminates.

#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace pflow::script {

using json = nlohmann::json;

class ScriptError : public std::runtime_error {
 public:
  enum class Kind { syntax, runtime };
  ScriptError(Kind kind, int line, int column, const std::string& message);

  Kind kind() const { return kind_; }
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  Kind kind_;
  int line_;
  int column_;
};

struct StatusValue {
  int code = 0;
  std::string text;
  bool operator==(const StatusValue&) const = default;
};

/// Everything a script can see. Assignments mutate `data` and `endpoints`
/// in place; the caller decides whether to keep the result.
struct Environment {
  json data = json::object();
  json endpoints = json::object();
  json result;
  std::optional<StatusValue> status;
  std::set<std::string> data_reads;  // top-level dataelement names read
};

struct Node;

class Program {
 public:
  static Program parse(std::string_view source);
  void execute(Environment& env) const;
  bool empty() const;

 private:
  std::shared_ptr<const Node> root_;
};

class Expression {
 public:
  static Expression parse(std::string_view source);
  json evaluate(Environment& env) const;

 private:
  std::shared_ptr<const Node> root_;
};

/// Parses and evaluates a condition; the value must be boolean.
bool evaluate_condition(std::string_view source, Environment& env);

/// Runs `source` against a copy of `env` and commits only on success.
void run_atomically(std::string_view source, Environment& env);

} // namespace pflow::script
