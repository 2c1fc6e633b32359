#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pflow/delta.hpp"

namespace pflow {

using json = nlohmann::json;

enum class NodeKind {
  sequence,
  call,
  manipulate,
  parallel,
  parallel_branch,
  choose,
  alternative,
  otherwise,
  loop,
  terminate,
};

std::string_view to_string(NodeKind kind);
std::optional<NodeKind> node_kind_from_string(std::string_view s);

enum class LoopMode { pre_test, post_test };

/// How a call node talks to its functionality. Argument values are JSON
/// literals, except strings starting with '!' which are DataScript
/// expressions evaluated right before the call.
struct InvocationParameters {
  std::string method = "post";
  json arguments = json::object();

  bool operator==(const InvocationParameters&) const = default;
};

struct Scripts {
  std::optional<std::string> prepare;
  std::optional<std::string> finalize;
  std::optional<std::string> update;
  std::optional<std::string> rescue;

  bool empty() const { return !prepare && !finalize && !update && !rescue; }
  bool operator==(const Scripts&) const = default;
};

struct Node {
  std::string id;
  NodeKind kind = NodeKind::sequence;
  std::string label;
  std::vector<Node> children;
  std::string endpoint_key;           // call
  InvocationParameters parameters;    // call
  Scripts scripts;                    // call, manipulate
  std::string condition;              // alternative, loop
  LoopMode loop_mode = LoopMode::pre_test;
  std::optional<int> wait;            // parallel; nullopt means "all"

  bool is_activity() const { return kind == NodeKind::call || kind == NodeKind::manipulate; }
  bool operator==(const Node&) const = default;
};

struct ProcessModel {
  Node root;
  std::map<std::string, std::string> endpoints;
  json dataelements = json::object();
  std::map<std::string, std::string> attributes;

  ProcessModel();

  /// True for the empty sequence an instance starts out with.
  bool empty() const;
  const Node* find(std::string_view id) const;
  /// Call and manipulate nodes in document order.
  std::vector<const Node*> activities() const;
  /// Every node, preorder.
  std::vector<const Node*> nodes() const;

  bool operator==(const ProcessModel&) const = default;
};

struct ModelError {
  std::string path;     // JSON-pointer-ish location, e.g. /root/children/1
  std::string node_id;  // offending node, may be empty
  std::string message;
};

class ModelValidationError : public std::runtime_error {
 public:
  explicit ModelValidationError(std::vector<ModelError> errors);
  const std::vector<ModelError>& errors() const { return errors_; }
  json to_json() const;

 private:
  std::vector<ModelError> errors_;
};

struct ParseOptions {
  /// Accept call nodes whose endpoint key has no binding (a design draft).
  bool allow_draft = false;
};

/// Parses and validates a model document. Throws ModelValidationError
/// listing every structural problem, or for malformed JSON.
ProcessModel parse_model(std::string_view document, ParseOptions options = {});
ProcessModel model_from_json(const json& document, ParseOptions options = {});

json model_to_json(const ProcessModel& model);
std::string serialize_model(const ProcessModel& model);

/// Structural checks only (ids, kinds, arities, wait ranges).
std::vector<ModelError> validate_structure(const ProcessModel& model);
/// Call nodes whose endpoint key is bound neither in the model nor in `extra`.
std::vector<ModelError> missing_endpoints(const ProcessModel& model,
                                          const std::map<std::string, std::string>& extra = {});

/// Node-level difference between two models. Node attributes (children
/// excluded) of inserted and modified nodes travel in `nodes`; child lists
/// that changed travel in `layout`.
struct ChangeSet {
  std::vector<std::string> inserted;
  std::vector<std::string> deleted;
  std::vector<std::string> modified;
  std::map<std::string, Node> nodes;
  std::map<std::string, std::vector<std::string>> layout;
  std::optional<std::string> root;
  ContextDelta endpoints;
  ContextDelta dataelements;
  ContextDelta attributes;

  bool empty() const;
  json to_json() const;
};

ChangeSet diff_models(const ProcessModel& before, const ProcessModel& after);
ProcessModel apply_changes(const ProcessModel& model, const ChangeSet& changes);

struct Position {
  enum class Mode { at, after };

  std::string node_id;
  Mode mode = Mode::at;
  std::optional<std::string> passthrough;  // callback id of a suspended asynchronous enactment

  json to_json() const;
  static Position from_json(const json& j);
  bool operator==(const Position&) const = default;
};

json positions_to_json(const std::vector<Position>& positions);
std::vector<Position> positions_from_json(const json& j);
/// Errors for positions naming unknown nodes or `at` on non-activities.
std::vector<std::string> check_positions(const ProcessModel& model, const std::vector<Position>& positions);

} // namespace pflow
