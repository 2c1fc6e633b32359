#include "pflow/model.hpp"

#include <algorithm>
#include <functional>
#include <set>
#include <sstream>

namespace pflow {

namespace {

constexpr std::pair<NodeKind, std::string_view> kind_names[] = {
    {NodeKind::sequence, "sequence"},       {NodeKind::call, "call"},
    {NodeKind::manipulate, "manipulate"},   {NodeKind::parallel, "parallel"},
    {NodeKind::parallel_branch, "parallel_branch"}, {NodeKind::choose, "choose"},
    {NodeKind::alternative, "alternative"}, {NodeKind::otherwise, "otherwise"},
    {NodeKind::loop, "loop"},               {NodeKind::terminate, "terminate"},
};

bool is_container(NodeKind k) {
  switch (k) {
    case NodeKind::call:
    case NodeKind::manipulate:
    case NodeKind::terminate:
      return false;
    default:
      return true;
  }
}

// Kinds that may only appear directly below a specific parent.
bool is_clause(NodeKind k) {
  return k == NodeKind::parallel_branch || k == NodeKind::alternative || k == NodeKind::otherwise;
}

class Parser {
 public:
  explicit Parser(std::vector<ModelError>& errors) : errors_(errors) {}

  Node parse_node(const json& j, const std::string& path) {
    Node n;
    if (!j.is_object()) {
      error(path, "", "node must be an object");
      return n;
    }
    if (auto it = j.find("id"); it != j.end()) {
      if (it->is_string()) n.id = it->get<std::string>();
      else error(path, "", "id must be a string");
    }
    auto kind_it = j.find("kind");
    if (kind_it == j.end() || !kind_it->is_string()) {
      error(path, n.id, "node kind missing");
      return n;
    }
    auto kind = node_kind_from_string(kind_it->get<std::string>());
    if (!kind) {
      error(path, n.id, "unknown node kind '" + kind_it->get<std::string>() + "'");
      return n;
    }
    n.kind = *kind;
    if (auto it = j.find("label"); it != j.end() && it->is_string()) n.label = it->get<std::string>();
    if (auto it = j.find("endpoint_key"); it != j.end()) {
      if (it->is_string()) n.endpoint_key = it->get<std::string>();
      else error(path, n.id, "endpoint_key must be a string");
    }
    if (auto it = j.find("parameters"); it != j.end()) {
      if (!it->is_object()) {
        error(path, n.id, "parameters must be an object");
      } else {
        if (auto m = it->find("method"); m != it->end() && m->is_string()) n.parameters.method = m->get<std::string>();
        if (auto a = it->find("arguments"); a != it->end()) {
          if (a->is_object()) n.parameters.arguments = *a;
          else error(path, n.id, "parameters.arguments must be an object");
        }
      }
    }
    if (auto it = j.find("scripts"); it != j.end()) {
      if (!it->is_object()) {
        error(path, n.id, "scripts must be an object");
      } else {
        auto read = [&](const char* name, std::optional<std::string>& slot) {
          if (auto s = it->find(name); s != it->end() && !s->is_null()) {
            if (s->is_string()) slot = s->get<std::string>();
            else error(path, n.id, std::string("script ") + name + " must be a string");
          }
        };
        read("prepare", n.scripts.prepare);
        read("finalize", n.scripts.finalize);
        read("update", n.scripts.update);
        read("rescue", n.scripts.rescue);
      }
    }
    if (auto it = j.find("condition"); it != j.end()) {
      if (it->is_string()) n.condition = it->get<std::string>();
      else error(path, n.id, "condition must be a string");
    }
    if (auto it = j.find("mode"); it != j.end()) {
      if (*it == "pre_test") n.loop_mode = LoopMode::pre_test;
      else if (*it == "post_test") n.loop_mode = LoopMode::post_test;
      else error(path, n.id, "loop mode must be pre_test or post_test");
    }
    if (auto it = j.find("wait"); it != j.end()) {
      if (it->is_number_integer()) n.wait = it->get<int>();
      else if (*it != "all") error(path, n.id, "wait must be an integer or \"all\"");
    }
    if (auto it = j.find("children"); it != j.end()) {
      if (!it->is_array()) {
        error(path, n.id, "children must be an array");
      } else {
        for (std::size_t i = 0; i < it->size(); ++i) {
          n.children.push_back(parse_node((*it)[i], path + "/children/" + std::to_string(i)));
        }
      }
    }
    return n;
  }

 private:
  void error(const std::string& path, const std::string& id, std::string msg) {
    errors_.push_back({path, id, std::move(msg)});
  }
  std::vector<ModelError>& errors_;
};

void assign_missing_ids(Node& root) {
  std::set<std::string> taken;
  std::function<void(const Node&)> collect = [&](const Node& n) {
    if (!n.id.empty()) taken.insert(n.id);
    for (const auto& c : n.children) collect(c);
  };
  collect(root);
  std::map<NodeKind, int> counters;
  std::function<void(Node&)> assign = [&](Node& n) {
    if (n.id.empty()) {
      std::string candidate;
      do {
        candidate = std::string(to_string(n.kind)) + "_" + std::to_string(++counters[n.kind]);
      } while (taken.count(candidate));
      taken.insert(candidate);
      n.id = candidate;
    }
    for (auto& c : n.children) assign(c);
  };
  assign(root);
}

void validate_node(const Node& n, const std::string& path, const Node* parent, std::set<std::string>& seen,
                   std::vector<ModelError>& errors) {
  auto err = [&](std::string msg) { errors.push_back({path, n.id, std::move(msg)}); };
  if (n.id.empty()) err("node id missing");
  else if (!seen.insert(n.id).second) err("duplicate node id '" + n.id + "'");

  if (!is_container(n.kind) && !n.children.empty()) err(std::string(to_string(n.kind)) + " node cannot have children");
  if (n.kind == NodeKind::call && n.endpoint_key.empty()) err("call node needs an endpoint_key");
  if (n.kind == NodeKind::manipulate && (n.scripts.prepare || n.scripts.update || n.scripts.rescue)) {
    err("manipulate node carries only a finalize script");
  }
  if (!n.is_activity() && !n.scripts.empty()) err("scripts are only allowed on call and manipulate nodes");
  if ((n.kind == NodeKind::alternative || n.kind == NodeKind::loop) && n.condition.empty()) {
    err(std::string(to_string(n.kind)) + " node needs a condition");
  }

  if (is_clause(n.kind)) {
    bool ok = parent && ((n.kind == NodeKind::parallel_branch && parent->kind == NodeKind::parallel) ||
                         (n.kind != NodeKind::parallel_branch && parent->kind == NodeKind::choose));
    if (!ok) err(std::string(to_string(n.kind)) + " node is misplaced");
  }
  if (n.kind == NodeKind::parallel) {
    for (const auto& c : n.children) {
      if (c.kind != NodeKind::parallel_branch) errors.push_back({path, n.id, "parallel children must be parallel_branch nodes"});
    }
    if (n.wait) {
      auto branches = static_cast<int>(n.children.size());
      if (*n.wait < 1 || *n.wait > branches) {
        err("parallel wait " + std::to_string(*n.wait) + " out of range 1.." + std::to_string(branches));
      }
    }
  }
  if (n.kind == NodeKind::choose) {
    int otherwise = 0;
    for (const auto& c : n.children) {
      if (c.kind == NodeKind::otherwise) ++otherwise;
      else if (c.kind != NodeKind::alternative) err("choose children must be alternative or otherwise nodes");
    }
    if (otherwise > 1) err("choose has more than one otherwise");
  }
  for (std::size_t i = 0; i < n.children.size(); ++i) {
    validate_node(n.children[i], path + "/children/" + std::to_string(i), &n, seen, errors);
  }
}

json node_to_json(const Node& n) {
  json j;
  j["id"] = n.id;
  j["kind"] = to_string(n.kind);
  if (!n.label.empty()) j["label"] = n.label;
  if (n.kind == NodeKind::call) {
    j["endpoint_key"] = n.endpoint_key;
    j["parameters"] = {{"method", n.parameters.method}, {"arguments", n.parameters.arguments}};
  }
  if (!n.scripts.empty()) {
    json s = json::object();
    if (n.scripts.prepare) s["prepare"] = *n.scripts.prepare;
    if (n.scripts.finalize) s["finalize"] = *n.scripts.finalize;
    if (n.scripts.update) s["update"] = *n.scripts.update;
    if (n.scripts.rescue) s["rescue"] = *n.scripts.rescue;
    j["scripts"] = s;
  }
  if (!n.condition.empty()) j["condition"] = n.condition;
  if (n.kind == NodeKind::loop) j["mode"] = n.loop_mode == LoopMode::pre_test ? "pre_test" : "post_test";
  if (n.kind == NodeKind::parallel) {
    if (n.wait) j["wait"] = *n.wait;
    else j["wait"] = "all";
  }
  if (is_container(n.kind)) {
    j["children"] = json::array();
    for (const auto& c : n.children) j["children"].push_back(node_to_json(c));
  }
  return j;
}

void walk(const Node& n, const std::function<void(const Node&)>& f) {
  f(n);
  for (const auto& c : n.children) walk(c, f);
}

Node strip_children(const Node& n) {
  Node copy = n;
  copy.children.clear();
  return copy;
}

std::vector<std::string> child_ids(const Node& n) {
  std::vector<std::string> ids;
  ids.reserve(n.children.size());
  for (const auto& c : n.children) ids.push_back(c.id);
  return ids;
}

} // namespace

std::string_view to_string(NodeKind kind) {
  for (const auto& [k, name] : kind_names) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<NodeKind> node_kind_from_string(std::string_view s) {
  for (const auto& [k, name] : kind_names) {
    if (name == s) return k;
  }
  return std::nullopt;
}

ProcessModel::ProcessModel() { root.id = "sequence_1"; }

bool ProcessModel::empty() const {
  return root.kind == NodeKind::sequence && root.children.empty();
}

const Node* ProcessModel::find(std::string_view id) const {
  const Node* found = nullptr;
  walk(root, [&](const Node& n) {
    if (!found && n.id == id) found = &n;
  });
  return found;
}

std::vector<const Node*> ProcessModel::activities() const {
  std::vector<const Node*> out;
  walk(root, [&](const Node& n) {
    if (n.is_activity()) out.push_back(&n);
  });
  return out;
}

std::vector<const Node*> ProcessModel::nodes() const {
  std::vector<const Node*> out;
  walk(root, [&](const Node& n) { out.push_back(&n); });
  return out;
}

ModelValidationError::ModelValidationError(std::vector<ModelError> errors)
    : std::runtime_error([&] {
        std::ostringstream os;
        os << "invalid process model";
        for (const auto& e : errors) {
          os << "; " << e.path;
          if (!e.node_id.empty()) os << " (" << e.node_id << ")";
          os << ": " << e.message;
        }
        return os.str();
      }()),
      errors_(std::move(errors)) {}

json ModelValidationError::to_json() const {
  json arr = json::array();
  for (const auto& e : errors_) arr.push_back({{"path", e.path}, {"node", e.node_id}, {"message", e.message}});
  return arr;
}

std::vector<ModelError> validate_structure(const ProcessModel& model) {
  std::vector<ModelError> errors;
  std::set<std::string> seen;
  validate_node(model.root, "/root", nullptr, seen, errors);
  if (is_clause(model.root.kind)) errors.push_back({"/root", model.root.id, "root cannot be a clause node"});
  return errors;
}

std::vector<ModelError> missing_endpoints(const ProcessModel& model, const std::map<std::string, std::string>& extra) {
  std::vector<ModelError> errors;
  walk(model.root, [&](const Node& n) {
    if (n.kind != NodeKind::call || n.endpoint_key.empty()) return;
    if (!model.endpoints.count(n.endpoint_key) && !extra.count(n.endpoint_key)) {
      errors.push_back({"", n.id, "endpoint key '" + n.endpoint_key + "' is not bound"});
    }
  });
  return errors;
}

ProcessModel model_from_json(const json& document, ParseOptions options) {
  std::vector<ModelError> errors;
  ProcessModel model;
  if (!document.is_object()) throw ModelValidationError({{"", "", "model document must be a JSON object"}});

  Parser parser(errors);
  if (auto it = document.find("root"); it != document.end()) {
    model.root = parser.parse_node(*it, "/root");
  }
  if (auto it = document.find("endpoints"); it != document.end()) {
    if (!it->is_object()) errors.push_back({"/endpoints", "", "endpoints must be an object"});
    else
      for (const auto& [k, v] : it->items()) {
        if (v.is_string()) model.endpoints[k] = v.get<std::string>();
        else errors.push_back({"/endpoints/" + k, "", "endpoint must be a URL string"});
      }
  }
  if (auto it = document.find("dataelements"); it != document.end()) {
    if (it->is_object()) model.dataelements = *it;
    else errors.push_back({"/dataelements", "", "dataelements must be an object"});
  }
  if (auto it = document.find("attributes"); it != document.end()) {
    if (!it->is_object()) errors.push_back({"/attributes", "", "attributes must be an object"});
    else
      for (const auto& [k, v] : it->items()) {
        if (v.is_string()) model.attributes[k] = v.get<std::string>();
        else errors.push_back({"/attributes/" + k, "", "attribute must be a string"});
      }
  }
  if (!errors.empty()) throw ModelValidationError(std::move(errors));

  assign_missing_ids(model.root);
  errors = validate_structure(model);
  if (!options.allow_draft) {
    auto missing = missing_endpoints(model);
    errors.insert(errors.end(), missing.begin(), missing.end());
  }
  if (!errors.empty()) throw ModelValidationError(std::move(errors));
  return model;
}

ProcessModel parse_model(std::string_view document, ParseOptions options) {
  json j;
  try {
    j = json::parse(document);
  } catch (const json::parse_error& e) {
    throw ModelValidationError({{"", "", std::string("malformed JSON: ") + e.what()}});
  }
  return model_from_json(j, options);
}

json model_to_json(const ProcessModel& model) {
  return {{"root", node_to_json(model.root)},
          {"endpoints", to_json_object(model.endpoints)},
          {"dataelements", model.dataelements},
          {"attributes", to_json_object(model.attributes)}};
}

std::string serialize_model(const ProcessModel& model) { return model_to_json(model).dump(2); }

bool ChangeSet::empty() const {
  return inserted.empty() && deleted.empty() && modified.empty() && nodes.empty() && layout.empty() && !root &&
         endpoints.empty() && dataelements.empty() && attributes.empty();
}

json ChangeSet::to_json() const {
  json j{{"inserted", inserted}, {"deleted", deleted}, {"modified", modified},
         {"endpoints", endpoints.to_json()}, {"dataelements", dataelements.to_json()},
         {"attributes", attributes.to_json()}};
  json n = json::object();
  for (const auto& [id, node] : nodes) n[id] = node_to_json(node);
  j["nodes"] = n;
  j["layout"] = layout;
  if (root) j["root"] = *root;
  return j;
}

ChangeSet diff_models(const ProcessModel& before, const ProcessModel& after) {
  std::map<std::string, const Node*> old_nodes, new_nodes;
  walk(before.root, [&](const Node& n) { old_nodes[n.id] = &n; });
  walk(after.root, [&](const Node& n) { new_nodes[n.id] = &n; });

  ChangeSet cs;
  for (const auto& [id, n] : old_nodes) {
    if (!new_nodes.count(id)) cs.deleted.push_back(id);
  }
  for (const auto& [id, n] : new_nodes) {
    auto old = old_nodes.find(id);
    auto new_children = child_ids(*n);
    if (old == old_nodes.end()) {
      cs.inserted.push_back(id);
      cs.nodes[id] = strip_children(*n);
      if (!new_children.empty()) cs.layout[id] = new_children;
      continue;
    }
    if (strip_children(*old->second) != strip_children(*n)) {
      cs.modified.push_back(id);
      cs.nodes[id] = strip_children(*n);
    }
    if (child_ids(*old->second) != new_children) cs.layout[id] = new_children;
  }
  if (before.root.id != after.root.id) cs.root = after.root.id;
  cs.endpoints = diff_objects(to_json_object(before.endpoints), to_json_object(after.endpoints));
  cs.dataelements = diff_objects(before.dataelements, after.dataelements);
  cs.attributes = diff_objects(to_json_object(before.attributes), to_json_object(after.attributes));
  return cs;
}

ProcessModel apply_changes(const ProcessModel& model, const ChangeSet& changes) {
  std::map<std::string, Node> attrs;
  std::map<std::string, std::vector<std::string>> children;
  walk(model.root, [&](const Node& n) {
    attrs[n.id] = strip_children(n);
    children[n.id] = child_ids(n);
  });
  for (const auto& id : changes.deleted) {
    attrs.erase(id);
    children.erase(id);
  }
  for (const auto& [id, n] : changes.nodes) attrs[id] = n;
  for (const auto& [id, list] : changes.layout) children[id] = list;

  std::function<Node(const std::string&)> build = [&](const std::string& id) {
    auto it = attrs.find(id);
    if (it == attrs.end()) throw std::invalid_argument("change set references unknown node '" + id + "'");
    Node n = it->second;
    if (auto c = children.find(id); c != children.end()) {
      for (const auto& child : c->second) n.children.push_back(build(child));
    }
    return n;
  };

  ProcessModel out;
  out.root = build(changes.root.value_or(model.root.id));
  json endpoints = to_json_object(model.endpoints);
  apply_delta(endpoints, changes.endpoints);
  out.endpoints = to_string_map(endpoints);
  out.dataelements = model.dataelements;
  apply_delta(out.dataelements, changes.dataelements);
  json attributes = to_json_object(model.attributes);
  apply_delta(attributes, changes.attributes);
  out.attributes = to_string_map(attributes);
  return out;
}

json Position::to_json() const {
  json j{{"node_id", node_id}, {"mode", mode == Mode::at ? "at" : "after"}};
  if (passthrough) j["passthrough"] = *passthrough;
  return j;
}

Position Position::from_json(const json& j) {
  if (!j.is_object() || !j.contains("node_id") || !j.at("node_id").is_string()) {
    throw std::invalid_argument("position needs a node_id");
  }
  Position p;
  p.node_id = j.at("node_id").get<std::string>();
  auto mode = j.value("mode", std::string("at"));
  if (mode == "at") p.mode = Mode::at;
  else if (mode == "after") p.mode = Mode::after;
  else throw std::invalid_argument("position mode must be at or after");
  if (auto it = j.find("passthrough"); it != j.end() && it->is_string()) p.passthrough = it->get<std::string>();
  return p;
}

json positions_to_json(const std::vector<Position>& positions) {
  json arr = json::array();
  for (const auto& p : positions) arr.push_back(p.to_json());
  return arr;
}

std::vector<Position> positions_from_json(const json& j) {
  if (!j.is_array()) throw std::invalid_argument("positions must be an array");
  std::vector<Position> out;
  for (const auto& p : j) out.push_back(Position::from_json(p));
  return out;
}

std::vector<std::string> check_positions(const ProcessModel& model, const std::vector<Position>& positions) {
  std::vector<std::string> errors;
  for (const auto& p : positions) {
    const Node* n = model.find(p.node_id);
    if (!n) errors.push_back("position references unknown node '" + p.node_id + "'");
    else if (p.mode == Position::Mode::at && !n->is_activity())
      errors.push_back("position 'at' requires an activity, '" + p.node_id + "' is a " + std::string(to_string(n->kind)));
  }
  return errors;
}

} // namespace pflow
