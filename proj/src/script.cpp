#include "pflow/script.hpp"

#include <cctype>
#include <cmath>
#include <vector>

namespace pflow::script {

ScriptError::ScriptError(Kind kind, int line, int column, const std::string& message)
    : std::runtime_error((kind == Kind::syntax ? "syntax error" : "runtime error") + std::string(" at ") +
                         std::to_string(line) + ":" + std::to_string(column) + ": " + message),
      kind_(kind), line_(line), column_(column) {}

namespace {

enum class Tok {
  number, string, ident,
  dot, comma, semicolon, newline, lparen, rparen, lbracket, rbracket, lbrace, rbrace, colon,
  assign, eq, ne, lt, le, gt, ge, plus, minus, star, slash, percent, and_, or_, not_,
  end,
};

struct Token {
  Tok kind;
  std::string text;
  json value;
  int line;
  int column;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    int depth = 0;
    while (true) {
      skip_blank();
      if (pos_ >= src_.size()) break;
      int l = line_, c = col_;
      char ch = src_[pos_];
      if (ch == '\n') {
        advance();
        if (depth == 0) out.push_back({Tok::newline, "\n", {}, l, c});
        continue;
      }
      if (std::isdigit(static_cast<unsigned char>(ch))) {
        out.push_back(number(l, c));
        continue;
      }
      if (std::isalpha(static_cast<unsigned char>(ch)) || ch == '_') {
        std::string word;
        while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
          word.push_back(src_[pos_]);
          advance();
        }
        if (word == "and") out.push_back({Tok::and_, word, {}, l, c});
        else if (word == "or") out.push_back({Tok::or_, word, {}, l, c});
        else if (word == "not") out.push_back({Tok::not_, word, {}, l, c});
        else out.push_back({Tok::ident, word, {}, l, c});
        continue;
      }
      if (ch == '"' || ch == '\'') {
        out.push_back(string(l, c));
        continue;
      }
      auto two = src_.substr(pos_, 2);
      auto push2 = [&](Tok t) {
        out.push_back({t, std::string(two), {}, l, c});
        advance();
        advance();
      };
      if (two == "==") { push2(Tok::eq); continue; }
      if (two == "!=") { push2(Tok::ne); continue; }
      if (two == "<=") { push2(Tok::le); continue; }
      if (two == ">=") { push2(Tok::ge); continue; }
      if (two == "&&") { push2(Tok::and_); continue; }
      if (two == "||") { push2(Tok::or_); continue; }
      Tok t;
      switch (ch) {
        case '.': t = Tok::dot; break;
        case ',': t = Tok::comma; break;
        case ';': t = Tok::semicolon; break;
        case '(': t = Tok::lparen; ++depth; break;
        case ')': t = Tok::rparen; --depth; break;
        case '[': t = Tok::lbracket; ++depth; break;
        case ']': t = Tok::rbracket; --depth; break;
        case '{': t = Tok::lbrace; ++depth; break;
        case '}': t = Tok::rbrace; --depth; break;
        case ':': t = Tok::colon; break;
        case '=': t = Tok::assign; break;
        case '<': t = Tok::lt; break;
        case '>': t = Tok::gt; break;
        case '+': t = Tok::plus; break;
        case '-': t = Tok::minus; break;
        case '*': t = Tok::star; break;
        case '/': t = Tok::slash; break;
        case '%': t = Tok::percent; break;
        case '!': t = Tok::not_; break;
        default:
          throw ScriptError(ScriptError::Kind::syntax, l, c, std::string("unexpected character '") + ch + "'");
      }
      if (depth < 0) depth = 0;
      out.push_back({t, std::string(1, ch), {}, l, c});
      advance();
    }
    out.push_back({Tok::end, "", {}, line_, col_});
    return out;
  }

 private:
  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip_blank() {
    while (pos_ < src_.size()) {
      char ch = src_[pos_];
      if (ch == ' ' || ch == '\t' || ch == '\r') {
        advance();
      } else if (ch == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') advance();
      } else {
        break;
      }
    }
  }

  Token number(int l, int c) {
    std::string text;
    bool is_float = false;
    while (pos_ < src_.size()) {
      char ch = src_[pos_];
      if (std::isdigit(static_cast<unsigned char>(ch))) {
        text.push_back(ch);
      } else if (ch == '.' && !is_float && pos_ + 1 < src_.size() &&
                 std::isdigit(static_cast<unsigned char>(src_[pos_ + 1]))) {
        is_float = true;
        text.push_back(ch);
      } else {
        break;
      }
      advance();
    }
    json v;
    try {
      if (is_float) v = std::stod(text);
      else v = static_cast<std::int64_t>(std::stoll(text));
    } catch (const std::exception&) {
      throw ScriptError(ScriptError::Kind::syntax, l, c, "number out of range");
    }
    return {Tok::number, text, v, l, c};
  }

  Token string(int l, int c) {
    char quote = src_[pos_];
    advance();
    std::string out;
    while (true) {
      if (pos_ >= src_.size()) throw ScriptError(ScriptError::Kind::syntax, l, c, "unterminated string");
      char ch = src_[pos_];
      if (ch == quote) {
        advance();
        break;
      }
      if (ch == '\\') {
        advance();
        if (pos_ >= src_.size()) throw ScriptError(ScriptError::Kind::syntax, l, c, "unterminated string");
        char e = src_[pos_];
        switch (e) {
          case 'n': out.push_back('\n'); break;
          case 't': out.push_back('\t'); break;
          case 'r': out.push_back('\r'); break;
          default: out.push_back(e); break;
        }
        advance();
        continue;
      }
      out.push_back(ch);
      advance();
    }
    return {Tok::string, out, out, l, c};
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

} // namespace

enum class NodeType { literal, root, variable, member, index, unary, binary, list, map, assign, status, block };

struct Node {
  NodeType type;
  int line = 1;
  int column = 1;
  std::string name;   // root/variable/member name, operator text
  json value;         // literal
  std::vector<std::shared_ptr<const Node>> kids;
  std::vector<std::string> keys;  // map literal keys
};

namespace {

using NodePtr = std::shared_ptr<const Node>;

NodePtr make(NodeType t, const Token& at, std::string name = {}, std::vector<NodePtr> kids = {}) {
  auto n = std::make_shared<Node>();
  n->type = t;
  n->line = at.line;
  n->column = at.column;
  n->name = std::move(name);
  n->kids = std::move(kids);
  return n;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  NodePtr program() {
    std::vector<NodePtr> stmts;
    skip_separators();
    while (peek().kind != Tok::end) {
      stmts.push_back(statement());
      if (peek().kind != Tok::end && peek().kind != Tok::semicolon && peek().kind != Tok::newline) {
        fail(peek(), "expected end of statement, got '" + peek().text + "'");
      }
      skip_separators();
    }
    auto b = std::make_shared<Node>();
    b->type = NodeType::block;
    b->kids = std::move(stmts);
    return b;
  }

  NodePtr expression_only() {
    skip_separators();
    auto e = expr();
    skip_separators();
    if (peek().kind != Tok::end) fail(peek(), "unexpected '" + peek().text + "' after expression");
    return e;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  const Token& take() { return toks_[pos_++]; }
  bool accept(Tok t) {
    if (peek().kind == t) {
      ++pos_;
      return true;
    }
    return false;
  }
  const Token& expect(Tok t, const char* what) {
    if (peek().kind != t) fail(peek(), std::string("expected ") + what);
    return take();
  }
  [[noreturn]] void fail(const Token& at, const std::string& msg) {
    throw ScriptError(ScriptError::Kind::syntax, at.line, at.column, msg);
  }
  void skip_separators() {
    while (peek().kind == Tok::semicolon || peek().kind == Tok::newline) ++pos_;
  }

  NodePtr statement() {
    const Token& start = peek();
    if (start.kind == Tok::ident && start.text == "status" && toks_[pos_ + 1].kind == Tok::lparen) {
      take();
      take();
      auto code = expr();
      expect(Tok::comma, "','");
      auto text = expr();
      expect(Tok::rparen, "')'");
      return make(NodeType::status, start, "status", {code, text});
    }
    auto target = postfix();
    if (peek().kind != Tok::assign) fail(peek(), "expected assignment");
    const Token& eq = take();
    if (!is_assignable(*target)) fail(start, "assignment target must be data.<name> or endpoints.<key>");
    auto value = expr();
    return make(NodeType::assign, eq, "=", {target, value});
  }

  static bool is_assignable(const Node& n) {
    if (n.type == NodeType::member || n.type == NodeType::index) {
      const Node* base = n.kids[0].get();
      while (base->type == NodeType::member || base->type == NodeType::index) base = base->kids[0].get();
      return base->type == NodeType::root && (base->name == "data" || base->name == "endpoints");
    }
    return false;
  }

  NodePtr expr() { return or_expr(); }

  NodePtr or_expr() {
    auto lhs = and_expr();
    while (peek().kind == Tok::or_) {
      const Token& op = take();
      lhs = make(NodeType::binary, op, "||", {lhs, and_expr()});
    }
    return lhs;
  }

  NodePtr and_expr() {
    auto lhs = not_expr();
    while (peek().kind == Tok::and_) {
      const Token& op = take();
      lhs = make(NodeType::binary, op, "&&", {lhs, not_expr()});
    }
    return lhs;
  }

  NodePtr not_expr() {
    if (peek().kind == Tok::not_) {
      const Token& op = take();
      return make(NodeType::unary, op, "!", {not_expr()});
    }
    return comparison();
  }

  NodePtr comparison() {
    auto lhs = additive();
    while (true) {
      auto k = peek().kind;
      if (k != Tok::eq && k != Tok::ne && k != Tok::lt && k != Tok::le && k != Tok::gt && k != Tok::ge) break;
      const Token& op = take();
      lhs = make(NodeType::binary, op, op.text, {lhs, additive()});
    }
    return lhs;
  }

  NodePtr additive() {
    auto lhs = multiplicative();
    while (peek().kind == Tok::plus || peek().kind == Tok::minus) {
      const Token& op = take();
      lhs = make(NodeType::binary, op, op.text, {lhs, multiplicative()});
    }
    return lhs;
  }

  NodePtr multiplicative() {
    auto lhs = unary();
    while (peek().kind == Tok::star || peek().kind == Tok::slash || peek().kind == Tok::percent) {
      const Token& op = take();
      lhs = make(NodeType::binary, op, op.text, {lhs, unary()});
    }
    return lhs;
  }

  NodePtr unary() {
    if (peek().kind == Tok::minus) {
      const Token& op = take();
      return make(NodeType::unary, op, "-", {unary()});
    }
    if (peek().kind == Tok::not_) {
      const Token& op = take();
      return make(NodeType::unary, op, "!", {unary()});
    }
    return postfix();
  }

  NodePtr postfix() {
    auto base = primary();
    while (true) {
      if (peek().kind == Tok::dot) {
        take();
        const Token& name = expect(Tok::ident, "member name");
        base = make(NodeType::member, name, name.text, {base});
      } else if (peek().kind == Tok::lbracket) {
        const Token& open = take();
        auto idx = expr();
        expect(Tok::rbracket, "']'");
        base = make(NodeType::index, open, "[]", {base, idx});
      } else {
        return base;
      }
    }
  }

  NodePtr primary() {
    const Token& t = peek();
    switch (t.kind) {
      case Tok::number:
      case Tok::string: {
        take();
        auto n = make(NodeType::literal, t);
        std::const_pointer_cast<Node>(n)->value = t.value;
        return n;
      }
      case Tok::ident: {
        take();
        if (t.text == "true" || t.text == "false" || t.text == "null") {
          auto n = make(NodeType::literal, t);
          std::const_pointer_cast<Node>(n)->value = t.text == "null" ? json(nullptr) : json(t.text == "true");
          return n;
        }
        if (t.text == "data" || t.text == "result" || t.text == "endpoints") return make(NodeType::root, t, t.text);
        return make(NodeType::variable, t, t.text);
      }
      case Tok::lparen: {
        take();
        auto e = expr();
        expect(Tok::rparen, "')'");
        return e;
      }
      case Tok::lbracket: {
        take();
        std::vector<NodePtr> items;
        if (!accept(Tok::rbracket)) {
          do {
            items.push_back(expr());
          } while (accept(Tok::comma));
          expect(Tok::rbracket, "']'");
        }
        return make(NodeType::list, t, "[]", std::move(items));
      }
      case Tok::lbrace: {
        take();
        auto n = std::make_shared<Node>();
        n->type = NodeType::map;
        n->line = t.line;
        n->column = t.column;
        if (!accept(Tok::rbrace)) {
          do {
            const Token& key = take();
            if (key.kind != Tok::string && key.kind != Tok::ident) fail(key, "expected map key");
            expect(Tok::colon, "':'");
            n->keys.push_back(key.text);
            n->kids.push_back(expr());
          } while (accept(Tok::comma));
          expect(Tok::rbrace, "'}'");
        }
        return n;
      }
      default:
        fail(t, t.kind == Tok::end ? "unexpected end of input" : "unexpected '" + t.text + "'");
    }
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

[[noreturn]] void runtime_fail(const Node& at, const std::string& msg) {
  throw ScriptError(ScriptError::Kind::runtime, at.line, at.column, msg);
}

const char* type_name(const json& v) { return v.type_name(); }

class Evaluator {
 public:
  explicit Evaluator(Environment& env) : env_(env) {}

  json eval(const Node& n) {
    switch (n.type) {
      case NodeType::literal:
        return n.value;
      case NodeType::root:
        if (n.name == "data") return env_.data;
        if (n.name == "endpoints") return env_.endpoints;
        return env_.result;
      case NodeType::variable:
        runtime_fail(n, "undefined variable '" + n.name + "'");
      case NodeType::member: {
        const Node& base = *n.kids[0];
        if (base.type == NodeType::root && base.name == "data") {
          env_.data_reads.insert(n.name);
          auto it = env_.data.find(n.name);
          if (it == env_.data.end()) runtime_fail(n, "undefined variable 'data." + n.name + "'");
          return *it;
        }
        if (base.type == NodeType::root && base.name == "endpoints") {
          auto it = env_.endpoints.find(n.name);
          if (it == env_.endpoints.end()) runtime_fail(n, "undefined endpoint '" + n.name + "'");
          return *it;
        }
        json obj = eval(base);
        if (obj.is_null()) return nullptr;
        if (!obj.is_object()) runtime_fail(n, std::string("cannot read member '") + n.name + "' of " + type_name(obj));
        auto it = obj.find(n.name);
        return it == obj.end() ? json(nullptr) : *it;
      }
      case NodeType::index: {
        json obj = eval(*n.kids[0]);
        json idx = eval(*n.kids[1]);
        if (obj.is_array()) {
          if (!idx.is_number_integer()) runtime_fail(n, "list index must be an integer");
          auto i = idx.get<std::int64_t>();
          if (i < 0) i += static_cast<std::int64_t>(obj.size());
          if (i < 0 || i >= static_cast<std::int64_t>(obj.size())) runtime_fail(n, "list index out of range");
          return obj[static_cast<std::size_t>(i)];
        }
        if (obj.is_object()) {
          if (!idx.is_string()) runtime_fail(n, "map key must be a string");
          auto it = obj.find(idx.get<std::string>());
          return it == obj.end() ? json(nullptr) : *it;
        }
        if (obj.is_string()) {
          if (!idx.is_number_integer()) runtime_fail(n, "string index must be an integer");
          auto s = obj.get<std::string>();
          auto i = idx.get<std::int64_t>();
          if (i < 0 || i >= static_cast<std::int64_t>(s.size())) runtime_fail(n, "string index out of range");
          return std::string(1, s[static_cast<std::size_t>(i)]);
        }
        runtime_fail(n, std::string("cannot index ") + type_name(obj));
      }
      case NodeType::unary: {
        json v = eval(*n.kids[0]);
        if (n.name == "-") {
          if (v.is_number_integer()) return -v.get<std::int64_t>();
          if (v.is_number()) return -v.get<double>();
          runtime_fail(n, std::string("cannot negate ") + type_name(v));
        }
        if (!v.is_boolean()) runtime_fail(n, std::string("'!' needs a boolean, got ") + type_name(v));
        return !v.get<bool>();
      }
      case NodeType::binary:
        return binary(n);
      case NodeType::list: {
        json arr = json::array();
        for (const auto& k : n.kids) arr.push_back(eval(*k));
        return arr;
      }
      case NodeType::map: {
        json obj = json::object();
        for (std::size_t i = 0; i < n.kids.size(); ++i) obj[n.keys[i]] = eval(*n.kids[i]);
        return obj;
      }
      case NodeType::assign:
        assign(*n.kids[0], eval(*n.kids[1]));
        return nullptr;
      case NodeType::status: {
        json code = eval(*n.kids[0]);
        json text = eval(*n.kids[1]);
        if (!code.is_number_integer()) runtime_fail(n, "status code must be an integer");
        env_.status = StatusValue{static_cast<int>(code.get<std::int64_t>()),
                                  text.is_string() ? text.get<std::string>() : text.dump()};
        return nullptr;
      }
      case NodeType::block:
        for (const auto& k : n.kids) eval(*k);
        return nullptr;
    }
    return nullptr;
  }

 private:
  json binary(const Node& n) {
    const std::string& op = n.name;
    if (op == "&&" || op == "||") {
      json l = eval(*n.kids[0]);
      if (!l.is_boolean()) runtime_fail(n, "'" + op + "' needs booleans, got " + type_name(l));
      if (op == "&&" && !l.get<bool>()) return false;
      if (op == "||" && l.get<bool>()) return true;
      json r = eval(*n.kids[1]);
      if (!r.is_boolean()) runtime_fail(n, "'" + op + "' needs booleans, got " + type_name(r));
      return r.get<bool>();
    }
    json l = eval(*n.kids[0]);
    json r = eval(*n.kids[1]);
    if (op == "==") return equal(l, r);
    if (op == "!=") return !equal(l, r);
    if (op == "<" || op == "<=" || op == ">" || op == ">=") {
      int cmp;
      if (l.is_number() && r.is_number()) {
        double a = l.get<double>(), b = r.get<double>();
        if (l.is_number_integer() && r.is_number_integer()) {
          auto ai = l.get<std::int64_t>(), bi = r.get<std::int64_t>();
          cmp = ai < bi ? -1 : ai > bi ? 1 : 0;
        } else {
          cmp = a < b ? -1 : a > b ? 1 : 0;
        }
      } else if (l.is_string() && r.is_string()) {
        cmp = l.get<std::string>().compare(r.get<std::string>());
      } else {
        runtime_fail(n, std::string("cannot compare ") + type_name(l) + " with " + type_name(r));
      }
      if (op == "<") return cmp < 0;
      if (op == "<=") return cmp <= 0;
      if (op == ">") return cmp > 0;
      return cmp >= 0;
    }
    if (op == "+") {
      if (l.is_string() && r.is_string()) return l.get<std::string>() + r.get<std::string>();
      if (l.is_array() && r.is_array()) {
        json out = l;
        for (const auto& v : r) out.push_back(v);
        return out;
      }
      if (l.is_object() && r.is_object()) {
        json out = l;
        out.update(r);
        return out;
      }
    }
    if (!l.is_number() || !r.is_number()) {
      runtime_fail(n, "'" + op + "' not defined for " + type_name(l) + " and " + type_name(r));
    }
    bool ints = l.is_number_integer() && r.is_number_integer();
    if (ints) {
      auto a = l.get<std::int64_t>(), b = r.get<std::int64_t>();
      if (op == "+") return a + b;
      if (op == "-") return a - b;
      if (op == "*") return a * b;
      if (b == 0) runtime_fail(n, "division by zero");
      if (op == "%") return a % b;
      if (a % b == 0) return a / b;
      return static_cast<double>(a) / static_cast<double>(b);
    }
    double a = l.get<double>(), b = r.get<double>();
    if (op == "+") return a + b;
    if (op == "-") return a - b;
    if (op == "*") return a * b;
    if (b == 0.0) runtime_fail(n, "division by zero");
    if (op == "%") return std::fmod(a, b);
    return a / b;
  }

  static bool equal(const json& l, const json& r) {
    if (l.is_number() && r.is_number()) return l.get<double>() == r.get<double>();
    return l == r;
  }

  void assign(const Node& target, json value) {
    // Collect the access path from the root outwards.
    std::vector<const Node*> chain;
    const Node* cur = &target;
    while (cur->type == NodeType::member || cur->type == NodeType::index) {
      chain.push_back(cur);
      cur = cur->kids[0].get();
    }
    json* slot = cur->name == "data" ? &env_.data : &env_.endpoints;
    bool endpoints = cur->name == "endpoints";
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      const Node& step = **it;
      if (step.type == NodeType::member) {
        if (slot->is_null()) *slot = json::object();
        if (!slot->is_object()) runtime_fail(step, "cannot assign member of non-map");
        slot = &(*slot)[step.name];
      } else {
        json idx = eval(*step.kids[1]);
        if (slot->is_array()) {
          if (!idx.is_number_integer()) runtime_fail(step, "list index must be an integer");
          auto i = idx.get<std::int64_t>();
          if (i < 0 || i > static_cast<std::int64_t>(slot->size())) runtime_fail(step, "list index out of range");
          if (i == static_cast<std::int64_t>(slot->size())) slot->push_back(nullptr);
          slot = &(*slot)[static_cast<std::size_t>(i)];
        } else {
          if (slot->is_null()) *slot = json::object();
          if (!slot->is_object() || !idx.is_string()) runtime_fail(step, "invalid index assignment");
          slot = &(*slot)[idx.get<std::string>()];
        }
      }
    }
    if (endpoints && chain.size() == 1 && !value.is_string()) {
      runtime_fail(target, "endpoints must be URL strings");
    }
    *slot = std::move(value);
  }

  Environment& env_;
};

} // namespace

Program Program::parse(std::string_view source) {
  Program p;
  p.root_ = Parser(Lexer(source).run()).program();
  return p;
}

void Program::execute(Environment& env) const {
  if (!root_) return;
  Evaluator(env).eval(*root_);
}

bool Program::empty() const { return !root_ || root_->kids.empty(); }

Expression Expression::parse(std::string_view source) {
  Expression e;
  e.root_ = Parser(Lexer(source).run()).expression_only();
  return e;
}

json Expression::evaluate(Environment& env) const { return Evaluator(env).eval(*root_); }

bool evaluate_condition(std::string_view source, Environment& env) {
  auto e = Expression::parse(source);
  json v = e.evaluate(env);
  if (!v.is_boolean()) throw ScriptError(ScriptError::Kind::runtime, 1, 1, std::string("condition yields ") + v.type_name());
  return v.get<bool>();
}

void run_atomically(std::string_view source, Environment& env) {
  auto program = Program::parse(source);
  Environment scratch = env;
  program.execute(scratch);
  env = std::move(scratch);
}

} // namespace pflow::script
