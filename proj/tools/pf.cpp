#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "pflow/http.hpp"

using json = nlohmann::json;

namespace {

constexpr int exit_rejected = 1;
constexpr int exit_unreachable = 2;

struct Rejected : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string engine;
  std::string output = "json";
  int timeout = 30;
};

class EngineClient {
 public:
  explicit EngineClient(Options o) : o_(std::move(o)) {
    if (o_.engine.empty() || o_.engine.back() != '/') o_.engine += '/';
  }

  const std::string& base() const { return o_.engine; }

  json call(const std::string& method, const std::string& path, const json& body = nullptr) {
    pflow::http::Request req;
    req.method = method;
    req.url = pflow::http::join(o_.engine, path);
    req.timeout = std::chrono::seconds(o_.timeout);
    if (!body.is_null()) {
      req.headers["Content-Type"] = "application/json";
      req.body = body.dump();
    }
    auto res = client_.send(req);
    if (res.status < 200 || res.status >= 300) {
      throw Rejected(method + " " + req.url + " -> " + std::to_string(res.status) + " " + res.body);
    }
    if (res.body.empty()) return json::object();
    auto j = json::parse(res.body, nullptr, false);
    return j.is_discarded() ? json(res.body) : j;
  }

 private:
  Options o_;
  pflow::http::HttplibClient client_;
};

json read_json_arg(const std::string& text) {
  auto j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw Rejected("not valid JSON: " + text);
  return j;
}

void print(const Options& o, const json& j) {
  if (o.output != "table" || !j.is_object()) {
    std::cout << j.dump() << std::endl;
    return;
  }
  for (const auto& [k, v] : j.items()) std::cout << k << "\t" << (v.is_string() ? v.get<std::string>() : v.dump()) << "\n";
  std::cout.flush();
}

std::atomic<bool> interrupted{false};
void on_signal(int) { interrupted = true; }

/// Streams one SSE connection, printing each data line. Returns when the
/// connection drops or the count is reached.
bool stream(const std::string& url, int& remaining) {
  auto u = pflow::http::Url::parse(url);
  httplib::Client cli(u.origin());
  cli.set_read_timeout(std::chrono::seconds(60));
  std::string buffer;
  auto res = cli.Get(u.path, [&](const char* data, std::size_t n) {
    buffer.append(data, n);
    std::size_t pos;
    while ((pos = buffer.find("\n\n")) != std::string::npos) {
      std::istringstream frame(buffer.substr(0, pos));
      buffer.erase(0, pos + 2);
      std::string line;
      while (std::getline(frame, line)) {
        if (line.rfind("data: ", 0) == 0) {
          std::cout << line.substr(6) << std::endl;
          if (remaining > 0 && --remaining == 0) return false;
        }
      }
    }
    return !interrupted.load();
  });
  return res || remaining == 0;
}

int watch(EngineClient& client, const std::vector<std::string>& topics, std::optional<long long> instance, int count) {
  json sels = json::array();
  for (const auto& t : topics) {
    auto slash = t.find('/');
    if (slash == std::string::npos) sels.push_back({{"topic", t}, {"event", "*"}});
    else sels.push_back({{"topic", t.substr(0, slash)}, {"event", t.substr(slash + 1)}});
  }
  json spec{{"selections", sels}};
  if (instance) spec["instance"] = *instance;
  auto created = client.call("POST", "subscriptions", spec);
  auto id = created.at("id").get<std::string>();
  auto sse = pflow::http::join(client.base(), "subscriptions/" + id + "/sse");

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  int remaining = count;
  auto cleanup = [&] {
    try {
      client.call("DELETE", "subscriptions/" + id);
    } catch (const std::exception&) {
    }
  };
  std::thread reader([&] {
    auto backoff = std::chrono::milliseconds(250);
    while (!interrupted.load()) {
      stream(sse, remaining);
      if (count > 0 && remaining == 0) break;
      if (interrupted.load()) break;
      std::cerr << "stream dropped, reconnecting in " << backoff.count() << " ms" << std::endl;
      std::this_thread::sleep_for(backoff);
      backoff = std::min(backoff * 2, std::chrono::milliseconds(8000));
    }
    interrupted = true;
  });
  while (!interrupted.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  cleanup();
  if (count > 0 && remaining == 0) {
    reader.join();
    return 0;
  }
  // The reader may sit in a blocking read until the next heartbeat.
  reader.detach();
  std::cout.flush();
  std::quick_exit(0);
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"pf: command-line client for the pflow engine"};
  app.require_subcommand(1);
  Options opts;
  const char* env = std::getenv("PF_ENGINE");
  opts.engine = env ? env : "http://localhost:9298/flow/engine/";
  app.add_option("--engine", opts.engine, "Instance collection URL (env PF_ENGINE)");
  app.add_option("--output", opts.output, "json or table")->check(CLI::IsMember({"json", "table"}));
  app.add_option("--timeout", opts.timeout, "Request timeout in seconds");

  auto* instance = app.add_subcommand("instance", "Create and steer instances");
  instance->require_subcommand(1);

  std::string model_file;
  bool start = false;
  auto* create = instance->add_subcommand("create", "Create an instance");
  create->add_option("--model", model_file, "Process model JSON file");
  create->add_flag("--start", start, "Start it right away");

  long long id = 0;
  auto* stop = instance->add_subcommand("stop", "Stop and wait for the drain");
  auto* resume = instance->add_subcommand("start", "Start or resume");
  auto* abandon = instance->add_subcommand("abandon", "Abandon");
  auto* purge = instance->add_subcommand("purge", "Purge");
  auto* show = instance->add_subcommand("show", "Overview");
  for (auto* c : {stop, resume, abandon, purge, show}) c->add_option("id", id, "Instance id")->required();

  std::string dataelements, endpoints, attributes, positions;
  auto* patch = instance->add_subcommand("patch", "Change context or positions");
  patch->add_option("id", id, "Instance id")->required();
  patch->add_option("--dataelements", dataelements, "JSON merge patch or {add, delete, change}");
  patch->add_option("--endpoints", endpoints, "JSON merge patch or {add, delete, change}");
  patch->add_option("--attributes", attributes, "JSON merge patch or {add, delete, change}");
  patch->add_option("--positions", positions, "JSON array of positions");

  std::vector<std::string> topics{"state", "position", "activity", "dataelements", "task"};
  std::optional<long long> watch_instance;
  int count = 0;
  auto* watch_cmd = app.add_subcommand("watch", "Print live events as JSON lines");
  watch_cmd->add_option("--topics", topics, "topic or topic/event, comma separated")->delimiter(',');
  watch_cmd->add_option("--instance", watch_instance, "Only this instance");
  watch_cmd->add_option("--count", count, "Exit after this many events");

  CLI11_PARSE(app, argc, argv);

  EngineClient client(opts);
  auto path = [&](const std::string& sub = "") { return std::to_string(id) + (sub.empty() ? "" : "/" + sub); };
  try {
    if (*create) {
      json model;
      if (!model_file.empty()) {
        std::ifstream in(model_file);
        if (!in) throw Rejected("cannot read " + model_file);
        model = json::parse(in, nullptr, false);
        if (model.is_discarded()) throw Rejected(model_file + " is not valid JSON");
      }
      auto created = client.call("POST", "");
      id = created.at("id").get<long long>();
      if (!model.is_null()) {
        try {
          client.call("PUT", path("model"), model);
        } catch (const Rejected&) {
          try {
            client.call("PUT", path("state"), json{{"state", "abandoned"}});
            client.call("DELETE", path(""));
          } catch (const std::exception&) {
          }
          throw;
        }
      }
      if (start) client.call("PUT", path("state"), json{{"state", "running"}});
      print(opts, created);
    } else if (*stop) {
      client.call("PUT", path("state"), json{{"state", "stopping"}});
      auto until = std::chrono::steady_clock::now() + std::chrono::seconds(opts.timeout);
      std::string state;
      do {
        state = client.call("GET", path("state")).value("state", "");
        if (state != "stopping") break;
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
      } while (std::chrono::steady_clock::now() < until);
      print(opts, json{{"id", id}, {"state", state}});
    } else if (*resume) {
      print(opts, client.call("PUT", path("state"), json{{"state", "running"}}));
    } else if (*abandon) {
      print(opts, client.call("PUT", path("state"), json{{"state", "abandoned"}}));
    } else if (*purge) {
      print(opts, client.call("DELETE", path()));
    } else if (*show) {
      print(opts, client.call("GET", path()));
    } else if (*patch) {
      bool any = false;
      for (auto [name, text] : {std::pair<std::string, std::string*>{"dataelements", &dataelements},
                                {"endpoints", &endpoints},
                                {"attributes", &attributes},
                                {"positions", &positions}}) {
        if (text->empty()) continue;
        any = true;
        print(opts, client.call("PATCH", path(name), read_json_arg(*text)));
      }
      if (!any) throw Rejected("nothing to patch");
    } else if (*watch_cmd) {
      return watch(client, topics, watch_instance, count);
    }
  } catch (const Rejected& e) {
    std::cerr << e.what() << std::endl;
    return exit_rejected;
  } catch (const pflow::http::TransportError& e) {
    std::cerr << "engine unreachable: " << e.what() << std::endl;
    return exit_unreachable;
  } catch (const std::invalid_argument& e) {
    std::cerr << e.what() << std::endl;
    return exit_unreachable;
  } catch (const json::exception& e) {
    std::cerr << "unexpected answer: " << e.what() << std::endl;
    return exit_rejected;
  }
  return 0;
}
