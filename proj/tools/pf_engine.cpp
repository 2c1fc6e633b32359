#include <csignal>
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "pflow/control_api.hpp"
#include "pflow/engine.hpp"
#include "pflow/gateway.hpp"
#include "pflow/persistence.hpp"

namespace {
pflow::ControlApi* running = nullptr;
void on_signal(int) {
  if (running) running->stop();
}
} // namespace

int main(int argc, char** argv) {
  CLI::App app{"pflow process engine"};
  std::string host = "0.0.0.0";
  int port = 9298;
  std::string data_dir;
  std::string origin;
  std::string prefix = "/flow/engine";
  std::string level = "info";
  int drain_seconds = 60;
  app.add_option("--host", host, "Bind address");
  app.add_option("--port", port, "Port, 0 picks a free one");
  app.add_option("--data", data_dir, "Snapshot directory; instances found there are restored");
  app.add_option("--public-origin", origin, "Origin used in generated URLs, e.g. http://engine.example:9298");
  app.add_option("--prefix", prefix, "Path of the instance collection");
  app.add_option("--drain", drain_seconds, "Seconds a stop waits for calls in flight");
  app.add_option("--log-level", level, "trace, debug, info, warn, error");
  CLI11_PARSE(app, argc, argv);

  spdlog::set_level(spdlog::level::from_str(level));

  pflow::EngineConfig ecfg;
  ecfg.drain_timeout = std::chrono::seconds(drain_seconds);
  if (!data_dir.empty()) ecfg.store = std::make_shared<pflow::FileStore>(data_dir);
  pflow::Engine engine(ecfg);
  pflow::Gateway gateway(engine.bus(), {});

  pflow::ControlApiConfig acfg;
  acfg.prefix = prefix;
  acfg.public_origin = origin;
  pflow::ControlApi api(engine, gateway, acfg);
  try {
    port = api.bind(host, port);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  if (ecfg.store) spdlog::info("restored {} instances", engine.restore());

  std::cout << "listening " << api.base_url() << std::endl;
  running = &api;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  api.run();
  running = nullptr;
  engine.flush();
  engine.shutdown();
  gateway.shutdown();
  return 0;
}
