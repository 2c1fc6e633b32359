#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "pflow/services/service_host.hpp"

namespace {
pflow::services::ServiceHost* running = nullptr;
void on_signal(int) {
  if (running) running->stop();
}
} // namespace

int main(int argc, char** argv) {
  CLI::App app{"pflow reference services: worklist, XES log, timeout, spawner"};
  std::string host = "0.0.0.0";
  int port = 9302;
  std::string worklist_file;
  std::string log_dir;
  std::string origin;
  std::string level = "info";
  app.add_option("--host", host, "Bind address");
  app.add_option("--port", port, "Port, 0 picks a free one");
  app.add_option("--worklist", worklist_file, "JSON file with roles, skills and strategy")->check(CLI::ExistingFile);
  app.add_option("--log-dir", log_dir, "Directory for XES traces");
  app.add_option("--public-origin", origin, "Origin engines use to reach these services");
  app.add_option("--log-level", level, "trace, debug, info, warn, error");
  CLI11_PARSE(app, argc, argv);

  spdlog::set_level(spdlog::level::from_str(level));

  pflow::services::ServiceHostConfig cfg;
  cfg.log_directory = log_dir;
  cfg.public_origin = origin;
  if (!worklist_file.empty()) {
    try {
      std::ifstream in(worklist_file);
      cfg.worklist = pflow::services::WorklistConfig::from_json(pflow::services::json::parse(in));
    } catch (const std::exception& e) {
      spdlog::error("bad worklist configuration: {}", e.what());
      return 1;
    }
  }
  pflow::services::ServiceHost services(cfg);
  try {
    services.bind(host, port);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  std::cout << "listening " << services.base_url() << std::endl;
  running = &services;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  services.run();
  running = nullptr;
  services.logger().flush();
  return 0;
}
