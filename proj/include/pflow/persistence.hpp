#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include <json.hpp>

#include "pflow/events.hpp"

namespace pflow {

using json = nlohmann::json;

/// Stores one JSON snapshot per instance.
class PersistenceAdapter {
 public:
  virtual ~PersistenceAdapter() = default;
  virtual void store(InstanceId id, const json& snapshot) = 0;
  virtual void remove(InstanceId id) = 0;
  virtual std::vector<json> load_all() = 0;
};

class MemoryStore : public PersistenceAdapter {
 public:
  void store(InstanceId id, const json& snapshot) override;
  void remove(InstanceId id) override;
  std::vector<json> load_all() override;

 private:
  std::mutex mu_;
  std::map<InstanceId, std::string> docs_;
};

/// <dir>/<id>.json, replaced atomically on every store.
class FileStore : public PersistenceAdapter {
 public:
  explicit FileStore(std::filesystem::path dir);
  void store(InstanceId id, const json& snapshot) override;
  void remove(InstanceId id) override;
  std::vector<json> load_all() override;

 private:
  std::filesystem::path dir_;
  std::mutex mu_;
};

} // namespace pflow
