#include "pflow/persistence.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pflow {

void MemoryStore::store(InstanceId id, const json& snapshot) {
  std::lock_guard lock(mu_);
  docs_[id] = snapshot.dump();
}

void MemoryStore::remove(InstanceId id) {
  std::lock_guard lock(mu_);
  docs_.erase(id);
}

std::vector<json> MemoryStore::load_all() {
  std::lock_guard lock(mu_);
  std::vector<json> out;
  for (const auto& [id, doc] : docs_) out.push_back(json::parse(doc));
  return out;
}

FileStore::FileStore(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

void FileStore::store(InstanceId id, const json& snapshot) {
  std::lock_guard lock(mu_);
  auto target = dir_ / (std::to_string(id) + ".json");
  auto tmp = dir_ / (std::to_string(id) + ".json.tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << snapshot.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

void FileStore::remove(InstanceId id) {
  std::lock_guard lock(mu_);
  std::filesystem::remove(dir_ / (std::to_string(id) + ".json"));
}

std::vector<json> FileStore::load_all() {
  std::lock_guard lock(mu_);
  std::vector<json> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    if (entry.path().extension() != ".json") continue;
    std::ifstream in(entry.path());
    std::stringstream ss;
    ss << in.rdbuf();
    auto doc = json::parse(ss.str(), nullptr, false);
    if (!doc.is_discarded()) out.push_back(std::move(doc));
  }
  return out;
}

} // namespace pflow
