#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pflow::http {

struct CaseInsensitiveLess {
  bool operator()(const std::string& a, const std::string& b) const;
};

/// HTTP header names compare case-insensitively.
using Headers = std::map<std::string, std::string, CaseInsensitiveLess>;

std::optional<std::string> header(const Headers& h, const std::string& name);

struct Url {
  std::string scheme = "http";
  std::string host;
  int port = 80;
  std::string path = "/";  // includes query string

  /// scheme://host:port
  std::string origin() const;
  std::string str() const { return origin() + path; }
  static Url parse(std::string_view text);
};

/// Joins a base URL and a relative path with exactly one slash between.
std::string join(std::string_view base, std::string_view path);

struct Request {
  std::string method = "GET";
  std::string url;
  Headers headers;
  std::string body;
  std::chrono::milliseconds timeout{30000};
};

struct Response {
  int status = 0;
  Headers headers;
  std::string body;
};

/// Connection failures and timeouts. HTTP error statuses are responses,
/// not exceptions.
class TransportError : public std::runtime_error {
 public:
  enum class Kind { connect, timeout, other };
  TransportError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class Client {
 public:
  virtual ~Client() = default;
  virtual Response send(const Request& request) = 0;
};

/// cpp-httplib backed client; one connection per request.
class HttplibClient : public Client {
 public:
  Response send(const Request& request) override;
};

/// Keeps one connection per origin open between requests. Safe to share;
/// requests to the same origin are serialized.
class KeepAliveClient : public Client {
 public:
  KeepAliveClient();
  ~KeepAliveClient() override;
  Response send(const Request& request) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::shared_ptr<Client> default_client();

} // namespace pflow::http
