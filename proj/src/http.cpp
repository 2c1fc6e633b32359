#include "pflow/http.hpp"

#include <httplib.h>

#include <cctype>
#include <mutex>

#include "pflow/util.hpp"

namespace pflow::http {

bool CaseInsensitiveLess::operator()(const std::string& a, const std::string& b) const {
  auto n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    auto ca = std::tolower(static_cast<unsigned char>(a[i]));
    auto cb = std::tolower(static_cast<unsigned char>(b[i]));
    if (ca != cb) return ca < cb;
  }
  return a.size() < b.size();
}

std::optional<std::string> header(const Headers& h, const std::string& name) {
  auto it = h.find(name);
  if (it == h.end()) return std::nullopt;
  return it->second;
}

std::string Url::origin() const {
  bool default_port = (scheme == "http" && port == 80) || (scheme == "https" && port == 443);
  return scheme + "://" + host + (default_port ? "" : ":" + std::to_string(port));
}

Url Url::parse(std::string_view text) {
  Url u;
  auto sep = text.find("://");
  if (sep == std::string_view::npos) throw std::invalid_argument("URL without scheme: " + std::string(text));
  u.scheme = std::string(text.substr(0, sep));
  for (auto& c : u.scheme) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  auto rest = text.substr(sep + 3);
  auto slash = rest.find('/');
  auto authority = rest.substr(0, slash);
  u.path = slash == std::string_view::npos ? "/" : std::string(rest.substr(slash));
  auto colon = authority.rfind(':');
  if (colon != std::string_view::npos && authority.find(']') == std::string_view::npos) {
    u.host = std::string(authority.substr(0, colon));
    try {
      u.port = std::stoi(std::string(authority.substr(colon + 1)));
    } catch (const std::exception&) {
      throw std::invalid_argument("bad port in URL: " + std::string(text));
    }
  } else {
    u.host = std::string(authority);
    u.port = u.scheme == "https" ? 443 : 80;
  }
  if (u.host.empty()) throw std::invalid_argument("URL without host: " + std::string(text));
  return u;
}

std::string join(std::string_view base, std::string_view path) {
  std::string out(base);
  while (!out.empty() && out.back() == '/') out.pop_back();
  while (!path.empty() && path.front() == '/') path.remove_prefix(1);
  out += '/';
  out += path;
  return out;
}

namespace {

void apply_timeouts(httplib::Client& cli, std::chrono::milliseconds timeout) {
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
  cli.set_connection_timeout(secs.count(), usecs.count());
  cli.set_read_timeout(secs.count(), usecs.count());
  cli.set_write_timeout(secs.count(), usecs.count());
}

Url checked_url(const Request& request) {
  Url url = Url::parse(request.url);
  if (url.scheme != "http") throw TransportError(TransportError::Kind::other, "unsupported scheme " + url.scheme);
  return url;
}

Response perform(httplib::Client& cli, const Url& url, const Request& request) {
  httplib::Headers hs;
  std::string content_type = "application/json";
  for (const auto& [k, v] : request.headers) {
    if (iequals(k, "content-type")) content_type = v;
    else hs.emplace(k, v);
  }

  httplib::Result res{nullptr, httplib::Error::Unknown};
  const auto& m = request.method;
  if (m == "GET") res = cli.Get(url.path, hs);
  else if (m == "DELETE") res = cli.Delete(url.path, hs, request.body, content_type);
  else if (m == "POST") res = cli.Post(url.path, hs, request.body, content_type);
  else if (m == "PUT") res = cli.Put(url.path, hs, request.body, content_type);
  else if (m == "PATCH") res = cli.Patch(url.path, hs, request.body, content_type);
  else throw TransportError(TransportError::Kind::other, "unsupported method " + m);

  if (!res) {
    auto err = res.error();
    auto kind = err == httplib::Error::Read || err == httplib::Error::Write ? TransportError::Kind::timeout
                : err == httplib::Error::Connection                          ? TransportError::Kind::connect
                                                                             : TransportError::Kind::other;
    throw TransportError(kind, request.method + " " + request.url + ": " + httplib::to_string(err));
  }
  Response out;
  out.status = res->status;
  out.body = res->body;
  for (const auto& [k, v] : res->headers) out.headers[k] = v;
  return out;
}

} // namespace

Response HttplibClient::send(const Request& request) {
  Url url = checked_url(request);
  httplib::Client cli(url.host, url.port);
  apply_timeouts(cli, request.timeout);
  return perform(cli, url, request);
}

struct KeepAliveClient::Impl {
  struct Slot {
    std::mutex mu;
    std::unique_ptr<httplib::Client> client;
  };
  std::mutex mu;
  std::map<std::string, std::shared_ptr<Slot>> slots;
};

KeepAliveClient::KeepAliveClient() : impl_(std::make_unique<Impl>()) {}
KeepAliveClient::~KeepAliveClient() = default;

Response KeepAliveClient::send(const Request& request) {
  Url url = checked_url(request);
  std::shared_ptr<Impl::Slot> slot;
  {
    std::lock_guard lock(impl_->mu);
    auto& s = impl_->slots[url.origin()];
    if (!s) s = std::make_shared<Impl::Slot>();
    slot = s;
  }
  std::lock_guard lock(slot->mu);
  if (!slot->client) {
    slot->client = std::make_unique<httplib::Client>(url.host, url.port);
    slot->client->set_keep_alive(true);
  }
  apply_timeouts(*slot->client, request.timeout);
  try {
    return perform(*slot->client, url, request);
  } catch (const TransportError&) {
    slot->client.reset();
    throw;
  }
}

std::shared_ptr<Client> default_client() { return std::make_shared<HttplibClient>(); }

} // namespace pflow::http
