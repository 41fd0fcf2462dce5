#ifndef PROXYDEC_REMOTE_HPP
#define PROXYDEC_REMOTE_HPP

// HTTP/1.1 logits protocol: a client backend and the fixture server that
// serves local models over the same wire format.
//
//   GET    /v1/models/{name}  -> {"name", "vocab": {...}}
//   POST   /v1/session        {"model", "prompt", "conditioning_b64"[, "vocab_size"]} -> {"session_id"}
//   POST   /v1/extend         {"session_id", "tokens"} -> {"logits": ["<17 significant digits>", ...]}
//   DELETE /v1/session/{id}   -> 204
//
// 404 unknown model or session, 409 vocabulary mismatch, 413 prompt over the
// server limit, 422 malformed body.

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "proxydec/backends.hpp"
#include "proxydec/codec.hpp"

namespace proxydec {

struct RemoteEndpoint {
  std::string host_port;  // "http://127.0.0.1:8080"
  std::string model;
};

// "http://host:port/model"
inline RemoteEndpoint parse_remote_url(const std::string& url) {
  const std::string scheme = "http://";
  if (!url.starts_with(scheme)) throw ConfigError("remote backend url must start with http:// ('" + url + "')");
  const auto slash = url.find('/', scheme.size());
  if (slash == std::string::npos || slash + 1 >= url.size()) {
    throw ConfigError("remote backend url needs a model path, e.g. http://host:port/model ('" + url + "')");
  }
  const std::string host = url.substr(scheme.size(), slash - scheme.size());
  if (host.empty() || host.find(':') == std::string::npos) {
    throw ConfigError("remote backend url needs host:port ('" + url + "')");
  }
  return RemoteEndpoint{url.substr(0, slash), url.substr(slash + 1)};
}

class RemoteBackend final : public Backend {
 public:
  struct Options {
    std::size_t max_prompt_tokens = 1 << 20;
    int timeout_seconds = 30;
  };

  RemoteBackend(std::string name, RemoteEndpoint endpoint) : RemoteBackend(std::move(name), std::move(endpoint), Options{}) {}

  RemoteBackend(std::string name, RemoteEndpoint endpoint, Options options)
      : endpoint_(std::move(endpoint)), options_(options) {
    httplib::Client client(endpoint_.host_port);
    configure(client);
    auto res = client.Get("/v1/models/" + endpoint_.model);
    if (!res) {
      throw BackendUnavailable(name, 0, "cannot reach " + endpoint_.host_port + ": " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
      throw SessionInitError("remote model '" + endpoint_.model + "' lookup failed with HTTP " +
                             std::to_string(res->status));
    }
    const auto j = nlohmann::json::parse(res->body);
    descriptor_ = BackendDescriptor{std::move(name), BackendKind::remote, vocabulary_from_json(j.at("vocab"), endpoint_.model)};
  }

  const BackendDescriptor& descriptor() const override { return descriptor_; }

  std::unique_ptr<Session> open_session(const TokenSeq& prompt, std::string conditioning) const override {
    if (prompt.size() > options_.max_prompt_tokens) {
      throw SessionInitError("prompt of " + std::to_string(prompt.size()) + " tokens exceeds remote limit of " +
                             std::to_string(options_.max_prompt_tokens));
    }
    return std::make_unique<RemoteSession>(descriptor_, prompt, std::move(conditioning), endpoint_, options_);
  }

 private:
  void configure(httplib::Client& client) const {
    client.set_connection_timeout(options_.timeout_seconds, 0);
    client.set_read_timeout(options_.timeout_seconds, 0);
    client.set_tcp_nodelay(true);
    client.set_write_timeout(options_.timeout_seconds, 0);
  }

  // One HTTP client per session: sessions are driven from different threads.
  class RemoteSession final : public Session {
   public:
    RemoteSession(const BackendDescriptor& d, const TokenSeq& prompt, std::string cond, const RemoteEndpoint& ep,
                  const Options& options)
        : Session(d, prompt, std::move(cond)), client_(ep.host_port) {
      client_.set_connection_timeout(options.timeout_seconds, 0);
      client_.set_read_timeout(options.timeout_seconds, 0);
      client_.set_tcp_nodelay(true);
      client_.set_keep_alive(true);
      nlohmann::json body{{"model", ep.model},
                          {"prompt", prompt},
                          {"conditioning_b64", codec::base64_encode(conditioning())},
                          {"vocab_size", d.vocabulary.size()}};
      auto res = client_.Post("/v1/session", body.dump(), "application/json");
      if (!res) {
        throw SessionInitError("cannot open remote session: " + httplib::to_string(res.error()));
      }
      if (res->status != 200) {
        throw SessionInitError("remote session rejected with HTTP " + std::to_string(res->status) + ": " + res->body);
      }
      id_ = nlohmann::json::parse(res->body).at("session_id").get<std::string>();
    }

    ~RemoteSession() override {
      if (!id_.empty()) client_.Delete("/v1/session/" + id_);
    }

   protected:
    LogitVector score(std::span<const TokenId> new_tokens) override {
      nlohmann::json body{{"session_id", id_}, {"tokens", TokenSeq(new_tokens.begin(), new_tokens.end())}};
      auto res = client_.Post("/v1/extend", body.dump(), "application/json");
      if (!res) throw std::runtime_error("transport failure: " + httplib::to_string(res.error()));
      if (res->status != 200) throw std::runtime_error("HTTP " + std::to_string(res->status) + ": " + res->body);
      return codec::decode_logits(nlohmann::json::parse(res->body).at("logits").get<std::vector<std::string>>());
    }

   private:
    httplib::Client client_;
    std::string id_;
  };

  RemoteEndpoint endpoint_;
  Options options_;
  BackendDescriptor descriptor_;
};

class PortInUse : public Error {
 public:
  using Error::Error;
};

// Serves local backends over the wire protocol. Each remote session maps to
// one local session guarded by its own mutex.
class FixtureServer {
 public:
  using Logger = std::function<void(const std::string&)>;

  explicit FixtureServer(std::map<std::string, std::shared_ptr<const Backend>> models, Logger log = {},
                         std::size_t max_prompt_tokens = 1 << 20)
      : models_(std::move(models)), log_(std::move(log)), max_prompt_tokens_(max_prompt_tokens) {
    routes();
  }

  ~FixtureServer() { stop(); }

  FixtureServer(const FixtureServer&) = delete;
  FixtureServer& operator=(const FixtureServer&) = delete;

  // Binds and starts serving on a background thread; port 0 picks a free
  // port. Returns the bound port.
  int start(const std::string& host, int port) {
    // Plain SO_REUSEADDR so a second server on a taken port fails to bind.
    server_.set_tcp_nodelay(true);
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    int bound = port;
    if (port == 0) {
      bound = server_.bind_to_any_port(host);
    } else if (!server_.bind_to_port(host, port)) {
      bound = -1;
    }
    if (bound < 0) throw PortInUse("cannot bind " + host + ":" + std::to_string(port));
    port_ = bound;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::size_t open_sessions() const {
    std::lock_guard lock(mu_);
    return sessions_.size();
  }

 private:
  struct Entry {
    std::mutex mu;
    std::unique_ptr<Session> session;
  };

  static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void fail(httplib::Response& res, int status, const std::string& message) {
    reply(res, status, nlohmann::json{{"error", message}});
  }

  void log(const std::string& msg) const {
    if (log_) log_(msg);
  }

  void routes() {
    server_.Get(R"(/v1/models/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto it = models_.find(req.matches[1]);
      if (it == models_.end()) return fail(res, 404, "unknown model");
      reply(res, 200, {{"name", it->first}, {"vocab", vocabulary_to_json(it->second->descriptor().vocabulary)}});
    });

    server_.Post("/v1/session", [this](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json body;
      std::string model;
      TokenSeq prompt;
      std::string conditioning;
      try {
        body = nlohmann::json::parse(req.body);
        model = body.at("model").get<std::string>();
        prompt = body.at("prompt").get<TokenSeq>();
        conditioning = codec::base64_decode(body.value("conditioning_b64", std::string{}));
      } catch (const std::exception& e) {
        return fail(res, 422, e.what());
      }
      auto it = models_.find(model);
      if (it == models_.end()) return fail(res, 404, "unknown model '" + model + "'");
      const auto& vocab = it->second->descriptor().vocabulary;
      if (body.contains("vocab_size") &&
          (!body["vocab_size"].is_number_unsigned() || body["vocab_size"].get<std::size_t>() != vocab.size())) {
        return fail(res, 409, "vocabulary size mismatch: server has " + std::to_string(vocab.size()));
      }
      if (prompt.size() > max_prompt_tokens_) return fail(res, 413, "prompt too long");
      auto entry = std::make_shared<Entry>();
      try {
        entry->session = it->second->open_session(prompt, std::move(conditioning));
      } catch (const std::exception& e) {
        return fail(res, 422, e.what());
      }
      std::string id;
      {
        std::lock_guard lock(mu_);
        id = "s" + std::to_string(next_id_++);
        sessions_.emplace(id, std::move(entry));
      }
      log("session " + id + " opened for model " + model + " (" + std::to_string(prompt.size()) + " prompt tokens)");
      reply(res, 200, {{"session_id", id}});
    });

    server_.Post("/v1/extend", [this](const httplib::Request& req, httplib::Response& res) {
      std::string id;
      TokenSeq tokens;
      try {
        auto body = nlohmann::json::parse(req.body);
        id = body.at("session_id").get<std::string>();
        tokens = body.value("tokens", TokenSeq{});
      } catch (const std::exception& e) {
        return fail(res, 422, e.what());
      }
      std::shared_ptr<Entry> entry;
      {
        std::lock_guard lock(mu_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) return fail(res, 404, "unknown session '" + id + "'");
        entry = it->second;
      }
      std::lock_guard lock(entry->mu);
      try {
        LogitVector z = entry->session->extend_and_score(tokens);
        reply(res, 200, {{"logits", codec::encode_logits(z.values())}});
      } catch (const VocabularyMismatch& e) {
        fail(res, 422, e.what());
      } catch (const std::exception& e) {
        fail(res, 500, e.what());
      }
    });

    server_.Delete(R"(/v1/session/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      std::size_t erased = 0;
      {
        std::lock_guard lock(mu_);
        erased = sessions_.erase(id);
      }
      if (!erased) return fail(res, 404, "unknown session '" + id + "'");
      log("session " + id + " closed");
      res.status = 204;
    });
  }

  std::map<std::string, std::shared_ptr<const Backend>> models_;
  Logger log_;
  std::size_t max_prompt_tokens_;

  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t next_id_ = 1;

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace proxydec

#endif  // PROXYDEC_REMOTE_HPP
