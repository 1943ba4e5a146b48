#pragma once

// Minimal chat-completion client for any OpenAI-compatible HTTP endpoint.
// Handles retry with exponential backoff, a process-wide concurrency budget
// and an optional append-only JSONL audit log keyed by request hash.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "rise/util.hpp"

namespace rise {

struct Endpoint {
  std::string base_url = "http://127.0.0.1:8080";
  std::string model_name = "local-model";
  std::optional<std::string> api_key;
  double timeout_s = 60.0;
  int max_retries = 3;
  int max_concurrency = 4;
  int retry_backoff_ms = 250;  // doubled per attempt

  void validate() const {
    if (max_concurrency < 1) throw Error("ConfigInvalid", "endpoint.max_concurrency must be >= 1");
    if (timeout_s <= 0) throw Error("ConfigInvalid", "endpoint.timeout must be positive");
  }
};

struct DecodeParams {
  double temperature = 0.7;
  double top_p = 0.95;
  int max_tokens = 1024;
  int n = 1;

  bool greedy() const { return temperature == 0.0; }
};

struct ChatMessage {
  std::string role;
  std::string content;
};

struct TransportError : Error {
  explicit TransportError(const std::string& msg, std::string body = {})
      : Error("TransportError", msg), raw_body(std::move(body)) {}
  std::string raw_body;
};

struct AuthError : Error {
  explicit AuthError(const std::string& msg, std::string body = {})
      : Error("AuthError", msg), raw_body(std::move(body)) {}
  std::string raw_body;
};

struct MalformedResponse : Error {
  explicit MalformedResponse(const std::string& msg, std::string body = {})
      : Error("MalformedResponse", msg), raw_body(std::move(body)) {}
  std::string raw_body;
};

struct ClientStats {
  std::uint64_t requests = 0;
  std::uint64_t retries = 0;
  std::uint64_t failures = 0;
};

namespace detail {

// Counting semaphore with a runtime limit (std::counting_semaphore fixes the
// ceiling at compile time).
class Budget {
 public:
  explicit Budget(int limit) : available_(limit) {}

  void acquire() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return available_ > 0; });
    --available_;
  }

  void release() {
    {
      std::lock_guard lk(mu_);
      ++available_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int available_;
};

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix, may be empty
};

inline SplitUrl split_url(const std::string& base_url) {
  SplitUrl out;
  std::size_t scheme = base_url.find("://");
  std::size_t path_start = scheme == std::string::npos
                               ? base_url.find('/')
                               : base_url.find('/', scheme + 3);
  if (path_start == std::string::npos) {
    out.origin = base_url;
  } else {
    out.origin = base_url.substr(0, path_start);
    out.prefix = base_url.substr(path_start);
    while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  }
  return out;
}

}  // namespace detail

// Thread-safe: chat_complete may be called from any number of tasks; the
// client enforces the endpoint's max_concurrency internally.
class ChatClient {
 public:
  explicit ChatClient(Endpoint ep, std::optional<std::string> audit_path = std::nullopt)
      : ep_(std::move(ep)), budget_(ep_.max_concurrency) {
    ep_.validate();
    if (audit_path && !audit_path->empty()) {
      std::filesystem::path p(*audit_path);
      if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
      audit_.open(p, std::ios::app | std::ios::binary);
      audit_enabled_ = audit_.is_open();
    }
  }

  const Endpoint& endpoint() const { return ep_; }

  ClientStats stats() const {
    ClientStats s;
    s.requests = requests_.load();
    s.retries = retries_.load();
    s.failures = failures_.load();
    return s;
  }

  // Returns dp.n completion texts. Transient transport errors, 429 and 5xx
  // responses are retried with exponential backoff up to max_retries.
  std::vector<std::string> chat_complete(const std::vector<ChatMessage>& messages,
                                         const DecodeParams& dp) {
    if (messages.empty()) throw Error("ConfigInvalid", "chat_complete: empty message list");
    json body;
    body["model"] = ep_.model_name;
    json jmsgs = json::array();
    for (const auto& m : messages) jmsgs.push_back(json{{"role", m.role}, {"content", m.content}});
    body["messages"] = jmsgs;
    body["temperature"] = dp.temperature;
    body["top_p"] = dp.top_p;
    body["max_tokens"] = dp.max_tokens;
    body["n"] = dp.n;
    const std::string payload = body.dump();
    const std::string request_hash = to_hex(fnv1a64(payload));

    budget_.acquire();
    struct Release {
      detail::Budget* b;
      ~Release() { b->release(); }
    } release{&budget_};

    requests_.fetch_add(1);
    auto split = detail::split_url(ep_.base_url);
    httplib::Client cli(split.origin);
    cli.set_connection_timeout(std::chrono::milliseconds(
        static_cast<int>(ep_.timeout_s * 1000)));
    cli.set_read_timeout(std::chrono::milliseconds(static_cast<int>(ep_.timeout_s * 1000)));
    httplib::Headers headers;
    if (ep_.api_key && !ep_.api_key->empty())
      headers.emplace("Authorization", "Bearer " + *ep_.api_key);

    std::string last_error;
    std::string last_body;
    int attempts_used = 0;
    for (int attempt = 0; attempt <= ep_.max_retries; ++attempt) {
      attempts_used = attempt;
      if (attempt > 0) {
        retries_.fetch_add(1);
        std::this_thread::sleep_for(
            std::chrono::milliseconds(ep_.retry_backoff_ms << (attempt - 1)));
      }
      auto res = cli.Post(split.prefix + "/chat/completions", headers, payload, "application/json");
      if (!res) {
        last_error = "transport failure: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 401 || res->status == 403) {
        failures_.fetch_add(1);
        audit(request_hash, body, json{{"status", res->status}}, attempt);
        throw AuthError("endpoint rejected credentials (HTTP " + std::to_string(res->status) + ")",
                        res->body);
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        last_body = res->body;
        continue;
      }
      if (res->status != 200) {
        failures_.fetch_add(1);
        audit(request_hash, body, json{{"status", res->status}}, attempt);
        throw MalformedResponse("unexpected HTTP " + std::to_string(res->status), res->body);
      }
      std::vector<std::string> out = parse_choices(res->body);
      audit(request_hash, body,
            json{{"status", 200}, {"choices", static_cast<int>(out.size())}}, attempt);
      return out;
    }
    failures_.fetch_add(1);
    audit(request_hash, body, json{{"error", last_error}}, attempts_used);
    throw TransportError("request failed after " + std::to_string(ep_.max_retries) +
                             " retries: " + last_error,
                         last_body);
  }

 private:
  std::vector<std::string> parse_choices(const std::string& body) {
    json j;
    try {
      j = json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw MalformedResponse(std::string("response is not JSON: ") + e.what(), body);
    }
    if (!j.contains("choices") || !j["choices"].is_array())
      throw MalformedResponse("response lacks choices array", body);
    std::vector<std::string> out;
    for (const auto& c : j["choices"]) {
      if (c.contains("message") && c["message"].contains("content") &&
          c["message"]["content"].is_string()) {
        out.push_back(c["message"]["content"].get<std::string>());
      } else {
        out.emplace_back();  // missing content becomes a hole for the caller
      }
    }
    return out;
  }

  void audit(const std::string& hash, const json& request, const json& outcome, int attempts) {
    if (!audit_enabled_) return;
    std::lock_guard lk(audit_mu_);
    json row{{"seq", audit_seq_++},
             {"request_hash", hash},
             {"attempts", attempts},
             {"request", request},
             {"outcome", outcome}};
    audit_ << row.dump() << '\n';
    audit_.flush();
  }

  Endpoint ep_;
  detail::Budget budget_;
  std::atomic<std::uint64_t> requests_{0};
  std::atomic<std::uint64_t> retries_{0};
  std::atomic<std::uint64_t> failures_{0};
  bool audit_enabled_ = false;
  std::ofstream audit_;
  std::mutex audit_mu_;
  std::uint64_t audit_seq_ = 0;
};

}  // namespace rise
