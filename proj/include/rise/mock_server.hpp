#pragma once

// In-process deterministic stand-in for a chat-completion endpoint, used by
// the test suite and by `--mock` pipeline runs. Responses are a pure function
// of the request content (plus explicit failure injection set by tests), so
// repeated runs are byte-identical.

#include <atomic>
#include <chrono>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "rise/util.hpp"

namespace rise {

struct MockProblemFixture {
  std::string id;
  std::string statement;
  std::string reference_answer;
  std::vector<std::string> completions;  // continuations, cycled per choice index
};

struct MockScriptedResponse {
  std::string match;     // substring of the extracted step / prompt
  std::string response;  // assistant content returned verbatim
};

struct MockFixtures {
  std::vector<MockProblemFixture> problems;
  std::vector<MockScriptedResponse> edits;
  std::vector<MockScriptedResponse> judgments;

  static MockFixtures load(const std::filesystem::path& path) {
    json j = json::parse(read_file(path));
    MockFixtures f;
    for (const auto& p : j.value("problems", json::array())) {
      MockProblemFixture mp;
      mp.id = p.at("id").get<std::string>();
      mp.statement = p.at("statement").get<std::string>();
      mp.reference_answer = p.value("reference_answer", "");
      for (const auto& c : p.at("completions")) mp.completions.push_back(c.get<std::string>());
      f.problems.push_back(std::move(mp));
    }
    for (const auto& e : j.value("edits", json::array()))
      f.edits.push_back({e.at("match").get<std::string>(), e.at("response").get<std::string>()});
    for (const auto& e : j.value("judgments", json::array()))
      f.judgments.push_back({e.at("match").get<std::string>(), e.at("response").get<std::string>()});
    return f;
  }
};

class MockServer {
 public:
  explicit MockServer(MockFixtures fixtures) : fixtures_(std::move(fixtures)) {
    srv_.Post("/chat/completions",
              [this](const httplib::Request& req, httplib::Response& res) { handle(req, res); });
  }

  ~MockServer() { stop(); }

  void start() {
    port_ = srv_.bind_to_any_port("127.0.0.1");
    if (port_ <= 0) throw Error("IoError", "mock server could not bind a port");
    thread_ = std::thread([this] { srv_.listen_after_bind(); });
    srv_.wait_until_ready();
  }

  void stop() {
    if (thread_.joinable()) {
      srv_.stop();
      thread_.join();
    }
  }

  int port() const { return port_; }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  int high_water() const { return high_water_.load(); }
  std::uint64_t request_count() const { return requests_.load(); }

  // Next `n` requests answer with `status` before normal handling resumes.
  void fail_next(int n, int status) {
    std::lock_guard lk(mu_);
    fail_remaining_ = n;
    fail_status_ = status;
  }

  void set_delay_ms(int ms) { delay_ms_.store(ms); }

 private:
  void handle(const httplib::Request& req, httplib::Response& res) {
    int inflight = in_flight_.fetch_add(1) + 1;
    int hw = high_water_.load();
    while (inflight > hw && !high_water_.compare_exchange_weak(hw, inflight)) {
    }
    requests_.fetch_add(1);
    struct Done {
      std::atomic<int>* c;
      ~Done() { c->fetch_sub(1); }
    } done{&in_flight_};

    int delay = delay_ms_.load();
    if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));

    {
      std::lock_guard lk(mu_);
      if (fail_remaining_ > 0) {
        --fail_remaining_;
        res.status = fail_status_;
        res.set_content("{\"error\":\"injected failure\"}", "application/json");
        return;
      }
    }

    json body;
    try {
      body = json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      res.status = 400;
      res.set_content("{\"error\":\"bad json\"}", "application/json");
      return;
    }
    std::string prompt;
    if (body.contains("messages") && body["messages"].is_array() && !body["messages"].empty()) {
      const auto& last = body["messages"].back();
      prompt = last.value("content", "");
    }
    int n = body.value("n", 1);
    if (n < 1) n = 1;

    std::vector<std::string> contents;
    for (int i = 0; i < n; ++i) contents.push_back(respond(prompt, i));

    json out;
    out["id"] = "mock-cmpl";
    out["object"] = "chat.completion";
    out["model"] = body.value("model", "mock");
    json choices = json::array();
    for (int i = 0; i < n; ++i) {
      choices.push_back(json{{"index", i},
                             {"message", json{{"role", "assistant"}, {"content", contents[static_cast<std::size_t>(i)]}}},
                             {"finish_reason", "stop"}});
    }
    out["choices"] = choices;
    res.set_content(out.dump(), "application/json");
  }

  std::string respond(const std::string& prompt, int choice_index) const {
    if (prompt.rfind("ECHO:", 0) == 0) return prompt.substr(5);

    if (prompt.find("Current Step:") != std::string::npos) return respond_edit(prompt);

    if (prompt.find("Category:") != std::string::npos &&
        prompt.find("first error") != std::string::npos)
      return respond_judge(prompt);

    return respond_sample(prompt, choice_index);
  }

  std::string respond_edit(const std::string& prompt) const {
    std::string step = extract_step(prompt);
    for (const auto& s : fixtures_.edits) {
      if (!s.match.empty() && step.find(s.match) != std::string::npos) return s.response;
    }
    // Generic corruption: bump the last digit; failing that, flip the first
    // plus to a minus; failing that, echo the step (identical-edit path).
    std::string edited = step;
    for (std::size_t i = edited.size(); i > 0; --i) {
      char& c = edited[i - 1];
      if (c >= '0' && c <= '9') {
        c = c == '9' ? '3' : static_cast<char>(c + 1);
        return edited;
      }
    }
    auto plus = edited.find(" + ");
    if (plus != std::string::npos) {
      edited[plus + 1] = '-';
      return edited;
    }
    return edited;
  }

  std::string respond_judge(const std::string& prompt) const {
    for (const auto& s : fixtures_.judgments) {
      if (!s.match.empty() && prompt.find(s.match) != std::string::npos) return s.response;
    }
    // Deterministic default keyed on content.
    int k = 1 + static_cast<int>(fnv1a64(prompt) % 5);
    return "The first mistake appears early in the solution.\nCategory: (" + std::to_string(k) + ")";
  }

  std::string respond_sample(const std::string& prompt, int choice_index) const {
    for (const auto& p : fixtures_.problems) {
      if (!p.statement.empty() && prompt.find(p.statement) != std::string::npos &&
          !p.completions.empty()) {
        return p.completions[static_cast<std::size_t>(choice_index) % p.completions.size()];
      }
    }
    // Self-service arithmetic: "What is <a> + <b>?"
    if (auto sum = parse_sum(prompt)) {
      long long a = sum->first, b = sum->second, s = a + b;
      return " We add the two numbers directly.\nStep 2: " + std::to_string(a) + " + " +
             std::to_string(b) + " = " + std::to_string(s) + ".\nThe answer is $\\boxed{" +
             std::to_string(s) + "}$.";
    }
    return " I am not sure about this one.\nThe answer is $\\boxed{0}$.";
  }

  // The edit prompt lays out "...Current Step:\n\n<step>\n\n<instruction>";
  // the instruction is always the final non-empty line.
  static std::string extract_step(const std::string& prompt) {
    std::size_t p = prompt.find("Current Step:");
    if (p == std::string::npos) return {};
    std::size_t begin = prompt.find('\n', p);
    if (begin == std::string::npos) return {};
    while (begin < prompt.size() && prompt[begin] == '\n') ++begin;
    std::string rest = rtrim(prompt.substr(begin));
    std::size_t last_nl = rest.rfind('\n');
    if (last_nl == std::string::npos) return rest;
    return rtrim(rest.substr(0, last_nl));
  }

  static std::optional<std::pair<long long, long long>> parse_sum(const std::string& prompt) {
    std::size_t p = prompt.find("What is ");
    if (p == std::string::npos) return std::nullopt;
    const char* s = prompt.c_str() + p + 8;
    char* end = nullptr;
    long long a = std::strtoll(s, &end, 10);
    if (end == s) return std::nullopt;
    while (*end == ' ') ++end;
    if (*end != '+') return std::nullopt;
    ++end;
    while (*end == ' ') ++end;
    char* end2 = nullptr;
    long long b = std::strtoll(end, &end2, 10);
    if (end2 == end) return std::nullopt;
    return std::make_pair(a, b);
  }

  MockFixtures fixtures_;
  httplib::Server srv_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> in_flight_{0};
  std::atomic<int> high_water_{0};
  std::atomic<std::uint64_t> requests_{0};
  std::atomic<int> delay_ms_{0};
  mutable std::mutex mu_;
  int fail_remaining_ = 0;
  int fail_status_ = 500;
};

}  // namespace rise
