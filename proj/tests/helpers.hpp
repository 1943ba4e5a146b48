#pragma once

// Shared test scaffolding: fixture paths, unique temp dirs, and a running
// mock endpoint wired to a ChatClient.

#include <atomic>
#include <filesystem>
#include <string>

#include "rise/client.hpp"
#include "rise/mock_server.hpp"

namespace testutil {

inline std::filesystem::path fixtures_dir() { return RISE_FIXTURES_DIR; }

inline std::filesystem::path mock_corpus_path() { return fixtures_dir() / "mock_corpus.json"; }

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("rise-" + tag + "-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Mock endpoint + client with fast retries, loaded from the bundled corpus.
struct MockRig {
  rise::MockServer server;
  rise::Endpoint endpoint;

  explicit MockRig(int max_concurrency = 4)
      : server(rise::MockFixtures::load(mock_corpus_path())) {
    server.start();
    endpoint.base_url = server.base_url();
    endpoint.model_name = "mock-model";
    endpoint.max_retries = 3;
    endpoint.max_concurrency = max_concurrency;
    endpoint.retry_backoff_ms = 1;
    endpoint.timeout_s = 10.0;
  }

  rise::ChatClient client() { return rise::ChatClient(endpoint); }
};

}  // namespace testutil
