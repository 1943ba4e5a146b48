#pragma once

// Declarative run configuration: JSON file with ${ENV_VAR} interpolation for
// secrets, overridden by command-line flags (defaults < file < flags).

#include <cstdlib>
#include <optional>
#include <string>

#include "rise/assembler.hpp"
#include "rise/client.hpp"
#include "rise/toyopt.hpp"
#include "rise/util.hpp"

namespace rise {

enum class ErrorMixMode { Random, Dominate };

struct ErrorMix {
  ErrorMixMode mode = ErrorMixMode::Random;
  ErrorType dominate_type = ErrorType::CalcError;
  double dominate_weight = 0.7;  // probability mass on the dominant type
};

struct RunConfig {
  Endpoint endpoint;
  DecodeParams sample_decode;            // temperature 0.7 / top_p 0.95 defaults
  int k = 5;                             // sampling attempts per problem
  int n_edited = 1;                      // self-edited pairs per problem; kAllEditedPairs = all
  double alpha = 0.05;                   // edit-distance filter threshold
  LossConfig loss;                       // beta 0.4, lambda 0.05, toy lr 0.1
  double full_scale_lr_hint = 5e-7;      // lr used by 7B-scale recipes; informational
  std::uint64_t seed = 0;
  ErrorMix error_mix;
  int toy_order = 1;
  int toy_vocab_max = 64;

  std::string problems_path = "fixtures/problems.jsonl";
  std::string out_dir = "out";
  std::string prompt_catalog_path;       // empty = built-in templates
  std::string audit_path;                // empty = no audit log
  bool mock = false;
  std::string mock_fixtures_path = "fixtures/mock_corpus.json";
  std::string run_id;                    // defaults to "seed<seed>"

  std::string effective_run_id() const {
    return run_id.empty() ? "seed" + std::to_string(seed) : run_id;
  }

  // Endpoint identity as recorded in manifests. Mock runs bind an ephemeral
  // port, which must not leak into reproducible outputs.
  std::string manifest_base_url() const { return mock ? "mock://fixtures" : endpoint.base_url; }

  json snapshot() const {
    return json{{"endpoint",
                 json{{"base_url", manifest_base_url()},
                      {"model_name", endpoint.model_name},
                      {"timeout_s", endpoint.timeout_s},
                      {"max_retries", endpoint.max_retries},
                      {"max_concurrency", endpoint.max_concurrency}}},
                {"sample_decode",
                 json{{"temperature", sample_decode.temperature},
                      {"top_p", sample_decode.top_p},
                      {"max_tokens", sample_decode.max_tokens}}},
                {"k", k},
                {"n_edited", n_edited == kAllEditedPairs ? json("all") : json(n_edited)},
                {"alpha", alpha},
                {"beta", loss.beta},
                {"lambda", loss.nll_weight},
                {"nll_length_normalized", loss.nll_length_normalized},
                {"nll_on_full", loss.nll_on_full},
                {"learning_rate", loss.learning_rate},
                {"steps", loss.steps},
                {"full_scale_lr_hint", full_scale_lr_hint},
                {"seed", seed},
                {"error_mix",
                 json{{"mode", error_mix.mode == ErrorMixMode::Random ? "random" : "dominate"},
                      {"dominate_type", to_string(error_mix.dominate_type)},
                      {"dominate_weight", error_mix.dominate_weight}}},
                {"toy_order", toy_order},
                {"run_id", effective_run_id()}};
  }
};

namespace detail {

// Replaces ${NAME} with the environment variable's value (empty if unset).
inline std::string interpolate_env(std::string s) {
  std::size_t pos = 0;
  while ((pos = s.find("${", pos)) != std::string::npos) {
    std::size_t end = s.find('}', pos + 2);
    if (end == std::string::npos) break;
    std::string name = s.substr(pos + 2, end - pos - 2);
    const char* val = std::getenv(name.c_str());
    std::string rep = val ? val : "";
    s.replace(pos, end - pos + 1, rep);
    pos += rep.size();
  }
  return s;
}

inline std::string get_env_str(const json& j, const char* key, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  return interpolate_env(j.at(key).get<std::string>());
}

}  // namespace detail

inline int parse_n_edited(const std::string& s) {
  if (lower(s) == "all") return kAllEditedPairs;
  try {
    int v = std::stoi(s);
    if (v < 0) throw Error("ConfigInvalid", "n_edited must be >= 0 or 'all'");
    return v;
  } catch (const std::exception&) {
    throw Error("ConfigInvalid", "n_edited must be an integer or 'all', got '" + s + "'");
  }
}

inline ErrorMix parse_error_mix(const std::string& s) {
  ErrorMix mix;
  if (lower(s) == "random") return mix;
  const std::string prefix = "dominate:";
  if (lower(s).rfind(prefix, 0) == 0) {
    mix.mode = ErrorMixMode::Dominate;
    mix.dominate_type = error_type_from(s.substr(prefix.size()));
    return mix;
  }
  throw Error("ConfigInvalid", "error mix must be 'random' or 'dominate:<ErrorType>'");
}

// Loads a config file over the defaults. Unknown keys are rejected so typos
// fail fast with the offending field path.
inline RunConfig load_config_file(const std::filesystem::path& path, RunConfig base = {}) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error("ConfigInvalid", path.string() + ": " + e.what());
  }
  static const std::vector<std::string> known = {
      "endpoint",    "sample_decode", "k",          "n_edited",       "alpha",
      "beta",        "lambda",        "nll_length_normalized",        "nll_on_full",
      "learning_rate", "steps",       "seed",       "error_mix",      "toy_order",
      "toy_vocab_max", "problems",    "out_dir",    "prompt_catalog", "audit_log",
      "mock",        "mock_fixtures", "run_id"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw Error("ConfigInvalid", path.string() + ": unknown key '" + it.key() + "'");
  }
  RunConfig cfg = std::move(base);
  if (j.contains("endpoint")) {
    const json& e = j["endpoint"];
    cfg.endpoint.base_url = detail::get_env_str(e, "base_url", cfg.endpoint.base_url);
    cfg.endpoint.model_name = detail::get_env_str(e, "model_name", cfg.endpoint.model_name);
    std::string key = detail::get_env_str(e, "api_key", cfg.endpoint.api_key.value_or(""));
    if (!key.empty()) cfg.endpoint.api_key = key;
    cfg.endpoint.timeout_s = e.value("timeout_s", cfg.endpoint.timeout_s);
    cfg.endpoint.max_retries = e.value("max_retries", cfg.endpoint.max_retries);
    cfg.endpoint.max_concurrency = e.value("max_concurrency", cfg.endpoint.max_concurrency);
  }
  if (j.contains("sample_decode")) {
    const json& d = j["sample_decode"];
    cfg.sample_decode.temperature = d.value("temperature", cfg.sample_decode.temperature);
    cfg.sample_decode.top_p = d.value("top_p", cfg.sample_decode.top_p);
    cfg.sample_decode.max_tokens = d.value("max_tokens", cfg.sample_decode.max_tokens);
  }
  cfg.k = j.value("k", cfg.k);
  if (j.contains("n_edited")) {
    cfg.n_edited = j["n_edited"].is_string() ? parse_n_edited(j["n_edited"].get<std::string>())
                                             : j["n_edited"].get<int>();
  }
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.loss.beta = j.value("beta", cfg.loss.beta);
  cfg.loss.nll_weight = j.value("lambda", cfg.loss.nll_weight);
  cfg.loss.nll_length_normalized = j.value("nll_length_normalized", cfg.loss.nll_length_normalized);
  cfg.loss.nll_on_full = j.value("nll_on_full", cfg.loss.nll_on_full);
  cfg.loss.learning_rate = j.value("learning_rate", cfg.loss.learning_rate);
  cfg.loss.steps = j.value("steps", cfg.loss.steps);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.loss.seed = cfg.seed;
  if (j.contains("error_mix")) cfg.error_mix = parse_error_mix(j["error_mix"].get<std::string>());
  cfg.toy_order = j.value("toy_order", cfg.toy_order);
  cfg.toy_vocab_max = j.value("toy_vocab_max", cfg.toy_vocab_max);
  cfg.problems_path = detail::get_env_str(j, "problems", cfg.problems_path);
  cfg.out_dir = detail::get_env_str(j, "out_dir", cfg.out_dir);
  cfg.prompt_catalog_path = detail::get_env_str(j, "prompt_catalog", cfg.prompt_catalog_path);
  cfg.audit_path = detail::get_env_str(j, "audit_log", cfg.audit_path);
  cfg.mock = j.value("mock", cfg.mock);
  cfg.mock_fixtures_path = detail::get_env_str(j, "mock_fixtures", cfg.mock_fixtures_path);
  cfg.run_id = j.value("run_id", cfg.run_id);
  return cfg;
}

inline void validate_config(const RunConfig& cfg, bool needs_endpoint) {
  if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0))
    throw Error("ConfigInvalid", "alpha: must be in (0, 1]");
  if (cfg.k < 2) throw Error("ConfigInvalid", "k: must be >= 2");
  if (cfg.n_edited < 0) throw Error("ConfigInvalid", "n_edited: must be >= 0 or 'all'");
  if (cfg.loss.beta <= 0) throw Error("ConfigInvalid", "beta: must be positive");
  if (cfg.loss.nll_weight < 0) throw Error("ConfigInvalid", "lambda: must be >= 0");
  cfg.endpoint.validate();
  if (needs_endpoint && !cfg.mock) {
    bool local = cfg.endpoint.base_url.find("127.0.0.1") != std::string::npos ||
                 cfg.endpoint.base_url.find("localhost") != std::string::npos;
    if (!local && (!cfg.endpoint.api_key || cfg.endpoint.api_key->empty()))
      throw Error("ConfigInvalid",
                  "endpoint.api_key: required for non-local endpoint " + cfg.endpoint.base_url);
  }
}

}  // namespace rise
