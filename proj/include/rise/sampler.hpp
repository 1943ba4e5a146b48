#pragma once

// Samples K candidate solutions per problem under the step-marker prefill
// convention, grades them against the reference answer, and selects one
// (correct, incorrect) full-solution pair per problem when both exist.

#include <optional>
#include <string>
#include <vector>

#include "rise/client.hpp"
#include "rise/core.hpp"
#include "rise/util.hpp"

namespace rise {

// The prefill that forces explicit step markers in sampled solutions.
inline const char* kCotPrefix = "Let's think step by step. Step 1:";

inline std::string cot_prompt(const Problem& problem) {
  return problem.statement + "\n\n" + kCotPrefix;
}

// Completions usually continue after the prompt-side "Step 1:"; reattach the
// prefix unless the completion restarts its own step numbering.
inline std::string reconstruct_raw(const std::string& completion) {
  auto markers = detail::scan_markers(completion);
  for (const auto& m : markers) {
    if (m.k == 1) return completion;
  }
  return std::string(kCotPrefix) + completion;
}

struct SampleSet {
  std::string problem_id;
  std::vector<Solution> solutions;
  int k = 0;
  std::uint64_t seed = 0;
  int holes = 0;  // completions that came back empty

  json to_json() const {
    json sols = json::array();
    for (const auto& s : solutions) {
      sols.push_back(json{{"raw", s.raw},
                          {"extracted_answer", s.extracted_answer.value_or("")},
                          {"has_answer", s.extracted_answer.has_value()},
                          {"correct", s.correct.value_or(false)},
                          {"degenerate", s.degenerate}});
    }
    return json{{"problem_id", problem_id}, {"k", k},     {"seed", seed},
                {"holes", holes},           {"solutions", sols}};
  }

  static SampleSet from_json(const json& j) {
    SampleSet set;
    set.problem_id = j.at("problem_id").get<std::string>();
    set.k = j.at("k").get<int>();
    set.seed = j.at("seed").get<std::uint64_t>();
    set.holes = j.value("holes", 0);
    for (const auto& s : j.at("solutions")) {
      Solution sol = parse_solution(s.at("raw").get<std::string>());
      if (s.value("has_answer", false))
        sol.extracted_answer = s.value("extracted_answer", std::string{});
      sol.correct = s.at("correct").get<bool>();
      set.solutions.push_back(std::move(sol));
    }
    return set;
  }
};

struct FullPair {
  std::string problem_id;
  Solution chosen;    // graded correct
  Solution rejected;  // graded incorrect
};

// Samples k solutions with the prefill prompt, parses and grades each one.
// Empty completions become holes; k is best-effort rather than fatal.
inline SampleSet sample_solutions(ChatClient& client, const Problem& problem, int k,
                                  DecodeParams dp, std::uint64_t seed) {
  if (k < 2) throw Error("ConfigInvalid", "k must be >= 2 to allow both pair polarities");
  if (dp.temperature <= 0.0)
    throw Error("ConfigInvalid", "sampling requires temperature > 0 (greedy is for evaluation)");
  dp.n = k;
  SampleSet set;
  set.problem_id = problem.id;
  set.k = k;
  set.seed = seed;
  std::vector<ChatMessage> messages{{"user", cot_prompt(problem)}};
  auto completions = client.chat_complete(messages, dp);
  for (const auto& text : completions) {
    if (trim_view(text).empty()) {
      ++set.holes;
      continue;
    }
    Solution sol = parse_solution(reconstruct_raw(text));
    grade_solution(sol, problem.reference_answer);
    set.solutions.push_back(std::move(sol));
  }
  return set;
}

// Uniform seeded choice of one correct and one incorrect solution; absent
// when the set is all-correct or all-incorrect (such problems drop out).
inline std::optional<FullPair> select_full_pair(const SampleSet& set, std::uint64_t rng_seed) {
  std::vector<std::size_t> correct_idx;
  std::vector<std::size_t> incorrect_idx;
  for (std::size_t i = 0; i < set.solutions.size(); ++i) {
    if (set.solutions[i].correct.value_or(false)) {
      correct_idx.push_back(i);
    } else {
      incorrect_idx.push_back(i);
    }
  }
  if (correct_idx.empty() || incorrect_idx.empty()) return std::nullopt;
  DetRng rng(rng_seed);
  FullPair fp;
  fp.problem_id = set.problem_id;
  fp.chosen = set.solutions[correct_idx[rng.below(correct_idx.size())]];
  fp.rejected = set.solutions[incorrect_idx[rng.below(incorrect_idx.size())]];
  return fp;
}

}  // namespace rise
