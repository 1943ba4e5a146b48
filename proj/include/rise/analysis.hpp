#pragma once

// Evaluation harness (greedy decoding protocol) and first-error taxonomy:
// a judge endpoint classifies each incorrect solution into one of the five
// subtle-error categories or Others, and the distribution is tabulated.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "rise/client.hpp"
#include "rise/core.hpp"
#include "rise/sampler.hpp"
#include "rise/util.hpp"

namespace rise {

enum class ErrorCategory {
  CalcError = 1,
  SubstitutionError = 2,
  OmittedTerm = 3,
  OrderError = 4,
  SymbolError = 5,
  Others = 6,
};

constexpr std::array<ErrorCategory, 6> kAllErrorCategories = {
    ErrorCategory::CalcError,  ErrorCategory::SubstitutionError, ErrorCategory::OmittedTerm,
    ErrorCategory::OrderError, ErrorCategory::SymbolError,       ErrorCategory::Others};

inline std::string to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::CalcError: return "CalcError";
    case ErrorCategory::SubstitutionError: return "SubstitutionError";
    case ErrorCategory::OmittedTerm: return "OmittedTerm";
    case ErrorCategory::OrderError: return "OrderError";
    case ErrorCategory::SymbolError: return "SymbolError";
    default: return "Others";
  }
}

inline ErrorCategory error_category_from(std::string_view s) {
  if (s == "CalcError") return ErrorCategory::CalcError;
  if (s == "SubstitutionError") return ErrorCategory::SubstitutionError;
  if (s == "OmittedTerm") return ErrorCategory::OmittedTerm;
  if (s == "OrderError") return ErrorCategory::OrderError;
  if (s == "SymbolError") return ErrorCategory::SymbolError;
  if (s == "Others") return ErrorCategory::Others;
  throw Error("SchemaViolation", "unknown error category '" + std::string(s) + "'");
}

struct Verdict {
  std::string problem_id;
  std::string extracted_answer;
  bool correct = false;
  bool unscored = false;  // transport failure or empty completion
  std::string solution;   // raw completion, kept for downstream judging

  json to_json() const {
    return json{{"problem_id", problem_id}, {"extracted_answer", extracted_answer},
                {"correct", correct},       {"unscored", unscored},
                {"solution", solution}};
  }
};

struct EvalReport {
  std::string dataset;
  std::size_t total = 0;    // scored problems
  std::size_t correct = 0;
  std::size_t unscored = 0;
  double accuracy = 0.0;
  bool canonical_protocol = true;  // temperature was exactly 0
  DecodeParams decode;
  std::vector<Verdict> verdicts;

  json to_json() const {
    json v = json::array();
    for (const auto& x : verdicts) v.push_back(x.to_json());
    return json{{"dataset", dataset},
                {"total", total},
                {"correct", correct},
                {"unscored", unscored},
                {"accuracy", accuracy},
                {"canonical_protocol", canonical_protocol},
                {"decode",
                 json{{"temperature", decode.temperature},
                      {"top_p", decode.top_p},
                      {"max_tokens", decode.max_tokens},
                      {"n", decode.n}}},
                {"verdicts", v}};
  }

  static EvalReport from_json(const json& j) {
    EvalReport r;
    r.dataset = j.value("dataset", "");
    r.total = j.at("total").get<std::size_t>();
    r.correct = j.at("correct").get<std::size_t>();
    r.unscored = j.value("unscored", std::size_t{0});
    r.accuracy = j.at("accuracy").get<double>();
    r.canonical_protocol = j.value("canonical_protocol", true);
    for (const auto& v : j.at("verdicts")) {
      Verdict x;
      x.problem_id = v.at("problem_id").get<std::string>();
      x.extracted_answer = v.value("extracted_answer", "");
      x.correct = v.at("correct").get<bool>();
      x.unscored = v.value("unscored", false);
      x.solution = v.value("solution", "");
      r.verdicts.push_back(std::move(x));
    }
    return r;
  }
};

// One greedy completion per problem, graded with the shared parser/grader.
// Problems run in parallel under the client budget; verdicts land in input
// order. Per-problem failures become unscored verdicts and leave the
// denominator.
inline EvalReport evaluate(ChatClient& client, const std::vector<Problem>& problems,
                           const DecodeParams& dp, const std::string& dataset_name = "eval",
                           int workers = 1) {
  if (problems.empty()) throw Error("EmptyDataset", "evaluate: no problems");
  EvalReport report;
  report.dataset = dataset_name;
  report.decode = dp;
  report.canonical_protocol = dp.temperature == 0.0;
  DecodeParams one = dp;
  one.n = 1;
  report.verdicts.resize(problems.size());
  parallel_indexed(problems.size(), workers, [&](std::size_t i) {
    const Problem& problem = problems[i];
    Verdict v;
    v.problem_id = problem.id;
    try {
      auto completions = client.chat_complete({ChatMessage{"user", cot_prompt(problem)}}, one);
      if (completions.empty() || trim_view(completions.front()).empty()) {
        v.unscored = true;
      } else {
        Solution sol = parse_solution(reconstruct_raw(completions.front()));
        grade_solution(sol, problem.reference_answer);
        v.solution = sol.raw;
        v.extracted_answer = sol.extracted_answer.value_or("");
        v.correct = sol.correct.value_or(false);
      }
    } catch (const Error&) {
      v.unscored = true;
    }
    report.verdicts[i] = std::move(v);
  });
  for (const auto& v : report.verdicts) {
    if (v.unscored) {
      ++report.unscored;
    } else {
      ++report.total;
      if (v.correct) ++report.correct;
    }
  }
  report.accuracy = report.total == 0
                        ? 0.0
                        : static_cast<double>(report.correct) / static_cast<double>(report.total);
  return report;
}

// Judge prompt: enumerates the taxonomy and demands a final "Category: (k)"
// line for robust parsing.
inline std::vector<ChatMessage> build_judge_prompt(const Problem& problem,
                                                   const std::string& solution,
                                                   const std::string& reference_answer) {
  std::string text =
      "You are reviewing a step-by-step solution to a math problem that arrives at a wrong "
      "answer.\n\nProblem:\n\n" +
      problem.statement + "\n\nReference Answer:\n\n" + reference_answer + "\n\nSolution:\n\n" +
      solution +
      "\n\nDetect the first error in the solution and classify it as exactly one of:\n"
      "(1) Numerical calculation errors\n"
      "(2) Numeric or symbolic substitution errors\n"
      "(3) Omission of calculation terms\n"
      "(4) Errors in the calculation order\n"
      "(5) Errors in the use of calculation symbols\n"
      "(6) Others\n\n"
      "Explain briefly, then output the error type in the final line in the exact form "
      "\"Category: (k)\".";
  return {ChatMessage{"user", text}};
}

struct JudgeResult {
  ErrorCategory category = ErrorCategory::Others;
  bool parse_failed = false;
  std::string raw_response;
};

// Maps any judge response to exactly one category; unparseable output falls
// back to Others with the parse-failure flag set.
inline JudgeResult parse_judge_response(const std::string& response) {
  JudgeResult out;
  out.raw_response = response;
  std::string low = lower(response);
  std::size_t p = low.rfind("category");
  if (p == std::string::npos) {
    out.parse_failed = true;
    return out;
  }
  for (std::size_t i = p; i < response.size(); ++i) {
    char c = response[i];
    if (c >= '1' && c <= '6') {
      out.category = static_cast<ErrorCategory>(c - '0');
      return out;
    }
    if (c == '\n') break;
  }
  out.parse_failed = true;
  return out;
}

inline JudgeResult classify_first_error(ChatClient& client, const Problem& problem,
                                        const std::string& solution,
                                        const std::string& reference_answer,
                                        const DecodeParams& dp = DecodeParams{0.0, 0.95, 512, 1}) {
  auto messages = build_judge_prompt(problem, solution, reference_answer);
  auto completions = client.chat_complete(messages, dp);
  return parse_judge_response(completions.empty() ? std::string{} : completions.front());
}

struct ErrorDistribution {
  std::array<std::size_t, 6> counts{};   // indexed by category value - 1
  std::array<double, 6> fractions{};
  std::size_t total = 0;

  json to_json() const {
    json by_category = json::object();
    for (auto c : kAllErrorCategories) {
      std::size_t i = static_cast<std::size_t>(c) - 1;
      by_category[to_string(c)] =
          json{{"count", counts[i]}, {"fraction", fractions[i]}};
    }
    return json{{"total", total}, {"by_category", by_category}};
  }
};

// Histogram plus normalized fractions (they sum to 1 by construction).
inline ErrorDistribution error_distribution(const std::vector<ErrorCategory>& categories) {
  if (categories.empty()) throw Error("EmptyInput", "error_distribution: no labels");
  ErrorDistribution d;
  d.total = categories.size();
  for (auto c : categories) ++d.counts[static_cast<std::size_t>(c) - 1];
  for (std::size_t i = 0; i < 6; ++i)
    d.fractions[i] = static_cast<double>(d.counts[i]) / static_cast<double>(d.total);
  return d;
}

// Share of judged errors that fall inside the predefined five-type taxonomy.
inline double predefined_share(const ErrorDistribution& d) {
  return 1.0 - d.fractions[static_cast<std::size_t>(ErrorCategory::Others) - 1];
}

// Expands a stored {category: count} label multiset into a flat list.
inline std::vector<ErrorCategory> load_label_multiset(const std::filesystem::path& path) {
  json j = json::parse(read_file(path));
  std::vector<ErrorCategory> out;
  const json& counts = j.contains("counts") ? j.at("counts") : j;
  for (auto it = counts.begin(); it != counts.end(); ++it) {
    ErrorCategory c = error_category_from(it.key());
    std::size_t n = it.value().get<std::size_t>();
    for (std::size_t i = 0; i < n; ++i) out.push_back(c);
  }
  return out;
}

}  // namespace rise
