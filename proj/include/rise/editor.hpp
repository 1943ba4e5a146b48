#pragma once

// Error-injected self-editing: the five subtle-error prompt templates, the
// per-step edit call with response normalization, and the normalized
// Levenshtein similarity filter that keeps only near-identical pairs.

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rise/client.hpp"
#include "rise/core.hpp"
#include "rise/util.hpp"

namespace rise {

enum class ErrorType { CalcError, SubstitutionError, OmittedTerm, OrderError, SymbolError };
enum class EditOp { REPLACE, SWAP, DELETE };

constexpr std::array<ErrorType, 5> kAllErrorTypes = {
    ErrorType::CalcError, ErrorType::SubstitutionError, ErrorType::OmittedTerm,
    ErrorType::OrderError, ErrorType::SymbolError};

inline std::string to_string(ErrorType t) {
  switch (t) {
    case ErrorType::CalcError: return "CalcError";
    case ErrorType::SubstitutionError: return "SubstitutionError";
    case ErrorType::OmittedTerm: return "OmittedTerm";
    case ErrorType::OrderError: return "OrderError";
    case ErrorType::SymbolError: return "SymbolError";
  }
  return "CalcError";
}

inline ErrorType error_type_from(std::string_view s) {
  if (s == "CalcError") return ErrorType::CalcError;
  if (s == "SubstitutionError") return ErrorType::SubstitutionError;
  if (s == "OmittedTerm") return ErrorType::OmittedTerm;
  if (s == "OrderError") return ErrorType::OrderError;
  if (s == "SymbolError") return ErrorType::SymbolError;
  throw Error("UnknownTemplate", "unknown error type '" + std::string(s) + "'");
}

inline std::string to_string(EditOp op) {
  switch (op) {
    case EditOp::REPLACE: return "REPLACE";
    case EditOp::SWAP: return "SWAP";
    case EditOp::DELETE: return "DELETE";
  }
  return "REPLACE";
}

// Each error type maps onto one textual edit operation.
inline EditOp edit_op_for(ErrorType t) {
  switch (t) {
    case ErrorType::OrderError: return EditOp::SWAP;
    case ErrorType::OmittedTerm: return EditOp::DELETE;
    default: return EditOp::REPLACE;
  }
}

struct EditDirective {
  ErrorType error_type = ErrorType::CalcError;
  EditOp edit_op = EditOp::REPLACE;
  std::string template_id;

  static EditDirective for_type(ErrorType t, std::string template_id = {}) {
    EditDirective d;
    d.error_type = t;
    d.edit_op = edit_op_for(t);
    d.template_id = template_id.empty() ? lower(to_string(t)) : std::move(template_id);
    return d;
  }

  json to_json() const {
    return json{{"error_type", to_string(error_type)},
                {"edit_op", to_string(edit_op)},
                {"template_id", template_id}};
  }

  static EditDirective from_json(const json& j) {
    EditDirective d = for_type(error_type_from(j.at("error_type").get<std::string>()),
                               j.value("template_id", ""));
    return d;
  }
};

// One (correct step, error-injected step) pair, conditioned on the correct
// prefix. Texts are whitespace-trimmed at the edges, markers kept.
struct EditedPair {
  std::string problem_id;
  int step_index = 0;
  std::string chosen_step;
  std::string rejected_step;
  std::string prefix;
  EditDirective directive;
  double distance_ratio = 0.0;

  json to_json() const {
    return json{{"problem_id", problem_id}, {"step_index", step_index},
                {"chosen_step", chosen_step}, {"rejected_step", rejected_step},
                {"prefix", prefix},          {"directive", directive.to_json()},
                {"distance_ratio", distance_ratio}};
  }

  static EditedPair from_json(const json& j) {
    EditedPair p;
    p.problem_id = j.at("problem_id").get<std::string>();
    p.step_index = j.at("step_index").get<int>();
    p.chosen_step = j.at("chosen_step").get<std::string>();
    p.rejected_step = j.at("rejected_step").get<std::string>();
    p.prefix = j.value("prefix", "");
    p.directive = EditDirective::from_json(j.at("directive"));
    p.distance_ratio = j.at("distance_ratio").get<double>();
    return p;
  }
};

// --- prompt catalog ----------------------------------------------------------

struct EditTemplate {
  ErrorType error_type;
  std::string id;
  std::string text;  // slots: {question} {answer} {text}
};

inline const char* kEditPromptFrame =
    "Question:\n\n{question}\n\nInitial Answer:\n\n{answer}\n\nCurrent Step:\n\n{text}\n\n";

// Default instruction line per error type.
inline std::vector<EditTemplate> default_edit_templates() {
  auto make = [](ErrorType t, const char* id, const std::string& instruction) {
    return EditTemplate{t, id, std::string(kEditPromptFrame) + instruction};
  };
  return {
      make(ErrorType::CalcError, "calc_error_v1",
           "Edit a numerical value or a series of related values in the current step to make a "
           "wrong calculation. Do not state that errors have been made."),
      make(ErrorType::SubstitutionError, "substitution_error_v1",
           "Edit a value or symbol in the current step to make a wrong substitution. Do not state "
           "that errors have been made."),
      make(ErrorType::OmittedTerm, "omitted_term_v1",
           "Delete a calculation term in the current step to make a wrong calculation. Do not "
           "state that errors have been made."),
      make(ErrorType::OrderError, "order_error_v1",
           "Swap two calculation terms in the current step to make a wrong calculation. Do not "
           "state that errors have been made."),
      make(ErrorType::SymbolError, "symbol_error_v1",
           "Edit a calculation symbol (e.g., +-*/, etc.) in the current step to make a wrong "
           "calculation."),
  };
}

class PromptCatalog {
 public:
  PromptCatalog() : templates_(default_edit_templates()) {}

  // Catalog file format: JSON array of {error_type, template_id, template}.
  static PromptCatalog load(const std::filesystem::path& path) {
    PromptCatalog cat;
    cat.templates_.clear();
    json j = json::parse(read_file(path));
    for (const auto& t : j) {
      cat.templates_.push_back(EditTemplate{
          error_type_from(t.at("error_type").get<std::string>()),
          t.at("template_id").get<std::string>(), t.at("template").get<std::string>()});
    }
    return cat;
  }

  const EditTemplate& pick(ErrorType t) const {
    for (const auto& tpl : templates_) {
      if (tpl.error_type == t) return tpl;
    }
    throw Error("UnknownTemplate", "no template for error type " + to_string(t));
  }

  const std::vector<EditTemplate>& all() const { return templates_; }

 private:
  std::vector<EditTemplate> templates_;
};

// Instantiates the template for the directive's error type, filling the
// {question}, {answer} (= prefix of previous steps) and {text} (= step) slots.
inline std::vector<ChatMessage> build_edit_prompt(const Problem& problem,
                                                  const std::string& prefix,
                                                  const std::string& step,
                                                  const EditDirective& d,
                                                  const PromptCatalog& catalog = PromptCatalog()) {
  if (trim_view(step).empty()) throw Error("ConfigInvalid", "build_edit_prompt: empty step");
  const EditTemplate& tpl = [&]() -> const EditTemplate& {
    for (const auto& t : catalog.all()) {
      if (t.error_type == d.error_type && (d.template_id.empty() || t.id == d.template_id))
        return t;
    }
    return catalog.pick(d.error_type);
  }();
  std::string text = tpl.text;
  text = replace_all(std::move(text), "{question}", problem.statement);
  text = replace_all(std::move(text), "{answer}", prefix);
  text = replace_all(std::move(text), "{text}", step);
  return {ChatMessage{"user", text}};
}

// --- edit distance -----------------------------------------------------------

// Unit-cost insert/delete/substitute distance over Unicode scalar values.
inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  std::vector<char32_t> ua = utf8_decode(a);
  std::vector<char32_t> ub = utf8_decode(b);
  if (ua.size() < ub.size()) std::swap(ua, ub);
  const std::size_t n = ub.size();
  std::vector<std::size_t> prev(n + 1), cur(n + 1);
  for (std::size_t j = 0; j <= n; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ua.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= n; ++j) {
      std::size_t sub = prev[j - 1] + (ua[i - 1] == ub[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

// Levenshtein distance normalized by the longer side, in [0, 1].
inline double distance_ratio(std::string_view a, std::string_view b) {
  std::size_t la = utf8_decode(a).size();
  std::size_t lb = utf8_decode(b).size();
  std::size_t m = std::max(la, lb);
  if (m == 0) throw Error("BothEmpty", "distance_ratio of two empty strings");
  return static_cast<double>(levenshtein(a, b)) / static_cast<double>(m);
}

// Keeps exactly the pairs whose ratio is strictly below alpha, preserving
// order. Per-problem rejection counts are reported through `rejected_counts`.
inline std::vector<EditedPair> filter_edited(
    const std::vector<EditedPair>& pairs, double alpha,
    std::map<std::string, int>* rejected_counts = nullptr) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw Error("ConfigInvalid", "alpha must be in (0, 1], got " + std::to_string(alpha));
  std::vector<EditedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.distance_ratio < alpha) {
      out.push_back(p);
    } else if (rejected_counts) {
      ++(*rejected_counts)[p.problem_id];
    }
  }
  return out;
}

// --- error-injection call ------------------------------------------------------

struct EmptyEdit : Error {
  explicit EmptyEdit(const std::string& msg) : Error("EmptyEdit", msg) {}
};
struct IdenticalEdit : Error {
  explicit IdenticalEdit(const std::string& msg) : Error("IdenticalEdit", msg) {}
};

namespace detail {

// Normalizes a raw edit response into a step body: drop chatter before a
// re-echoed marker, strip the marker itself, then re-attach the original
// step's marker so both sides of the pair share a surface form.
inline std::string normalize_edited_response(const Step& original, const std::string& response) {
  std::string body = trim(response);
  // Look for a re-echo of this step's marker ("Step 3", "### Step 3", ...).
  auto markers = scan_markers(body);
  for (const auto& m : markers) {
    if (m.k == original.index) {
      body = trim(body.substr(m.end));
      break;
    }
  }
  if (body.empty()) return body;
  std::string marker = rtrim(original.marker());
  if (marker.empty()) return body;
  return marker + " " + body;
}

}  // namespace detail

// Asks the endpoint to inject the directed error into step i of a correct
// solution. Retries once with a different template on an empty or identical
// response; rethrows when the retry fails too, and the caller skips the step.
inline EditedPair inject_error(ChatClient& client, const Problem& problem,
                               const Solution& solution, int i, const EditDirective& d,
                               const PromptCatalog& catalog = PromptCatalog(),
                               const DecodeParams& dp = DecodeParams{}) {
  if (!solution.correct.value_or(false))
    throw Error("ConfigInvalid", "inject_error requires a correct solution");
  if (i < 1 || static_cast<std::size_t>(i) > solution.steps.size())
    throw Error("IndexOutOfRange", "step " + std::to_string(i));
  const Step& step = solution.steps[static_cast<std::size_t>(i - 1)];
  std::string chosen = rtrim(trim(step.text));
  std::string prefix = prefix_of(solution, i);

  auto attempt = [&](const EditDirective& dir) -> EditedPair {
    auto messages = build_edit_prompt(problem, prefix, chosen, dir, catalog);
    auto completions = client.chat_complete(messages, dp);
    std::string response = completions.empty() ? std::string{} : completions.front();
    std::string rejected = detail::normalize_edited_response(step, response);
    if (trim_view(rejected).empty())
      throw EmptyEdit("model returned no usable edit for step " + std::to_string(i));
    if (rejected == chosen)
      throw IdenticalEdit("edit identical to the original step " + std::to_string(i));
    EditedPair pair;
    pair.problem_id = problem.id;
    pair.step_index = i;
    pair.chosen_step = chosen;
    pair.rejected_step = rejected;
    pair.prefix = prefix;
    pair.directive = dir;
    pair.distance_ratio = distance_ratio(chosen, rejected);
    return pair;
  };

  try {
    return attempt(d);
  } catch (const EmptyEdit&) {
  } catch (const IdenticalEdit&) {
  }
  // One retry with the next error type's template.
  std::size_t idx = 0;
  for (std::size_t k = 0; k < kAllErrorTypes.size(); ++k) {
    if (kAllErrorTypes[k] == d.error_type) idx = k;
  }
  EditDirective alt = EditDirective::for_type(kAllErrorTypes[(idx + 1) % kAllErrorTypes.size()]);
  return attempt(alt);
}

}  // namespace rise
