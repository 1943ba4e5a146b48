#pragma once

// Domain types for math problems and step-structured solutions, plus the
// parsing, answer extraction and answer equivalence used to grade samples.

#include <algorithm>
#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rise/util.hpp"

namespace rise {

enum class ProblemSource { GSM8K, MATH, MetaMath, AQuA, Other };

inline std::string to_string(ProblemSource s) {
  switch (s) {
    case ProblemSource::GSM8K: return "GSM8K";
    case ProblemSource::MATH: return "MATH";
    case ProblemSource::MetaMath: return "MetaMath";
    case ProblemSource::AQuA: return "AQuA";
    default: return "other";
  }
}

inline ProblemSource problem_source_from(std::string_view s) {
  if (s == "GSM8K") return ProblemSource::GSM8K;
  if (s == "MATH") return ProblemSource::MATH;
  if (s == "MetaMath") return ProblemSource::MetaMath;
  if (s == "AQuA") return ProblemSource::AQuA;
  return ProblemSource::Other;
}

struct Problem {
  std::string id;
  std::string statement;
  std::string reference_answer;
  ProblemSource source = ProblemSource::Other;

  static Problem from_json(const json& j) {
    Problem p;
    p.id = j.at("id").get<std::string>();
    p.statement = j.at("statement").get<std::string>();
    p.reference_answer = j.at("reference_answer").get<std::string>();
    p.source = problem_source_from(j.value("source", "other"));
    if (p.statement.empty()) throw Error("SchemaViolation", "problem " + p.id + ": empty statement");
    if (p.reference_answer.empty())
      throw Error("SchemaViolation", "problem " + p.id + ": empty reference_answer");
    return p;
  }

  json to_json() const {
    return json{{"id", id},
                {"statement", statement},
                {"reference_answer", reference_answer},
                {"source", to_string(source)}};
  }
};

// One step of a chain-of-thought solution. `text` is the verbatim slice of
// the raw completion, marker included, so reassembly stays byte-exact.
struct Step {
  int index = 0;
  std::string text;
  // Length of the "Step k:"-style marker at the head of `text`; 0 when the
  // step was synthesized from unmarked leading text.
  std::size_t marker_len = 0;

  std::string marker() const { return text.substr(0, marker_len); }
  std::string body() const { return text.substr(marker_len); }
};

struct Solution {
  std::string preamble;           // text before the first step marker
  std::vector<Step> steps;
  std::string tail;               // text after the last step (answer sentence)
  std::string raw;
  std::optional<std::string> extracted_answer;
  std::optional<bool> correct;
  bool degenerate = false;        // no markers found; whole text is step 1
  bool synthesized_first_step = false;  // leading unmarked text became step 1

  std::size_t step_count() const { return steps.size(); }

  std::string reassemble() const {
    std::string out = preamble;
    for (const auto& s : steps) out += s.text;
    out += tail;
    return out;
  }
};

namespace detail {

// A step marker in one of the accepted surface forms:
//   "Step k:", "Step k —", "### Step k", "### Step k: title"
// Heading markers ("#"-prefixed) do not require punctuation after k.
struct MarkerMatch {
  std::size_t begin = 0;  // offset of the marker start ('#' or 'S')
  std::size_t end = 0;    // offset one past the marker (after ':'/'—' or digits)
  int k = 0;
};

inline bool is_sentence_boundary(std::string_view raw, std::size_t pos) {
  // pos is the start of the candidate marker.
  std::size_t i = pos;
  while (i > 0 && (raw[i - 1] == ' ' || raw[i - 1] == '\t')) --i;
  if (i == 0) return true;
  char prev = raw[i - 1];
  if (prev == '\n') return true;
  // Sentence-initial needs at least one space after the terminator.
  if ((prev == '.' || prev == '!' || prev == '?') && i < pos) return true;
  return false;
}

inline std::optional<MarkerMatch> match_marker_at(std::string_view raw, std::size_t pos) {
  MarkerMatch m;
  m.begin = pos;
  std::size_t i = pos;
  bool heading = false;
  while (i < raw.size() && raw[i] == '#') {
    heading = true;
    ++i;
  }
  if (heading) {
    while (i < raw.size() && (raw[i] == ' ' || raw[i] == '\t')) ++i;
  }
  if (raw.compare(i, 4, "Step") != 0) return std::nullopt;
  i += 4;
  std::size_t ws = i;
  while (i < raw.size() && (raw[i] == ' ' || raw[i] == '\t')) ++i;
  if (i == ws) return std::nullopt;  // require whitespace before the number
  std::size_t digits = i;
  int k = 0;
  while (i < raw.size() && std::isdigit(static_cast<unsigned char>(raw[i])) && i - digits < 6) {
    k = k * 10 + (raw[i] - '0');
    ++i;
  }
  if (i == digits) return std::nullopt;
  m.k = k;
  std::size_t after = i;
  while (after < raw.size() && (raw[after] == ' ' || raw[after] == '\t')) ++after;
  if (after < raw.size() && raw[after] == ':') {
    m.end = after + 1;
    return m;
  }
  // em dash (U+2014) or ASCII dashes used as a marker separator
  if (after < raw.size() && raw.compare(after, 3, "\xE2\x80\x94") == 0) {
    m.end = after + 3;
    return m;
  }
  if (after + 1 < raw.size() && raw[after] == '-' && raw[after + 1] == '-') {
    m.end = after + 2;
    return m;
  }
  if (heading) {
    m.end = i;  // "### Step 3" headings need no punctuation
    return m;
  }
  return std::nullopt;
}

inline std::vector<MarkerMatch> scan_markers(std::string_view raw) {
  std::vector<MarkerMatch> out;
  std::size_t pos = 0;
  while (pos < raw.size()) {
    std::size_t s = raw.find("Step", pos);
    if (s == std::string_view::npos) break;
    // Allow an optional "### " heading prefix directly before "Step".
    std::size_t begin = s;
    std::size_t j = s;
    while (j > 0 && (raw[j - 1] == ' ' || raw[j - 1] == '\t')) --j;
    std::size_t hash_end = j;
    while (j > 0 && raw[j - 1] == '#') --j;
    if (j < hash_end) begin = j;
    if (is_sentence_boundary(raw, begin)) {
      if (auto m = match_marker_at(raw, begin)) {
        out.push_back(*m);
        pos = m->end;
        continue;
      }
    }
    pos = s + 4;
  }
  return out;
}

// Cues that identify the final-answer sentence of a solution.
inline std::size_t find_answer_sentence_start(std::string_view text) {
  static const char* cues[] = {"\\boxed{", "final answer", "answer is"};
  std::string low = lower(text);
  std::size_t cue_pos = std::string_view::npos;
  for (const char* cue : cues) {
    std::size_t p = low.rfind(cue);
    if (p != std::string::npos && (cue_pos == std::string_view::npos || p > cue_pos)) cue_pos = p;
  }
  if (cue_pos == std::string_view::npos) return std::string_view::npos;
  // Walk back to the start of the sentence containing the cue.
  std::size_t start = 0;
  for (std::size_t i = cue_pos; i > 0; --i) {
    char c = text[i - 1];
    if (c == '\n') {
      start = i;
      break;
    }
    if ((c == '.' || c == '!' || c == '?') && i < text.size() &&
        (text[i] == ' ' || text[i] == '\n')) {
      start = i;
      while (start < cue_pos && text[start] == ' ') ++start;
      break;
    }
  }
  return start;
}

}  // namespace detail

// Splits a completion into marker-delimited steps. Accepts completions with
// or without the standard prefill prefix; a zero-marker completion becomes a
// flagged single-step solution so downstream full-solution handling still
// works. Reassembly of preamble + steps + tail is byte-identical to `raw`.
inline Solution parse_solution(const std::string& raw) {
  Solution sol;
  sol.raw = raw;

  auto markers = detail::scan_markers(raw);

  // Keep only a dense run: the first accepted marker is k=1 (or k=2 when the
  // prefill marker lives in the prompt), then each next accepted k increments.
  std::vector<detail::MarkerMatch> accepted;
  int expect = 1;
  bool synthesized = false;
  for (const auto& m : markers) {
    if (accepted.empty() && m.k == 2 && m.begin > 0) {
      // Completion continued after a prompt-side "Step 1:"; the unmarked
      // leading text is step 1.
      synthesized = true;
      accepted.push_back(m);
      expect = 3;
      continue;
    }
    if (m.k == expect) {
      accepted.push_back(m);
      ++expect;
    }
  }

  if (accepted.empty()) {
    Step s;
    s.index = 1;
    s.text = raw;
    s.marker_len = 0;
    sol.steps.push_back(std::move(s));
    sol.degenerate = true;
    return sol;
  }

  sol.synthesized_first_step = synthesized;
  std::size_t first_begin = accepted.front().begin;
  if (synthesized) {
    Step s1;
    s1.index = 1;
    s1.text = raw.substr(0, first_begin);
    s1.marker_len = 0;
    sol.steps.push_back(std::move(s1));
    sol.preamble.clear();
  } else {
    sol.preamble = raw.substr(0, first_begin);
  }

  for (std::size_t i = 0; i < accepted.size(); ++i) {
    std::size_t begin = accepted[i].begin;
    std::size_t end = (i + 1 < accepted.size()) ? accepted[i + 1].begin : raw.size();
    Step s;
    s.index = accepted[i].k;
    s.text = raw.substr(begin, end - begin);
    s.marker_len = accepted[i].end - begin;
    sol.steps.push_back(std::move(s));
  }

  // Move the final-answer sentence (if any) out of the last step into tail.
  Step& last = sol.steps.back();
  std::string_view body{last.text};
  std::size_t split = detail::find_answer_sentence_start(body.substr(last.marker_len));
  if (split != std::string_view::npos) {
    std::size_t abs = last.marker_len + split;
    if (abs < last.text.size()) {
      sol.tail = last.text.substr(abs);
      last.text.erase(abs);
    }
  }
  return sol;
}

// Byte-exact concatenation of steps 1..i-1 (empty for i=1).
inline std::string prefix_of(const Solution& sol, int i) {
  if (i < 1 || static_cast<std::size_t>(i) > sol.steps.size())
    throw Error("IndexOutOfRange",
                "step index " + std::to_string(i) + " not in 1.." + std::to_string(sol.steps.size()));
  std::string out;
  for (int k = 0; k + 1 < i; ++k) out += sol.steps[static_cast<std::size_t>(k)].text;
  return out;
}

namespace detail {

inline std::optional<std::string> innermost_boxed(std::string_view text) {
  std::size_t p = text.rfind("\\boxed{");
  if (p == std::string_view::npos) return std::nullopt;
  std::size_t open = p + 7;
  int depth = 1;
  std::size_t i = open;
  while (i < text.size() && depth > 0) {
    if (text[i] == '{') ++depth;
    else if (text[i] == '}') --depth;
    if (depth == 0) break;
    ++i;
  }
  if (depth != 0) return std::nullopt;
  std::string inner(text.substr(open, i - open));
  if (auto nested = innermost_boxed(inner)) return nested;
  return trim(inner);
}

inline bool is_number_char(char c) {
  return std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == ',' || c == '/';
}

// Last standalone numeric literal or A-E choice letter in `text`.
inline std::optional<std::string> last_number_or_choice(std::string_view text) {
  std::optional<std::string> best;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t b = i;
      if (b > 0 && (text[b - 1] == '-' || text[b - 1] == '+')) --b;
      std::size_t e = i;
      while (e < text.size() && is_number_char(text[e])) ++e;
      while (e > i && (text[e - 1] == '.' || text[e - 1] == ',')) --e;  // trailing punctuation
      best = std::string(text.substr(b, e - b));
      i = e;
    } else if (c >= 'A' && c <= 'E') {
      bool left_ok = i == 0 || !std::isalnum(static_cast<unsigned char>(text[i - 1]));
      bool right_ok = i + 1 >= text.size() || !std::isalnum(static_cast<unsigned char>(text[i + 1]));
      if (left_ok && right_ok) best = std::string(1, c);
    }
  }
  return best;
}

}  // namespace detail

// Pulls the final answer out of a solution: innermost \boxed{...}, else the
// text after the last "answer is", else the last standalone number or choice
// letter in the tail. The boxed/answer-is scan falls back to the whole
// completion when no tail was split off (degenerate solutions); the bare
// number scan stays confined to the tail so step-marker digits never leak in.
inline std::optional<std::string> extract_answer(const Solution& sol) {
  std::string_view scope = sol.tail.empty() ? std::string_view{sol.raw} : std::string_view{sol.tail};
  if (auto boxed = detail::innermost_boxed(scope)) return boxed;

  std::string low = lower(scope);
  std::size_t p = low.rfind("answer is");
  if (p != std::string::npos) {
    std::size_t b = p + 9;
    while (b < scope.size() && (scope[b] == ' ' || scope[b] == ':')) ++b;
    std::size_t e = b;
    while (e < scope.size() && scope[e] != '\n') ++e;
    std::string sentence(scope.substr(b, e - b));
    while (!sentence.empty() &&
           (sentence.back() == ' ' || sentence.back() == '.' || sentence.back() == '!')) {
      sentence.pop_back();
    }
    std::string t = trim(sentence);
    if (!t.empty()) return t;
  }
  if (!sol.tail.empty()) {
    if (auto n = detail::last_number_or_choice(sol.tail)) return n;
  }
  return std::nullopt;
}

namespace detail {

struct Rational {
  long long num = 0;
  long long den = 1;
};

inline long long gcd_ll(long long a, long long b) {
  while (b != 0) {
    long long t = a % b;
    a = b;
    b = t;
  }
  return a < 0 ? -a : a;
}

// Parses integers, fractions "a/b" and terminating decimals into an exact
// rational. Returns nullopt for anything else (too long, scientific, words).
inline std::optional<Rational> parse_rational(std::string_view s) {
  s = trim_view(s);
  if (s.empty() || s.size() > 18) return std::nullopt;
  bool neg = false;
  std::size_t i = 0;
  if (s[0] == '-' || s[0] == '+') {
    neg = s[0] == '-';
    i = 1;
  }
  long long num = 0;
  long long den = 1;
  bool any_digit = false;
  bool seen_dot = false;
  bool seen_slash = false;
  long long slash_den = 0;
  for (; i < s.size(); ++i) {
    char c = s[i];
    if (std::isdigit(static_cast<unsigned char>(c))) {
      any_digit = true;
      if (seen_slash) {
        slash_den = slash_den * 10 + (c - '0');
      } else {
        num = num * 10 + (c - '0');
        if (seen_dot) den *= 10;
      }
      if (num > 1000000000000000LL || slash_den > 1000000000000000LL || den > 1000000000000000LL)
        return std::nullopt;
    } else if (c == '.' && !seen_dot && !seen_slash) {
      seen_dot = true;
    } else if (c == '/' && !seen_slash && !seen_dot && any_digit) {
      seen_slash = true;
    } else {
      return std::nullopt;
    }
  }
  if (!any_digit) return std::nullopt;
  if (seen_slash) {
    if (slash_den == 0) return std::nullopt;
    den = slash_den;
  }
  Rational r;
  r.num = neg ? -num : num;
  r.den = den;
  long long g = gcd_ll(r.num == 0 ? 1 : r.num, r.den);
  if (g > 1) {
    r.num /= g;
    r.den /= g;
  }
  return r;
}

inline bool rational_equal(const Rational& a, const Rational& b) {
  return static_cast<__int128>(a.num) * b.den == static_cast<__int128>(b.num) * a.den;
}

// Strips LaTeX wrappers, math delimiters, currency and spacing so numeric
// and choice comparison sees a bare literal.
inline std::string normalize_answer(std::string_view in) {
  std::string s = trim(in);
  if (auto boxed = innermost_boxed(s)) s = *boxed;
  s = replace_all(std::move(s), "\\dfrac", "\\frac");
  s = replace_all(std::move(s), "\\tfrac", "\\frac");
  // \frac{a}{b} -> a/b
  std::size_t p;
  while ((p = s.find("\\frac{")) != std::string::npos) {
    std::size_t a_begin = p + 6;
    int depth = 1;
    std::size_t i = a_begin;
    while (i < s.size() && depth > 0) {
      if (s[i] == '{') ++depth;
      else if (s[i] == '}') --depth;
      if (depth == 0) break;
      ++i;
    }
    if (i >= s.size() || i + 1 >= s.size() || s[i + 1] != '{') break;
    std::string a = s.substr(a_begin, i - a_begin);
    std::size_t b_begin = i + 2;
    depth = 1;
    std::size_t j = b_begin;
    while (j < s.size() && depth > 0) {
      if (s[j] == '{') ++depth;
      else if (s[j] == '}') --depth;
      if (depth == 0) break;
      ++j;
    }
    if (j >= s.size()) break;
    std::string b = s.substr(b_begin, j - b_begin);
    s = s.substr(0, p) + a + "/" + b + s.substr(j + 1);
  }
  for (const char* tok : {"\\left", "\\right", "\\!", "\\,", "\\;", "\\ ", "\\text"}) {
    s = replace_all(std::move(s), tok, "");
  }
  s = replace_all(std::move(s), "\\$", "");
  std::string out;
  out.reserve(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) {
    char c = s[k];
    if (c == '$' || c == ' ' || c == '\t' || c == '\n' || c == '{' || c == '}') continue;
    if (c == ',' && k > 0 && k + 1 < s.size() &&
        std::isdigit(static_cast<unsigned char>(s[k - 1])) &&
        std::isdigit(static_cast<unsigned char>(s[k + 1])))
      continue;  // thousands separator
    out += c;
  }
  while (!out.empty() && (out.back() == '.' || out.back() == ',')) out.pop_back();
  return out;
}

// "(a)", "a)", "A." and bare letters all reduce to the choice letter.
inline std::optional<char> as_choice_letter(std::string_view s) {
  std::string t = trim(s);
  if (t.size() >= 2 && t.front() == '(' && t.back() == ')') t = t.substr(1, t.size() - 2);
  while (!t.empty() && (t.back() == ')' || t.back() == '.' || t.back() == ':')) t.pop_back();
  if (t.size() != 1) return std::nullopt;
  char c = static_cast<char>(std::toupper(static_cast<unsigned char>(t[0])));
  if (c >= 'A' && c <= 'E') return c;
  return std::nullopt;
}

inline std::optional<double> parse_double_full(std::string_view s) {
  std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  char* end = nullptr;
  double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size()) return std::nullopt;
  return v;
}

}  // namespace detail

// True when the two answers agree after normalization. Integer and fraction
// forms compare as exact rationals; as soon as a decimal literal is involved
// the comparison is numeric with 1e-6 relative tolerance. Multiple choice
// reduces to the letter; everything else falls back to normalized
// case-insensitive string equality.
inline bool answers_equivalent(std::string_view a, std::string_view b) {
  std::string na = detail::normalize_answer(a);
  std::string nb = detail::normalize_answer(b);

  auto ca = detail::as_choice_letter(na);
  auto cb = detail::as_choice_letter(nb);
  if (ca && cb) return *ca == *cb;

  auto ra = detail::parse_rational(na);
  auto rb = detail::parse_rational(nb);
  bool has_decimal =
      na.find('.') != std::string::npos || nb.find('.') != std::string::npos;
  if (ra && rb && !has_decimal) return detail::rational_equal(*ra, *rb);

  auto to_double = [](const std::optional<detail::Rational>& r,
                      const std::string& s) -> std::optional<double> {
    if (r) return static_cast<double>(r->num) / static_cast<double>(r->den);
    return detail::parse_double_full(s);
  };
  auto da = to_double(ra, na);
  auto db = to_double(rb, nb);
  if (da && db) {
    double x = *da, y = *db;
    if (x == y) return true;
    double scale = std::max(std::abs(x), std::abs(y));
    return std::abs(x - y) <= 1e-6 * scale;
  }
  return lower(na) == lower(nb);
}

// Grades a solution in place against the reference answer.
inline void grade_solution(Solution& sol, const std::string& reference_answer) {
  sol.extracted_answer = extract_answer(sol);
  sol.correct = sol.extracted_answer.has_value() &&
                answers_equivalent(*sol.extracted_answer, reference_answer);
}

}  // namespace rise
