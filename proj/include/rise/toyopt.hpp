#pragma once

// Desk-scale, exactly differentiable preference-loss trainer over a tabular
// autoregressive model. The composite objective is the per-kind-mean pairwise
// preference loss plus a gated negative log-likelihood stabilizer applied
// when the chosen sample's policy/reference log-ratio goes negative.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rise/assembler.hpp"
#include "rise/util.hpp"

namespace rise {

// Tabular autoregressive policy: one logit row per context state. States are
// the last `order` tokens (base-V encoded) plus a single start state used
// until `order` tokens have been consumed.
struct ToyLM {
  int vocab_size = 0;
  int order = 1;
  std::vector<double> logits;  // num_states() x vocab_size, row-major

  static constexpr int kMaxVocab = 64;

  std::size_t num_states() const {
    std::size_t s = 1;
    for (int i = 0; i < order; ++i) s *= static_cast<std::size_t>(vocab_size);
    return s + 1;
  }
  std::size_t start_state() const { return num_states() - 1; }

  static ToyLM zeros(int vocab_size, int order = 1) {
    if (vocab_size < 2 || vocab_size > kMaxVocab)
      throw Error("ConfigInvalid", "vocab_size must be in [2, 64]");
    if (order < 1 || order > 2) throw Error("ConfigInvalid", "order must be 1 or 2");
    ToyLM m;
    m.vocab_size = vocab_size;
    m.order = order;
    m.logits.assign(m.num_states() * static_cast<std::size_t>(vocab_size), 0.0);
    return m;
  }

  static ToyLM random_init(int vocab_size, int order, std::uint64_t seed, double scale = 1.0) {
    ToyLM m = zeros(vocab_size, order);
    DetRng rng(seed);
    for (double& v : m.logits) v = rng.normal(0.0, scale);
    return m;
  }

  const double* row(std::size_t state) const {
    return logits.data() + state * static_cast<std::size_t>(vocab_size);
  }
  double* row(std::size_t state) {
    return logits.data() + state * static_cast<std::size_t>(vocab_size);
  }

  // softmax probabilities of one context row
  std::vector<double> prob_row(std::size_t state) const {
    const double* r = row(state);
    double mx = r[0];
    for (int v = 1; v < vocab_size; ++v) mx = std::max(mx, r[v]);
    std::vector<double> p(static_cast<std::size_t>(vocab_size));
    double z = 0.0;
    for (int v = 0; v < vocab_size; ++v) {
      p[static_cast<std::size_t>(v)] = std::exp(r[v] - mx);
      z += p[static_cast<std::size_t>(v)];
    }
    for (double& x : p) x /= z;
    return p;
  }

  double log_prob(std::size_t state, int token) const {
    const double* r = row(state);
    double mx = r[0];
    for (int v = 1; v < vocab_size; ++v) mx = std::max(mx, r[v]);
    double z = 0.0;
    for (int v = 0; v < vocab_size; ++v) z += std::exp(r[v] - mx);
    return r[token] - mx - std::log(z);
  }

  json to_json() const {
    json rows = json::array();
    std::size_t ns = num_states();
    for (std::size_t s = 0; s < ns; ++s) {
      json r = json::array();
      for (int v = 0; v < vocab_size; ++v) r.push_back(row(s)[v]);
      rows.push_back(std::move(r));
    }
    return json{{"vocab_size", vocab_size}, {"order", order}, {"logits", rows}};
  }

  static ToyLM from_json(const json& j) {
    ToyLM m = zeros(j.at("vocab_size").get<int>(), j.at("order").get<int>());
    const auto& rows = j.at("logits");
    std::size_t ns = m.num_states();
    if (rows.size() != ns) throw Error("SchemaViolation", "checkpoint logit table has wrong shape");
    for (std::size_t s = 0; s < ns; ++s) {
      for (int v = 0; v < m.vocab_size; ++v)
        m.row(s)[v] = rows[s][static_cast<std::size_t>(v)].get<double>();
    }
    return m;
  }
};

// Walks context states as tokens are consumed.
class StateTracker {
 public:
  explicit StateTracker(const ToyLM& m) : model_(&m) {}

  std::size_t state() const {
    if (static_cast<int>(window_.size()) < model_->order) return model_->start_state();
    std::size_t s = 0;
    for (int t : window_) s = s * static_cast<std::size_t>(model_->vocab_size) + static_cast<std::size_t>(t);
    return s;
  }

  void push(int token) {
    window_.push_back(token);
    if (static_cast<int>(window_.size()) > model_->order) window_.erase(window_.begin());
  }

 private:
  const ToyLM* model_;
  std::vector<int> window_;
};

enum class TokenPairKind { FullSolution, EditedStep };

struct TokenPair {
  std::vector<int> context;
  std::vector<int> chosen;
  std::vector<int> rejected;
  TokenPairKind kind = TokenPairKind::FullSolution;
};

struct LossConfig {
  double beta = 0.4;
  double nll_weight = 0.05;          // lambda
  bool nll_length_normalized = true;
  bool nll_on_full = true;           // apply the NLL gate to full-solution pairs too
  double learning_rate = 0.1;
  int steps = 200;
  std::uint64_t seed = 0;
};

namespace detail {

inline void check_tokens(const ToyLM& m, const std::vector<int>& toks) {
  for (int t : toks) {
    if (t < 0 || t >= m.vocab_size)
      throw Error("TokenOutOfRange", "token " + std::to_string(t) + " outside vocab of " +
                                         std::to_string(m.vocab_size));
  }
}

}  // namespace detail

// Sum over sequence positions of log softmax(logits[state])[token]; context
// tokens advance the state without contributing probability mass.
inline double seq_logprob(const ToyLM& model, const std::vector<int>& context,
                          const std::vector<int>& seq) {
  detail::check_tokens(model, context);
  detail::check_tokens(model, seq);
  StateTracker st(model);
  for (int t : context) st.push(t);
  double lp = 0.0;
  for (int t : seq) {
    lp += model.log_prob(st.state(), t);
    st.push(t);
  }
  return lp;
}

namespace detail {

// grad[state, v] += weight * d seq_logprob / d logits[state, v]
inline void accumulate_logprob_grad(const ToyLM& model, const std::vector<int>& context,
                                    const std::vector<int>& seq, double weight,
                                    std::vector<double>& grad) {
  StateTracker st(model);
  for (int t : context) st.push(t);
  for (int t : seq) {
    std::size_t s = st.state();
    std::vector<double> p = model.prob_row(s);
    double* g = grad.data() + s * static_cast<std::size_t>(model.vocab_size);
    for (int v = 0; v < model.vocab_size; ++v) g[v] -= weight * p[static_cast<std::size_t>(v)];
    g[t] += weight;
    st.push(t);
  }
}

inline double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

struct DpoTerm {
  double loss = 0.0;
  double margin = 0.0;    // (policy/ref log-ratio of chosen) - (of rejected)
  double r_chosen = 0.0;  // chosen's policy/reference log-ratio, the NLL gate signal
};

// Pairwise preference loss -log sigmoid(beta * margin), computed as
// softplus(-beta * margin) for stability.
inline DpoTerm dpo_term(const ToyLM& policy, const ToyLM& reference, const TokenPair& pair,
                        double beta) {
  double lp_c_pol = seq_logprob(policy, pair.context, pair.chosen);
  double lp_c_ref = seq_logprob(reference, pair.context, pair.chosen);
  double lp_r_pol = seq_logprob(policy, pair.context, pair.rejected);
  double lp_r_ref = seq_logprob(reference, pair.context, pair.rejected);
  DpoTerm t;
  t.r_chosen = lp_c_pol - lp_c_ref;
  t.margin = t.r_chosen - (lp_r_pol - lp_r_ref);
  t.loss = detail::softplus(-beta * t.margin);
  return t;
}

// Negative log-likelihood of the chosen sequence under the policy.
inline double nll_term(const ToyLM& policy, const TokenPair& pair, bool length_normalized) {
  double lp = seq_logprob(policy, pair.context, pair.chosen);
  double nll = -lp;
  if (length_normalized && !pair.chosen.empty())
    nll /= static_cast<double>(pair.chosen.size());
  return nll;
}

struct LossBreakdown {
  double total = 0.0;
  double edit_loss = 0.0;   // mean pairwise loss over EditedStep pairs
  double full_loss = 0.0;   // mean pairwise loss over FullSolution pairs
  double nll_loss = 0.0;    // lambda-weighted gated NLL component
  double mean_margin = 0.0;
  double mean_chosen_logprob = 0.0;
  double nll_active_fraction = 0.0;
};

namespace detail {

struct PairEval {
  DpoTerm term;
  bool nll_in_scope = false;
  bool nll_active = false;
};

inline bool nll_scope_allows(const TokenPair& p, const LossConfig& cfg) {
  return p.kind == TokenPairKind::EditedStep || cfg.nll_on_full;
}

}  // namespace detail

// Composite objective over a batch: mean preference loss per non-empty pair
// kind, plus lambda * batch-mean of the NLL over pairs whose gate (r < 0) is
// open. Pairs with r >= 0 contribute exactly zero NLL.
inline LossBreakdown rise_loss(const ToyLM& policy, const ToyLM& reference,
                               const std::vector<TokenPair>& batch, const LossConfig& cfg) {
  if (batch.empty()) throw Error("ConfigInvalid", "rise_loss: empty batch");
  LossBreakdown out;
  std::size_t n_edit = 0, n_full = 0;
  double nll_sum = 0.0;
  std::size_t active = 0;
  for (const auto& p : batch) {
    DpoTerm t = dpo_term(policy, reference, p, cfg.beta);
    if (p.kind == TokenPairKind::EditedStep) {
      out.edit_loss += t.loss;
      ++n_edit;
    } else {
      out.full_loss += t.loss;
      ++n_full;
    }
    out.mean_margin += t.margin;
    out.mean_chosen_logprob += seq_logprob(policy, p.context, p.chosen);
    if (t.r_chosen < 0.0 && detail::nll_scope_allows(p, cfg)) {
      ++active;
      nll_sum += nll_term(policy, p, cfg.nll_length_normalized);
    }
  }
  if (n_edit > 0) out.edit_loss /= static_cast<double>(n_edit);
  if (n_full > 0) out.full_loss /= static_cast<double>(n_full);
  out.nll_loss = cfg.nll_weight * nll_sum / static_cast<double>(batch.size());
  out.mean_margin /= static_cast<double>(batch.size());
  out.mean_chosen_logprob /= static_cast<double>(batch.size());
  out.nll_active_fraction = static_cast<double>(active) / static_cast<double>(batch.size());
  out.total = out.edit_loss + out.full_loss + out.nll_loss;
  return out;
}

// Exact analytic gradient of rise_loss with respect to the policy logits.
// The reference is a constant; the NLL indicator is a stop-gradient gate.
inline std::vector<double> grad_rise_loss(const ToyLM& policy, const ToyLM& reference,
                                          const std::vector<TokenPair>& batch,
                                          const LossConfig& cfg) {
  if (batch.empty()) throw Error("ConfigInvalid", "grad_rise_loss: empty batch");
  std::vector<double> grad(policy.logits.size(), 0.0);
  std::size_t n_edit = 0, n_full = 0;
  for (const auto& p : batch) {
    if (p.kind == TokenPairKind::EditedStep) ++n_edit;
    else ++n_full;
  }
  const double batch_n = static_cast<double>(batch.size());
  for (const auto& p : batch) {
    DpoTerm t = dpo_term(policy, reference, p, cfg.beta);
    double class_w = 1.0 / static_cast<double>(p.kind == TokenPairKind::EditedStep ? n_edit : n_full);
    // d softplus(-beta*m)/dm = -beta * sigmoid(-beta*m)
    double dmargin = -cfg.beta * detail::sigmoid(-cfg.beta * t.margin) * class_w;
    detail::accumulate_logprob_grad(policy, p.context, p.chosen, dmargin, grad);
    detail::accumulate_logprob_grad(policy, p.context, p.rejected, -dmargin, grad);
    if (t.r_chosen < 0.0 && detail::nll_scope_allows(p, cfg) && cfg.nll_weight != 0.0) {
      double w = cfg.nll_weight / batch_n;
      if (cfg.nll_length_normalized && !p.chosen.empty())
        w /= static_cast<double>(p.chosen.size());
      detail::accumulate_logprob_grad(policy, p.context, p.chosen, -w, grad);
    }
  }
  return grad;
}

struct TrainStepMetrics {
  int step = 0;
  LossBreakdown loss;
};

struct TrainResult {
  ToyLM model;
  ToyLM reference;
  std::vector<TrainStepMetrics> trajectory;  // steps+1 rows; last is post-update
};

// Full-batch gradient descent; the reference model is frozen at
// initialization (policy starts as an exact copy of it).
inline TrainResult train(const std::vector<TokenPair>& dataset, const LossConfig& cfg,
                         int vocab_size = 0, int order = 1) {
  if (dataset.empty()) throw Error("ConfigInvalid", "train: empty dataset");
  if (vocab_size == 0) {
    int mx = 1;
    for (const auto& p : dataset) {
      for (int t : p.context) mx = std::max(mx, t);
      for (int t : p.chosen) mx = std::max(mx, t);
      for (int t : p.rejected) mx = std::max(mx, t);
    }
    vocab_size = mx + 1;
  }
  if (vocab_size < 2) vocab_size = 2;

  TrainResult res;
  res.reference = ToyLM::random_init(vocab_size, order, cfg.seed);
  res.model = res.reference;
  for (int step = 0; step < cfg.steps; ++step) {
    LossBreakdown l = rise_loss(res.model, res.reference, dataset, cfg);
    if (!std::isfinite(l.total))
      throw Error("Divergence", "loss became non-finite at step " + std::to_string(step));
    res.trajectory.push_back({step, l});
    std::vector<double> grad = grad_rise_loss(res.model, res.reference, dataset, cfg);
    for (std::size_t i = 0; i < grad.size(); ++i) res.model.logits[i] -= cfg.learning_rate * grad[i];
  }
  LossBreakdown final_loss = rise_loss(res.model, res.reference, dataset, cfg);
  if (!std::isfinite(final_loss.total))
    throw Error("Divergence", "loss became non-finite at step " + std::to_string(cfg.steps));
  res.trajectory.push_back({cfg.steps, final_loss});
  return res;
}

inline std::string trajectory_csv(const std::vector<TrainStepMetrics>& traj) {
  std::string out =
      "step,total_loss,edit_loss,full_loss,nll_loss,mean_margin,mean_chosen_logprob,"
      "nll_active_fraction\n";
  char buf[256];
  for (const auto& m : traj) {
    std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n", m.step,
                  m.loss.total, m.loss.edit_loss, m.loss.full_loss, m.loss.nll_loss,
                  m.loss.mean_margin, m.loss.mean_chosen_logprob, m.loss.nll_active_fraction);
    out += buf;
  }
  return out;
}

// Central-difference check of grad_rise_loss on randomly chosen coordinates.
// Coordinates whose perturbation flips any pair's NLL gate are re-drawn; a
// near-zero analytic/numeric pair falls back to an absolute comparison.
inline double finite_diff_check(const ToyLM& policy, const ToyLM& reference,
                                const std::vector<TokenPair>& batch, const LossConfig& cfg,
                                double h, int num_coords) {
  if (h <= 0) throw Error("ConfigInvalid", "finite_diff_check: h must be positive");
  std::vector<double> grad = grad_rise_loss(policy, reference, batch, cfg);

  auto gate_pattern = [&](const ToyLM& m) {
    std::vector<bool> gates;
    gates.reserve(batch.size());
    for (const auto& p : batch) {
      DpoTerm t = dpo_term(m, reference, p, cfg.beta);
      gates.push_back(t.r_chosen < 0.0);
    }
    return gates;
  };

  DetRng rng(cfg.seed ^ 0x66DFBA11ULL);
  double max_err = 0.0;
  int checked = 0;
  int attempts = 0;
  ToyLM work = policy;
  while (checked < num_coords && attempts < num_coords * 20) {
    ++attempts;
    std::size_t j = rng.below(work.logits.size());
    double orig = work.logits[j];
    work.logits[j] = orig + h;
    auto gp = gate_pattern(work);
    double lp = rise_loss(work, reference, batch, cfg).total;
    work.logits[j] = orig - h;
    auto gm = gate_pattern(work);
    double lm = rise_loss(work, reference, batch, cfg).total;
    work.logits[j] = orig;
    if (gp != gm) continue;  // indicator boundary; redraw
    double numeric = (lp - lm) / (2.0 * h);
    double analytic = grad[j];
    double scale = std::max(std::abs(numeric), std::abs(analytic));
    double err;
    if (scale < 1e-8) {
      err = std::abs(numeric - analytic) < 1e-8 ? 0.0 : 1.0;
    } else {
      err = std::abs(numeric - analytic) / scale;
    }
    max_err = std::max(max_err, err);
    ++checked;
  }
  if (checked == 0) throw Error("ConfigInvalid", "finite_diff_check: no usable coordinates");
  return max_err;
}

// --- text encoding -------------------------------------------------------------

// Character-level vocabulary capped at the model's table width. Id 0 is the
// reserved out-of-vocabulary token.
struct CharVocab {
  std::map<char32_t, int> to_id;
  std::vector<char32_t> id_to_char;  // index i holds the char for token i+1

  int size() const { return static_cast<int>(id_to_char.size()) + 1; }

  int encode_char(char32_t c) const {
    auto it = to_id.find(c);
    return it == to_id.end() ? 0 : it->second;
  }

  json to_json() const {
    json chars = json::array();
    for (char32_t c : id_to_char) chars.push_back(static_cast<std::uint32_t>(c));
    return json{{"oov_id", 0}, {"chars", chars}};
  }
};

inline CharVocab build_char_vocab(const std::vector<std::string>& texts, int max_vocab = 64) {
  if (max_vocab < 2 || max_vocab > ToyLM::kMaxVocab)
    throw Error("ConfigInvalid", "max_vocab must be in [2, 64]");
  CharVocab v;
  for (const auto& t : texts) {
    for (char32_t c : utf8_decode(t)) {
      if (static_cast<int>(v.id_to_char.size()) + 1 >= max_vocab) return v;
      if (!v.to_id.count(c)) {
        v.id_to_char.push_back(c);
        v.to_id[c] = static_cast<int>(v.id_to_char.size());
      }
    }
  }
  return v;
}

struct EncodeResult {
  std::vector<TokenPair> pairs;
  std::size_t oov_tokens = 0;
  std::size_t total_tokens = 0;
  std::size_t collapsed_pairs = 0;  // pairs whose sides became identical post-encoding
};

inline std::vector<int> encode_text(const CharVocab& vocab, std::string_view text,
                                    std::size_t* oov = nullptr, std::size_t* total = nullptr) {
  std::vector<int> out;
  for (char32_t c : utf8_decode(text)) {
    int id = vocab.encode_char(c);
    if (id == 0 && oov) ++(*oov);
    if (total) ++(*total);
    out.push_back(id);
  }
  return out;
}

// Deterministic token image of the dataset for the tabular trainer.
inline EncodeResult encode_records(const std::vector<PreferenceRecord>& records,
                                   const CharVocab& vocab) {
  EncodeResult res;
  for (const auto& r : records) {
    TokenPair p;
    p.context = encode_text(vocab, r.prompt, &res.oov_tokens, &res.total_tokens);
    p.chosen = encode_text(vocab, r.chosen, &res.oov_tokens, &res.total_tokens);
    p.rejected = encode_text(vocab, r.rejected, &res.oov_tokens, &res.total_tokens);
    p.kind = r.kind == PairKind::EditedStep ? TokenPairKind::EditedStep
                                            : TokenPairKind::FullSolution;
    if (p.chosen == p.rejected) {
      ++res.collapsed_pairs;
      continue;
    }
    res.pairs.push_back(std::move(p));
  }
  return res;
}

inline std::string decode_tokens(const CharVocab& vocab, const std::vector<int>& toks) {
  std::string out;
  for (int t : toks) {
    char32_t c = (t <= 0 || t > static_cast<int>(vocab.id_to_char.size()))
                     ? 0xFFFD
                     : vocab.id_to_char[static_cast<std::size_t>(t - 1)];
    // encode UTF-8
    if (c < 0x80) {
      out += static_cast<char>(c);
    } else if (c < 0x800) {
      out += static_cast<char>(0xC0 | (c >> 6));
      out += static_cast<char>(0x80 | (c & 0x3F));
    } else if (c < 0x10000) {
      out += static_cast<char>(0xE0 | (c >> 12));
      out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (c & 0x3F));
    } else {
      out += static_cast<char>(0xF0 | (c >> 18));
      out += static_cast<char>(0x80 | ((c >> 12) & 0x3F));
      out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (c & 0x3F));
    }
  }
  return out;
}

}  // namespace rise
