#pragma once

// File-level pipeline stages behind the CLI subcommands. Every stage writes
// its outputs plus a manifest (config snapshot, seeds, input checksums) so
// runs are auditable and partial pipelines can resume.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rise/analysis.hpp"
#include "rise/assembler.hpp"
#include "rise/config.hpp"
#include "rise/editor.hpp"
#include "rise/sampler.hpp"
#include "rise/toyopt.hpp"
#include "rise/util.hpp"

namespace rise {

namespace fs = std::filesystem;

inline std::vector<Problem> load_problems(const fs::path& path) {
  std::vector<Problem> out;
  for (const auto& j : read_jsonl(path)) out.push_back(Problem::from_json(j));
  return out;
}

namespace detail {

inline std::string file_checksum(const fs::path& path) {
  return to_hex(fnv1a64(read_file(path)));
}

inline void write_stage_manifest(const RunConfig& cfg, const std::string& stage,
                                 const std::vector<fs::path>& inputs,
                                 const std::vector<fs::path>& outputs, json extra = {}) {
  json inputs_j = json::object();
  for (const auto& p : inputs) inputs_j[p.filename().string()] = file_checksum(p);
  json outputs_j = json::object();
  for (const auto& p : outputs) outputs_j[p.filename().string()] = file_checksum(p);
  json m{{"stage", stage},
         {"config", cfg.snapshot()},
         {"inputs", inputs_j},
         {"outputs", outputs_j}};
  if (!extra.is_null() && !extra.empty()) m["stats"] = extra;
  write_file(fs::path(cfg.out_dir) / (stage + ".manifest.json"), m.dump(2) + "\n");
}

}  // namespace detail

// --- sample ------------------------------------------------------------------

struct SampleStageResult {
  fs::path samples_path;
  std::size_t problems = 0;
  std::size_t mixed = 0;  // problems with both polarities present
};

inline SampleStageResult run_sample(const RunConfig& cfg, ChatClient& client) {
  auto problems = load_problems(cfg.problems_path);
  std::vector<SampleSet> sets(problems.size());
  parallel_indexed(problems.size(), cfg.endpoint.max_concurrency, [&](std::size_t i) {
    sets[i] = sample_solutions(client, problems[i], cfg.k, cfg.sample_decode,
                               derive_seed(cfg.seed, problems[i].id, "sample"));
  });
  std::vector<json> rows;
  rows.reserve(sets.size());
  std::size_t mixed = 0;
  for (const auto& s : sets) {
    bool any_t = false, any_f = false;
    for (const auto& sol : s.solutions) (sol.correct.value_or(false) ? any_t : any_f) = true;
    if (any_t && any_f) ++mixed;
    rows.push_back(s.to_json());
  }
  SampleStageResult res;
  res.samples_path = fs::path(cfg.out_dir) / "samples.jsonl";
  res.problems = problems.size();
  res.mixed = mixed;
  write_jsonl(res.samples_path, rows);
  detail::write_stage_manifest(cfg, "sample", {fs::path(cfg.problems_path)}, {res.samples_path},
                               json{{"problems", res.problems}, {"mixed", mixed}});
  return res;
}

// --- edit ----------------------------------------------------------------------

struct EditStageResult {
  fs::path raw_path;
  fs::path filtered_path;
  std::size_t problems_edited = 0;
  std::size_t steps_attempted = 0;
  std::size_t steps_skipped = 0;
  std::size_t pairs_raw = 0;
  std::size_t pairs_filtered = 0;
};

inline ErrorType pick_error_type(const ErrorMix& mix, DetRng& rng) {
  if (mix.mode == ErrorMixMode::Random) {
    return kAllErrorTypes[rng.below(kAllErrorTypes.size())];
  }
  if (rng.uniform01() < mix.dominate_weight) return mix.dominate_type;
  std::vector<ErrorType> others;
  for (auto t : kAllErrorTypes) {
    if (t != mix.dominate_type) others.push_back(t);
  }
  return others[rng.below(others.size())];
}

inline EditStageResult run_edit(const RunConfig& cfg, ChatClient& client) {
  auto problems = load_problems(cfg.problems_path);
  fs::path samples_path = fs::path(cfg.out_dir) / "samples.jsonl";
  std::map<std::string, SampleSet> samples;
  for (const auto& j : read_jsonl(samples_path)) {
    SampleSet s = SampleSet::from_json(j);
    samples.emplace(s.problem_id, std::move(s));
  }
  PromptCatalog catalog = cfg.prompt_catalog_path.empty()
                              ? PromptCatalog()
                              : PromptCatalog::load(cfg.prompt_catalog_path);

  struct PerProblem {
    std::vector<EditedPair> pairs;
    std::size_t attempted = 0;
    std::size_t skipped = 0;
    bool edited = false;
  };
  std::vector<PerProblem> results(problems.size());
  parallel_indexed(problems.size(), cfg.endpoint.max_concurrency, [&](std::size_t i) {
    const Problem& problem = problems[i];
    auto sit = samples.find(problem.id);
    if (sit == samples.end()) return;
    auto fp = select_full_pair(sit->second, derive_seed(cfg.seed, problem.id, "full_pair"));
    if (!fp) return;
    PerProblem& out = results[i];
    out.edited = true;
    const Solution& chosen = fp->chosen;
    for (int step = 1; step <= static_cast<int>(chosen.steps.size()); ++step) {
      DetRng rng(derive_seed(cfg.seed, problem.id, "edit_type:" + std::to_string(step)));
      EditDirective d = EditDirective::for_type(pick_error_type(cfg.error_mix, rng));
      ++out.attempted;
      try {
        out.pairs.push_back(
            inject_error(client, problem, chosen, step, d, catalog, cfg.sample_decode));
      } catch (const Error&) {
        ++out.skipped;  // empty/identical after retry, or transport failure
      }
    }
  });

  EditStageResult res;
  res.raw_path = fs::path(cfg.out_dir) / "edits_raw.jsonl";
  res.filtered_path = fs::path(cfg.out_dir) / "edits_filtered.jsonl";
  std::vector<EditedPair> all_pairs;
  for (const auto& r : results) {
    if (r.edited) ++res.problems_edited;
    res.steps_attempted += r.attempted;
    res.steps_skipped += r.skipped;
    for (const auto& p : r.pairs) all_pairs.push_back(p);
  }
  res.pairs_raw = all_pairs.size();

  std::map<std::string, int> rejected_counts;
  std::vector<EditedPair> kept = filter_edited(all_pairs, cfg.alpha, &rejected_counts);
  res.pairs_filtered = kept.size();

  std::vector<json> raw_rows, kept_rows;
  for (const auto& p : all_pairs) raw_rows.push_back(p.to_json());
  for (const auto& p : kept) kept_rows.push_back(p.to_json());
  write_jsonl(res.raw_path, raw_rows);
  write_jsonl(res.filtered_path, kept_rows);

  json rejected_j = json::object();
  for (const auto& [pid, n] : rejected_counts) rejected_j[pid] = n;
  detail::write_stage_manifest(
      cfg, "edit", {fs::path(cfg.problems_path), samples_path}, {res.raw_path, res.filtered_path},
      json{{"problems_edited", res.problems_edited},
           {"steps_attempted", res.steps_attempted},
           {"steps_skipped", res.steps_skipped},
           {"pairs_raw", res.pairs_raw},
           {"pairs_filtered", res.pairs_filtered},
           {"rejected_by_problem", rejected_j}});
  return res;
}

// --- assemble -------------------------------------------------------------------

struct AssembleStageResult {
  fs::path dataset_path;
  DatasetManifest manifest;
};

inline AssembleStageResult run_assemble(const RunConfig& cfg) {
  AssembleInputs in;
  in.problems = load_problems(cfg.problems_path);
  fs::path samples_path = fs::path(cfg.out_dir) / "samples.jsonl";
  fs::path edits_path = fs::path(cfg.out_dir) / "edits_filtered.jsonl";
  for (const auto& j : read_jsonl(samples_path)) {
    SampleSet s = SampleSet::from_json(j);
    in.samples.emplace(s.problem_id, std::move(s));
  }
  if (fs::exists(edits_path)) {
    for (const auto& j : read_jsonl(edits_path)) {
      EditedPair p = EditedPair::from_json(j);
      in.edits[p.problem_id].push_back(std::move(p));
    }
  }
  AssembleConfig acfg;
  acfg.n_edited = cfg.n_edited;
  acfg.alpha = cfg.alpha;
  acfg.k = cfg.k;
  acfg.global_seed = cfg.seed;
  acfg.run_id = cfg.effective_run_id();
  Dataset ds = assemble_all(in, acfg);

  AssembleStageResult res;
  res.dataset_path = fs::path(cfg.out_dir) / "dataset.jsonl";
  res.manifest = write_dataset(ds.records, res.dataset_path, ds.manifest);
  detail::write_stage_manifest(cfg, "assemble", {fs::path(cfg.problems_path), samples_path, edits_path},
                               {res.dataset_path},
                               json{{"record_count", res.manifest.record_count},
                                    {"problems_yielded", res.manifest.problems_yielded}});
  return res;
}

// --- train-toy ------------------------------------------------------------------

struct TrainStageResult {
  fs::path trajectory_path;
  fs::path model_path;
  LossBreakdown initial_loss;
  LossBreakdown final_loss;
  std::size_t pairs = 0;
  std::size_t oov_tokens = 0;
};

inline TrainStageResult run_train_toy(const RunConfig& cfg) {
  fs::path dataset_path = fs::path(cfg.out_dir) / "dataset.jsonl";
  auto records = read_dataset(dataset_path);
  if (records.empty()) throw Error("EmptyDataset", "train-toy: dataset has no records");
  std::vector<std::string> corpus;
  for (const auto& r : records) {
    corpus.push_back(r.prompt);
    corpus.push_back(r.chosen);
    corpus.push_back(r.rejected);
  }
  CharVocab vocab = build_char_vocab(corpus, cfg.toy_vocab_max);
  EncodeResult enc = encode_records(records, vocab);
  if (enc.pairs.empty()) throw Error("EmptyDataset", "train-toy: all pairs collapsed under the vocab");
  TrainResult tr = train(enc.pairs, cfg.loss, vocab.size(), cfg.toy_order);

  TrainStageResult res;
  res.trajectory_path = fs::path(cfg.out_dir) / "trajectory.csv";
  res.model_path = fs::path(cfg.out_dir) / "model.json";
  res.initial_loss = tr.trajectory.front().loss;
  res.final_loss = tr.trajectory.back().loss;
  res.pairs = enc.pairs.size();
  res.oov_tokens = enc.oov_tokens;
  write_file(res.trajectory_path, trajectory_csv(tr.trajectory));
  json model_j = tr.model.to_json();
  model_j["vocab"] = vocab.to_json();
  write_file(res.model_path, model_j.dump() + "\n");
  detail::write_stage_manifest(cfg, "train-toy", {dataset_path},
                               {res.trajectory_path, res.model_path},
                               json{{"pairs", res.pairs},
                                    {"oov_tokens", res.oov_tokens},
                                    {"collapsed_pairs", enc.collapsed_pairs},
                                    {"initial_total_loss", res.initial_loss.total},
                                    {"final_total_loss", res.final_loss.total},
                                    {"final_mean_margin", res.final_loss.mean_margin}});
  return res;
}

// --- gradcheck -------------------------------------------------------------------

struct GradcheckResult {
  double max_rel_error = 0.0;
  int coords_checked = 0;
  int seeds = 0;
};

// Random models/batches across several seeds and both lambda settings.
inline GradcheckResult run_gradcheck(std::uint64_t base_seed, int seeds = 10,
                                     int coords_per_case = 100, double h = 1e-5) {
  GradcheckResult res;
  res.seeds = seeds;
  for (int s = 0; s < seeds; ++s) {
    std::uint64_t seed = derive_seed(base_seed, "gradcheck", std::to_string(s));
    DetRng rng(seed);
    int vocab = 4 + static_cast<int>(rng.below(6));
    ToyLM policy = ToyLM::random_init(vocab, 1, seed);
    ToyLM reference = ToyLM::random_init(vocab, 1, seed ^ 0xABCDEFULL);
    std::vector<TokenPair> batch;
    std::size_t n_pairs = 4 + rng.below(5);
    for (std::size_t i = 0; i < n_pairs; ++i) {
      TokenPair p;
      std::size_t ctx_len = rng.below(4);
      std::size_t len = 3 + rng.below(8);
      for (std::size_t t = 0; t < ctx_len; ++t)
        p.context.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab))));
      for (std::size_t t = 0; t < len; ++t)
        p.chosen.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab))));
      do {
        p.rejected.clear();
        for (std::size_t t = 0; t < len; ++t)
          p.rejected.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab))));
      } while (p.rejected == p.chosen);
      p.kind = i % 2 == 0 ? TokenPairKind::EditedStep : TokenPairKind::FullSolution;
      batch.push_back(std::move(p));
    }
    for (double lambda : {0.0, 0.05}) {
      LossConfig cfg;
      cfg.beta = 0.4;
      cfg.nll_weight = lambda;
      cfg.seed = seed;
      double err = finite_diff_check(policy, reference, batch, cfg, h, coords_per_case);
      res.max_rel_error = std::max(res.max_rel_error, err);
      res.coords_checked += coords_per_case;
    }
  }
  return res;
}

// --- eval / analyze ---------------------------------------------------------------

struct EvalStageResult {
  fs::path report_path;
  EvalReport report;
};

inline EvalStageResult run_eval(const RunConfig& cfg, ChatClient& client) {
  auto problems = load_problems(cfg.problems_path);
  DecodeParams dp;
  dp.temperature = 0.0;
  dp.top_p = 1.0;
  dp.max_tokens = cfg.sample_decode.max_tokens;
  dp.n = 1;
  EvalReport report = evaluate(client, problems, dp,
                               fs::path(cfg.problems_path).stem().string(),
                               cfg.endpoint.max_concurrency);
  EvalStageResult res;
  res.report_path = fs::path(cfg.out_dir) / "eval_report.json";
  write_file(res.report_path, report.to_json().dump(2) + "\n");
  res.report = std::move(report);
  detail::write_stage_manifest(cfg, "eval", {fs::path(cfg.problems_path)}, {res.report_path},
                               json{{"total", res.report.total},
                                    {"correct", res.report.correct},
                                    {"unscored", res.report.unscored},
                                    {"accuracy", res.report.accuracy}});
  return res;
}

struct AnalyzeStageResult {
  fs::path distribution_path;
  fs::path labels_path;
  ErrorDistribution distribution;
  std::size_t judged = 0;
  std::size_t parse_failures = 0;
};

// Judges every incorrect scored verdict from a previous eval run and writes
// the category histogram (JSON + CSV for external plotting).
inline AnalyzeStageResult run_analyze(const RunConfig& cfg, ChatClient& client) {
  fs::path report_path = fs::path(cfg.out_dir) / "eval_report.json";
  EvalReport report = EvalReport::from_json(json::parse(read_file(report_path)));
  auto problems = load_problems(cfg.problems_path);
  std::map<std::string, const Problem*> by_id;
  for (const auto& p : problems) by_id[p.id] = &p;

  struct Row {
    std::string problem_id;
    JudgeResult judge;
    bool used = false;
  };
  std::vector<Row> rows(report.verdicts.size());
  parallel_indexed(report.verdicts.size(), cfg.endpoint.max_concurrency, [&](std::size_t i) {
    const Verdict& v = report.verdicts[i];
    if (v.unscored || v.correct) return;
    auto it = by_id.find(v.problem_id);
    if (it == by_id.end()) return;
    rows[i].problem_id = v.problem_id;
    rows[i].judge =
        classify_first_error(client, *it->second, v.solution, it->second->reference_answer);
    rows[i].used = true;
  });

  AnalyzeStageResult res;
  std::vector<ErrorCategory> labels;
  std::vector<json> label_rows;
  for (const auto& r : rows) {
    if (!r.used) continue;
    labels.push_back(r.judge.category);
    ++res.judged;
    if (r.judge.parse_failed) ++res.parse_failures;
    label_rows.push_back(json{{"problem_id", r.problem_id},
                              {"category", to_string(r.judge.category)},
                              {"parse_failed", r.judge.parse_failed}});
  }
  if (labels.empty()) throw Error("EmptyInput", "analyze: no incorrect solutions to judge");
  res.distribution = error_distribution(labels);
  res.distribution_path = fs::path(cfg.out_dir) / "error_distribution.json";
  res.labels_path = fs::path(cfg.out_dir) / "error_labels.jsonl";
  write_jsonl(res.labels_path, label_rows);
  json dist_j = res.distribution.to_json();
  dist_j["predefined_share"] = predefined_share(res.distribution);
  dist_j["judged"] = res.judged;
  dist_j["parse_failures"] = res.parse_failures;
  write_file(res.distribution_path, dist_j.dump(2) + "\n");
  std::string csv = "category,count,fraction\n";
  for (auto c : kAllErrorCategories) {
    std::size_t i = static_cast<std::size_t>(c) - 1;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%s,%zu,%.6f\n", to_string(c).c_str(),
                  res.distribution.counts[i], res.distribution.fractions[i]);
    csv += buf;
  }
  write_file(fs::path(cfg.out_dir) / "error_distribution.csv", csv);
  detail::write_stage_manifest(cfg, "analyze", {report_path}, {res.distribution_path, res.labels_path},
                               json{{"judged", res.judged},
                                    {"parse_failures", res.parse_failures},
                                    {"predefined_share", predefined_share(res.distribution)}});
  return res;
}

// --- pipeline --------------------------------------------------------------------

struct PipelineResult {
  SampleStageResult sample;
  EditStageResult edit;
  AssembleStageResult assemble;
};

inline PipelineResult run_pipeline(const RunConfig& cfg, ChatClient& client) {
  PipelineResult res;
  res.sample = run_sample(cfg, client);
  res.edit = run_edit(cfg, client);
  res.assemble = run_assemble(cfg);
  return res;
}

}  // namespace rise
