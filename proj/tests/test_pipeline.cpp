#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <map>

#include "helpers.hpp"
#include "rise/config.hpp"
#include "rise/pipeline.hpp"

using namespace rise;

TEST_CASE("config files load with env interpolation and flag-style overrides", "[pipeline]") {
  testutil::TempDir tmp("config");
  ::setenv("RISE_TEST_KEY", "sk-test-123", 1);
  json cfg_json{{"endpoint", json{{"base_url", "https://api.example.test/v1"},
                                  {"model_name", "m-1"},
                                  {"api_key", "${RISE_TEST_KEY}"}}},
                {"k", 7},
                {"alpha", 0.1},
                {"n_edited", "all"},
                {"lambda", 0.02},
                {"seed", 99},
                {"error_mix", "dominate:OmittedTerm"}};
  auto path = tmp.path() / "run.json";
  write_file(path, cfg_json.dump(2));
  RunConfig cfg = load_config_file(path);
  REQUIRE(cfg.endpoint.api_key.value() == "sk-test-123");
  REQUIRE(cfg.k == 7);
  REQUIRE(cfg.alpha == 0.1);
  REQUIRE(cfg.n_edited == kAllEditedPairs);
  REQUIRE(cfg.loss.nll_weight == 0.02);
  REQUIRE(cfg.seed == 99);
  REQUIRE(cfg.loss.seed == 99);
  REQUIRE(cfg.error_mix.mode == ErrorMixMode::Dominate);
  REQUIRE(cfg.error_mix.dominate_type == ErrorType::OmittedTerm);
}

TEST_CASE("unknown config keys fail fast", "[pipeline]") {
  testutil::TempDir tmp("badcfg");
  auto path = tmp.path() / "bad.json";
  write_file(path, R"({"alhpa": 0.05})");
  REQUIRE_THROWS_AS(load_config_file(path), Error);
}

TEST_CASE("n_edited and error-mix parsers validate input", "[pipeline]") {
  REQUIRE(parse_n_edited("3") == 3);
  REQUIRE(parse_n_edited("all") == kAllEditedPairs);
  REQUIRE(parse_n_edited("ALL") == kAllEditedPairs);
  REQUIRE_THROWS_AS(parse_n_edited("-2"), Error);
  REQUIRE_THROWS_AS(parse_n_edited("many"), Error);
  REQUIRE(parse_error_mix("random").mode == ErrorMixMode::Random);
  REQUIRE(parse_error_mix("dominate:CalcError").dominate_type == ErrorType::CalcError);
  REQUIRE_THROWS_AS(parse_error_mix("dominate:Nope"), Error);
  REQUIRE_THROWS_AS(parse_error_mix("sometimes"), Error);
}

TEST_CASE("missing api key against a non-local endpoint is a config error", "[pipeline]") {
  RunConfig cfg;
  cfg.endpoint.base_url = "https://api.example.test/v1";
  cfg.endpoint.api_key.reset();
  REQUIRE_THROWS_AS(validate_config(cfg, true), Error);
  cfg.mock = true;
  REQUIRE_NOTHROW(validate_config(cfg, true));
  cfg.mock = false;
  cfg.endpoint.base_url = "http://127.0.0.1:9999";
  REQUIRE_NOTHROW(validate_config(cfg, true));
  cfg.alpha = 0.0;
  REQUIRE_THROWS_AS(validate_config(cfg, false), Error);
}

TEST_CASE("dominate mode concentrates the chosen error type", "[pipeline]") {
  ErrorMix mix;
  mix.mode = ErrorMixMode::Dominate;
  mix.dominate_type = ErrorType::OmittedTerm;
  std::map<ErrorType, int> counts;
  for (int i = 0; i < 2000; ++i) {
    DetRng rng(derive_seed(5, "draw", std::to_string(i)));
    counts[pick_error_type(mix, rng)]++;
  }
  double dominant = counts[ErrorType::OmittedTerm] / 2000.0;
  REQUIRE(dominant > 0.6);
  REQUIRE(dominant < 0.8);
  for (auto t : kAllErrorTypes) REQUIRE(counts[t] > 0);  // others still appear
}

TEST_CASE("the mini corpus pipeline yields the hand-enumerated dataset", "[pipeline]") {
  testutil::MockRig rig;
  testutil::TempDir tmp("mini");
  RunConfig cfg;
  cfg.endpoint = rig.endpoint;
  cfg.problems_path = (testutil::fixtures_dir() / "problems_mini.jsonl").string();
  cfg.out_dir = tmp.path().string();
  cfg.seed = 7;
  cfg.k = 5;
  cfg.n_edited = 1;
  cfg.alpha = 0.05;
  ChatClient client(cfg.endpoint);
  PipelineResult r = run_pipeline(cfg, client);

  // 3 mixed-correctness problems, N=1: one full pair plus one edited pair each
  REQUIRE(r.assemble.manifest.record_count == 6);
  REQUIRE(r.assemble.manifest.full_solution_count == 3);
  REQUIRE(r.assemble.manifest.edited_step_count == 3);
  REQUIRE(r.assemble.manifest.problems_in == 3);
  REQUIRE(r.assemble.manifest.problems_yielded == 3);

  auto records = read_dataset(r.assemble.dataset_path);
  REQUIRE(records.size() == 6);
  for (const auto& rec : records) {
    REQUIRE_FALSE(rec.prompt.empty());
    REQUIRE(rec.chosen != rec.rejected);
    if (rec.kind == PairKind::EditedStep) REQUIRE(rec.step_index.has_value());
  }
  // every surviving edited pair honors alpha strictly
  for (const auto& j : read_jsonl(r.edit.filtered_path)) {
    REQUIRE(j.at("distance_ratio").get<double>() < cfg.alpha);
  }
  // stage manifests exist and carry the config snapshot
  json m = json::parse(read_file(tmp.path() / "assemble.manifest.json"));
  REQUIRE(m["config"]["alpha"] == 0.05);
  REQUIRE(m["config"]["k"] == 5);
}

TEST_CASE("eval and analyze stages run end to end on the mock", "[pipeline]") {
  testutil::MockRig rig;
  testutil::TempDir tmp("evalstage");
  RunConfig cfg;
  cfg.endpoint = rig.endpoint;
  cfg.problems_path = (testutil::fixtures_dir() / "problems.jsonl").string();
  cfg.out_dir = tmp.path().string();
  ChatClient client(cfg.endpoint);

  EvalStageResult ev = run_eval(cfg, client);
  REQUIRE(ev.report.total == 5);
  REQUIRE(std::filesystem::exists(ev.report_path));

  AnalyzeStageResult an = run_analyze(cfg, client);
  REQUIRE(an.judged == ev.report.total - ev.report.correct);
  REQUIRE(an.distribution.total == an.judged);
  REQUIRE(std::filesystem::exists(an.distribution_path));
  REQUIRE(std::filesystem::exists(tmp.path() / "error_distribution.csv"));
  double frac_sum = 0.0;
  for (double f : an.distribution.fractions) frac_sum += f;
  REQUIRE(frac_sum == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("train-toy and gradcheck stages run on a pipeline dataset", "[pipeline]") {
  testutil::MockRig rig;
  testutil::TempDir tmp("trainstage");
  RunConfig cfg;
  cfg.endpoint = rig.endpoint;
  cfg.problems_path = (testutil::fixtures_dir() / "problems_mini.jsonl").string();
  cfg.out_dir = tmp.path().string();
  cfg.seed = 3;
  cfg.loss.steps = 40;
  ChatClient client(cfg.endpoint);
  run_pipeline(cfg, client);

  TrainStageResult tr = run_train_toy(cfg);
  REQUIRE(tr.pairs > 0);
  REQUIRE(std::filesystem::exists(tr.trajectory_path));
  REQUIRE(std::filesystem::exists(tr.model_path));
  std::string csv = read_file(tr.trajectory_path);
  REQUIRE(csv.rfind("step,total_loss,edit_loss,full_loss,nll_loss,mean_margin,"
                    "mean_chosen_logprob,nll_active_fraction\n", 0) == 0);
  REQUIRE(tr.final_loss.total < tr.initial_loss.total);

  GradcheckResult gc = run_gradcheck(cfg.seed, 2, 40);
  REQUIRE(gc.max_rel_error < 1e-4);
}

TEST_CASE("fixture corpus stays consistent with the problems files", "[pipeline]") {
  auto corpus = json::parse(read_file(testutil::mock_corpus_path()));
  std::map<std::string, json> by_id;
  for (const auto& p : corpus["problems"]) by_id[p["id"].get<std::string>()] = p;
  for (const auto& path : {std::string("problems.jsonl"), std::string("problems_mini.jsonl")}) {
    for (const auto& j : read_jsonl(testutil::fixtures_dir() / path)) {
      auto id = j["id"].get<std::string>();
      REQUIRE(by_id.count(id) == 1);
      REQUIRE(by_id[id]["statement"] == j["statement"]);
      REQUIRE(by_id[id]["reference_answer"] == j["reference_answer"]);
      REQUIRE(by_id[id]["completions"].size() == 5);
    }
  }
}
