#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "helpers.hpp"
#include "rise/analysis.hpp"
#include "rise/pipeline.hpp"

using namespace rise;

TEST_CASE("evaluate reproduces the fixture accuracy exactly", "[analysis]") {
  testutil::MockRig rig(8);
  auto client = rig.client();
  // 1000 generated sum problems; the mock answers them all correctly, and the
  // reference answers disagree for the last 116, so accuracy is 0.884.
  std::vector<Problem> problems;
  for (int i = 0; i < 1000; ++i) {
    Problem p;
    p.id = "gen-" + std::to_string(i);
    long long a = i, b = i + 1;
    p.statement = "What is " + std::to_string(a) + " + " + std::to_string(b) + "?";
    long long truth = a + b;
    p.reference_answer = std::to_string(i < 884 ? truth : truth + 1);
    problems.push_back(std::move(p));
  }
  DecodeParams dp;
  dp.temperature = 0.0;
  EvalReport r = evaluate(client, problems, dp, "gen-sums", 8);
  REQUIRE(r.total == 1000);
  REQUIRE(r.correct == 884);
  REQUIRE(r.accuracy == Catch::Approx(0.884).epsilon(1e-12));
  REQUIRE(r.unscored == 0);
  REQUIRE(r.canonical_protocol);
  REQUIRE(r.verdicts.size() == 1000);
  REQUIRE(r.verdicts[0].problem_id == "gen-0");
}

TEST_CASE("evaluate rejects an empty problem set", "[analysis]") {
  testutil::MockRig rig;
  auto client = rig.client();
  DecodeParams dp;
  dp.temperature = 0.0;
  REQUIRE_THROWS_AS(evaluate(client, {}, dp), Error);
}

TEST_CASE("evaluate is deterministic at temperature zero", "[analysis]") {
  testutil::MockRig rig;
  auto client = rig.client();
  auto problems = load_problems(testutil::fixtures_dir() / "problems.jsonl");
  DecodeParams dp;
  dp.temperature = 0.0;
  EvalReport a = evaluate(client, problems, dp, "fixtures");
  EvalReport b = evaluate(client, problems, dp, "fixtures");
  REQUIRE(a.to_json().dump() == b.to_json().dump());
  // greedy decoding picks each problem's first fixture completion
  REQUIRE(a.total == 5);
  REQUIRE(a.correct == 3);  // p1 and p3 answer correctly, p4 too; p2/p5 are wrong first
}

TEST_CASE("non-greedy evaluation is flagged non-canonical", "[analysis]") {
  testutil::MockRig rig;
  auto client = rig.client();
  auto problems = load_problems(testutil::fixtures_dir() / "problems_mini.jsonl");
  DecodeParams dp;
  dp.temperature = 0.7;
  EvalReport r = evaluate(client, problems, dp);
  REQUIRE_FALSE(r.canonical_protocol);
}

TEST_CASE("empty completions become unscored and leave the denominator", "[analysis]") {
  MockFixtures fx;
  fx.problems.push_back({"silent", "This prompt gets an empty reply.", "1", {""}});
  fx.problems.push_back(
      {"ok", "This one answers fine.", "3",
       {" Easy.\nStep 2: 1 + 2 = 3.\nThe answer is $\\boxed{3}$."}});
  MockServer server(std::move(fx));
  server.start();
  Endpoint ep;
  ep.base_url = server.base_url();
  ep.retry_backoff_ms = 1;
  ChatClient client(ep);

  std::vector<Problem> problems(2);
  problems[0].id = "silent";
  problems[0].statement = "This prompt gets an empty reply.";
  problems[0].reference_answer = "1";
  problems[1].id = "ok";
  problems[1].statement = "This one answers fine.";
  problems[1].reference_answer = "3";
  DecodeParams dp;
  dp.temperature = 0.0;
  EvalReport r = evaluate(client, problems, dp);
  REQUIRE(r.unscored == 1);
  REQUIRE(r.total == 1);
  REQUIRE(r.correct == 1);
  REQUIRE(r.accuracy == 1.0);
  REQUIRE(r.verdicts[0].unscored);
}

TEST_CASE("judge responses parse into exactly one category", "[analysis]") {
  REQUIRE(parse_judge_response("Category: (2)").category == ErrorCategory::SubstitutionError);
  REQUIRE_FALSE(parse_judge_response("Category: (2)").parse_failed);
  REQUIRE(parse_judge_response("reasoning...\nCategory: (5)").category ==
          ErrorCategory::SymbolError);
  REQUIRE(parse_judge_response("category: 4").category == ErrorCategory::OrderError);
  JudgeResult free_text = parse_judge_response("It just seems wrong overall.");
  REQUIRE(free_text.category == ErrorCategory::Others);
  REQUIRE(free_text.parse_failed);
  JudgeResult empty = parse_judge_response("");
  REQUIRE(empty.category == ErrorCategory::Others);
  REQUIRE(empty.parse_failed);
  // the digit must follow on the same line
  JudgeResult off_line = parse_judge_response("Category:\nnope");
  REQUIRE(off_line.parse_failed);
}

TEST_CASE("classify_first_error drives the scripted judge", "[analysis]") {
  testutil::MockRig rig;
  auto client = rig.client();
  Problem p;
  p.id = "judged";
  p.statement = "What is the maximum value of $4(x + 7)(2 - x)$ over all real numbers $x$?";
  p.reference_answer = "81";

  // fixture category marker
  JudgeResult fixture = classify_first_error(client, p, "CATEGORY-TWO-FIXTURE solution text", "81");
  REQUIRE(fixture.category == ErrorCategory::SubstitutionError);
  REQUIRE_FALSE(fixture.parse_failed);

  // free-text fixture falls back to Others with the flag set
  JudgeResult nocat = classify_first_error(client, p, "NOCAT-FIXTURE solution text", "81");
  REQUIRE(nocat.category == ErrorCategory::Others);
  REQUIRE(nocat.parse_failed);

  // the bundled wrong-sign solution is judged within the predefined set
  auto corpus = json::parse(read_file(testutil::mock_corpus_path()));
  std::string wrong_sign = corpus["problems"][2]["completions"][1].get<std::string>();
  JudgeResult cs = classify_first_error(client, p, wrong_sign, "81");
  REQUIRE(cs.category != ErrorCategory::Others);
  REQUIRE(cs.category == ErrorCategory::SymbolError);
}

TEST_CASE("error_distribution counts and normalizes", "[analysis]") {
  std::vector<ErrorCategory> labels = {ErrorCategory::CalcError, ErrorCategory::CalcError,
                                       ErrorCategory::Others, ErrorCategory::OrderError};
  ErrorDistribution d = error_distribution(labels);
  REQUIRE(d.total == 4);
  REQUIRE(d.counts[0] == 2);
  REQUIRE(d.fractions[0] == Catch::Approx(0.5));
  double sum = 0.0;
  std::size_t count_sum = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    sum += d.fractions[i];
    count_sum += d.counts[i];
  }
  REQUIRE(sum == Catch::Approx(1.0).epsilon(1e-12));
  REQUIRE(count_sum == labels.size());
  REQUIRE_THROWS_AS(error_distribution({}), Error);

  ErrorDistribution single = error_distribution({ErrorCategory::OmittedTerm});
  REQUIRE(single.fractions[2] == 1.0);
}

TEST_CASE("stored label multisets reproduce the recorded distributions", "[analysis]") {
  auto labels = load_label_multiset(testutil::fixtures_dir() / "labels" / "llama31_math.json");
  ErrorDistribution d = error_distribution(labels);
  REQUIRE(d.total == 10000);
  REQUIRE(d.fractions[0] == Catch::Approx(0.3353).epsilon(1e-12));
  REQUIRE(d.fractions[1] == Catch::Approx(0.2800).epsilon(1e-12));
  REQUIRE(d.fractions[2] == Catch::Approx(0.0654).epsilon(1e-12));
  REQUIRE(d.fractions[3] == Catch::Approx(0.0144).epsilon(1e-12));
  REQUIRE(d.fractions[4] == Catch::Approx(0.0148).epsilon(1e-12));
  REQUIRE(d.fractions[5] == Catch::Approx(0.2901).epsilon(1e-12));

  auto qwen = load_label_multiset(testutil::fixtures_dir() / "labels" / "qwen2_math.json");
  ErrorDistribution q = error_distribution(qwen);
  REQUIRE(predefined_share(q) == Catch::Approx(0.75).margin(0.005));
  REQUIRE(q.fractions[0] == Catch::Approx(0.60).margin(0.005));
}
