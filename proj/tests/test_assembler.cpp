#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <set>

#include "helpers.hpp"
#include "rise/assembler.hpp"

using namespace rise;

namespace {

Problem test_problem() {
  Problem p;
  p.id = "pX";
  p.statement = "What is 1 + 1?";
  p.reference_answer = "2";
  return p;
}

std::optional<FullPair> test_full_pair() {
  FullPair fp;
  fp.problem_id = "pX";
  fp.chosen = parse_solution("Step 1: add.\nThe answer is $\\boxed{2}$.");
  fp.chosen.correct = true;
  fp.rejected = parse_solution("Step 1: add.\nThe answer is $\\boxed{3}$.");
  fp.rejected.correct = false;
  return fp;
}

std::vector<EditedPair> test_edits(int n) {
  std::vector<EditedPair> out;
  for (int i = 0; i < n; ++i) {
    EditedPair e;
    e.problem_id = "pX";
    e.step_index = i + 1;
    e.chosen_step = "Step " + std::to_string(i + 1) + ": value " + std::to_string(i);
    e.rejected_step = "Step " + std::to_string(i + 1) + ": value " + std::to_string(i + 1);
    e.prefix = i == 0 ? "" : "Step 1: value 0\n";
    e.directive = EditDirective::for_type(ErrorType::CalcError);
    e.distance_ratio = 0.02;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

TEST_CASE("assemble_problem emits 1 + min(N, edits) records", "[assembler]") {
  auto p = test_problem();
  auto fp = test_full_pair();
  REQUIRE(assemble_problem(p, fp, test_edits(7), 1, 42).size() == 2);
  REQUIRE(assemble_problem(p, fp, test_edits(7), 3, 42).size() == 4);
  REQUIRE(assemble_problem(p, fp, test_edits(2), 5, 42).size() == 3);
  REQUIRE(assemble_problem(p, fp, test_edits(7), 0, 42).size() == 1);
  REQUIRE(assemble_problem(p, fp, test_edits(7), kAllEditedPairs, 42).size() == 8);
  REQUIRE(assemble_problem(p, std::nullopt, test_edits(7), 3, 42).empty());
  REQUIRE_THROWS_AS(assemble_problem(p, fp, test_edits(1), -1, 42), Error);
}

TEST_CASE("assemble_problem record shapes", "[assembler]") {
  auto p = test_problem();
  auto records = assemble_problem(p, test_full_pair(), test_edits(4), 2, 7);
  REQUIRE(records.size() == 3);
  REQUIRE(records[0].kind == PairKind::FullSolution);
  REQUIRE(records[0].prompt == p.statement);
  REQUIRE_FALSE(records[0].step_index.has_value());
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& r = records[i];
    REQUIRE(r.kind == PairKind::EditedStep);
    REQUIRE(r.step_index.has_value());
    REQUIRE(r.directive.has_value());
    REQUIRE(r.prompt.rfind(p.statement, 0) == 0);  // statement then blank line then prefix
    REQUIRE(r.chosen != r.rejected);
  }
  // selected indices ascend (original step order kept)
  REQUIRE(records[1].step_index.value() < records[2].step_index.value());
}

TEST_CASE("edited-pair selection is uniform-without-replacement and seeded", "[assembler]") {
  auto p = test_problem();
  auto edits = test_edits(6);
  auto a = assemble_problem(p, test_full_pair(), edits, 3, 1001);
  auto b = assemble_problem(p, test_full_pair(), edits, 3, 1001);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i].to_json() == b[i].to_json());
  std::set<int> chosen_steps;
  for (std::size_t i = 1; i < a.size(); ++i) chosen_steps.insert(a[i].step_index.value());
  REQUIRE(chosen_steps.size() == 3);  // no replacement
  // different seeds eventually pick different subsets
  bool differs = false;
  for (std::uint64_t s = 0; s < 20 && !differs; ++s) {
    auto c = assemble_problem(p, test_full_pair(), edits, 3, s);
    std::set<int> steps;
    for (std::size_t i = 1; i < c.size(); ++i) steps.insert(c[i].step_index.value());
    differs = steps != chosen_steps;
  }
  REQUIRE(differs);
}

TEST_CASE("dataset write/read round-trips and checksums", "[assembler]") {
  testutil::TempDir tmp("dataset");
  auto p = test_problem();
  std::vector<PreferenceRecord> records;
  for (int i = 0; i < 100; ++i) {
    auto batch = assemble_problem(p, test_full_pair(), test_edits(3), 1,
                                  static_cast<std::uint64_t>(i), {"run-t", 7});
    records.insert(records.end(), batch.begin(), batch.end());
  }
  auto path = tmp.path() / "dataset.jsonl";
  DatasetManifest m = write_dataset(records, path);
  REQUIRE(m.record_count == records.size());
  REQUIRE(m.full_solution_count + m.edited_step_count == m.record_count);

  auto back = read_dataset(path);
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    REQUIRE(back[i].to_json() == records[i].to_json());
}

TEST_CASE("a corrupted byte trips the checksum", "[assembler]") {
  testutil::TempDir tmp("corrupt");
  auto path = tmp.path() / "dataset.jsonl";
  auto records = assemble_problem(test_problem(), test_full_pair(), test_edits(3), 2, 5);
  write_dataset(records, path);
  std::string bytes = read_file(path);
  bytes[bytes.find("pX")] = 'q';
  write_file(path, bytes);
  REQUIRE_THROWS_AS(read_dataset(path), Error);
  try {
    read_dataset(path);
  } catch (const Error& e) {
    REQUIRE(e.kind() == "ChecksumMismatch");
  }
}

TEST_CASE("empty dataset file is valid", "[assembler]") {
  testutil::TempDir tmp("empty");
  auto path = tmp.path() / "dataset.jsonl";
  write_dataset({}, path);
  REQUIRE(read_dataset(path).empty());
}

TEST_CASE("schema violations report the line number", "[assembler]") {
  testutil::TempDir tmp("schema");
  auto path = tmp.path() / "dataset.jsonl";
  auto records = assemble_problem(test_problem(), test_full_pair(), test_edits(1), 1, 5);
  std::string good = serialize_records(records);
  write_file(path, good + "{\"problem_id\":\"x\"}\n");
  try {
    read_dataset(path);
    FAIL("expected SchemaViolation");
  } catch (const Error& e) {
    REQUIRE(e.kind() == "SchemaViolation");
    REQUIRE(std::string(e.what()).find(":3") != std::string::npos);
  }
}

TEST_CASE("assemble_all walks problems in order and verifies keys", "[assembler]") {
  AssembleInputs in;
  Problem p = test_problem();
  in.problems = {p};
  SampleSet set;
  set.problem_id = "pX";
  Solution good = parse_solution("Step 1: right.\nThe answer is $\\boxed{2}$.");
  good.correct = true;
  Solution bad = parse_solution("Step 1: wrong.\nThe answer is $\\boxed{3}$.");
  bad.correct = false;
  set.solutions = {good, bad};
  set.k = 2;
  in.samples.emplace("pX", set);
  in.edits["pX"] = test_edits(2);

  AssembleConfig cfg;
  cfg.n_edited = 1;
  cfg.global_seed = 3;
  cfg.run_id = "t";
  Dataset ds = assemble_all(in, cfg);
  REQUIRE(ds.records.size() == 2);
  REQUIRE(ds.manifest.problems_in == 1);
  REQUIRE(ds.manifest.problems_yielded == 1);
  REQUIRE(ds.manifest.record_count == 2);

  in.edits["ghost"] = test_edits(1);
  REQUIRE_THROWS_AS(assemble_all(in, cfg), Error);
}

TEST_CASE("zero problems give an empty dataset with zeroed manifest", "[assembler]") {
  AssembleInputs in;
  AssembleConfig cfg;
  Dataset ds = assemble_all(in, cfg);
  REQUIRE(ds.records.empty());
  REQUIRE(ds.manifest.record_count == 0);
  REQUIRE(ds.manifest.problems_in == 0);
  REQUIRE(ds.manifest.problems_yielded == 0);
}

TEST_CASE("identical inputs and seeds produce byte-identical datasets", "[assembler]") {
  testutil::TempDir tmp("determinism");
  auto records = assemble_problem(test_problem(), test_full_pair(), test_edits(5), 2, 77,
                                  {"fixed-run", 77});
  auto p1 = tmp.path() / "a.jsonl";
  auto p2 = tmp.path() / "b.jsonl";
  write_dataset(records, p1);
  write_dataset(records, p2);
  REQUIRE(read_file(p1) == read_file(p2));
  REQUIRE(read_file(manifest_path_for(p1)) == read_file(manifest_path_for(p2)));
}

TEST_CASE("no record has chosen equal to rejected", "[assembler]") {
  auto records = assemble_problem(test_problem(), test_full_pair(), test_edits(6),
                                  kAllEditedPairs, 3);
  for (const auto& r : records) REQUIRE(r.chosen != r.rejected);
}
