#pragma once

// Dataset assembly: combine each problem's full-solution pair with N randomly
// chosen surviving edited pairs, and read/write the portable JSONL dataset
// with a checksummed sidecar manifest.

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rise/core.hpp"
#include "rise/editor.hpp"
#include "rise/sampler.hpp"
#include "rise/util.hpp"

namespace rise {

enum class PairKind { FullSolution, EditedStep };

inline std::string to_string(PairKind k) {
  return k == PairKind::FullSolution ? "FullSolution" : "EditedStep";
}

inline PairKind pair_kind_from(std::string_view s) {
  if (s == "FullSolution") return PairKind::FullSolution;
  if (s == "EditedStep") return PairKind::EditedStep;
  throw Error("SchemaViolation", "unknown pair kind '" + std::string(s) + "'");
}

// Sentinel for the "use every surviving edited pair" mode.
inline constexpr int kAllEditedPairs = std::numeric_limits<int>::max();

struct Provenance {
  std::string run_id;
  std::uint64_t global_seed = 0;

  json to_json() const { return json{{"run_id", run_id}, {"global_seed", global_seed}}; }
};

// One training row. For EditedStep rows the prompt is the problem statement
// concatenated with the correct prefix of previous steps.
struct PreferenceRecord {
  std::string problem_id;
  PairKind kind = PairKind::FullSolution;
  std::string prompt;
  std::string chosen;
  std::string rejected;
  std::optional<int> step_index;
  std::optional<EditDirective> directive;
  Provenance provenance;

  json to_json() const {
    json j{{"problem_id", problem_id},
           {"kind", to_string(kind)},
           {"prompt", prompt},
           {"chosen", chosen},
           {"rejected", rejected}};
    if (step_index) j["step_index"] = *step_index;
    if (directive) j["directive"] = directive->to_json();
    j["provenance"] = provenance.to_json();
    return j;
  }

  static PreferenceRecord from_json(const json& j) {
    PreferenceRecord r;
    r.problem_id = j.at("problem_id").get<std::string>();
    r.kind = pair_kind_from(j.at("kind").get<std::string>());
    r.prompt = j.at("prompt").get<std::string>();
    r.chosen = j.at("chosen").get<std::string>();
    r.rejected = j.at("rejected").get<std::string>();
    if (j.contains("step_index")) r.step_index = j.at("step_index").get<int>();
    if (j.contains("directive")) r.directive = EditDirective::from_json(j.at("directive"));
    if (j.contains("provenance")) {
      r.provenance.run_id = j["provenance"].value("run_id", "");
      r.provenance.global_seed = j["provenance"].value("global_seed", 0ULL);
    }
    if (r.chosen == r.rejected)
      throw Error("SchemaViolation", "record for " + r.problem_id + " has chosen == rejected");
    if (r.prompt.empty())
      throw Error("SchemaViolation", "record for " + r.problem_id + " has empty prompt");
    if (r.kind == PairKind::EditedStep && !r.step_index)
      throw Error("SchemaViolation", "edited-step record for " + r.problem_id + " lacks step_index");
    return r;
  }
};

struct DatasetManifest {
  std::size_t record_count = 0;
  std::size_t full_solution_count = 0;
  std::size_t edited_step_count = 0;
  std::size_t problems_in = 0;
  std::size_t problems_yielded = 0;
  double alpha = 0.0;
  int k = 0;
  int n_edited = 0;  // kAllEditedPairs encodes "all"
  std::uint64_t global_seed = 0;
  std::string run_id;
  std::string checksum;

  json to_json() const {
    return json{{"record_count", record_count},
                {"full_solution_count", full_solution_count},
                {"edited_step_count", edited_step_count},
                {"problems_in", problems_in},
                {"problems_yielded", problems_yielded},
                {"alpha", alpha},
                {"k", k},
                {"n_edited", n_edited == kAllEditedPairs ? json("all") : json(n_edited)},
                {"global_seed", global_seed},
                {"run_id", run_id},
                {"checksum", checksum}};
  }

  static DatasetManifest from_json(const json& j) {
    DatasetManifest m;
    m.record_count = j.at("record_count").get<std::size_t>();
    m.full_solution_count = j.at("full_solution_count").get<std::size_t>();
    m.edited_step_count = j.at("edited_step_count").get<std::size_t>();
    m.problems_in = j.at("problems_in").get<std::size_t>();
    m.problems_yielded = j.at("problems_yielded").get<std::size_t>();
    m.alpha = j.at("alpha").get<double>();
    m.k = j.at("k").get<int>();
    m.n_edited = j.at("n_edited").is_string() ? kAllEditedPairs : j.at("n_edited").get<int>();
    m.global_seed = j.at("global_seed").get<std::uint64_t>();
    m.run_id = j.value("run_id", "");
    m.checksum = j.at("checksum").get<std::string>();
    return m;
  }
};

// Plain concatenation of the problem and the correct prefix of previous
// steps, separated by a blank line; the prefix is empty for step 1.
inline std::string edited_step_prompt(const Problem& problem, const std::string& prefix) {
  std::string out = problem.statement;
  out += "\n\n";
  out += prefix;
  return out;
}

// Emits this problem's training rows: nothing without a full pair, otherwise
// one FullSolution row plus min(n_edited, |edits|) EditedStep rows drawn
// uniformly without replacement; drawn rows keep their original step order.
inline std::vector<PreferenceRecord> assemble_problem(const Problem& problem,
                                                      const std::optional<FullPair>& fp,
                                                      const std::vector<EditedPair>& edits,
                                                      int n_edited, std::uint64_t seed,
                                                      const Provenance& prov = {}) {
  if (n_edited < 0) throw Error("ConfigInvalid", "n_edited must be >= 0");
  std::vector<PreferenceRecord> out;
  if (!fp) return out;

  PreferenceRecord full;
  full.problem_id = problem.id;
  full.kind = PairKind::FullSolution;
  full.prompt = problem.statement;
  full.chosen = fp->chosen.raw;
  full.rejected = fp->rejected.raw;
  full.provenance = prov;
  out.push_back(std::move(full));

  std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(n_edited), edits.size());
  if (take > 0) {
    std::vector<std::size_t> idx(edits.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    DetRng rng(seed);
    rng.shuffle(idx);
    idx.resize(take);
    std::sort(idx.begin(), idx.end());
    for (std::size_t i : idx) {
      const EditedPair& e = edits[i];
      PreferenceRecord r;
      r.problem_id = problem.id;
      r.kind = PairKind::EditedStep;
      r.prompt = edited_step_prompt(problem, e.prefix);
      r.chosen = e.chosen_step;
      r.rejected = e.rejected_step;
      r.step_index = e.step_index;
      r.directive = e.directive;
      r.provenance = prov;
      out.push_back(std::move(r));
    }
  }
  return out;
}

struct AssembleInputs {
  std::vector<Problem> problems;                       // input order preserved
  std::map<std::string, SampleSet> samples;            // keyed by problem_id
  std::map<std::string, std::vector<EditedPair>> edits;  // surviving pairs
};

struct AssembleConfig {
  int n_edited = 1;
  double alpha = 0.05;
  int k = 5;
  std::uint64_t global_seed = 0;
  std::string run_id;
};

struct Dataset {
  std::vector<PreferenceRecord> records;
  DatasetManifest manifest;
};

// Algorithm-level assembly over the whole corpus, in input order.
inline Dataset assemble_all(const AssembleInputs& in, const AssembleConfig& cfg) {
  for (const auto& [pid, _] : in.edits) {
    if (!in.samples.count(pid))
      throw Error("KeyMismatch", "edits reference unknown problem '" + pid + "'");
  }
  Dataset out;
  Provenance prov{cfg.run_id, cfg.global_seed};
  out.manifest.problems_in = in.problems.size();
  for (const auto& problem : in.problems) {
    auto sit = in.samples.find(problem.id);
    if (sit == in.samples.end()) continue;
    auto fp = select_full_pair(sit->second, derive_seed(cfg.global_seed, problem.id, "full_pair"));
    static const std::vector<EditedPair> kNone;
    const auto eit = in.edits.find(problem.id);
    const std::vector<EditedPair>& edits = eit == in.edits.end() ? kNone : eit->second;
    auto records = assemble_problem(problem, fp, edits, cfg.n_edited,
                                    derive_seed(cfg.global_seed, problem.id, "assemble"), prov);
    if (!records.empty()) ++out.manifest.problems_yielded;
    for (auto& r : records) out.records.push_back(std::move(r));
  }
  out.manifest.record_count = out.records.size();
  for (const auto& r : out.records) {
    if (r.kind == PairKind::FullSolution) ++out.manifest.full_solution_count;
    else ++out.manifest.edited_step_count;
  }
  out.manifest.alpha = cfg.alpha;
  out.manifest.k = cfg.k;
  out.manifest.n_edited = cfg.n_edited;
  out.manifest.global_seed = cfg.global_seed;
  out.manifest.run_id = cfg.run_id;
  return out;
}

// --- dataset file IO ----------------------------------------------------------

inline std::string serialize_records(const std::vector<PreferenceRecord>& records) {
  std::string buf;
  for (const auto& r : records) {
    buf += r.to_json().dump();
    buf += '\n';
  }
  return buf;
}

inline std::filesystem::path manifest_path_for(const std::filesystem::path& dataset_path) {
  std::filesystem::path p = dataset_path;
  p += ".manifest.json";
  return p;
}

// Writes the JSONL dataset plus its sidecar manifest; the checksum covers the
// canonical serialized bytes.
inline DatasetManifest write_dataset(const std::vector<PreferenceRecord>& records,
                                     const std::filesystem::path& path,
                                     DatasetManifest manifest = {}) {
  std::string buf = serialize_records(records);
  manifest.record_count = records.size();
  manifest.full_solution_count = 0;
  manifest.edited_step_count = 0;
  for (const auto& r : records) {
    if (r.kind == PairKind::FullSolution) ++manifest.full_solution_count;
    else ++manifest.edited_step_count;
  }
  manifest.checksum = to_hex(fnv1a64(buf));
  write_file(path, buf);
  write_file(manifest_path_for(path), manifest.to_json().dump(2) + "\n");
  return manifest;
}

// Reads the dataset back; when the sidecar manifest exists, the checksum is
// recomputed from the file bytes and must match.
inline std::vector<PreferenceRecord> read_dataset(const std::filesystem::path& path) {
  std::string buf = read_file(path);
  auto mpath = manifest_path_for(path);
  if (std::filesystem::exists(mpath)) {
    DatasetManifest m = DatasetManifest::from_json(json::parse(read_file(mpath)));
    std::string actual = to_hex(fnv1a64(buf));
    if (actual != m.checksum)
      throw Error("ChecksumMismatch",
                  path.string() + ": manifest says " + m.checksum + ", file hashes to " + actual);
  }
  std::vector<PreferenceRecord> out;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos < buf.size()) {
    std::size_t nl = buf.find('\n', pos);
    if (nl == std::string::npos) nl = buf.size();
    ++lineno;
    std::string_view line(buf.data() + pos, nl - pos);
    pos = nl + 1;
    if (trim_view(line).empty()) continue;
    try {
      out.push_back(PreferenceRecord::from_json(json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error("SchemaViolation",
                  path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      if (e.kind() == "SchemaViolation")
        throw Error("SchemaViolation", path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      throw;
    }
  }
  return out;
}

}  // namespace rise
