// Command-line front-end binding the pipeline stages into reproducible runs.
//
// Subcommands: sample, edit, assemble, train-toy, gradcheck, eval, analyze,
// pipeline. Exit codes: 0 success, 2 config error, 3 stage error.

#include <cstdio>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "rise/config.hpp"
#include "rise/mock_server.hpp"
#include "rise/pipeline.hpp"

namespace {

struct FlagOverrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::optional<int> k;
  std::optional<std::string> n_edited;
  std::optional<double> beta;
  std::optional<double> lambda;
  std::optional<std::string> endpoint_url;
  std::optional<std::string> model;
  std::optional<std::string> problems;
  std::optional<std::string> out_dir;
  std::optional<std::string> mock_fixtures;
  std::optional<std::string> error_mix;
  std::optional<std::string> run_id;
  std::optional<int> steps;
  std::optional<double> learning_rate;
  bool mock = false;
};

rise::RunConfig build_config(const FlagOverrides& f) {
  rise::RunConfig cfg;
  if (!f.config_path.empty()) cfg = rise::load_config_file(f.config_path, std::move(cfg));
  if (f.seed) {
    cfg.seed = *f.seed;
    cfg.loss.seed = *f.seed;
  }
  if (f.alpha) cfg.alpha = *f.alpha;
  if (f.k) cfg.k = *f.k;
  if (f.n_edited) cfg.n_edited = rise::parse_n_edited(*f.n_edited);
  if (f.beta) cfg.loss.beta = *f.beta;
  if (f.lambda) cfg.loss.nll_weight = *f.lambda;
  if (f.endpoint_url) cfg.endpoint.base_url = *f.endpoint_url;
  if (f.model) cfg.endpoint.model_name = *f.model;
  if (f.problems) cfg.problems_path = *f.problems;
  if (f.out_dir) cfg.out_dir = *f.out_dir;
  if (f.mock) cfg.mock = true;
  if (f.mock_fixtures) cfg.mock_fixtures_path = *f.mock_fixtures;
  if (f.error_mix) cfg.error_mix = rise::parse_error_mix(*f.error_mix);
  if (f.run_id) cfg.run_id = *f.run_id;
  if (f.steps) cfg.loss.steps = *f.steps;
  if (f.learning_rate) cfg.loss.learning_rate = *f.learning_rate;
  return cfg;
}

void print_error(const std::string& stage, const rise::Error& e) {
  rise::json err{{"error", rise::json{{"stage", stage}, {"type", e.kind()}, {"message", e.what()}}}};
  std::fprintf(stderr, "%s\n", err.dump().c_str());
}

struct MockHolder {
  std::unique_ptr<rise::MockServer> server;

  void maybe_start(rise::RunConfig& cfg) {
    if (!cfg.mock) return;
    server = std::make_unique<rise::MockServer>(
        rise::MockFixtures::load(cfg.mock_fixtures_path));
    server->start();
    cfg.endpoint.base_url = server->base_url();
    cfg.endpoint.api_key.reset();
    cfg.endpoint.retry_backoff_ms = 1;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-learning pipeline: error-injected self-editing, "
               "edit-distance filtered pair construction and a tabular trainer"};
  app.require_subcommand(1);

  FlagOverrides f;
  app.add_option("--config", f.config_path, "JSON config file (flags override file values)");
  app.add_option("--seed", f.seed, "Global seed");
  app.add_option("--alpha", f.alpha, "Edit-distance filter threshold");
  app.add_option("--k", f.k, "Sampling attempts per problem");
  app.add_option("--n-edited", f.n_edited, "Self-edited pairs per problem (integer or 'all')");
  app.add_option("--beta", f.beta, "Preference loss beta");
  app.add_option("--lambda", f.lambda, "NLL stabilizer weight");
  app.add_option("--endpoint-url", f.endpoint_url, "Chat-completion endpoint base URL");
  app.add_option("--model", f.model, "Model name sent to the endpoint");
  app.add_option("--problems", f.problems, "Problems file (JSON Lines)");
  app.add_option("--out-dir", f.out_dir, "Output directory");
  app.add_flag("--mock", f.mock, "Serve requests from the bundled deterministic mock");
  app.add_option("--mock-fixtures", f.mock_fixtures, "Mock fixtures JSON path");
  app.add_option("--error-mix", f.error_mix, "'random' or 'dominate:<ErrorType>'");
  app.add_option("--run-id", f.run_id, "Run identifier recorded in provenance");
  app.add_option("--steps", f.steps, "Trainer steps");
  app.add_option("--learning-rate", f.learning_rate, "Trainer learning rate");

  auto* cmd_sample = app.add_subcommand("sample", "Sample and grade K solutions per problem");
  auto* cmd_edit = app.add_subcommand("edit", "Inject errors into each step of chosen solutions");
  auto* cmd_assemble = app.add_subcommand("assemble", "Build the preference dataset");
  auto* cmd_pipeline = app.add_subcommand("pipeline", "sample -> edit -> assemble");
  auto* cmd_train = app.add_subcommand("train-toy", "Train the tabular model on a dataset");
  auto* cmd_gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  auto* cmd_eval = app.add_subcommand("eval", "Greedy-decoding evaluation");
  auto* cmd_analyze = app.add_subcommand("analyze", "Judge and tabulate first-error categories");

  CLI11_PARSE(app, argc, argv);

  std::string stage = app.get_subcommands().front()->get_name();
  rise::RunConfig cfg;
  MockHolder mock;
  try {
    cfg = build_config(f);
    bool needs_endpoint = cmd_sample->parsed() || cmd_edit->parsed() || cmd_pipeline->parsed() ||
                          cmd_eval->parsed() || cmd_analyze->parsed();
    rise::validate_config(cfg, needs_endpoint);
    std::filesystem::create_directories(cfg.out_dir);
    mock.maybe_start(cfg);
  } catch (const rise::Error& e) {
    print_error("config", e);
    return 2;
  } catch (const std::exception& e) {
    print_error("config", rise::Error("ConfigInvalid", e.what()));
    return 2;
  }

  try {
    std::optional<rise::ChatClient> client;
    auto ensure_client = [&]() -> rise::ChatClient& {
      if (!client) client.emplace(cfg.endpoint, cfg.audit_path.empty()
                                                    ? std::nullopt
                                                    : std::optional<std::string>(cfg.audit_path));
      return *client;
    };

    if (cmd_sample->parsed()) {
      auto r = rise::run_sample(cfg, ensure_client());
      std::printf("sample: %zu problems, %zu with mixed correctness -> %s\n", r.problems, r.mixed,
                  r.samples_path.string().c_str());
    } else if (cmd_edit->parsed()) {
      auto r = rise::run_edit(cfg, ensure_client());
      std::printf("edit: %zu problems edited, %zu/%zu pairs survive alpha=%g -> %s\n",
                  r.problems_edited, r.pairs_filtered, r.pairs_raw, cfg.alpha,
                  r.filtered_path.string().c_str());
    } else if (cmd_assemble->parsed()) {
      auto r = rise::run_assemble(cfg);
      std::printf("assemble: %zu records (%zu full, %zu edited) from %zu/%zu problems -> %s\n",
                  r.manifest.record_count, r.manifest.full_solution_count,
                  r.manifest.edited_step_count, r.manifest.problems_yielded,
                  r.manifest.problems_in, r.dataset_path.string().c_str());
    } else if (cmd_pipeline->parsed()) {
      auto r = rise::run_pipeline(cfg, ensure_client());
      std::printf("pipeline: %zu records (%zu full, %zu edited) from %zu/%zu problems -> %s\n",
                  r.assemble.manifest.record_count, r.assemble.manifest.full_solution_count,
                  r.assemble.manifest.edited_step_count, r.assemble.manifest.problems_yielded,
                  r.assemble.manifest.problems_in, r.assemble.dataset_path.string().c_str());
    } else if (cmd_train->parsed()) {
      auto r = rise::run_train_toy(cfg);
      std::printf("train-toy: %zu pairs, loss %.6f -> %.6f, mean margin %.6f -> %.6f\n", r.pairs,
                  r.initial_loss.total, r.final_loss.total, r.initial_loss.mean_margin,
                  r.final_loss.mean_margin);
    } else if (cmd_gradcheck->parsed()) {
      auto r = rise::run_gradcheck(cfg.seed);
      std::printf("gradcheck: max relative error %.3e over %d coordinates (%d seeds)\n",
                  r.max_rel_error, r.coords_checked, r.seeds);
      if (!(r.max_rel_error < 1e-4)) {
        print_error(stage, rise::Error("GradcheckFailed",
                                       "max relative error " + std::to_string(r.max_rel_error) +
                                           " is not below 1e-4"));
        return 3;
      }
    } else if (cmd_eval->parsed()) {
      auto r = rise::run_eval(cfg, ensure_client());
      std::printf("eval: %zu scored, %zu correct, accuracy %.4f (%zu unscored) -> %s\n",
                  r.report.total, r.report.correct, r.report.accuracy, r.report.unscored,
                  r.report_path.string().c_str());
    } else if (cmd_analyze->parsed()) {
      auto r = rise::run_analyze(cfg, ensure_client());
      std::printf("analyze: %zu judged, predefined share %.4f -> %s\n", r.judged,
                  rise::predefined_share(r.distribution), r.distribution_path.string().c_str());
    }
    return 0;
  } catch (const rise::Error& e) {
    print_error(stage, e);
    return 3;
  } catch (const std::exception& e) {
    print_error(stage, rise::Error("Internal", e.what()));
    return 3;
  }
}
