// Command-line pipeline: simulate, tune, fit, nowcast, evaluate.
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical failure.

#include <nowcast/io.hpp>
#include <nowcast/simulate.hpp>
#include <nowcast/tuning.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <set>
#include <string>
#include <vector>

namespace {

using namespace nowcast;

void require_distinct(const std::vector<std::string>& paths) {
  std::set<std::string> seen;
  for (const auto& p : paths)
    if (!p.empty() && !seen.insert(p).second)
      throw ConfigError("paths must be distinct: \"" + p + "\" appears twice");
}

nlohmann::json load_json(const std::string& path, const char* what) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());  // an unreadable config is a config problem
  }
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError(std::string(what) + " is not valid JSON: " + path);
  return j;
}

SimSpec resolve_spec(const std::string& name) {
  if (name == "linear") return SimSpec::spec1();
  if (name == "nonlinear") return SimSpec::spec2();
  return SimSpec::from_json(load_json(name, "simulation spec"));
}

Dataset load_dataset(const std::string& path) { return read_dataset_csv(read_file(path)); }

int cmd_simulate(const std::string& spec_name, long n, std::uint64_t seed,
                 const std::string& out) {
  SimSpec spec = resolve_spec(spec_name);
  if (n < 1) throw ConfigError("--n must be >= 1");
  SimulatedData sim = simulate_dataset(spec, static_cast<Index>(n), seed);
  const std::string truth_path = out + ".truth.csv";
  require_distinct({out, truth_path});
  write_file_atomic(out, write_dataset_csv(sim.data));
  write_file_atomic(truth_path, write_truth_csv(sim.data.ids, sim.truth));
  nlohmann::json summary{{"records", sim.data.n()},
                         {"events_observed", sim.data.counts.sum()},
                         {"out", out},
                         {"truth", truth_path}};
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_fit(const std::string& config_path, const std::string& data_path,
            const std::string& model_path, const std::string& trace_path) {
  require_distinct({config_path, data_path, model_path, trace_path});
  RunConfig cfg = run_config_from_json(load_json(config_path, "run config"));
  Dataset data = load_dataset(data_path);
  assign_splits(data, cfg.split_fractions, cfg.split_seed);
  auto learner = make_learner(cfg.learner, cfg.learner_config);
  FitResult fit = run_em(data, *learner, cfg.em);
  write_file_atomic(model_path, write_model_json(*learner));
  if (!trace_path.empty()) write_file_atomic(trace_path, trace_to_jsonl(fit.trace));
  const EmTraceRecord& best = fit.trace[static_cast<size_t>(fit.best_iteration - 1)];
  nlohmann::json summary{{"learner", fit.learner},
                         {"iterations", fit.trace.size()},
                         {"best_iteration", fit.best_iteration},
                         {"val2_ll", best.val2_ll},
                         {"observed_ll", best.data_ll},
                         {"model", model_path}};
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_tune(const std::string& config_path, const std::string& grid_path, int budget,
             const std::string& data_path, std::uint64_t seed, const std::string& out,
             const std::string& best_path) {
  require_distinct({config_path, grid_path, data_path, out, best_path});
  RunConfig cfg = run_config_from_json(load_json(config_path, "run config"));
  nlohmann::json gj = load_json(grid_path, "grid file");
  check_keys(gj, {"schema_version", "grid"}, "grid file");
  if (!gj.contains("schema_version") || gj.at("schema_version") != 1)
    throw ConfigError("grid file: unsupported schema_version");
  if (!gj.contains("grid")) throw ConfigError("grid file: missing \"grid\"");
  Grid grid = grid_from_json(gj.at("grid"));

  Dataset data = load_dataset(data_path);
  assign_splits(data, cfg.split_fractions, cfg.split_seed);
  TuneResult result =
      random_grid_search(data, grid, budget, seed, cfg.learner, cfg.learner_config, cfg.em);
  if (!out.empty()) write_file_atomic(out, score_table_csv(result));
  if (!best_path.empty()) {
    RunConfig best = cfg;
    best.learner_config = result.best_config;
    write_file_atomic(best_path, best.to_json().dump(2) + "\n");
  }
  nlohmann::json summary{{"configurations", result.table.size()},
                         {"best_index", result.best_index},
                         {"val2_ll", result.best_score},
                         {"best", result.best_assignment}};
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_nowcast(const std::string& model_path, const std::string& data_path,
                const std::string& out) {
  require_distinct({model_path, data_path, out});
  auto learner = read_model_json(read_file(model_path));
  Dataset data = load_dataset(data_path);
  ParameterEstimates est = learner->predict(data);
  est.validate();
  NowcastResult nc = nowcast_unreported(est, data);
  write_file_atomic(out, write_nowcast_csv(data, nc));
  nlohmann::json summary{{"cells", nc.cells.size()},
                         {"total_unreported", nc.total_unreported.sum()},
                         {"out", out}};
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& data_path,
                 const std::string& truth_path) {
  require_distinct({model_path, data_path, truth_path});
  auto learner = read_model_json(read_file(model_path));
  Dataset data = load_dataset(data_path);
  ParameterEstimates est = learner->predict(data);
  est.validate();
  nlohmann::json metrics{{"observed_ll", observed_ll(est, data).value}};
  bool complete = data.n() > 0;
  for (Index i = 0; i < data.n(); ++i) complete = complete && data.tau_i(i) == data.d();
  if (complete) metrics["complete_ll"] = complete_ll(est, data.counts).value;
  if (!truth_path.empty()) {
    TruthTable truth = read_truth_csv(read_file(truth_path));
    if (truth.ids != data.ids)
      throw DataError("truth file records do not match the dataset");
    metrics["ase_lambda"] = ase_lambda(est, truth.est);
    metrics["ase_p"] = ase_p(est, truth.est);
  }
  std::cout << metrics.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nowcasting event counts under reporting delay"};
  app.require_subcommand(1);

  auto* sim = app.add_subcommand("simulate", "draw a synthetic dataset");
  std::string sim_spec = "linear", sim_out;
  long sim_n = 0;
  std::uint64_t sim_seed = 0;
  sim->add_option("--spec", sim_spec, "linear, nonlinear, or a spec JSON path");
  sim->add_option("--n", sim_n, "number of records")->required();
  sim->add_option("--seed", sim_seed, "random seed");
  sim->add_option("--out", sim_out, "output CSV path")->required();

  auto* tune = app.add_subcommand("tune", "random grid search over hyperparameters");
  std::string tune_config, tune_grid, tune_data, tune_out, tune_best;
  int tune_budget = 0;
  std::uint64_t tune_seed = 0;
  tune->add_option("--config", tune_config, "run config JSON")->required();
  tune->add_option("--grid", tune_grid, "grid JSON")->required();
  tune->add_option("--budget", tune_budget, "configurations to try")->required();
  tune->add_option("--data", tune_data, "dataset CSV")->required();
  tune->add_option("--seed", tune_seed, "sampling seed");
  tune->add_option("--out", tune_out, "score table CSV path");
  tune->add_option("--out-config", tune_best, "write the winning run config here");

  auto* fit = app.add_subcommand("fit", "run the EM algorithm");
  std::string fit_config, fit_data, fit_model, fit_trace;
  fit->add_option("--config", fit_config, "run config JSON")->required();
  fit->add_option("--data", fit_data, "dataset CSV")->required();
  fit->add_option("--out-model", fit_model, "model JSON path")->required();
  fit->add_option("--trace", fit_trace, "line-delimited JSON trace path");

  auto* now = app.add_subcommand("nowcast", "expected counts for unobserved cells");
  std::string now_model, now_data, now_out;
  now->add_option("--model", now_model, "model JSON")->required();
  now->add_option("--data", now_data, "dataset CSV")->required();
  now->add_option("--out", now_out, "nowcast CSV path")->required();

  auto* eval = app.add_subcommand("evaluate", "likelihood and error metrics");
  std::string eval_model, eval_data, eval_truth;
  eval->add_option("--model", eval_model, "model JSON")->required();
  eval->add_option("--data", eval_data, "dataset CSV")->required();
  eval->add_option("--truth", eval_truth, "truth parameter CSV");

  try {
    app.parse(argc, argv);
    if (sim->parsed()) return cmd_simulate(sim_spec, sim_n, sim_seed, sim_out);
    if (tune->parsed())
      return cmd_tune(tune_config, tune_grid, tune_budget, tune_data, tune_seed, tune_out,
                      tune_best);
    if (fit->parsed()) return cmd_fit(fit_config, fit_data, fit_model, fit_trace);
    if (now->parsed()) return cmd_nowcast(now_model, now_data, now_out);
    if (eval->parsed()) return cmd_evaluate(eval_model, eval_data, eval_truth);
    return 2;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
