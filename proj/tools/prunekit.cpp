// prunekit CLI: score filters, derive selections, build sparsity reports, and
// run the desk-scale soft-pruning experiment.
//
// Exit codes: 0 success, 1 usage error, 2 data error. stdout carries only the
// machine-readable payload; diagnostics go to stderr.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "prunekit/accounting.hpp"
#include "prunekit/container.hpp"
#include "prunekit/criteria.hpp"
#include "prunekit/sfp.hpp"
#include "prunekit/toytrain.hpp"

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

prunekit::Criterion parse_criterion(const std::string& text) {
  try {
    return prunekit::criterion_from_string(text);
  } catch (const prunekit::Error& e) {
    throw UsageError(e.what());
  }
}

void check_theta(double theta) {
  if (!(theta >= 0.0 && theta < 1.0)) throw UsageError("theta must be in [0,1)");
}

prunekit::PrunablePolicy make_policy(const std::vector<std::string>& includes,
                                     const std::vector<std::string>& excludes) {
  prunekit::PrunablePolicy policy;
  if (!includes.empty()) policy.include_patterns = includes;
  policy.exclude_patterns = excludes;
  return policy;
}

int cmd_score(const std::string& weights_path, const std::string& criterion_name,
              const std::string& layer) {
  const auto criterion = parse_criterion(criterion_name);
  const auto container = prunekit::read_container(weights_path);
  if (!layer.empty()) {
    const auto bank = prunekit::as_filter_bank(container.at(layer), layer);
    std::cout << prunekit::to_json(prunekit::compute_scores(bank, criterion)).dump() << '\n';
    return 0;
  }
  for (const auto& [name, tensor] : container.layers()) {
    if (tensor.shape.size() != 4) continue;
    const auto bank = prunekit::as_filter_bank(tensor, name);
    std::cout << prunekit::to_json(prunekit::compute_scores(bank, criterion)).dump() << '\n';
  }
  return 0;
}

int cmd_select(const std::string& weights_path, const std::string& criterion_name, double theta,
               const std::vector<std::string>& includes, const std::vector<std::string>& excludes) {
  const auto criterion = parse_criterion(criterion_name);
  check_theta(theta);
  const auto container = prunekit::read_container(weights_path);
  const auto policy = make_policy(includes, excludes);

  bool matched = false;
  for (const auto& [name, tensor] : container.layers()) {
    if (tensor.shape.size() != 4 || !policy.matches(name)) continue;
    matched = true;
    const auto bank = prunekit::as_filter_bank(tensor, name);
    const auto selection = prunekit::select(prunekit::compute_scores(bank, criterion), theta);
    std::cout << prunekit::to_json(selection).dump() << '\n';
  }
  if (!matched)
    prunekit::raise(prunekit::errc::empty_policy_match, "no layer matches the prunable policy");
  return 0;
}

int cmd_report(const std::string& weights_path, const std::string& spec_path,
               const std::string& criterion_name, double theta,
               const std::vector<std::string>& includes, const std::vector<std::string>& excludes) {
  const auto criterion = parse_criterion(criterion_name);
  check_theta(theta);
  const auto container = prunekit::read_container(weights_path);
  const auto policy = make_policy(includes, excludes);
  const auto spec = prunekit::apply_policy(prunekit::load_model_spec(spec_path), policy);

  std::map<std::string, prunekit::Selection> selections;
  for (const auto& layer : spec.layers) {
    if (!layer.prunable) continue;
    const prunekit::Tensor& tensor = container.at(layer.name);
    if (tensor.shape != layer.shape)
      prunekit::raise(prunekit::errc::shape_mismatch,
                      "layer \"" + layer.name + "\" differs between spec and weights");
    const auto bank = prunekit::as_filter_bank(tensor, layer.name);
    selections.emplace(layer.name,
                       prunekit::select(prunekit::compute_scores(bank, criterion), theta));
  }
  const auto report = prunekit::build_report(spec, selections, criterion, theta, policy);
  std::cout << prunekit::to_json(report).dump() << '\n';
  std::cout << prunekit::render_table(report);
  return 0;
}

int cmd_sfp_run(double theta, const std::string& criterion_name, std::uint64_t seed,
                const std::string& out_dir, const std::vector<std::string>& includes,
                const std::vector<std::string>& excludes) {
  check_theta(theta);
  prunekit::PruneConfig config;
  config.theta = theta;
  config.criterion = parse_criterion(criterion_name);
  config.prunable_layers = make_policy(
      includes.empty() ? std::vector<std::string>{"backbone.*"} : includes,
      excludes.empty() ? std::vector<std::string>{"head.*"} : excludes);
  config.schedule = prunekit::SfpSchedule::toy_default();

  const prunekit::SyntheticDataset dataset{seed};
  const prunekit::SgdConfig sgd;
  const auto result = prunekit::run_sfp_experiment(config, dataset, sgd, seed);

  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  const std::string run = "run";
  {
    std::ofstream out(dir / (run + ".result.json"));
    if (!out) prunekit::raise(prunekit::errc::io_error, "cannot write into \"" + out_dir + "\"");
    out << prunekit::to_json(result).dump(2) << '\n';
  }
  {
    std::ofstream out(dir / (run + ".history.csv"));
    out << prunekit::history_csv(result);
  }
  {
    std::ofstream out(dir / (run + ".report.json"));
    out << prunekit::to_json(result.final_report).dump(2) << '\n';
  }
  prunekit::save_checkpoint(result.final_state, result.final_weights, dir, run);

  nlohmann::json summary{{"out", out_dir},
                         {"epochs", result.history.size()},
                         {"final_test_accuracy", result.history.back().test_accuracy},
                         {"real_sparsity", result.final_report.real_sparsity},
                         {"recovery_events", prunekit::recovery_event_count(result.history)}};
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_inspect(const std::string& weights_path) {
  const auto container = prunekit::read_container(weights_path);
  auto layers = nlohmann::json::array();
  for (const auto& [name, tensor] : container.layers())
    layers.push_back({{"name", name},
                      {"shape", tensor.shape},
                      {"dtype", "f32"},
                      {"elements", tensor.elements()}});
  const nlohmann::json j{{"metadata", container.metadata}, {"layers", std::move(layers)}};
  std::cout << j.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"structured filter pruning toolkit"};
  app.require_subcommand(1);

  std::string weights_path;
  std::string spec_path;
  std::string criterion_name = "fpgm";
  std::string layer;
  std::string out_dir;
  double theta = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> includes;
  std::vector<std::string> excludes;

  auto* score = app.add_subcommand("score", "per-filter importance scores as JSON lines");
  score->add_option("--weights", weights_path, "weight container path")->required();
  score->add_option("--criterion", criterion_name, "l1 or fpgm")->required();
  score->add_option("--layer", layer, "score a single layer instead of every 4-D layer");

  auto* select = app.add_subcommand("select", "keep/prune index sets per prunable layer");
  select->add_option("--weights", weights_path, "weight container path")->required();
  select->add_option("--criterion", criterion_name, "l1 or fpgm")->required();
  select->add_option("--theta", theta, "pruning rate in [0,1)")->required();
  select->add_option("--include", includes, "glob of prunable layer names (repeatable)");
  select->add_option("--exclude", excludes, "glob of excluded layer names (repeatable)");

  auto* report = app.add_subcommand("report", "parameter and sparsity accounting");
  report->add_option("--weights", weights_path, "weight container path")->required();
  report->add_option("--spec", spec_path, "model spec JSON path")->required();
  report->add_option("--criterion", criterion_name, "l1 or fpgm")->required();
  report->add_option("--theta", theta, "pruning rate in [0,1)")->required();
  report->add_option("--include", includes, "glob of prunable layer names (repeatable)");
  report->add_option("--exclude", excludes, "glob of excluded layer names (repeatable)");

  auto* sfp_run = app.add_subcommand("sfp-run", "soft filter pruning experiment on the toy task");
  sfp_run->add_option("--theta", theta, "pruning rate in [0,1)")->required();
  sfp_run->add_option("--criterion", criterion_name, "l1 or fpgm")->required();
  sfp_run->add_option("--seed", seed, "seed for data, init, and shuffling");
  sfp_run->add_option("--out", out_dir, "output directory")->required();
  sfp_run->add_option("--include", includes, "glob of prunable layer names (repeatable)");
  sfp_run->add_option("--exclude", excludes, "glob of excluded layer names (repeatable)");

  auto* inspect = app.add_subcommand("inspect", "container metadata and layer table");
  inspect->add_option("--weights", weights_path, "weight container path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (score->parsed()) return cmd_score(weights_path, criterion_name, layer);
    if (select->parsed()) return cmd_select(weights_path, criterion_name, theta, includes, excludes);
    if (report->parsed())
      return cmd_report(weights_path, spec_path, criterion_name, theta, includes, excludes);
    if (sfp_run->parsed())
      return cmd_sfp_run(theta, criterion_name, seed, out_dir, includes, excludes);
    if (inspect->parsed()) return cmd_inspect(weights_path);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const prunekit::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
