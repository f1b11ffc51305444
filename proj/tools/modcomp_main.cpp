#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "modcomp/pipeline.hpp"

namespace {

// Exit codes: 0 ok, 2 config, 3 data, 4 missing artifact, 5 malformed input.
int dispatch(const std::string& command, const std::string& config_path, int jobs,
             const std::vector<std::uint64_t>& seed_override, const std::string& results_path) {
  modcomp::RunConfig cfg =
      config_path.empty() ? modcomp::default_config() : modcomp::load_config(config_path);
  if (const char* env_out = std::getenv("MODCOMP_OUT"); env_out && *env_out)
    cfg.output_dir = env_out;
  if (!seed_override.empty()) cfg.grid.seeds = seed_override;
  cfg.validate();

  if (command == "gen-data") {
    modcomp::run_gen_data(cfg, std::cout);
  } else if (command == "train") {
    modcomp::run_train(cfg, std::cout, jobs);
  } else if (command == "bench") {
    modcomp::run_bench(cfg, std::cout, jobs);
  } else if (command == "metareg") {
    modcomp::run_metareg(cfg, std::cout, results_path);
  } else if (command == "report") {
    modcomp::run_report(cfg, std::cout, results_path);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"modcomp: zero-shot adapter composition benchmark"};
  app.require_subcommand(1);

  std::string config_path;
  std::string results_path;
  int jobs = 1;
  std::vector<std::uint64_t> seed_override;

  for (const char* name : {"gen-data", "train", "bench", "metareg", "report"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "config file (JSON); defaults are embedded");
    sub->add_option("--jobs", jobs, "parallel workers")->check(CLI::PositiveNumber);
    sub->add_option("--seed-override", seed_override, "replace the grid seed list");
    if (std::string(name) == "metareg" || std::string(name) == "report")
      sub->add_option("--results", results_path, "results.csv path (default: <output_dir>/results.csv)");
  }

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    return dispatch(command, config_path, jobs, seed_override, results_path);
  } catch (const modcomp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const modcomp::ParseError& e) {
    std::cerr << "malformed input: " << e.what();
    if (e.line > 0) std::cerr << " (line " << e.line << ")";
    std::cerr << "\n";
    return 5;
  } catch (const modcomp::SetupError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 4;
  } catch (const modcomp::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
