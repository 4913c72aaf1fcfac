// confex: command-line driver for the counterfactual pipeline.
#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>

#include "confex/experiment.hpp"

namespace {

// Only the built-in branch and bound backend exists; the variable is read so a
// misconfigured external backend is reported instead of silently ignored.
constexpr const char* kBackendLibEnv = "CONFEX_BACKEND_LIB";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"confex: conformal counterfactual explanations via mixed-integer programming"};
  app.require_subcommand(1);

  std::string config_path;
  confex::Overrides ov;
  std::string out_dir;
  int jobs = 0;
  double time_limit = 0.0;
  std::uint64_t seed = 0;
  std::string backend;
  app.add_option("--config", config_path, "Experiment config (INI)")->check(CLI::ExistingFile);
  auto* out_opt = app.add_option("--out", out_dir, "Output directory");
  auto* jobs_opt = app.add_option("--jobs", jobs, "Worker threads for explain")->check(CLI::PositiveNumber);
  auto* tl_opt = app.add_option("--time-limit-s", time_limit, "Per-factual solver time limit")->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--seed-override", seed, "Replace every seed in the config");
  auto* be_opt = app.add_option("--backend", backend, "Solver backend name");

  auto* synth = app.add_subcommand("synth", "Write the synthetic 2D dataset as CSV");
  std::string csv_out = "synthetic.csv";
  synth->add_option("--csv", csv_out, "CSV output path");
  auto* train = app.add_subcommand("train", "Train the classifier");
  auto* calibrate = app.add_subcommand("calibrate", "Score the calibration split");
  auto* build_tree = app.add_subcommand("build-tree", "Build quantile forests for every (alpha, bandwidth)");
  auto* explain = app.add_subcommand("explain", "Generate counterfactuals for the selected factuals");
  auto* evaluate = app.add_subcommand("evaluate", "Compute metrics over explain results");
  auto* coverage = app.add_subcommand("coverage", "Compute coverage gaps for every (alpha, bandwidth)");
  auto* export_lp = app.add_subcommand("export-lp", "Write the LP file of one factual's model");
  std::string lp_method = "mindist";
  std::size_t lp_index = 0;
  double lp_alpha = 0.05;
  double lp_bandwidth = 0.1;
  std::string lp_out = "model.lp";
  export_lp->add_option("--method", lp_method, "mindist, naive, lcp or tree");
  export_lp->add_option("--factual", lp_index, "Index into the selected factuals");
  export_lp->add_option("--alpha", lp_alpha, "Miscoverage level");
  export_lp->add_option("--bandwidth", lp_bandwidth, "Absolute bandwidth for lcp and tree");
  export_lp->add_option("--lp", lp_out, "LP output path");

  CLI11_PARSE(app, argc, argv);

  try {
    confex::ExperimentConfig cfg = config_path.empty() ? confex::ExperimentConfig{} : confex::load_config(config_path);
    if (*out_opt) ov.out_dir = out_dir;
    if (*jobs_opt) ov.jobs = jobs;
    if (*tl_opt) ov.time_limit_s = time_limit;
    if (*seed_opt) ov.seed = seed;
    if (*be_opt) ov.backend = backend;
    confex::apply_overrides(cfg, ov);
    if (const char* lib = std::getenv(kBackendLibEnv); lib && *lib && cfg.backend != "bnb") {
      throw confex::Error(std::string("external backend libraries are not supported by this build (") + kBackendLibEnv +
                          "=" + lib + ")");
    }

    std::string summary;
    if (*synth) {
      summary = confex::cmd_synth(cfg, csv_out);
    } else if (*train) {
      summary = confex::cmd_train(cfg);
    } else if (*calibrate) {
      summary = confex::cmd_calibrate(cfg);
    } else if (*build_tree) {
      summary = confex::cmd_build_tree(cfg);
    } else if (*explain) {
      summary = confex::cmd_explain(cfg);
    } else if (*evaluate) {
      summary = confex::cmd_evaluate(cfg);
    } else if (*coverage) {
      summary = confex::cmd_coverage(cfg);
    } else if (*export_lp) {
      summary = confex::cmd_export_lp(cfg, confex::method_from_string(lp_method), lp_index, lp_alpha, lp_bandwidth,
                                      lp_out);
    }
    std::cout << summary << '\n';
    return 0;
  } catch (const confex::ArtifactError& e) {
    std::cerr << "confex: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "confex: " << e.what() << '\n';
    return 1;
  }
}
