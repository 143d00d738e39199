// Command-line surface for the sparse Bayesian network library: train models
// from JSON configs, evaluate checkpoints, and reproduce the two synthetic
// benchmark studies (variable selection, predictive uncertainty).
//
// Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
// failure (message names the failing component).

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include "sbnn/experiments.hpp"

namespace {

// Per-subcommand option bundle. `seed` only overrides the config value when
// the flag was actually given, so configs stay authoritative by default.
struct Opts {
  std::string config_path;
  std::string out = ".";
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;

  const std::uint64_t* seed_override() const {
    return seed_opt->count() > 0 ? &seed : nullptr;
  }
};

void add_common(CLI::App* cmd, Opts& o, bool config_required) {
  auto* c = cmd->add_option("--config", o.config_path, "JSON experiment config");
  if (config_required) c->required();
  cmd->add_option("--out", o.out, "Output directory (created if absent)");
  o.seed_opt = cmd->add_option("--seed", o.seed, "Override the config seed");
}

nlohmann::json load_or_default(const Opts& o) {
  if (o.config_path.empty()) return nlohmann::json::object();
  return sbnn::cfg::load_file(o.config_path);
}

void prepare_out(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw sbnn::DataError("cannot create output directory '" + dir + "': " + ec.message());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse Bayesian neural networks with spike-and-slab posteriors"};
  app.require_subcommand(1);

  Opts train_o, eval_o, logreg_o, unc_o;

  CLI::App* train_cmd =
      app.add_subcommand("train", "Train a model and write checkpoint + ELBO history");
  add_common(train_cmd, train_o, /*config_required=*/true);

  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Score a checkpoint on a dataset (accuracy and density)");
  add_common(eval_cmd, eval_o, /*config_required=*/true);
  std::string checkpoint;
  std::size_t samples = 100;
  std::string mode = "full";
  eval_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint to load")->required();
  eval_cmd->add_option("--samples", samples, "Posterior samples for model averaging");
  eval_cmd->add_option("--mode", mode, "Prediction mode")
      ->check(CLI::IsMember({"full", "median", "lrt"}));

  CLI::App* logreg_cmd = app.add_subcommand(
      "logreg-sim", "Repeated variable-selection fits on the correlated logistic benchmark");
  add_common(logreg_cmd, logreg_o, /*config_required=*/false);
  std::size_t reps = 0;
  std::string logreg_method;
  auto* reps_opt = logreg_cmd->add_option("--reps", reps, "Number of repetitions");
  auto* lmethod_opt =
      logreg_cmd->add_option("--method", logreg_method, "Variational method")
          ->check(CLI::IsMember({"lbbnn-lrt", "lbbnn-flow", "dense-bnn"}));

  CLI::App* unc_cmd = app.add_subcommand(
      "uncertainty", "Cluster study: entropy grid, accuracy curve, OOD flags");
  add_common(unc_cmd, unc_o, /*config_required=*/false);
  std::size_t spc = 0;
  std::string unc_method;
  auto* spc_opt =
      unc_cmd->add_option("--samples-per-class", spc, "Training points per cluster");
  auto* umethod_opt =
      unc_cmd->add_option("--method", unc_method, "Method")
          ->check(CLI::IsMember({"lbbnn-lrt", "lbbnn-flow", "dense-bnn", "mc-dropout"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);  // prints usage or the parse error
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(train_cmd)) {
      prepare_out(train_o.out);
      sbnn::run_train(sbnn::cfg::load_file(train_o.config_path), train_o.out,
                      train_o.seed_override());
    } else if (app.got_subcommand(eval_cmd)) {
      prepare_out(eval_o.out);
      sbnn::run_eval(checkpoint, sbnn::cfg::load_file(eval_o.config_path), samples, mode,
                     eval_o.out, eval_o.seed_override());
    } else if (app.got_subcommand(logreg_cmd)) {
      prepare_out(logreg_o.out);
      nlohmann::json j = load_or_default(logreg_o);
      if (reps_opt->count() > 0) j["reps"] = reps;
      if (lmethod_opt->count() > 0) j["method"] = logreg_method;
      sbnn::run_logreg_sim(j, logreg_o.out, logreg_o.seed_override());
    } else if (app.got_subcommand(unc_cmd)) {
      prepare_out(unc_o.out);
      nlohmann::json j = load_or_default(unc_o);
      if (spc_opt->count() > 0) j["samples_per_class"] = spc;
      if (umethod_opt->count() > 0) j["method"] = unc_method;
      sbnn::run_uncertainty(j, unc_o.out, unc_o.seed_override());
    }
  } catch (const sbnn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const sbnn::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const sbnn::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const sbnn::ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
