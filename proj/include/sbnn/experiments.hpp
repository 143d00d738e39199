#pragma once

// Experiment drivers behind the CLI: strict JSON config parsing, the three
// benchmark protocols (classification training, variable-selection
// simulation, cluster uncertainty study), CSV artifact writers, and a
// manifest that fingerprints every output for exact reruns.

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "sbnn/data.hpp"
#include "sbnn/metrics.hpp"
#include "sbnn/model.hpp"
#include "sbnn/trainer.hpp"

namespace sbnn {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace cfg {

using nlohmann::json;

inline const json& as_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  return j;
}

inline void reject_unknown(const json& obj, const std::string& where,
                           std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) known = true;
    if (!known) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

inline const json& need(const json& obj, const std::string& where, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(where + ": missing required key '" + key + "'");
  return *it;
}

inline double get_num(const json& obj, const std::string& where, const char* key,
                      double fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_number()) throw ConfigError(where + "." + key + ": expected a number");
  return it->get<double>();
}

inline std::size_t get_count(const json& obj, const std::string& where, const char* key,
                             std::size_t fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_number_unsigned() || it->get<double>() != std::floor(it->get<double>()))
    throw ConfigError(where + "." + key + ": expected a non-negative integer");
  return it->get<std::size_t>();
}

inline std::string get_str(const json& obj, const std::string& where, const char* key,
                           const std::string& fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_string()) throw ConfigError(where + "." + key + ": expected a string");
  return it->get<std::string>();
}

inline json load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open '" + path + "'");
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config: invalid JSON in '" + path + "': " + e.what());
  }
  return j;
}

}  // namespace cfg

// ---------------------------------------------------------------------------
// Output plumbing: CSV artifacts and the run manifest.
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("manifest: cannot hash missing output '" + path + "'");
  std::uint64_t h = 14695981039346656037ull;
  char c;
  while (is.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

// Records what a run produced: the effective config, the seed, and a content
// hash per artifact. Deliberately timestamp-free so reruns are byte-identical.
inline void write_manifest(const std::string& out_dir, const std::string& command,
                           std::uint64_t seed, const nlohmann::json& effective_config,
                           const std::vector<std::string>& outputs) {
  nlohmann::json m;
  m["command"] = command;
  m["seed"] = seed;
  m["config"] = effective_config;
  nlohmann::json hashes = nlohmann::json::object();
  for (const std::string& name : outputs)
    hashes[name] = "fnv1a64:" + detail::hex64(detail::fnv1a64_file(out_dir + "/" + name));
  m["outputs"] = hashes;
  std::ofstream os(out_dir + "/manifest.json", std::ios::binary);
  if (!os) throw DataError("manifest: cannot write to '" + out_dir + "'");
  os << m.dump(2) << "\n";
}

inline void write_history_csv(const std::string& path, const std::vector<ElboReport>& history) {
  std::vector<std::vector<double>> rows;
  rows.reserve(history.size());
  for (std::size_t e = 0; e < history.size(); ++e)
    rows.push_back({static_cast<double>(e + 1), history[e].nll, history[e].kl_weights,
                    history[e].kl_bias, history[e].log_q_z, history[e].log_r_z,
                    history[e].total});
  write_csv(path, {"epoch", "nll", "kl_weights", "kl_bias", "log_q_z", "log_r_z", "total"},
            rows);
}

// ---------------------------------------------------------------------------
// Dataset selection.
// ---------------------------------------------------------------------------

struct DatasetChoice {
  std::string kind;  // "mnist" | "logreg" | "clusters"
  std::string images, labels;
  std::size_t limit = 0;              // mnist: keep the first N rows (0 = all)
  std::size_t n = 2000;               // logreg rows
  std::size_t samples_per_class = 200;  // clusters
};

inline DatasetChoice parse_dataset(const nlohmann::json& j) {
  cfg::as_object(j, "dataset");
  cfg::reject_unknown(j, "dataset", {"kind", "images", "labels", "limit", "n",
                                     "samples_per_class"});
  DatasetChoice d;
  d.kind = cfg::need(j, "dataset", "kind").get<std::string>();
  if (d.kind == "mnist") {
    d.images = cfg::need(j, "dataset", "images").get<std::string>();
    d.labels = cfg::need(j, "dataset", "labels").get<std::string>();
    d.limit = cfg::get_count(j, "dataset", "limit", 0);
  } else if (d.kind == "logreg") {
    d.n = cfg::get_count(j, "dataset", "n", 2000);
  } else if (d.kind == "clusters") {
    d.samples_per_class = cfg::get_count(j, "dataset", "samples_per_class", 200);
  } else {
    throw ConfigError("dataset.kind: expected mnist | logreg | clusters");
  }
  return d;
}

inline Dataset make_dataset(const DatasetChoice& d, std::uint64_t seed) {
  if (d.kind == "mnist") return load_mnist(d.images, d.labels, d.limit);
  if (d.kind == "logreg") return gen_logreg(d.n, seed).data;
  return gen_clusters(d.samples_per_class, seed);
}

inline Likelihood dataset_likelihood(const DatasetChoice& d) {
  return d.kind == "logreg" ? Likelihood::bernoulli : Likelihood::categorical;
}

// ---------------------------------------------------------------------------
// Model / training sections shared by the subcommands.
// ---------------------------------------------------------------------------

struct ModelSection {
  std::vector<std::size_t> hidden = {400, 600};
  Method method = Method::lbbnn_flow;
  double prior_sigma = 1.0;
  double prior_alpha = 0.10;
  std::size_t flow_len = 2;
  std::size_t flow_width = 250;
  double p_drop = 0.5;
};

inline ModelSection parse_model(const nlohmann::json& j, ModelSection defaults) {
  cfg::as_object(j, "model");
  cfg::reject_unknown(j, "model",
                      {"widths", "method", "prior_sigma", "prior_alpha", "flow_len",
                       "flow_width", "p_drop"});
  ModelSection m = defaults;
  if (auto it = j.find("widths"); it != j.end()) {
    if (!it->is_array() || it->empty())
      throw ConfigError("model.widths: expected a non-empty array of layer widths");
    m.hidden.clear();
    for (const auto& w : *it) {
      if (!w.is_number_unsigned() || w.get<std::size_t>() == 0)
        throw ConfigError("model.widths: entries must be positive integers");
      m.hidden.push_back(w.get<std::size_t>());
    }
  }
  if (auto it = j.find("method"); it != j.end()) m.method = method_from(it->get<std::string>());
  m.prior_sigma = cfg::get_num(j, "model", "prior_sigma", m.prior_sigma);
  m.prior_alpha = cfg::get_num(j, "model", "prior_alpha", m.prior_alpha);
  m.flow_len = cfg::get_count(j, "model", "flow_len", m.flow_len);
  m.flow_width = cfg::get_count(j, "model", "flow_width", m.flow_width);
  m.p_drop = cfg::get_num(j, "model", "p_drop", m.p_drop);
  if (m.prior_sigma <= 0.0) throw ConfigError("model.prior_sigma: must be positive");
  if (m.prior_alpha <= 0.0 || m.prior_alpha >= 1.0)
    throw ConfigError("model.prior_alpha: must lie strictly inside (0,1)");
  if (m.p_drop < 0.0 || m.p_drop >= 1.0)
    throw ConfigError("model.p_drop: must lie in [0,1)");
  return m;
}

inline NetworkConfig to_network_config(const ModelSection& m, std::size_t n_in,
                                       std::size_t n_out, Likelihood lk,
                                       std::uint64_t init_seed) {
  NetworkConfig nc;
  nc.widths.push_back(n_in);
  for (std::size_t w : m.hidden) nc.widths.push_back(w);
  nc.widths.push_back(n_out);
  nc.method = m.method;
  nc.likelihood = lk;
  nc.prior = {m.prior_sigma, m.prior_alpha};
  nc.flow_len = m.flow_len;
  nc.flow_width = m.flow_width;
  nc.p_drop = m.p_drop;
  nc.init_seed = init_seed;
  return nc;
}

inline TrainConfig parse_train(const nlohmann::json& j, TrainConfig defaults) {
  cfg::as_object(j, "train");
  cfg::reject_unknown(j, "train",
                      {"epochs", "batch_size", "learning_rate", "seed", "checkpoint_every"});
  TrainConfig t = defaults;
  t.epochs = cfg::get_count(j, "train", "epochs", t.epochs);
  t.batch_size = cfg::get_count(j, "train", "batch_size", t.batch_size);
  t.learning_rate = cfg::get_num(j, "train", "learning_rate", t.learning_rate);
  t.seed = cfg::get_count(j, "train", "seed", t.seed);
  t.checkpoint_every = cfg::get_count(j, "train", "checkpoint_every", t.checkpoint_every);
  if (t.batch_size == 0) throw ConfigError("train.batch_size: must be positive");
  if (t.learning_rate <= 0.0) throw ConfigError("train.learning_rate: must be positive");
  return t;
}

// ---------------------------------------------------------------------------
// Worker pool for independent repetitions (rep seed = base seed + index).
// ---------------------------------------------------------------------------

inline std::size_t thread_count(std::size_t reps) {
  std::size_t t = 1;
  if (const char* env = std::getenv("SBNN_THREADS")) {
    char* end = nullptr;
    unsigned long v = std::strtoul(env, &end, 10);
    if (end == env || *end != '\0' || v == 0)
      throw ConfigError("SBNN_THREADS: expected a positive integer");
    t = v;
  }
  return std::min(t, std::max<std::size_t>(reps, 1));
}

template <typename Fn>
void run_reps(std::size_t reps, Fn&& body) {
  std::size_t workers = thread_count(reps);
  if (workers <= 1) {
    for (std::size_t r = 0; r < reps; ++r) body(r);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&]() {
      for (;;) {
        std::size_t r = next.fetch_add(1);
        if (r >= reps) return;
        try {
          body(r);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// train / eval.
// ---------------------------------------------------------------------------

inline nlohmann::json echo_train_config(const DatasetChoice& d, const ModelSection& m,
                                        const TrainConfig& t) {
  nlohmann::json j;
  j["dataset"]["kind"] = d.kind;
  if (d.kind == "mnist") {
    j["dataset"]["images"] = d.images;
    j["dataset"]["labels"] = d.labels;
    j["dataset"]["limit"] = d.limit;
  } else if (d.kind == "logreg") {
    j["dataset"]["n"] = d.n;
  } else {
    j["dataset"]["samples_per_class"] = d.samples_per_class;
  }
  j["model"]["widths"] = m.hidden;
  j["model"]["method"] = method_name(m.method);
  j["model"]["prior_sigma"] = m.prior_sigma;
  j["model"]["prior_alpha"] = m.prior_alpha;
  j["model"]["flow_len"] = m.flow_len;
  j["model"]["flow_width"] = m.flow_width;
  j["model"]["p_drop"] = m.p_drop;
  j["train"]["epochs"] = t.epochs;
  j["train"]["batch_size"] = t.batch_size;
  j["train"]["learning_rate"] = t.learning_rate;
  j["train"]["seed"] = t.seed;
  j["train"]["checkpoint_every"] = t.checkpoint_every;
  return j;
}

// Trains per the config and writes history.csv + checkpoint.bin + manifest.
inline void run_train(const nlohmann::json& config, const std::string& out_dir,
                      const std::uint64_t* seed_override) {
  cfg::as_object(config, "config");
  cfg::reject_unknown(config, "config", {"dataset", "model", "train"});
  DatasetChoice d = parse_dataset(cfg::need(config, "config", "dataset"));
  ModelSection m = parse_model(config.value("model", nlohmann::json::object()), ModelSection{});
  TrainConfig t = parse_train(config.value("train", nlohmann::json::object()), TrainConfig{});
  if (seed_override) t.seed = *seed_override;
  t.checkpoint_path = out_dir + "/checkpoint.bin";

  Dataset ds = make_dataset(d, t.seed);
  std::size_t n_out = d.kind == "logreg" ? 1 : ds.n_classes;
  Network net(to_network_config(m, ds.features.cols(), n_out, dataset_likelihood(d), t.seed));

  std::vector<ElboReport> history = train(net, ds.features, ds.labels, t);
  write_history_csv(out_dir + "/history.csv", history);
  write_manifest(out_dir, "train", t.seed, echo_train_config(d, m, t),
                 {"history.csv", "checkpoint.bin"});
  if (!history.empty())
    std::cout << "train: epochs=" << history.size() << " final_total=" << history.back().total
              << "\n";
}

// Evaluates a checkpoint on a dataset; writes eval.csv and prints the scores.
inline void run_eval(const std::string& checkpoint, const nlohmann::json& config,
                     std::size_t samples, const std::string& mode_name,
                     const std::string& out_dir, const std::uint64_t* seed_override) {
  // Accepts a full training config so one file can drive train + eval; only
  // the dataset section matters here (the checkpoint carries the model).
  cfg::as_object(config, "config");
  cfg::reject_unknown(config, "config", {"dataset", "model", "train"});
  DatasetChoice d = parse_dataset(cfg::need(config, "config", "dataset"));

  PredictMode mode;
  if (mode_name == "full")
    mode = PredictMode::full;
  else if (mode_name == "median")
    mode = PredictMode::median;
  else if (mode_name == "lrt")
    mode = PredictMode::lrt;
  else
    throw ConfigError("eval: mode must be full | median | lrt");
  if (samples == 0) throw ConfigError("eval: samples must be positive");

  std::uint64_t seed = seed_override ? *seed_override : 0;
  Network net = Network::load(checkpoint);
  Dataset ds = make_dataset(d, seed);
  if (ds.features.cols() != net.n_in())
    throw DataError("eval: dataset feature width does not match the checkpoint");

  RngStream rng(seed);
  auto summary = predict_avg(net, ds.features, samples, mode, rng);
  double acc = accuracy(summary, ds.labels);
  double dens = density_report(net);
  write_csv(out_dir + "/eval.csv", {"accuracy", "density"}, {{acc, dens}});

  nlohmann::json echo;
  echo["dataset"] = config.at("dataset");
  echo["checkpoint"] = checkpoint;
  echo["samples"] = samples;
  echo["mode"] = mode_name;
  write_manifest(out_dir, "eval", seed, echo, {"eval.csv"});
  std::cout << "eval: accuracy=" << acc << " density=" << dens << "\n";
}

// ---------------------------------------------------------------------------
// Variable-selection simulation (logistic regression, repeated fits).
// ---------------------------------------------------------------------------

struct LogregSimParams {
  std::size_t reps = 10;
  Method method = Method::lbbnn_flow;
  std::size_t n = 2000;
  std::size_t epochs = 500;
  std::size_t batch_size = 400;
  double learning_rate = 1e-3;
  double prior_sigma = 1.0;
  double prior_alpha = 0.25;
  std::size_t flow_len = 2;
  std::size_t flow_width = 100;
  std::uint64_t base_seed = 0;
};

inline LogregSimParams parse_logreg_sim(const nlohmann::json& j) {
  cfg::as_object(j, "config");
  cfg::reject_unknown(j, "config",
                      {"reps", "method", "n", "epochs", "batch_size", "learning_rate",
                       "prior_sigma", "prior_alpha", "flow_len", "flow_width", "seed"});
  LogregSimParams p;
  p.reps = cfg::get_count(j, "config", "reps", p.reps);
  if (auto it = j.find("method"); it != j.end()) p.method = method_from(it->get<std::string>());
  p.n = cfg::get_count(j, "config", "n", p.n);
  p.epochs = cfg::get_count(j, "config", "epochs", p.epochs);
  p.batch_size = cfg::get_count(j, "config", "batch_size", p.batch_size);
  p.learning_rate = cfg::get_num(j, "config", "learning_rate", p.learning_rate);
  p.prior_sigma = cfg::get_num(j, "config", "prior_sigma", p.prior_sigma);
  p.prior_alpha = cfg::get_num(j, "config", "prior_alpha", p.prior_alpha);
  p.flow_len = cfg::get_count(j, "config", "flow_len", p.flow_len);
  p.flow_width = cfg::get_count(j, "config", "flow_width", p.flow_width);
  p.base_seed = cfg::get_count(j, "config", "seed", p.base_seed);
  if (p.reps == 0) throw ConfigError("logreg-sim: reps must be positive");
  if (p.method == Method::mc_dropout)
    throw ConfigError("logreg-sim: mc-dropout carries no inclusion probabilities");
  return p;
}

// One repetition: fresh data at seed base+rep, one-layer logistic model,
// returns the selection score of the fitted inclusion probabilities.
inline SelectionScore logreg_sim_rep(const LogregSimParams& p, std::size_t rep) {
  std::uint64_t seed = p.base_seed + rep;
  LogregData data = gen_logreg(p.n, seed);

  NetworkConfig nc;
  nc.widths = {20, 1};
  nc.method = p.method;
  nc.likelihood = Likelihood::bernoulli;
  nc.prior = {p.prior_sigma, p.prior_alpha};
  nc.flow_len = p.flow_len;
  nc.flow_width = p.flow_width;
  nc.init_seed = seed;
  Network net(nc);

  TrainConfig tc;
  tc.epochs = p.epochs;
  tc.batch_size = p.batch_size;
  tc.learning_rate = p.learning_rate;
  tc.seed = seed;
  train(net, data.data.features, data.data.labels, tc);

  return tpr_fpr(net.input_inclusion(), data.beta);
}

inline std::vector<SelectionScore> logreg_sim_all(const LogregSimParams& p) {
  std::vector<SelectionScore> scores(p.reps);
  run_reps(p.reps, [&](std::size_t r) { scores[r] = logreg_sim_rep(p, r); });
  return scores;
}

inline nlohmann::json echo_logreg_params(const LogregSimParams& p) {
  nlohmann::json j;
  j["reps"] = p.reps;
  j["method"] = method_name(p.method);
  j["n"] = p.n;
  j["epochs"] = p.epochs;
  j["batch_size"] = p.batch_size;
  j["learning_rate"] = p.learning_rate;
  j["prior_sigma"] = p.prior_sigma;
  j["prior_alpha"] = p.prior_alpha;
  j["flow_len"] = p.flow_len;
  j["flow_width"] = p.flow_width;
  j["seed"] = p.base_seed;
  return j;
}

inline void run_logreg_sim(const nlohmann::json& config, const std::string& out_dir,
                           const std::uint64_t* seed_override) {
  LogregSimParams p = parse_logreg_sim(config);
  if (seed_override) p.base_seed = *seed_override;

  std::vector<std::string> header = {"run", "tpr", "fpr"};
  for (int c = 0; c < 20; ++c) header.push_back("included_" + std::to_string(c));

  // Concurrent repetitions never share a writer: each writes its own file,
  // and the merge below re-reads them in repetition order. Text round-trips
  // bit-exactly, so the merged file does not depend on the thread count.
  auto rep_path = [&](std::size_t r) {
    return out_dir + "/selection_rep" + std::to_string(r) + ".csv";
  };
  run_reps(p.reps, [&](std::size_t r) {
    SelectionScore s = logreg_sim_rep(p, r);
    std::vector<double> row = {static_cast<double>(r), s.tpr, s.fpr};
    for (int c = 0; c < 20; ++c) row.push_back(s.included[c] ? 1.0 : 0.0);
    write_csv(rep_path(r), header, {row});
  });

  std::vector<std::vector<double>> rows;
  std::vector<double> counts(20, 0.0);
  double mean_tpr = 0.0, mean_fpr = 0.0;
  for (std::size_t r = 0; r < p.reps; ++r) {
    CsvTable t = read_csv(rep_path(r));
    if (t.header != header || t.rows.size() != 1)
      throw DataError("logreg-sim: malformed per-rep file '" + rep_path(r) + "'");
    for (int c = 0; c < 20; ++c) counts[c] += t.rows[0][3 + c];
    mean_tpr += t.rows[0][1];
    mean_fpr += t.rows[0][2];
    rows.push_back(std::move(t.rows[0]));
  }
  write_csv(out_dir + "/selection.csv", header, rows);
  for (std::size_t r = 0; r < p.reps; ++r) std::remove(rep_path(r).c_str());

  std::vector<std::vector<double>> count_rows;
  for (int c = 0; c < 20; ++c)
    count_rows.push_back({static_cast<double>(c), counts[c]});
  write_csv(out_dir + "/inclusion_counts.csv", {"coordinate", "count"}, count_rows);

  write_manifest(out_dir, "logreg-sim", p.base_seed, echo_logreg_params(p),
                 {"selection.csv", "inclusion_counts.csv"});
  std::cout << "logreg-sim: reps=" << p.reps << " mean_tpr=" << mean_tpr / p.reps
            << " mean_fpr=" << mean_fpr / p.reps << "\n";
}

// ---------------------------------------------------------------------------
// Cluster uncertainty study.
// ---------------------------------------------------------------------------

struct UncertaintyParams {
  Method method = Method::lbbnn_flow;
  std::size_t samples_per_class = 200;
  std::vector<std::size_t> hidden = {1000};
  std::size_t epochs = 200;
  std::size_t batch_size = 50;
  double learning_rate = 1e-3;
  double prior_sigma = 1.0;
  double prior_alpha = 0.5;
  std::size_t flow_len = 2;
  std::size_t flow_width = 50;
  double p_drop = 0.5;
  std::size_t samples = 10;          // posterior samples for model averaging
  std::size_t grid_resolution = 101;  // entropy grid over [0,1]^2
  std::size_t ood_resolution = 100;   // OOD flag grid over [-1,2]^2
  double ood_level = 0.95;
  std::uint64_t base_seed = 0;
};

inline UncertaintyParams parse_uncertainty(const nlohmann::json& j) {
  cfg::as_object(j, "config");
  cfg::reject_unknown(j, "config",
                      {"method", "samples_per_class", "widths", "epochs", "batch_size",
                       "learning_rate", "prior_sigma", "prior_alpha", "flow_len", "flow_width",
                       "p_drop", "samples", "grid_resolution", "ood_resolution", "ood_level",
                       "seed"});
  UncertaintyParams p;
  if (auto it = j.find("method"); it != j.end()) p.method = method_from(it->get<std::string>());
  p.samples_per_class = cfg::get_count(j, "config", "samples_per_class", p.samples_per_class);
  if (auto it = j.find("widths"); it != j.end()) {
    if (!it->is_array() || it->empty())
      throw ConfigError("uncertainty.widths: expected a non-empty array");
    p.hidden.clear();
    for (const auto& w : *it) p.hidden.push_back(w.get<std::size_t>());
  }
  p.epochs = cfg::get_count(j, "config", "epochs", p.epochs);
  p.batch_size = cfg::get_count(j, "config", "batch_size", p.batch_size);
  p.learning_rate = cfg::get_num(j, "config", "learning_rate", p.learning_rate);
  p.prior_sigma = cfg::get_num(j, "config", "prior_sigma", p.prior_sigma);
  p.prior_alpha = cfg::get_num(j, "config", "prior_alpha", p.prior_alpha);
  p.flow_len = cfg::get_count(j, "config", "flow_len", p.flow_len);
  p.flow_width = cfg::get_count(j, "config", "flow_width", p.flow_width);
  p.p_drop = cfg::get_num(j, "config", "p_drop", p.p_drop);
  p.samples = cfg::get_count(j, "config", "samples", p.samples);
  p.grid_resolution = cfg::get_count(j, "config", "grid_resolution", p.grid_resolution);
  p.ood_resolution = cfg::get_count(j, "config", "ood_resolution", p.ood_resolution);
  p.ood_level = cfg::get_num(j, "config", "ood_level", p.ood_level);
  p.base_seed = cfg::get_count(j, "config", "seed", p.base_seed);
  if (p.samples == 0) throw ConfigError("uncertainty.samples: must be positive");
  if (p.samples_per_class == 0)
    throw ConfigError("uncertainty.samples_per_class: must be positive");
  if (p.ood_level <= 0.0 || p.ood_level > 1.0)
    throw ConfigError("uncertainty.ood_level: must lie in (0,1]");
  return p;
}

inline Network train_uncertainty_model(const UncertaintyParams& p, const Dataset& train_set) {
  NetworkConfig nc;
  nc.widths.push_back(2);
  for (std::size_t w : p.hidden) nc.widths.push_back(w);
  nc.widths.push_back(5);
  nc.method = p.method;
  nc.likelihood = Likelihood::categorical;
  nc.prior = {p.prior_sigma, p.prior_alpha};
  nc.flow_len = p.flow_len;
  nc.flow_width = p.flow_width;
  nc.p_drop = p.p_drop;
  nc.init_seed = p.base_seed;
  Network net(nc);

  TrainConfig tc;
  tc.epochs = p.epochs;
  tc.batch_size = p.batch_size;
  tc.learning_rate = p.learning_rate;
  tc.seed = p.base_seed;
  train(net, train_set.features, train_set.labels, tc);
  return net;
}

inline nlohmann::json echo_uncertainty_params(const UncertaintyParams& p) {
  nlohmann::json j;
  j["method"] = method_name(p.method);
  j["samples_per_class"] = p.samples_per_class;
  j["widths"] = p.hidden;
  j["epochs"] = p.epochs;
  j["batch_size"] = p.batch_size;
  j["learning_rate"] = p.learning_rate;
  j["prior_sigma"] = p.prior_sigma;
  j["prior_alpha"] = p.prior_alpha;
  j["flow_len"] = p.flow_len;
  j["flow_width"] = p.flow_width;
  j["p_drop"] = p.p_drop;
  j["samples"] = p.samples;
  j["grid_resolution"] = p.grid_resolution;
  j["ood_resolution"] = p.ood_resolution;
  j["ood_level"] = p.ood_level;
  j["seed"] = p.base_seed;
  return j;
}

inline void run_uncertainty(const nlohmann::json& config, const std::string& out_dir,
                            const std::uint64_t* seed_override) {
  UncertaintyParams p = parse_uncertainty(config);
  if (seed_override) p.base_seed = *seed_override;

  Dataset train_set = gen_clusters(p.samples_per_class, p.base_seed);
  Network net = train_uncertainty_model(p, train_set);

  // Entropy map over the unit square.
  Tensor unit_grid = grid(p.grid_resolution, 0.0, 1.0);
  RngStream grid_rng(p.base_seed + 1);
  auto grid_summary = predict_avg(net, unit_grid, p.samples, PredictMode::full, grid_rng);
  std::vector<std::vector<double>> entropy_rows;
  for (std::size_t r = 0; r < unit_grid.rows(); ++r)
    entropy_rows.push_back(
        {unit_grid.at(r, 0), unit_grid.at(r, 1), grid_summary.entropy[r]});
  write_csv(out_dir + "/entropy_grid.csv", {"x", "y", "entropy"}, entropy_rows);

  // Confidence-ordered accuracy and the sorted diagnostic curves on a fresh
  // test draw from the same mixture.
  Dataset test_set = gen_clusters(p.samples_per_class, p.base_seed + 10007);
  RngStream test_rng(p.base_seed + 2);
  auto test_summary = predict_avg(net, test_set.features, p.samples, PredictMode::full, test_rng);
  // Windows of 100 at benchmark scale; smaller test draws shrink the window
  // so the curve is never empty.
  std::size_t window = std::min<std::size_t>(100, test_set.features.rows());
  auto curve = cumulative_accuracy(test_summary, test_set.labels, window);
  std::vector<std::vector<double>> curve_rows;
  for (std::size_t w = 0; w < curve.size(); ++w)
    curve_rows.push_back({static_cast<double>(w), curve[w]});
  write_csv(out_dir + "/curve.csv", {"window_index", "accuracy"}, curve_rows);

  std::vector<double> ent_sorted = test_summary.entropy;
  std::sort(ent_sorted.begin(), ent_sorted.end());
  std::vector<double> prob_sorted = test_summary.max_prob;
  std::sort(prob_sorted.begin(), prob_sorted.end());
  std::vector<std::vector<double>> ent_rows, prob_rows;
  for (std::size_t i = 0; i < ent_sorted.size(); ++i) {
    ent_rows.push_back({static_cast<double>(i), ent_sorted[i]});
    prob_rows.push_back({static_cast<double>(i), prob_sorted[i]});
  }
  write_csv(out_dir + "/sorted_entropy.csv", {"rank", "entropy"}, ent_rows);
  write_csv(out_dir + "/sorted_max_prob.csv", {"rank", "max_prob"}, prob_rows);

  // OOD flags on the extended grid.
  Tensor wide_grid = grid(p.ood_resolution, -1.0, 2.0);
  RngStream ood_rng(p.base_seed + 3);
  auto flags = ood_detect(net, train_set.features, wide_grid, p.ood_level, p.samples, ood_rng);
  std::vector<std::vector<double>> flag_rows;
  for (std::size_t r = 0; r < wide_grid.rows(); ++r)
    flag_rows.push_back({wide_grid.at(r, 0), wide_grid.at(r, 1), flags[r] ? 1.0 : 0.0});
  write_csv(out_dir + "/ood_grid.csv", {"x", "y", "flag"}, flag_rows);

  write_manifest(out_dir, "uncertainty", p.base_seed, echo_uncertainty_params(p),
                 {"entropy_grid.csv", "curve.csv", "sorted_entropy.csv", "sorted_max_prob.csv",
                  "ood_grid.csv"});

  double mean_entropy = 0.0;
  for (double h : grid_summary.entropy) mean_entropy += h;
  std::cout << "uncertainty: grid_mean_entropy=" << mean_entropy / grid_summary.entropy.size()
            << " test_accuracy=" << accuracy(test_summary, test_set.labels) << "\n";
}

}  // namespace sbnn
