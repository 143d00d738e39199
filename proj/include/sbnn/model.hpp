#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sbnn/flow.hpp"
#include "sbnn/layers.hpp"
#include "sbnn/rng.hpp"
#include "sbnn/tensor.hpp"

namespace sbnn {

enum class Method { lbbnn_lrt, lbbnn_flow, dense_bnn, mc_dropout };
enum class Likelihood { categorical, bernoulli };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::lbbnn_lrt: return "lbbnn-lrt";
    case Method::lbbnn_flow: return "lbbnn-flow";
    case Method::dense_bnn: return "dense-bnn";
    case Method::mc_dropout: return "mc-dropout";
  }
  throw std::runtime_error("method_name: bad enum");
}

inline Method method_from(const std::string& s) {
  if (s == "lbbnn-lrt") return Method::lbbnn_lrt;
  if (s == "lbbnn-flow") return Method::lbbnn_flow;
  if (s == "dense-bnn") return Method::dense_bnn;
  if (s == "mc-dropout") return Method::mc_dropout;
  throw std::runtime_error("unknown method: " + s);
}

inline std::string likelihood_name(Likelihood l) {
  return l == Likelihood::categorical ? "categorical" : "bernoulli";
}

inline Likelihood likelihood_from(const std::string& s) {
  if (s == "categorical") return Likelihood::categorical;
  if (s == "bernoulli") return Likelihood::bernoulli;
  throw std::runtime_error("unknown likelihood: " + s);
}

struct NetworkConfig {
  std::vector<std::size_t> widths;  // input, hidden..., output
  Method method = Method::lbbnn_lrt;
  Likelihood likelihood = Likelihood::categorical;
  LayerPrior prior{1.0, 0.5};
  std::size_t flow_len = 2;
  std::size_t flow_width = 250;
  double p_drop = 0.5;
  std::uint64_t init_seed = 0;
};

// A feed-forward stack in one of four flavors. The spike-and-slab flavors own
// SpikeSlabLinear layers (plus one flow chain and one auxiliary head per layer
// in flow mode); the dropout comparator owns plain DropoutLinear layers. ReLU
// between hidden layers in every flavor.
struct Network {
  NetworkConfig cfg;
  std::vector<SpikeSlabLinear> layers;
  std::vector<DropoutLinear> drop_layers;
  std::vector<IafChain> chains;
  std::vector<InverseFlowHead> heads;

  Network() = default;

  explicit Network(NetworkConfig c) : cfg(std::move(c)) {
    if (cfg.widths.size() < 2) throw ShapeError("Network: widths needs input and output sizes");
    RngStream rng(cfg.init_seed);
    std::size_t L = cfg.widths.size() - 1;
    if (cfg.method == Method::mc_dropout) {
      // Dropout masks layer inputs; raw features stay intact, hidden
      // activations are dropped at p_drop.
      for (std::size_t l = 0; l < L; ++l)
        drop_layers.emplace_back(cfg.widths[l], cfg.widths[l + 1], l == 0 ? 0.0 : cfg.p_drop,
                                 rng);
      return;
    }
    bool dense = cfg.method == Method::dense_bnn;
    for (std::size_t l = 0; l < L; ++l)
      layers.emplace_back(cfg.widths[l], cfg.widths[l + 1], cfg.prior, rng, dense);
    if (cfg.method == Method::lbbnn_flow) {
      for (std::size_t l = 0; l < L; ++l) {
        chains.emplace_back(cfg.widths[l], cfg.flow_len, cfg.flow_width, rng);
        heads.emplace_back(cfg.widths[l], cfg.flow_len, cfg.flow_width, rng);
      }
    }
  }

  std::size_t n_in() const { return cfg.widths.front(); }
  std::size_t n_out() const { return cfg.widths.back(); }
  std::size_t n_layers() const { return cfg.widths.size() - 1; }
  bool has_flow() const { return cfg.method == Method::lbbnn_flow; }
  bool is_dropout() const { return cfg.method == Method::mc_dropout; }

  std::vector<Tensor*> params() {
    std::vector<Tensor*> out;
    for (auto& l : layers)
      for (Tensor* p : l.params()) out.push_back(p);
    for (auto& l : drop_layers)
      for (Tensor* p : l.params()) out.push_back(p);
    for (auto& c : chains)
      for (Tensor* p : c.params()) out.push_back(p);
    for (auto& h : heads)
      for (Tensor* p : h.params()) out.push_back(p);
    return out;
  }

  struct Mounted {
    std::vector<SpikeSlabLinear::Mounted> layers;
    std::vector<DropoutLinear::Mounted> drop_layers;
    std::vector<IafChain::Mounted> chains;
    std::vector<InverseFlowHead::Mounted> heads;
  };

  Mounted mount(Tape& tape, bool trainable = true) const {
    Mounted m;
    for (const auto& l : layers) m.layers.push_back(l.mount(tape, trainable));
    for (const auto& l : drop_layers) m.drop_layers.push_back(l.mount(tape, trainable));
    for (const auto& c : chains) m.chains.push_back(c.mount(tape, trainable));
    for (const auto& h : heads) m.heads.push_back(h.mount(tape, trainable));
    return m;
  }

  // Aligned with params().
  std::vector<Var> leaves(const Mounted& m) const {
    std::vector<Var> out;
    for (std::size_t i = 0; i < layers.size(); ++i)
      for (const Var& v : layers[i].leaves(m.layers[i])) out.push_back(v);
    for (std::size_t i = 0; i < drop_layers.size(); ++i)
      for (const Var& v : drop_layers[i].leaves(m.drop_layers[i])) out.push_back(v);
    for (std::size_t i = 0; i < chains.size(); ++i)
      for (const Var& v : chains[i].leaves(m.chains[i])) out.push_back(v);
    for (std::size_t i = 0; i < heads.size(); ++i)
      for (const Var& v : heads[i].leaves(m.heads[i])) out.push_back(v);
    return out;
  }

  // Fraction of weights kept by the median probability model, over all
  // spike-and-slab layers; biases excluded. Dense and dropout flavors have no
  // sparsity structure and report 1.
  double density(double threshold = 0.5) const {
    if (layers.empty() || cfg.method == Method::dense_bnn) return 1.0;
    double logit_thr = std::log(threshold / (1.0 - threshold));
    std::size_t kept = 0, total = 0;
    for (const auto& l : layers) {
      total += l.inclusion_logit.size();
      for (std::size_t k = 0; k < l.inclusion_logit.size(); ++k)
        if (l.inclusion_logit[k] > logit_thr) ++kept;
    }
    return static_cast<double>(kept) / static_cast<double>(total);
  }

  // Mean posterior inclusion probability per input feature of the first
  // layer; the variable-selection statistic for logistic-regression models.
  std::vector<double> input_inclusion() const {
    const SpikeSlabLinear& l0 = layers.at(0);
    Tensor a = l0.alpha_values();
    std::vector<double> out(l0.n_in, 0.0);
    for (std::size_t i = 0; i < l0.n_in; ++i) {
      for (std::size_t j = 0; j < l0.n_out; ++j) out[i] += a.at(i, j);
      out[i] /= static_cast<double>(l0.n_out);
    }
    return out;
  }

  // ---------------------------------------------------------------------------
  // Checkpointing: magic + JSON header + raw little-endian doubles, params()
  // order. Round-trips bit-exactly.
  // ---------------------------------------------------------------------------

  void save(const std::string& path) {
    nlohmann::json header;
    header["widths"] = cfg.widths;
    header["method"] = method_name(cfg.method);
    header["likelihood"] = likelihood_name(cfg.likelihood);
    header["prior_sigma"] = cfg.prior.sigma;
    header["prior_alpha"] = cfg.prior.alpha;
    header["flow_len"] = cfg.flow_len;
    header["flow_width"] = cfg.flow_width;
    header["p_drop"] = cfg.p_drop;
    header["init_seed"] = cfg.init_seed;
    std::vector<std::vector<std::size_t>> shapes;
    for (Tensor* p : params()) shapes.push_back(p->shape());
    header["shapes"] = shapes;

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    std::string hs = header.dump();
    std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
    f.write("SBNNCKP1", 8);
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(hs.data(), hlen);
    for (Tensor* p : params())
      f.write(reinterpret_cast<const char*>(p->data()), p->size() * sizeof(double));
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
  }

  static Network load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::string(magic, 8) != "SBNNCKP1")
      throw std::runtime_error("checkpoint: bad magic in " + path);
    std::uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 4);
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    if (!f) throw std::runtime_error("checkpoint: truncated header in " + path);
    nlohmann::json header = nlohmann::json::parse(hs);

    NetworkConfig cfg;
    cfg.widths = header.at("widths").get<std::vector<std::size_t>>();
    cfg.method = method_from(header.at("method").get<std::string>());
    cfg.likelihood = likelihood_from(header.at("likelihood").get<std::string>());
    cfg.prior.sigma = header.at("prior_sigma").get<double>();
    cfg.prior.alpha = header.at("prior_alpha").get<double>();
    cfg.flow_len = header.at("flow_len").get<std::size_t>();
    cfg.flow_width = header.at("flow_width").get<std::size_t>();
    cfg.p_drop = header.at("p_drop").get<double>();
    cfg.init_seed = header.at("init_seed").get<std::uint64_t>();

    Network net(cfg);
    auto shapes = header.at("shapes").get<std::vector<std::vector<std::size_t>>>();
    std::vector<Tensor*> ps = net.params();
    if (shapes.size() != ps.size())
      throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (shapes[i] != ps[i]->shape())
        throw std::runtime_error("checkpoint: shape mismatch in " + path);
      f.read(reinterpret_cast<char*>(ps[i]->data()), ps[i]->size() * sizeof(double));
    }
    if (!f) throw std::runtime_error("checkpoint: truncated payload in " + path);
    return net;
  }
};

}  // namespace sbnn
