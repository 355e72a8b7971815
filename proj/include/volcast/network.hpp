#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "volcast/autodiff.hpp"
#include "volcast/distributions.hpp"
#include "volcast/error.hpp"
#include "volcast/tensor.hpp"

namespace volcast {

enum class HeadMode { single_layer, subnetworks };
enum class Features { returns_only, returns_and_logsq };
/// lstm: sequence inputs B x K x F. dense: tabular inputs B x F.
enum class TrunkKind { lstm, dense };

inline std::string_view to_string(HeadMode m) {
  return m == HeadMode::single_layer ? "single_layer" : "subnetworks";
}
inline std::string_view to_string(Features f) {
  return f == Features::returns_only ? "returns_only" : "returns_and_logsq";
}
inline std::string_view to_string(TrunkKind k) { return k == TrunkKind::lstm ? "lstm" : "dense"; }

inline HeadMode parse_head_mode(std::string_view s) {
  if (s == "single_layer") return HeadMode::single_layer;
  if (s == "subnetworks") return HeadMode::subnetworks;
  throw ConfigError("unknown head_mode '" + std::string(s) + "'");
}
inline Features parse_features(std::string_view s) {
  if (s == "returns_only") return Features::returns_only;
  if (s == "returns_and_logsq") return Features::returns_and_logsq;
  throw ConfigError("unknown features '" + std::string(s) + "'");
}
inline TrunkKind parse_trunk(std::string_view s) {
  if (s == "lstm") return TrunkKind::lstm;
  if (s == "dense") return TrunkKind::dense;
  throw ConfigError("unknown trunk '" + std::string(s) + "'");
}

/// Softplus floors of the constraint layer.
inline constexpr double kPositiveFloor = 1e-6;
inline constexpr double kAlphaFloor = 1.0 + 1e-6;

struct ModelConfig {
  Head head = Head::smd;
  HeadMode head_mode = HeadMode::subnetworks;
  bool tie_alpha_beta = false;
  TrunkKind trunk = TrunkKind::lstm;
  std::vector<std::size_t> lstm_units{16, 8};
  std::vector<std::size_t> trunk_hidden{8};
  std::vector<std::size_t> subnet_hidden{8};  ///< widths of every subnetwork
  double dropout_rate = 0.2;
  bool use_batchnorm = true;
  Features features = Features::returns_and_logsq;
  std::size_t window_len = 24;  ///< K
  std::size_t horizon = 1;      ///< h
  std::size_t input_dim = 0;    ///< dense trunk only

  bool tied() const noexcept { return head == Head::smd && tie_alpha_beta; }

  std::size_t feature_count() const {
    if (trunk == TrunkKind::dense) return input_dim;
    return features == Features::returns_and_logsq ? 2 : 1;
  }

  /// Number of raw head outputs: (mu, sigma2), (gamma, nu, alpha, beta),
  /// (gamma, sigma2, alpha, beta) or (gamma, sigma2, alpha) when tied.
  std::size_t output_count() const {
    switch (head) {
      case Head::gaussian: return 2;
      case Head::nig: return 4;
      case Head::smd: return tie_alpha_beta ? 3 : 4;
    }
    return 0;
  }

  void validate() const {
    auto positive = [](const std::vector<std::size_t>& w, const char* what) {
      for (auto x : w) {
        if (x == 0) throw ConfigError(std::string(what) + " widths must be positive");
      }
    };
    positive(lstm_units, "lstm_units");
    positive(trunk_hidden, "trunk_hidden");
    positive(subnet_hidden, "subnet_hidden");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
    if (trunk == TrunkKind::lstm) {
      if (lstm_units.empty()) throw ConfigError("an LSTM trunk needs at least one layer");
      if (window_len == 0) throw ConfigError("window_len must be positive");
      if (horizon == 0) throw ConfigError("horizon must be positive");
    } else if (input_dim == 0) {
      throw ConfigError("a dense trunk needs input_dim > 0");
    }
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"head", to_string(c.head)},
          {"head_mode", to_string(c.head_mode)},
          {"tie_alpha_beta", c.tie_alpha_beta},
          {"trunk", to_string(c.trunk)},
          {"lstm_units", c.lstm_units},
          {"trunk_hidden", c.trunk_hidden},
          {"subnet_hidden", c.subnet_hidden},
          {"dropout_rate", c.dropout_rate},
          {"use_batchnorm", c.use_batchnorm},
          {"features", to_string(c.features)},
          {"window_len", c.window_len},
          {"horizon", c.horizon},
          {"input_dim", c.input_dim}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.head = parse_head(j.at("head").get<std::string>());
  c.head_mode = parse_head_mode(j.at("head_mode").get<std::string>());
  c.tie_alpha_beta = j.at("tie_alpha_beta").get<bool>();
  c.trunk = parse_trunk(j.at("trunk").get<std::string>());
  c.lstm_units = j.at("lstm_units").get<std::vector<std::size_t>>();
  c.trunk_hidden = j.at("trunk_hidden").get<std::vector<std::size_t>>();
  c.subnet_hidden = j.at("subnet_hidden").get<std::vector<std::size_t>>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.use_batchnorm = j.at("use_batchnorm").get<bool>();
  c.features = parse_features(j.at("features").get<std::string>());
  c.window_len = j.at("window_len").get<std::size_t>();
  c.horizon = j.at("horizon").get<std::size_t>();
  c.input_dim = j.at("input_dim").get<std::size_t>();
  return c;
}

/// Named trainable tensor or non-trainable buffer.
struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Per-feature affine standardisation of inputs and scale/shift of the target.
/// Head outputs live in standardised target units; to_params maps them back.
struct Scaling {
  std::vector<double> feature_mean;
  std::vector<double> feature_std;
  double target_shift = 0.0;
  double target_scale = 1.0;
};

/// Constrained head outputs for a batch: each entry is a B x 1 column in the
/// order (gamma|mu, sigma2|nu, alpha, beta). Tied SMD repeats alpha as beta.
struct HeadOutputs {
  Head head = Head::smd;
  bool tied = false;
  std::vector<ad::Var> columns;

  std::size_t rows() const { return columns.front().rows(); }
};

struct LstmState {
  ad::Var h;
  ad::Var c;
};

struct LstmWeights {
  ad::Var input;      ///< F x 4u
  ad::Var recurrent;  ///< u x 4u
  ad::Var bias;       ///< 1 x 4u, gate order i, f, g, o
};

/// One LSTM step: i, f, o = sigmoid(.), g = tanh(.), c' = f c + i g, h' = o tanh(c').
inline LstmState lstm_step(const LstmWeights& w, const ad::Var& x, const LstmState& s) {
  using namespace ad;
  const std::size_t u = s.h.cols();
  if (w.recurrent.rows() != u || w.recurrent.cols() != 4 * u || w.input.cols() != 4 * u || w.input.rows() != x.cols()) {
    throw ShapeError("lstm_step: weight shapes do not match state width " + std::to_string(u));
  }
  Var z = add_row(matmul(x, w.input) + matmul(s.h, w.recurrent), w.bias);
  Var i = sigmoid(slice_cols(z, 0, u));
  Var f = sigmoid(slice_cols(z, u, u));
  Var g = tanh(slice_cols(z, 2 * u, u));
  Var o = sigmoid(slice_cols(z, 3 * u, u));
  Var c = f * s.c + i * g;
  Var h = o * tanh(c);
  return {h, c};
}

/// Analytic number of trainable parameters for a configuration.
inline std::size_t expected_parameter_count(const ModelConfig& c) {
  std::size_t n = 0;
  std::size_t width = c.feature_count();
  if (c.trunk == TrunkKind::lstm) {
    for (auto u : c.lstm_units) {
      n += 4 * u * (width + u) + 4 * u;
      width = u;
    }
  }
  const std::size_t bn = c.use_batchnorm ? 2 : 0;
  auto blocks = [&](std::size_t in, const std::vector<std::size_t>& widths) {
    std::size_t m = 0;
    for (auto w : widths) {
      m += in * w + w + bn * w;
      in = w;
    }
    return std::pair{m, in};
  };
  auto [trunk_n, latent] = blocks(width, c.trunk_hidden);
  n += trunk_n;
  const std::size_t outputs = c.output_count();
  if (c.head_mode == HeadMode::single_layer) {
    n += latent * outputs + outputs;
  } else {
    auto [sub_n, last] = blocks(latent, c.subnet_hidden);
    n += outputs * (sub_n + last + 1);
  }
  return n;
}

class Forecaster {
 public:
  Forecaster(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
    config_.validate();
    std::mt19937_64 rng(seed_);
    build(rng);
    const std::size_t f = config_.feature_count();
    scaling_.feature_mean.assign(f, 0.0);
    scaling_.feature_std.assign(f, 1.0);
  }

  const ModelConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }

  std::vector<NamedTensor>& parameters() noexcept { return params_; }
  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
  std::vector<NamedTensor>& buffers() noexcept { return buffers_; }
  const std::vector<NamedTensor>& buffers() const noexcept { return buffers_; }

  Scaling& scaling() noexcept { return scaling_; }
  const Scaling& scaling() const noexcept { return scaling_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  /// Width of the layer that produces the raw head outputs.
  std::size_t output_layer_width() const {
    if (config_.head_mode == HeadMode::single_layer) return params_.at(output_index_.front()).value.cols();
    return config_.output_count();
  }

  /// Places every parameter on the tape. Leaves require grad iff `trainable`.
  std::vector<ad::Var> bind(ad::Tape& tape, bool trainable) const {
    std::vector<ad::Var> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_) vars.push_back(tape.leaf(p.value, trainable));
    return vars;
  }

  /// Forward pass through trunk and head. `inputs` is B x K x F (lstm) or B x F
  /// (dense). In train mode dropout masks are drawn from `rng` and batch
  /// normalisation uses batch statistics and updates the running averages.
  HeadOutputs forward(ad::Tape& tape, const std::vector<ad::Var>& vars, const Tensor& inputs, bool train_mode,
                      std::mt19937_64* rng = nullptr) {
    if (train_mode && config_.dropout_rate > 0.0 && !rng) {
      throw ContractError("train-mode forward with dropout needs a random generator");
    }
    return run(tape, vars, inputs, train_mode, rng, /*update_stats=*/train_mode);
  }

  /// Eval-mode forward that leaves the model untouched.
  HeadOutputs forward_eval(ad::Tape& tape, const std::vector<ad::Var>& vars, const Tensor& inputs) const {
    return const_cast<Forecaster*>(this)->run(tape, vars, inputs, false, nullptr, false);
  }

  /// Eval-mode prediction in original target units.
  std::vector<DistributionParams> predict(const Tensor& inputs) const {
    ad::Tape tape;
    auto vars = bind(tape, false);
    return to_params(forward_eval(tape, vars, inputs));
  }

  /// Converts constrained head outputs (standardised units) to distribution parameters.
  std::vector<DistributionParams> to_params(const HeadOutputs& out) const {
    const std::size_t rows = out.rows();
    const double shift = scaling_.target_shift;
    const double s = scaling_.target_scale;
    const double s2 = s * s;
    std::vector<DistributionParams> result;
    result.reserve(rows);
    auto col = [&](std::size_t k, std::size_t i) { return out.columns[k].value()[i]; };
    for (std::size_t i = 0; i < rows; ++i) {
      switch (out.head) {
        case Head::gaussian:
          result.emplace_back(GaussianParams{shift + s * col(0, i), s2 * col(1, i)});
          break;
        case Head::nig:
          result.emplace_back(NIGParams{shift + s * col(0, i), col(1, i), col(2, i), s2 * col(3, i)});
          break;
        case Head::smd:
          result.emplace_back(SMDParams{shift + s * col(0, i), s2 * col(1, i), col(2, i), col(3, i), out.tied});
          break;
      }
    }
    return result;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ContractError("cannot write checkpoint " + path);
    out << to_json().dump(1) << '\n';
    if (!out) throw ContractError("failed writing checkpoint " + path);
  }

  static Forecaster load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("cannot read checkpoint " + path);
    return from_json(nlohmann::json::parse(in));
  }

  nlohmann::json to_json() const {
    auto tensors = [](const std::vector<NamedTensor>& ts) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& t : ts) {
        arr.push_back({{"name", t.name},
                       {"shape", t.value.shape()},
                       {"values", std::vector<double>(t.value.values().begin(), t.value.values().end())}});
      }
      return arr;
    };
    return {{"format", "volcast-checkpoint"},
            {"version", 1},
            {"config", volcast::to_json(config_)},
            {"seed", seed_},
            {"scaling",
             {{"feature_mean", scaling_.feature_mean},
              {"feature_std", scaling_.feature_std},
              {"target_shift", scaling_.target_shift},
              {"target_scale", scaling_.target_scale}}},
            {"parameters", tensors(params_)},
            {"buffers", tensors(buffers_)}};
  }

  static Forecaster from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "volcast-checkpoint") throw ContractError("not a volcast checkpoint");
    Forecaster f(model_config_from_json(j.at("config")), j.at("seed").get<std::uint64_t>());
    const auto& sc = j.at("scaling");
    f.scaling_.feature_mean = sc.at("feature_mean").get<std::vector<double>>();
    f.scaling_.feature_std = sc.at("feature_std").get<std::vector<double>>();
    f.scaling_.target_shift = sc.at("target_shift").get<double>();
    f.scaling_.target_scale = sc.at("target_scale").get<double>();
    auto restore = [](std::vector<NamedTensor>& dst, const nlohmann::json& arr) {
      if (arr.size() != dst.size()) throw ContractError("checkpoint tensor count mismatch");
      for (std::size_t i = 0; i < dst.size(); ++i) {
        const auto& e = arr[i];
        if (e.at("name").get<std::string>() != dst[i].name) {
          throw ContractError("checkpoint tensor order mismatch at " + dst[i].name);
        }
        dst[i].value = Tensor(e.at("shape").get<Tensor::Shape>(), e.at("values").get<std::vector<double>>());
      }
    };
    restore(f.params_, j.at("parameters"));
    restore(f.buffers_, j.at("buffers"));
    return f;
  }

 private:
  struct Block {
    std::size_t weight, bias;
    std::size_t bn_gamma = 0, bn_beta = 0;      // parameter indices
    std::size_t running_mean = 0, running_var = 0;  // buffer indices
  };

  static constexpr double kBatchNormEps = 1e-5;
  static constexpr double kBatchNormMomentum = 0.9;

  std::size_t add_param(std::string name, Tensor value) {
    params_.push_back({std::move(name), std::move(value)});
    return params_.size() - 1;
  }

  static Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor t = Tensor::matrix(fan_in, fan_out);
    for (auto& v : t.values()) v = dist(rng);
    return t;
  }

  Block make_block(const std::string& prefix, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    Block b{};
    b.weight = add_param(prefix + ".weight", glorot(in, out, rng));
    b.bias = add_param(prefix + ".bias", Tensor::matrix(1, out, 0.0));
    if (config_.use_batchnorm) {
      b.bn_gamma = add_param(prefix + ".bn_gamma", Tensor::matrix(1, out, 1.0));
      b.bn_beta = add_param(prefix + ".bn_beta", Tensor::matrix(1, out, 0.0));
      buffers_.push_back({prefix + ".running_mean", Tensor::matrix(1, out, 0.0)});
      b.running_mean = buffers_.size() - 1;
      buffers_.push_back({prefix + ".running_var", Tensor::matrix(1, out, 1.0)});
      b.running_var = buffers_.size() - 1;
    }
    return b;
  }

  void build(std::mt19937_64& rng) {
    std::size_t width = config_.feature_count();
    if (config_.trunk == TrunkKind::lstm) {
      for (std::size_t l = 0; l < config_.lstm_units.size(); ++l) {
        const std::size_t u = config_.lstm_units[l];
        const std::string p = "lstm" + std::to_string(l);
        const std::size_t wi = add_param(p + ".input", glorot(width, 4 * u, rng));
        const std::size_t wr = add_param(p + ".recurrent", glorot(u, 4 * u, rng));
        Tensor bias = Tensor::matrix(1, 4 * u, 0.0);
        for (std::size_t j = u; j < 2 * u; ++j) bias[j] = 1.0;  // forget gate
        const std::size_t wb = add_param(p + ".bias", std::move(bias));
        lstm_.push_back({wi, wr, wb});
        width = u;
      }
    }
    for (std::size_t l = 0; l < config_.trunk_hidden.size(); ++l) {
      trunk_.push_back(make_block("trunk" + std::to_string(l), width, config_.trunk_hidden[l], rng));
      width = config_.trunk_hidden[l];
    }
    const std::size_t outputs = config_.output_count();
    if (config_.head_mode == HeadMode::single_layer) {
      output_index_.push_back(add_param("head.weight", glorot(width, outputs, rng)));
      output_index_.push_back(add_param("head.bias", Tensor::matrix(1, outputs, 0.0)));
    } else {
      for (std::size_t k = 0; k < outputs; ++k) {
        const std::string p = "sub" + std::to_string(k);
        std::vector<Block> blocks;
        std::size_t w = width;
        for (std::size_t l = 0; l < config_.subnet_hidden.size(); ++l) {
          blocks.push_back(make_block(p + ".hidden" + std::to_string(l), w, config_.subnet_hidden[l], rng));
          w = config_.subnet_hidden[l];
        }
        subnets_.push_back(std::move(blocks));
        output_index_.push_back(add_param(p + ".out.weight", glorot(w, 1, rng)));
        output_index_.push_back(add_param(p + ".out.bias", Tensor::matrix(1, 1, 0.0)));
      }
    }
  }

  ad::Var apply_block(ad::Tape& tape, const std::vector<ad::Var>& vars, const Block& b, const ad::Var& x,
                      bool train_mode, std::mt19937_64* rng, bool update_stats) {
    using namespace ad;
    Var z = add_row(matmul(x, vars[b.weight]), vars[b.bias]);
    if (config_.use_batchnorm) {
      Tensor& rm = buffers_[b.running_mean].value;
      Tensor& rv = buffers_[b.running_var].value;
      Var centered, inv_std;
      if (train_mode) {
        Var mu = mean_rows(z);
        centered = add_row(z, neg(mu));
        Var var = mean_rows(square(centered));
        Tensor ones = Tensor::matrix(1, z.cols(), 1.0);
        inv_std = div(tape.leaf(std::move(ones)), sqrt(add_scalar(var, kBatchNormEps)));
        if (update_stats) {
          for (std::size_t j = 0; j < rm.size(); ++j) {
            rm[j] = kBatchNormMomentum * rm[j] + (1.0 - kBatchNormMomentum) * mu.value()[j];
            rv[j] = kBatchNormMomentum * rv[j] + (1.0 - kBatchNormMomentum) * var.value()[j];
          }
        }
      } else {
        Tensor neg_mean = rm;
        for (auto& v : neg_mean.values()) v = -v;
        Tensor inv = rv;
        for (auto& v : inv.values()) v = 1.0 / std::sqrt(v + kBatchNormEps);
        centered = add_row(z, tape.leaf(std::move(neg_mean)));
        inv_std = tape.leaf(std::move(inv));
      }
      z = add_row(mul_row(mul_row(centered, inv_std), vars[b.bn_gamma]), vars[b.bn_beta]);
    }
    Var a = relu(z);
    if (train_mode && config_.dropout_rate > 0.0) {
      const double keep = 1.0 - config_.dropout_rate;
      std::bernoulli_distribution coin(keep);
      Tensor mask = a.value().zeros_like();
      for (auto& v : mask.values()) v = coin(*rng) ? 1.0 / keep : 0.0;
      a = a * tape.leaf(std::move(mask));
    }
    return a;
  }

  Tensor standardised_step(const Tensor& inputs, std::size_t t) const {
    const std::size_t batch = inputs.shape()[0], steps = inputs.shape()[1], f = inputs.shape()[2];
    Tensor x = Tensor::matrix(batch, f);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t k = 0; k < f; ++k)
        x[b * f + k] = (inputs[(b * steps + t) * f + k] - scaling_.feature_mean[k]) / scaling_.feature_std[k];
    return x;
  }

  HeadOutputs run(ad::Tape& tape, const std::vector<ad::Var>& vars, const Tensor& inputs, bool train_mode,
                  std::mt19937_64* rng, bool update_stats) {
    using namespace ad;
    if (vars.size() != params_.size()) throw ContractError("parameter bindings do not match the model");
    const std::size_t f = config_.feature_count();
    Var latent;
    if (config_.trunk == TrunkKind::lstm) {
      const auto& shape = inputs.shape();
      if (shape.size() != 3 || shape[1] != config_.window_len || shape[2] != f) {
        throw ShapeError("forward expects inputs of shape [B," + std::to_string(config_.window_len) + "," +
                         std::to_string(f) + "], got " + Tensor::shape_string(shape));
      }
      const std::size_t batch = shape[0];
      std::vector<LstmState> states;
      for (auto u : config_.lstm_units) {
        states.push_back({tape.leaf(Tensor::matrix(batch, u)), tape.leaf(Tensor::matrix(batch, u))});
      }
      for (std::size_t t = 0; t < config_.window_len; ++t) {
        Var x = tape.leaf(standardised_step(inputs, t));
        for (std::size_t l = 0; l < lstm_.size(); ++l) {
          const LstmWeights w{vars[lstm_[l][0]], vars[lstm_[l][1]], vars[lstm_[l][2]]};
          states[l] = lstm_step(w, x, states[l]);
          x = states[l].h;
        }
      }
      latent = states.back().h;
    } else {
      const auto& shape = inputs.shape();
      if (shape.size() != 2 || shape[1] != f) {
        throw ShapeError("forward expects inputs of shape [B," + std::to_string(f) + "], got " +
                         Tensor::shape_string(shape));
      }
      Tensor x = inputs;
      for (std::size_t b = 0; b < shape[0]; ++b)
        for (std::size_t k = 0; k < f; ++k)
          x[b * f + k] = (x[b * f + k] - scaling_.feature_mean[k]) / scaling_.feature_std[k];
      latent = tape.leaf(std::move(x));
    }
    for (const auto& block : trunk_) latent = apply_block(tape, vars, block, latent, train_mode, rng, update_stats);

    std::vector<Var> raw;
    if (config_.head_mode == HeadMode::single_layer) {
      Var z = add_row(matmul(latent, vars[output_index_[0]]), vars[output_index_[1]]);
      for (std::size_t k = 0; k < config_.output_count(); ++k) raw.push_back(slice_cols(z, k, 1));
    } else {
      for (std::size_t k = 0; k < subnets_.size(); ++k) {
        Var a = latent;
        for (const auto& block : subnets_[k]) a = apply_block(tape, vars, block, a, train_mode, rng, update_stats);
        raw.push_back(add_row(matmul(a, vars[output_index_[2 * k]]), vars[output_index_[2 * k + 1]]));
      }
    }
    return constrain(raw);
  }

  HeadOutputs constrain(const std::vector<ad::Var>& raw) const {
    using namespace ad;
    HeadOutputs out;
    out.head = config_.head;
    out.tied = config_.tied();
    auto positive = [](const Var& z) { return softplus(z) + kPositiveFloor; };
    auto above_one = [](const Var& z) { return softplus(z) + kAlphaFloor; };
    switch (config_.head) {
      case Head::gaussian:
        out.columns = {raw[0], positive(raw[1])};
        break;
      case Head::nig:
        out.columns = {raw[0], positive(raw[1]), above_one(raw[2]), positive(raw[3])};
        break;
      case Head::smd: {
        Var alpha = above_one(raw[2]);
        out.columns = {raw[0], positive(raw[1]), alpha, config_.tie_alpha_beta ? alpha : positive(raw[3])};
        break;
      }
    }
    return out;
  }

  ModelConfig config_;
  std::uint64_t seed_;
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
  Scaling scaling_;
  std::vector<std::array<std::size_t, 3>> lstm_;
  std::vector<Block> trunk_;
  std::vector<std::vector<Block>> subnets_;
  std::vector<std::size_t> output_index_;
};

/// Mean NLL of a batch (plus lambda * total-evidence penalty for the NIG head).
/// `targets` is a B x 1 constant in standardised units.
inline ad::Var batch_loss(const HeadOutputs& out, const ad::Var& targets, double lambda_reg = 0.0) {
  using namespace ad;
  const auto& c = out.columns;
  Var per_row;
  switch (out.head) {
    case Head::gaussian:
      per_row = expr::gaussian_nll(targets, c[0], c[1]);
      break;
    case Head::nig:
      per_row = expr::nig_nll(targets, c[0], c[1], c[2], c[3]);
      if (lambda_reg > 0.0) per_row = per_row + lambda_reg * expr::evidential_regularizer(targets, c[0], c[1], c[2]);
      break;
    case Head::smd:
      per_row = out.tied ? expr::ptvii_nll(targets, c[0], c[1], c[2])
                         : expr::smd_nll(targets, c[0], c[1], c[2], c[3]);
      break;
  }
  return mean(per_row);
}

}  // namespace volcast
