#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdphom/errors.hpp"
#include "mdphom/rng.hpp"
#include "mdphom/tensor.hpp"

namespace mdphom {

/// Fully connected network with ReLU hidden layers; optional tanh squashing
/// on the output (used by actors to respect action bounds).
class Mlp {
 public:
  Mlp() = default;

  /// widths = {in, hidden..., out}. Weights are fan-in uniform; final_scale
  /// shrinks the last layer's init (near-zero initial actor outputs).
  static Mlp make(const std::vector<int>& widths, bool tanh_output, Rng& rng,
                  double final_scale = 1.0) {
    if (widths.size() < 2) throw ShapeMismatch("Mlp requires at least two widths");
    Mlp net;
    net.tanh_output_ = tanh_output;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const int in = widths[l], out = widths[l + 1];
      const double bound =
          (l + 2 == widths.size() ? final_scale : 1.0) / std::sqrt(static_cast<double>(in));
      std::vector<double> w(static_cast<std::size_t>(in) * out), b(out);
      for (double& x : w) x = rng.uniform(-bound, bound);
      for (double& x : b) x = rng.uniform(-bound, bound);
      net.weights_.push_back(Tensor::param(in, out, std::move(w)));
      net.biases_.push_back(Tensor::param(1, out, std::move(b)));
    }
    return net;
  }

  Tensor forward(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = add(matmul(h, weights_[l]), biases_[l]);
      if (l + 1 < weights_.size()) h = relu(h);
    }
    return tanh_output_ ? tanh_op(h) : h;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.push_back(weights_[l]);
      out.push_back(biases_[l]);
    }
    return out;
  }

  /// Deep copy with fresh parameter storage (target networks).
  Mlp clone() const {
    Mlp net;
    net.tanh_output_ = tanh_output_;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      net.weights_.push_back(
          Tensor::param(weights_[l].rows(), weights_[l].cols(), weights_[l].value()));
      net.biases_.push_back(
          Tensor::param(biases_[l].rows(), biases_[l].cols(), biases_[l].value()));
    }
    return net;
  }

  /// Marks parameters as non-differentiable; forwards through a frozen
  /// network record no graph (target networks).
  void freeze() {
    for (auto& p : parameters()) {
      p.node()->requires_grad = false;
      p.node()->needs_grad = false;
    }
  }

  int input_dim() const { return weights_.front().rows(); }
  int output_dim() const { return weights_.back().cols(); }

 private:
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
  bool tanh_output_ = false;
};

/// target <- tau * online + (1 - tau) * target, elementwise over parameter
/// lists.
inline void soft_update(std::vector<Tensor> target, const std::vector<Tensor>& online,
                        double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ShapeMismatch("tau must lie in (0, 1]");
  if (target.size() != online.size()) throw ShapeMismatch("parameter lists differ in length");
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i].size() != online[i].size())
      throw ShapeMismatch("parameter shapes differ at index " + std::to_string(i));
    auto& tv = target[i].value();
    const auto& ov = online[i].value();
    for (std::size_t j = 0; j < tv.size(); ++j) tv[j] = tau * ov[j] + (1.0 - tau) * tv[j];
  }
}

class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double lr = 1e-4, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad().begin(), p.grad().end(), 0.0);
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& value = params_[i].value();
      const auto& grad = params_[i].grad();
      for (std::size_t j = 0; j < value.size(); ++j) {
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * grad[j];
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * grad[j] * grad[j];
        value[j] -= lr_ * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
      }
    }
  }

  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Checkpoints: JSON map from parameter name to shape + row-major values.
// ---------------------------------------------------------------------------

inline nlohmann::json checkpoint_to_json(const std::map<std::string, std::vector<Tensor>>& groups) {
  nlohmann::json j;
  for (const auto& [name, params] : groups) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      nlohmann::json entry;
      entry["shape"] = {params[i].rows(), params[i].cols()};
      entry["data"] = params[i].value();
      j[name + "." + std::to_string(i)] = std::move(entry);
    }
  }
  return j;
}

inline void save_checkpoint(const std::map<std::string, std::vector<Tensor>>& groups,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw SchemaError("cannot open checkpoint for writing: " + path);
  out << checkpoint_to_json(groups).dump() << "\n";
}

/// Loads values into existing parameter tensors (shapes must match).
inline void load_checkpoint(std::map<std::string, std::vector<Tensor>> groups,
                            const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("invalid checkpoint JSON: ") + e.what());
  }
  for (auto& [name, params] : groups) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::string key = name + "." + std::to_string(i);
      if (!j.contains(key)) throw SchemaError("checkpoint missing parameter: " + key);
      const auto shape = j[key]["shape"].get<std::vector<int>>();
      if (shape.size() != 2 || shape[0] != params[i].rows() || shape[1] != params[i].cols())
        throw ShapeMismatch("checkpoint shape mismatch for " + key);
      params[i].value() = j[key]["data"].get<std::vector<double>>();
    }
  }
}

}  // namespace mdphom
