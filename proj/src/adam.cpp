#include "dalign/adam.hpp"

#include <cmath>

#include "dalign/error.hpp"

namespace dalign {

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("adam: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
}

Adam::Adam(const std::vector<NamedTensor>& params) {
  for (const auto& p : params) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step(std::vector<NamedTensor>& params, const AdamConfig& config, double lr) {
  if (params.size() != m_.size()) throw ContractError("adam: parameter list changed size");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].tensor.numel() != m_[i].size()) {
      throw ShapeError("adam: parameter " + params[i].name + " changed shape");
    }
    if (!params[i].tensor.has_grad()) continue;
    for (double g : params[i].tensor.mutable_grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + params[i].name);
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = m_[i];
    auto& v = v_[i];
    auto theta = params[i].tensor.mutable_data();
    if (!params[i].tensor.has_grad()) continue;
    auto g = params[i].tensor.mutable_grad();
    for (std::size_t j = 0; j < m.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      theta[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config.eps);
    }
  }
}

double grad_norm(const std::vector<NamedTensor>& params) {
  double s = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) s += g * g;
  }
  return std::sqrt(s);
}

double clip_grad_norm(std::vector<NamedTensor>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / (norm + 1e-6);
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (auto& g : p.tensor.mutable_grad()) g *= f;
    }
  }
  return norm;
}

}  // namespace dalign
