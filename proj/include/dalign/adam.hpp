#pragma once

// Bias-corrected Adam over named parameters, plus global-norm clipping.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dalign/text_encoder.hpp"

namespace dalign {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  bool operator==(const AdamConfig&) const = default;
};

class Adam {
 public:
  Adam() = default;
  // Zero moments shaped like `params`.
  explicit Adam(const std::vector<NamedTensor>& params);

  // Applies one update with learning rate `lr` to every parameter. Throws
  // NumericError naming the first parameter whose gradient is not finite;
  // nothing is modified in that case.
  void step(std::vector<NamedTensor>& params, const AdamConfig& config, double lr);

  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  std::uint64_t steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

// Global L2 norm over every parameter gradient.
double grad_norm(const std::vector<NamedTensor>& params);

// Rescales all gradients so their global norm is at most max_norm. Returns
// the norm before clipping.
double clip_grad_norm(std::vector<NamedTensor>& params, double max_norm);

}  // namespace dalign
