#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dalign/rng.hpp"
#include "dalign/tensor.hpp"

namespace dalign::test {

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = 2.0 * rng.uniform() - 1.0;
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// ||analytic - numeric|| / max(||analytic||, ||numeric||), worst over the
// inputs, with central differences of step h.
inline double gradient_error(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                             double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  loss().backward();
  double worst = 0.0;
  for (auto& t : inputs) {
    const auto analytic = t.grad();
    std::vector<double> numeric(analytic.size());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      double plus, minus;
      {
        NoGradGuard g;
        data[i] = keep + h;
        plus = loss().item();
        data[i] = keep - h;
        minus = loss().item();
      }
      data[i] = keep;
      numeric[i] = (plus - minus) / (2.0 * h);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double scale = std::max(std::sqrt(std::max(na, nn)), 1e-12);
    worst = std::max(worst, std::sqrt(diff) / scale);
  }
  return worst;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dalign_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::filesystem::path data_path(const std::string& rel) {
  return std::filesystem::path(DALIGN_TEST_DATA) / rel;
}

}  // namespace dalign::test
