#include "dalign/viz.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "dalign/error.hpp"
#include "dalign/seg_eval.hpp"

namespace dalign {

namespace {

// Min-max scaling of one channel of a {n, channels} array to [0, 255].
void scale_channel(std::vector<double>& values, std::size_t channels, std::size_t ch) {
  const auto n = values.size() / channels;
  double lo = values[ch], hi = values[ch];
  for (std::size_t i = 0; i < n; ++i) {
    lo = std::min(lo, values[i * channels + ch]);
    hi = std::max(hi, values[i * channels + ch]);
  }
  const double range = hi - lo;
  const double tol = 1e-12 * std::max({1.0, std::abs(lo), std::abs(hi)});
  for (std::size_t i = 0; i < n; ++i) {
    auto& v = values[i * channels + ch];
    v = range > tol ? 255.0 * (v - lo) / range : 0.0;
  }
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

void check_size(std::size_t out_w, std::size_t out_h) {
  if (out_w == 0 || out_h == 0) throw ConfigError("output size must be positive");
}

}  // namespace

Heatmap heatmap(const FeatureRecord& record, std::size_t dim, const std::vector<double>& query,
                std::size_t out_w, std::size_t out_h) {
  check_size(out_w, out_h);
  if (query.size() != dim) throw ShapeError("heatmap: query width differs from feature width");
  double qn = 0.0;
  for (double x : query) qn += x * x;
  qn = std::max(std::sqrt(qn), kNormalizeEps);
  const auto n = record.patch_count();
  std::vector<double> sim(n);
  for (std::size_t p = 0; p < n; ++p) {
    double dot = 0.0, pn = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double v = record.patches[p * dim + j];
      dot += v * query[j];
      pn += v * v;
    }
    sim[p] = dot / (std::max(std::sqrt(pn), kNormalizeEps) * qn);
  }
  scale_channel(sim, 1, 0);
  Heatmap h;
  h.patch_levels.resize(n);
  for (std::size_t p = 0; p < n; ++p) h.patch_levels[p] = to_byte(sim[p]);
  const auto up = upsample_bilinear(sim, record.grid_h, record.grid_w, 1, out_h, out_w);
  h.image = GrayImage(out_w, out_h);
  for (std::size_t i = 0; i < up.size(); ++i) h.image.pixels[i] = to_byte(up[i]);
  return h;
}

Heatmap heatmap(const FeatureRecord& record, std::size_t dim, const std::string& concept_text,
                const TextEncoder& encoder, const Vocabulary& vocab, std::size_t out_w,
                std::size_t out_h) {
  NoGradGuard no_grad;
  const TokenizedCaption tok = tokenize(concept_text, vocab, encoder.config().max_len);
  const EncodeResult enc = encoder.encode(std::span<const TokenizedCaption>(&tok, 1));
  const auto global = enc.global.data();
  return heatmap(record, dim, std::vector<double>(global.begin(), global.end()), out_w, out_h);
}

PcaProjection pca_project(const FeatureRecord& record, std::size_t dim) {
  const auto n = record.patch_count();
  if (n < 3) throw InputError("pca: needs at least 3 patches, got " + std::to_string(n));
  Eigen::MatrixXd x(n, dim);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t j = 0; j < dim; ++j) x(p, j) = record.patches[p * dim + j];
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("pca: eigendecomposition failed");

  PcaProjection out;
  const auto k = std::min<std::size_t>(3, dim);
  out.components.assign(3 * dim, 0.0);
  out.variances.assign(3, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    // Eigen orders eigenvalues ascending.
    const auto col = static_cast<Eigen::Index>(dim - 1 - c);
    Eigen::VectorXd v = solver.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    for (std::size_t j = 0; j < dim; ++j) out.components[c * dim + j] = v(static_cast<Eigen::Index>(j));
    out.variances[c] = std::max(0.0, solver.eigenvalues()(col));
  }
  out.projected.assign(n * 3, 0.0);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        s += x(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j)) *
             out.components[c * dim + j];
      }
      out.projected[p * 3 + c] = s;
    }
  return out;
}

RgbImage pca_rgb(const FeatureRecord& record, std::size_t dim, std::size_t out_w,
                 std::size_t out_h) {
  check_size(out_w, out_h);
  auto proj = pca_project(record, dim).projected;
  for (std::size_t ch = 0; ch < 3; ++ch) scale_channel(proj, 3, ch);
  const auto up = upsample_bilinear(proj, record.grid_h, record.grid_w, 3, out_h, out_w);
  RgbImage img;
  img.width = out_w;
  img.height = out_h;
  img.pixels.resize(up.size());
  for (std::size_t i = 0; i < up.size(); ++i) img.pixels[i] = to_byte(up[i]);
  return img;
}

}  // namespace dalign
