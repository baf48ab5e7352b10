#include "dalign/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "dalign/error.hpp"

namespace dalign {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

// Splits `shape` around `axis` into (outer, axis length, inner).
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " +
                     shape_str(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

detail::Node& in(detail::Node& self, std::size_t i) { return *self.inputs[i]; }

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x k] += A[m x n] * B[k x n]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

// --- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

Tensor Tensor::make(Shape shape, std::vector<double> data,
                    std::vector<Tensor> inputs,
                    std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  bool any = false;
  if (t_grad_enabled) {
    for (const auto& t : inputs) any = any || t.requires_grad();
  }
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("dim(): axis out of range");
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(node_->data.size(), 0.0);
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item(): tensor of shape " + shape_str(shape()) +
                        " is not a scalar");
  }
  return node_->data[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  return node_->data[i * node_->shape.back() + j];
}

bool Tensor::all_finite() const {
  return std::all_of(node_->data.begin(), node_->data.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor Tensor::detach() const {
  return from(node_->shape, node_->data, false);
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw ContractError("backward(): loss must be a scalar, got shape " +
                        shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  std::vector<detail::Node*> order;
  std::unordered_set<const detail::Node*> seen;
  std::vector<detail::Node*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->inputs) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto* n : order) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// --- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return Tensor::make({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& A = in(self, 0);
    auto& B = in(self, 1);
    if (A.requires_grad) {
      A.ensure_grad();
      gemm_nt(self.grad.data(), B.data.data(), A.grad.data(), m, n, k);
    }
    if (B.requires_grad) {
      B.ensure_grad();
      gemm_tn(A.data.data(), self.grad.data(), B.grad.data(), m, k, n);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const auto src = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
  return Tensor::make({n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
    auto& A = in(self, 0);
    A.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) A.grad[i * n + j] += self.grad[j * m + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::make(std::move(shape), std::move(out), {a}, [](detail::Node& self) {
    auto& A = in(self, 0);
    A.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor::make(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& X = in(self, k);
      if (!X.requires_grad) continue;
      X.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) X.grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return Tensor::make(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& A = in(self, 0);
    auto& B = in(self, 1);
    if (A.requires_grad) {
      A.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i];
    }
    if (B.requires_grad) {
      B.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) B.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor::make(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& A = in(self, 0);
    auto& B = in(self, 1);
    if (A.requires_grad) {
      A.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i] * B.data[i];
    }
    if (B.requires_grad) {
      B.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) B.grad[i] += self.grad[i] * A.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return Tensor::make(a.shape(), std::move(out), {a}, [factor](detail::Node& self) {
    auto& A = in(self, 0);
    A.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i] * factor;
  });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  require_2d(a, "add_row");
  const auto m = a.dim(0), n = a.dim(1);
  if (bias.numel() != n) {
    throw ShapeError("add_row: bias " + shape_str(bias.shape()) + " does not match " +
                     shape_str(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.data()[j];
  return Tensor::make(a.shape(), std::move(out), {a, bias}, [m, n](detail::Node& self) {
    auto& A = in(self, 0);
    auto& B = in(self, 1);
    if (A.requires_grad) {
      A.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i];
    }
    if (B.requires_grad) {
      B.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) B.grad[j] += self.grad[i * n + j];
    }
  });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw ShapeError("mul_scalar: expected a scalar factor");
  const double f = s.data()[0];
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * f;
  return Tensor::make(a.shape(), std::move(out), {a, s}, [](detail::Node& self) {
    auto& A = in(self, 0);
    auto& S = in(self, 1);
    const double f = S.data[0];
    if (A.requires_grad) {
      A.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i] * f;
    }
    if (S.requires_grad) {
      S.ensure_grad();
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * A.data[i];
      S.grad[0] += acc;
    }
  });
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
  return Tensor::make(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto& A = in(self, 0);
    A.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i] * self.data[i];
  });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
  }
  return Tensor::make(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto& A = in(self, 0);
    A.ensure_grad();
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = A.data[i];
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      A.grad[i] += self.grad[i] * (cdf + x * pdf);
    }
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return Tensor::make({}, {acc}, {a}, [](detail::Node& self) {
    auto& A = in(self, 0);
    A.ensure_grad();
    for (auto& g : A.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor softmax(const Tensor& a, std::size_t axis, double temperature) {
  if (!(temperature > 0.0)) {
    throw ParameterError("softmax: temperature must be positive, got " +
                         std::to_string(temperature));
  }
  const auto s = split_axis(a.shape(), axis);
  const auto x = a.data();
  std::vector<double> out(a.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in_ = 0; in_ < s.inner; ++in_) {
      const std::size_t base = o * s.len * s.inner + in_;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.len; ++k) mx = std::max(mx, x[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) {
        const double e = std::exp((x[base + k * s.inner] - mx) / temperature);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.len; ++k) out[base + k * s.inner] /= z;
    }
  }
  return Tensor::make(a.shape(), std::move(out), {a}, [s, temperature](detail::Node& self) {
    auto& A = in(self, 0);
    A.ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in_ = 0; in_ < s.inner; ++in_) {
        const std::size_t base = o * s.len * s.inner + in_;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.len; ++k) {
          const auto idx = base + k * s.inner;
          dot += self.grad[idx] * self.data[idx];
        }
        for (std::size_t k = 0; k < s.len; ++k) {
          const auto idx = base + k * s.inner;
          A.grad[idx] += self.data[idx] * (self.grad[idx] - dot) / temperature;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const auto d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain/bias length must equal last axis of " +
                     shape_str(x.shape()));
  }
  const auto rows = x.numel() / d;
  std::vector<double> out(x.numel()), xhat(x.numel()), rstd(rows);
  const auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xs[r * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xs[r * d + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xs[r * d + j] - mu) * rstd[r];
      xhat[r * d + j] = h;
      out[r * d + j] = h * gain.data()[j] + bias.data()[j];
    }
  }
  return Tensor::make(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& self) {
        auto& X = in(self, 0);
        auto& G = in(self, 1);
        auto& B = in(self, 2);
        if (G.requires_grad) G.ensure_grad();
        if (B.requires_grad) B.ensure_grad();
        if (X.requires_grad) X.ensure_grad();
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const auto idx = r * d + j;
            const double gy = self.grad[idx];
            if (G.requires_grad) G.grad[j] += gy * xhat[idx];
            if (B.requires_grad) B.grad[j] += gy;
            dxhat[j] = gy * G.data[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xhat[idx];
          }
          if (!X.requires_grad) continue;
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const auto idx = r * d + j;
            X.grad[idx] += rstd[r] * (dxhat[j] - m1 - xhat[idx] * m2);
          }
        }
      });
}

Tensor l2_normalize(const Tensor& x, std::size_t axis, double eps) {
  const auto s = split_axis(x.shape(), axis);
  const auto xs = x.data();
  std::vector<double> out(x.numel());
  std::vector<double> norms(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double sq = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) sq += xs[base + k * s.inner] * xs[base + k * s.inner];
      const double n = std::max(std::sqrt(sq), eps);
      norms[o * s.inner + i] = n;
      for (std::size_t k = 0; k < s.len; ++k) out[base + k * s.inner] = xs[base + k * s.inner] / n;
    }
  }
  return Tensor::make(x.shape(), std::move(out), {x},
                      [s, eps, norms = std::move(norms)](detail::Node& self) {
                        auto& X = in(self, 0);
                        X.ensure_grad();
                        for (std::size_t o = 0; o < s.outer; ++o) {
                          for (std::size_t i = 0; i < s.inner; ++i) {
                            const std::size_t base = o * s.len * s.inner + i;
                            const double n = norms[o * s.inner + i];
                            // Below eps the map is linear (x / eps).
                            const bool clamped = n <= eps;
                            double dot = 0.0;
                            if (!clamped) {
                              for (std::size_t k = 0; k < s.len; ++k) {
                                const auto idx = base + k * s.inner;
                                dot += self.grad[idx] * self.data[idx];
                              }
                            }
                            for (std::size_t k = 0; k < s.len; ++k) {
                              const auto idx = base + k * s.inner;
                              X.grad[idx] += (self.grad[idx] - self.data[idx] * dot) / n;
                            }
                          }
                        }
                      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_2d(logits, "cross_entropy");
  const auto b = logits.dim(0), c = logits.dim(1);
  if (labels.size() != b) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(b) + " rows");
  }
  if (b == 0) throw ShapeError("cross_entropy: empty batch");
  for (auto l : labels) {
    if (l >= c) {
      throw IndexError("cross_entropy: label " + std::to_string(l) +
                       " out of range for " + std::to_string(c) + " classes");
    }
  }
  const auto x = logits.data();
  std::vector<double> probs(b * c);
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, x[r * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[r * c + j] = std::exp(x[r * c + j] - mx);
      z += probs[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] /= z;
    total += (mx + std::log(z)) - x[r * c + labels[r]];
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return Tensor::make({}, {total / static_cast<double>(b)}, {logits},
                      [b, c, probs = std::move(probs), lab = std::move(lab)](detail::Node& self) {
                        auto& L = in(self, 0);
                        L.ensure_grad();
                        const double g = self.grad[0] / static_cast<double>(b);
                        for (std::size_t r = 0; r < b; ++r) {
                          for (std::size_t j = 0; j < c; ++j) {
                            const double target = (j == lab[r]) ? 1.0 : 0.0;
                            L.grad[r * c + j] += g * (probs[r * c + j] - target);
                          }
                        }
                      });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_2d(a, "gather_rows");
  const auto n = a.dim(0), d = a.dim(1);
  std::vector<double> out(rows.size() * d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) {
      throw IndexError("gather_rows: row " + std::to_string(rows[r]) +
                       " out of range for " + std::to_string(n) + " rows");
    }
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(rows[r] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return Tensor::make({rows.size(), d}, std::move(out), {a},
                      [d, idx = std::move(idx)](detail::Node& self) {
                        auto& A = in(self, 0);
                        A.ensure_grad();
                        for (std::size_t r = 0; r < idx.size(); ++r)
                          for (std::size_t j = 0; j < d; ++j)
                            A.grad[idx[r] * d + j] += self.grad[r * d + j];
                      });
}

Tensor mean_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_2d(a, "mean_rows");
  if (rows.empty()) throw ContractError("mean_rows: empty index set");
  const auto n = a.dim(0), d = a.dim(1);
  std::vector<double> out(d, 0.0);
  for (auto r : rows) {
    if (r >= n) {
      throw IndexError("mean_rows: row " + std::to_string(r) + " out of range for " +
                       std::to_string(n) + " rows");
    }
    for (std::size_t j = 0; j < d; ++j) out[j] += a.data()[r * d + j];
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (auto& v : out) v *= inv;
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return Tensor::make({d}, std::move(out), {a},
                      [d, inv, idx = std::move(idx)](detail::Node& self) {
                        auto& A = in(self, 0);
                        A.ensure_grad();
                        for (auto r : idx)
                          for (std::size_t j = 0; j < d; ++j)
                            A.grad[r * d + j] += self.grad[j] * inv;
                      });
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  const auto d = rows[0].numel();
  std::vector<double> out;
  out.reserve(rows.size() * d);
  for (const auto& r : rows) {
    if (r.numel() != d) throw ShapeError("stack_rows: rows differ in length");
    out.insert(out.end(), r.data().begin(), r.data().end());
  }
  std::vector<Tensor> inputs(rows.begin(), rows.end());
  return Tensor::make({rows.size(), d}, std::move(out), std::move(inputs),
                      [d](detail::Node& self) {
                        for (std::size_t r = 0; r < self.inputs.size(); ++r) {
                          auto& R = in(self, r);
                          if (!R.requires_grad) continue;
                          R.ensure_grad();
                          for (std::size_t j = 0; j < d; ++j) R.grad[j] += self.grad[r * d + j];
                        }
                      });
}

Tensor causal_self_attention(const Tensor& qkv, std::size_t batch, std::size_t seq,
                             std::size_t heads, std::span<const std::size_t> lengths) {
  require_2d(qkv, "causal_self_attention");
  if (qkv.dim(0) != batch * seq || qkv.dim(1) % 3 != 0) {
    throw ShapeError("causal_self_attention: qkv shape " + shape_str(qkv.shape()) +
                     " does not match batch " + std::to_string(batch) + " x seq " +
                     std::to_string(seq));
  }
  const auto width = qkv.dim(1) / 3;
  if (heads == 0 || width % heads != 0) {
    throw ShapeError("causal_self_attention: width not divisible by heads");
  }
  if (lengths.size() != batch) throw ShapeError("causal_self_attention: lengths size");
  const auto hd = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto row = 3 * width;
  const auto x = qkv.data();

  // probs[b][h][i][j], zero where masked.
  std::vector<double> probs(batch * heads * seq * seq, 0.0);
  std::vector<double> out(batch * seq * width, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto len = std::min(lengths[b], seq);
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = probs.data() + ((b * heads + h) * seq) * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const double* q = x.data() + (b * seq + i) * row + h * hd;
        const auto kmax = std::min(i + 1, len);
        if (kmax == 0) continue;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < kmax; ++j) {
          const double* k = x.data() + (b * seq + j) * row + width + h * hd;
          double s = 0.0;
          for (std::size_t t = 0; t < hd; ++t) s += q[t] * k[t];
          s *= inv_sqrt;
          P[i * seq + j] = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < kmax; ++j) {
          P[i * seq + j] = std::exp(P[i * seq + j] - mx);
          z += P[i * seq + j];
        }
        double* o = out.data() + (b * seq + i) * width + h * hd;
        for (std::size_t j = 0; j < kmax; ++j) {
          P[i * seq + j] /= z;
          const double p = P[i * seq + j];
          const double* v = x.data() + (b * seq + j) * row + 2 * width + h * hd;
          for (std::size_t t = 0; t < hd; ++t) o[t] += p * v[t];
        }
      }
    }
  }
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  return Tensor::make(
      {batch * seq, width}, std::move(out), {qkv},
      [batch, seq, heads, width, hd, inv_sqrt, row, probs = std::move(probs),
       lens = std::move(lens)](detail::Node& self) {
        auto& X = in(self, 0);
        X.ensure_grad();
        std::vector<double> dP(seq);
        for (std::size_t b = 0; b < batch; ++b) {
          const auto len = std::min(lens[b], seq);
          for (std::size_t h = 0; h < heads; ++h) {
            const double* P = probs.data() + ((b * heads + h) * seq) * seq;
            for (std::size_t i = 0; i < seq; ++i) {
              const auto kmax = std::min(i + 1, len);
              if (kmax == 0) continue;
              const double* dO = self.grad.data() + (b * seq + i) * width + h * hd;
              double dot = 0.0;
              for (std::size_t j = 0; j < kmax; ++j) {
                const double* v = X.data.data() + (b * seq + j) * row + 2 * width + h * hd;
                double* dv = X.grad.data() + (b * seq + j) * row + 2 * width + h * hd;
                const double p = P[i * seq + j];
                double s = 0.0;
                for (std::size_t t = 0; t < hd; ++t) {
                  s += dO[t] * v[t];
                  dv[t] += p * dO[t];
                }
                dP[j] = s;
                dot += s * p;
              }
              const double* q = X.data.data() + (b * seq + i) * row + h * hd;
              double* dq = X.grad.data() + (b * seq + i) * row + h * hd;
              for (std::size_t j = 0; j < kmax; ++j) {
                const double ds = P[i * seq + j] * (dP[j] - dot) * inv_sqrt;
                if (ds == 0.0) continue;
                const double* k = X.data.data() + (b * seq + j) * row + width + h * hd;
                double* dk = X.grad.data() + (b * seq + j) * row + width + h * hd;
                for (std::size_t t = 0; t < hd; ++t) {
                  dq[t] += ds * k[t];
                  dk[t] += ds * q[t];
                }
              }
            }
          }
        }
      });
}

}  // namespace dalign
