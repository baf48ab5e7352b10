#pragma once

// Dense f64 tensors with a dynamic reverse-mode tape.
//
// Every op that receives at least one input with requires_grad (while grad
// mode is on) records a node holding its inputs and a backward rule. Nodes
// carry a monotonically increasing id; backward() visits the nodes reachable
// from the loss once each, in decreasing id order, which is reverse
// insertion order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dalign {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad and accumulates into inputs' grads.
  std::function<void(Node&)> backward;

  void ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // In-place access for optimizers and initializers. Never call on a tensor
  // that is an input of a live graph whose backward has not yet run.
  std::span<double> mutable_data();

  bool requires_grad() const;
  bool has_grad() const;
  // Zeros when no gradient has been accumulated.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t i, std::size_t j) const;

  bool all_finite() const;

  // Populates gradients of every requires_grad tensor reachable from this
  // scalar. Throws ContractError for non-scalar tensors.
  void backward() const;

  // Same values, cut from the graph.
  Tensor detach() const;

  // Internal: op implementations build nodes through this.
  static Tensor make(Shape shape, std::vector<double> data,
                     std::vector<Tensor> inputs,
                     std::function<void(detail::Node&)> backward);
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// --- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// a[N x D] + bias[D], broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& bias);
// a * s for a scalar tensor s.
Tensor mul_scalar(const Tensor& a, const Tensor& s);
Tensor exp(const Tensor& a);
Tensor gelu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Stable softmax of a / temperature along `axis`.
Tensor softmax(const Tensor& a, std::size_t axis, double temperature = 1.0);

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kNormalizeEps = 1e-12;

// Normalizes over the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);

// x / max(||x||, eps) along `axis`.
Tensor l2_normalize(const Tensor& x, std::size_t axis,
                    double eps = kNormalizeEps);

// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

// Rows of a 2-D tensor; out-of-range indices raise IndexError.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
// Mean of the selected rows, shape {D}.
Tensor mean_rows(const Tensor& a, std::span<const std::size_t> rows);
// Stacks same-length vectors ({D} or {1, D}) into {k, D}.
Tensor stack_rows(std::span<const Tensor> rows);

// Multi-head causal self-attention over a packed batch.
// qkv: {batch * seq, 3 * width} holding [q | k | v] per row. Key positions
// at or past lengths[b] are masked. Returns {batch * seq, width}.
Tensor causal_self_attention(const Tensor& qkv, std::size_t batch,
                             std::size_t seq, std::size_t heads,
                             std::span<const std::size_t> lengths);

}  // namespace dalign
