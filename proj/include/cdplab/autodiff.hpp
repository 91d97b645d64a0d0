#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cdplab/error.hpp"
#include "cdplab/rng.hpp"

namespace cdp::ad {

/// Tensor extents. Images use NCHW; a scalar is the empty shape.
using Shape = std::vector<Eigen::Index>;

Eigen::Index numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  Eigen::ArrayXd value;
  Eigen::ArrayXd grad;  // empty until first use
  bool requires_grad = false;
  std::int64_t id = 0;  // creation order; parents always have smaller ids
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;  // accumulates into parents' grads

  void ensure_grad() {
    if (grad.size() == 0) grad = Eigen::ArrayXd::Zero(value.size());
  }
};

}  // namespace detail

/// Value-semantics handle to a graph node. Ops are free functions that
/// record a backward rule whenever any input requires gradients. Every op
/// checks its output for NaN/Inf and throws NumericError on violation.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, Eigen::ArrayXd data,
                          bool requires_grad = false);
  /// Seeded normal init, scale * N(0, 1), row-major draw order.
  static Tensor randn(const Shape& shape, Rng& rng, double scale,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  Eigen::Index size() const { return node().value.size(); }
  bool requires_grad() const { return node().requires_grad; }

  const Eigen::ArrayXd& value() const { return node().value; }
  Eigen::ArrayXd& value() { return node().value; }
  /// Accumulated gradient; zero-sized until backward has reached this node.
  const Eigen::ArrayXd& grad() const { return node().grad; }
  Eigen::ArrayXd& grad_ref() { node().ensure_grad(); return node().grad; }

  /// Value of a scalar (numel == 1) tensor.
  double scalar() const;

  /// Same value, severed from the graph, requires_grad = false.
  Tensor detach() const;

  void zero_grad() { if (node_) node_->grad.resize(0); }

  detail::Node& node() const {
    if (!node_) throw InvalidArgument("use of undefined Tensor");
    return *node_;
  }
  std::shared_ptr<detail::Node> handle() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

// --- operator set ------------------------------------------------------------

/// input [N,C,H,W] * kernel [F,C,kh,kw] -> [N,F,H',W'],
/// H' = floor((H + 2*padding - kh)/stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);

/// input [N,C,H,W] * kernel [C,F,kh,kw] -> [N,F,H',W'],
/// H' = (H - 1)*stride - 2*padding + kh. Adjoint of conv2d.
Tensor conv2d_transpose(const Tensor& input, const Tensor& kernel, int stride,
                        int padding);

Tensor leaky_relu(const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);

/// Per (sample, channel) normalization over the spatial extent:
/// (x - mean) / sqrt(var + eps), biased variance.
Tensor instance_norm(const Tensor& x, double eps);

/// [N,Ca,H,W] ++ [N,Cb,H,W] -> [N,Ca+Cb,H,W].
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Elementwise arithmetic on identically-shaped tensors.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div_op(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);

/// x [N,C,H,W] + bias [C] broadcast over N,H,W.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

/// Scalar mean over all elements.
Tensor mean_all(const Tensor& x);

/// Mean absolute difference. Subgradient 0 where a == b.
Tensor l1_loss(const Tensor& a, const Tensor& b);

/// Mean of -[t*log(p) + (1-t)*log(1-p)] with p clamped to [eps, 1-eps].
/// Clamped entries contribute zero gradient to p.
Tensor bce_loss(const Tensor& p, const Tensor& target, double eps = 1e-7);

/// Reverse-mode sweep from a scalar loss. Populates gradients of every
/// reachable tensor with requires_grad set; leaf gradients accumulate across
/// calls, intermediate gradients are recomputed per call.
void backward(const Tensor& loss);

void zero_grad(const std::vector<Tensor>& params);

// --- optimizer ---------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers shape-match the parameters.
class Adam {
 public:
  Adam(std::vector<Tensor> params, const AdamConfig& cfg);

  /// One update from the parameters' current gradients.
  void step();

  long step_count() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Eigen::ArrayXd> m_, v_;
  AdamConfig cfg_;
  long t_ = 0;
};

}  // namespace cdp::ad
