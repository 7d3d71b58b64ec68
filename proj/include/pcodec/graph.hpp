#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "pcodec/tensor.hpp"

// Tape-based reverse-mode autodiff over dense double tensors. Generator and
// discriminator losses live on separate Tape instances so gradients never
// leak across the adversarial boundary.
namespace pcodec::ag {

class Tape;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first use during backward
  bool requires_grad = false;
  bool grad_alloc = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  Tape* tape = nullptr;

  Tensor& g();  // grad, zero-allocated to value's shape on demand
};

using NodePtr = std::shared_ptr<Node>;

class Tape {
 public:
  NodePtr leaf(Tensor v, bool requires_grad = true);
  NodePtr constant(Tensor v) { return leaf(std::move(v), false); }
  NodePtr make(Tensor v, std::vector<NodePtr> parents, std::function<void(Node&)> bw);
  // Seeds d(root)/d(root) = 1 (root must be scalar) and sweeps the tape in
  // reverse creation order, accumulating into every reachable grad.
  void backward(const NodePtr& root);
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<NodePtr> nodes_;
};

// ---- elementwise / shape ----
NodePtr add(NodePtr a, NodePtr b);
NodePtr sub(NodePtr a, NodePtr b);
NodePtr mul(NodePtr a, NodePtr b);
NodePtr scale(NodePtr x, double s);
NodePtr add_const(NodePtr x, const Tensor& c);
NodePtr mul_const(NodePtr x, const Tensor& c);
NodePtr clamp(NodePtr x, double lo, double hi);
NodePtr stopgrad(NodePtr x);
// value = hard, gradient flows to soft (straight-through estimator)
NodePtr straight_through(const Tensor& hard, NodePtr soft);
NodePtr reshape(NodePtr x, std::vector<int64_t> shape);
NodePtr transpose2d(NodePtr x);
NodePtr slice_rows(NodePtr x, int64_t r0, int64_t r1);
NodePtr slice_cols(NodePtr x, int64_t c0, int64_t c1);
NodePtr concat_cols(const std::vector<NodePtr>& xs);

// ---- linear algebra ----
NodePtr matmul(NodePtr a, NodePtr b);     // [m,k]*[k,n]
NodePtr matmul_tn(NodePtr a, NodePtr b);  // a:[k,m] -> a^T*b
NodePtr matmul_nt(NodePtr a, NodePtr b);          // b:[n,k] -> a*b^T
NodePtr matmul_nt_const(NodePtr a, const Tensor& b);  // untracked right operand
NodePtr add_bias_rows(NodePtr x, NodePtr b);      // [n,h]+[h]
NodePtr add_bias_channels(NodePtr x, NodePtr b);  // [c,l]+[c]

// ---- convolutions ([c_in,l] layout) ----
NodePtr conv1d(NodePtr x, NodePtr w, NodePtr b, int64_t stride, int64_t pad_l);
NodePtr conv_transpose1d(NodePtr x, NodePtr w, NodePtr b, int64_t stride, int64_t pad_l);
NodePtr avg_pool1d(NodePtr x, int64_t factor);

// ---- nonlinearities ----
NodePtr silu(NodePtr x);
NodePtr elu(NodePtr x);
NodePtr tanh_op(NodePtr x);
NodePtr leaky_relu(NodePtr x, double slope);

// ---- normalization / attention pieces ----
NodePtr rmsnorm(NodePtr x, NodePtr gain, double eps = 1e-6);
NodePtr softmax_rows(NodePtr x);
NodePtr softmax_rows_causal(NodePtr x);  // row i attends to columns <= i
NodePtr rope(NodePtr x, double base = 10000.0);
NodePtr normalize_l2_rows(NodePtr x, double eps = 1e-12);

// ---- embeddings / classification ----
NodePtr gather_rows(NodePtr table, const std::vector<int32_t>& ids);
// Gather over the virtual vertical concatenation [ta; tb].
NodePtr gather_rows2(NodePtr ta, NodePtr tb, const std::vector<int32_t>& ids);
// per-row negative log-likelihood, shape [n]
NodePtr ce_rows(NodePtr logits, const std::vector<int32_t>& ids);
// label-smoothed: target = (1-eps)*onehot + eps/v
NodePtr ce_rows_smoothed(NodePtr logits, const std::vector<int32_t>& ids, double eps);

// ---- reductions to scalars ----
NodePtr sum_all(NodePtr x);
NodePtr mean_all(NodePtr x);
NodePtr sum_squares(NodePtr x);
NodePtr dot_const(NodePtr v, const Tensor& w);
NodePtr sqrt_s(NodePtr s, double eps = 0.0);
NodePtr div_ss(NodePtr a, NodePtr b);
NodePtr div_by_scalar(NodePtr x, NodePtr s);  // x / s with scalar node s
NodePtr wsum(const std::vector<NodePtr>& scalars, const std::vector<double>& weights);
NodePtr l1_mean(NodePtr a, NodePtr b);
NodePtr mse_mean(NodePtr a, NodePtr b);
NodePtr log_eps(NodePtr x, double eps);
// mean over elements of relu(margin - x), the hinge building block
NodePtr hinge_mean(NodePtr x, double margin, double sign);

// ---- spectral ----
// Reflect-padded STFT with a periodic Hann window baked in by the caller.
// x: [l]; output [2, fft/2+1, 1+floor(l/hop)] (re plane, im plane).
NodePtr stft(NodePtr x, int64_t fft_size, int64_t hop, const std::vector<double>& window);
NodePtr complex_magnitude(NodePtr spec);  // [2,f,b] -> [f,b]
// masked mean of |unit(ref) - unit(hat)| over bins where |ref| >= mask_floor
NodePtr phase_loss(NodePtr hat, const Tensor& ref, double mask_floor);

}  // namespace pcodec::ag
