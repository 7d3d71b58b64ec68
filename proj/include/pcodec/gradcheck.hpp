#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "pcodec/graph.hpp"

// Central-difference gradient verification used by the unit tests and the
// gradient acceptance suite.
namespace pcodec::ag {

using BuildFn = std::function<NodePtr(Tape&, const std::vector<NodePtr>&)>;

inline double eval_loss(const std::vector<Tensor>& params, const BuildFn& build) {
  Tape tape;
  std::vector<NodePtr> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p, true));
  return build(tape, leaves)->value.data[0];
}

// Max over checked elements of |ad - fd| / max(1, |ad|, |fd|).
// max_per_param < 0 checks everything; otherwise elements are strided so at
// most that many per tensor are probed.
inline double gradcheck_max_err(std::vector<Tensor> params, const BuildFn& build,
                                double h = 1e-5, int64_t max_per_param = -1) {
  Tape tape;
  std::vector<NodePtr> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p, true));
  NodePtr loss = build(tape, leaves);
  tape.backward(loss);

  double max_err = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const int64_t n = params[pi].numel();
    const int64_t stride =
        max_per_param > 0 ? std::max<int64_t>(1, (n + max_per_param - 1) / max_per_param) : 1;
    for (int64_t j = 0; j < n; j += stride) {
      const double orig = params[pi].data[j];
      params[pi].data[j] = orig + h;
      const double lp = eval_loss(params, build);
      params[pi].data[j] = orig - h;
      const double lm = eval_loss(params, build);
      params[pi].data[j] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double ad = leaves[pi]->grad_alloc ? leaves[pi]->grad.data[j] : 0.0;
      const double err = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace pcodec::ag
