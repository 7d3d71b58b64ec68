#include "pcodec/graph.hpp"

#include <algorithm>
#include <cmath>

#include "pcodec/errors.hpp"
#include "pcodec/kernels.hpp"

namespace pcodec::ag {

Tensor& Node::g() {
  if (!grad_alloc) {
    grad = Tensor::zeros(value.shape);
    grad_alloc = true;
  }
  return grad;
}

NodePtr Tape::leaf(Tensor v, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  n->tape = this;
  nodes_.push_back(n);
  return n;
}

NodePtr Tape::make(Tensor v, std::vector<NodePtr> parents, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backward_fn = std::move(bw);
  n->tape = n->parents.empty() ? this : n->parents[0]->tape;
  n->tape->nodes_.push_back(n);
  return n;
}

void Tape::backward(const NodePtr& root) {
  if (root->value.numel() != 1) throw ContractError("backward: root must be scalar");
  root->g().data[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.grad_alloc && n.requires_grad && n.backward_fn) n.backward_fn(n);
  }
}

namespace {

Tape& tape_of(const NodePtr& a) { return *a->tape; }

void check_same_shape(const NodePtr& a, const NodePtr& b, const char* op) {
  if (!a->value.same_shape(b->value)) throw ShapeError(std::string(op) + ": shape mismatch");
}

}  // namespace

NodePtr add(NodePtr a, NodePtr b) {
  check_same_shape(a, b, "add");
  Tensor v = a->value;
  for (size_t i = 0; i < v.data.size(); ++i) v.data[i] += b->value.data[i];
  return tape_of(a).make(std::move(v), {a, b}, [](Node& n) {
    const auto& g = n.grad.data;
    for (int s = 0; s < 2; ++s) {
      if (!n.parents[s]->requires_grad) continue;
      auto& pg = n.parents[s]->g().data;
      for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    }
  });
}

NodePtr sub(NodePtr a, NodePtr b) {
  check_same_shape(a, b, "sub");
  Tensor v = a->value;
  for (size_t i = 0; i < v.data.size(); ++i) v.data[i] -= b->value.data[i];
  return tape_of(a).make(std::move(v), {a, b}, [](Node& n) {
    const auto& g = n.grad.data;
    if (n.parents[0]->requires_grad) {
      auto& pg = n.parents[0]->g().data;
      for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    }
    if (n.parents[1]->requires_grad) {
      auto& pg = n.parents[1]->g().data;
      for (size_t i = 0; i < g.size(); ++i) pg[i] -= g[i];
    }
  });
}

NodePtr mul(NodePtr a, NodePtr b) {
  check_same_shape(a, b, "mul");
  Tensor v = a->value;
  for (size_t i = 0; i < v.data.size(); ++i) v.data[i] *= b->value.data[i];
  return tape_of(a).make(std::move(v), {a, b}, [](Node& n) {
    const auto& g = n.grad.data;
    if (n.parents[0]->requires_grad) {
      auto& pg = n.parents[0]->g().data;
      const auto& bv = n.parents[1]->value.data;
      for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * bv[i];
    }
    if (n.parents[1]->requires_grad) {
      auto& pg = n.parents[1]->g().data;
      const auto& av = n.parents[0]->value.data;
      for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * av[i];
    }
  });
}

NodePtr scale(NodePtr x, double s) {
  Tensor v = x->value;
  for (auto& e : v.data) e *= s;
  return tape_of(x).make(std::move(v), {x}, [s](Node& n) {
    auto& pg = n.parents[0]->g().data;
    for (size_t i = 0; i < n.grad.data.size(); ++i) pg[i] += n.grad.data[i] * s;
  });
}

NodePtr add_const(NodePtr x, const Tensor& c) {
  if (!x->value.same_shape(c)) throw ShapeError("add_const: shape mismatch");
  Tensor v = x->value;
  for (size_t i = 0; i < v.data.size(); ++i) v.data[i] += c.data[i];
  return tape_of(x).make(std::move(v), {x}, [](Node& n) {
    auto& pg = n.parents[0]->g().data;
    for (size_t i = 0; i < n.grad.data.size(); ++i) pg[i] += n.grad.data[i];
  });
}

NodePtr mul_const(NodePtr x, const Tensor& c) {
  if (!x->value.same_shape(c)) throw ShapeError("mul_const: shape mismatch");
  Tensor v = x->value;
  for (size_t i = 0; i < v.data.size(); ++i) v.data[i] *= c.data[i];
  return tape_of(x).make(std::move(v), {x}, [c](Node& n) {
    auto& pg = n.parents[0]->g().data;
    for (size_t i = 0; i < n.grad.data.size(); ++i) pg[i] += n.grad.data[i] * c.data[i];
  });
}

NodePtr clamp(NodePtr x, double lo, double hi) {
  Tensor v = x->value;
  for (auto& e : v.data) e = std::min(std::max(e, lo), hi);
  return tape_of(x).make(std::move(v), {x}, [lo, hi](Node& n) {
    auto& pg = n.parents[0]->g().data;
    const auto& xv = n.parents[0]->value.data;
    for (size_t i = 0; i < n.grad.data.size(); ++i)
      if (xv[i] > lo && xv[i] < hi) pg[i] += n.grad.data[i];
  });
}

NodePtr stopgrad(NodePtr x) { return tape_of(x).constant(x->value); }

NodePtr straight_through(const Tensor& hard, NodePtr soft) {
  if (!hard.same_shape(soft->value)) throw ShapeError("straight_through: shape mismatch");
  return tape_of(soft).make(hard, {soft}, [](Node& n) {
    auto& pg = n.parents[0]->g().data;
    for (size_t i = 0; i < n.grad.data.size(); ++i) pg[i] += n.grad.data[i];
  });
}

NodePtr reshape(NodePtr x, std::vector<int64_t> shape) {
  Tensor v;
  v.shape = std::move(shape);
  v.data = x->value.data;
  if (v.numel() != x->value.numel()) throw ShapeError("reshape: element count mismatch");
  return tape_of(x).make(std::move(v), {x}, [](Node& n) {
    auto& pg = n.parents[0]->g().data;
    for (size_t i = 0; i < n.grad.data.size(); ++i) pg[i] += n.grad.data[i];
  });
}

NodePtr transpose2d(NodePtr x) {
  const int64_t r = x->value.shape[0], c = x->value.shape[1];
  Tensor v = Tensor::zeros({c, r});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) v.data[j * r + i] = x->value.data[i * c + j];
  return tape_of(x).make(std::move(v), {x}, [r, c](Node& n) {
    auto& pg = n.parents[0]->g().data;
    for (int64_t j = 0; j < c; ++j)
      for (int64_t i = 0; i < r; ++i) pg[i * c + j] += n.grad.data[j * r + i];
  });
}

NodePtr slice_rows(NodePtr x, int64_t r0, int64_t r1) {
  const int64_t c = x->value.shape.back();
  const int64_t rows = x->value.shape[0];
  if (r0 < 0 || r1 > rows || r0 >= r1) throw IndexError("slice_rows: bad range");
  Tensor v = Tensor::zeros({r1 - r0, c});
  std::copy(x->value.data.begin() + r0 * c, x->value.data.begin() + r1 * c, v.data.begin());
  return tape_of(x).make(std::move(v), {x}, [r0, c](Node& n) {
    auto& pg = n.parents[0]->g().data;
    for (size_t i = 0; i < n.grad.data.size(); ++i) pg[r0 * c + i] += n.grad.data[i];
  });
}

NodePtr slice_cols(NodePtr x, int64_t c0, int64_t c1) {
  const int64_t r = x->value.shape[0], c = x->value.shape[1];
  if (c0 < 0 || c1 > c || c0 >= c1) throw IndexError("slice_cols: bad range");
  const int64_t w = c1 - c0;
  Tensor v = Tensor::zeros({r, w});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < w; ++j) v.data[i * w + j] = x->value.data[i * c + c0 + j];
  return tape_of(x).make(std::move(v), {x}, [r, c, c0, w](Node& n) {
    auto& pg = n.parents[0]->g().data;
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < w; ++j) pg[i * c + c0 + j] += n.grad.data[i * w + j];
  });
}

NodePtr concat_cols(const std::vector<NodePtr>& xs) {
  if (xs.empty()) throw ContractError("concat_cols: empty input");
  const int64_t r = xs[0]->value.shape[0];
  int64_t total = 0;
  for (const auto& x : xs) {
    if (x->value.shape[0] != r) throw ShapeError("concat_cols: row mismatch");
    total += x->value.shape[1];
  }
  Tensor v = Tensor::zeros({r, total});
  int64_t off = 0;
  for (const auto& x : xs) {
    const int64_t w = x->value.shape[1];
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < w; ++j) v.data[i * total + off + j] = x->value.data[i * w + j];
    off += w;
  }
  return tape_of(xs[0]).make(std::move(v), xs, [r, total](Node& n) {
    int64_t off = 0;
    for (auto& p : n.parents) {
      const int64_t w = p->value.shape[1];
      if (p->requires_grad) {
        auto& pg = p->g().data;
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < w; ++j) pg[i * w + j] += n.grad.data[i * total + off + j];
      }
      off += w;
    }
  });
}

NodePtr matmul(NodePtr a, NodePtr b) {
  const int64_t m = a->value.shape[0], k = a->value.shape[1], n_ = b->value.shape[1];
  if (b->value.shape[0] != k) throw ShapeError("matmul: inner dim mismatch");
  Tensor v = Tensor::zeros({m, n_});
  kern::matmul(a->value.data.data(), b->value.data.data(), v.data.data(), m, k, n_);
  return tape_of(a).make(std::move(v), {a, b}, [m, k, n_](Node& n) {
    if (n.parents[0]->requires_grad)
      kern::matmul_nt(n.grad.data.data(), n.parents[1]->value.data.data(),
                      n.parents[0]->g().data.data(), m, n_, k, true);
    if (n.parents[1]->requires_grad)
      kern::matmul_tn(n.parents[0]->value.data.data(), n.grad.data.data(),
                      n.parents[1]->g().data.data(), k, m, n_, true);
  });
}

NodePtr matmul_tn(NodePtr a, NodePtr b) {
  const int64_t k = a->value.shape[0], m = a->value.shape[1], n_ = b->value.shape[1];
  if (b->value.shape[0] != k) throw ShapeError("matmul_tn: inner dim mismatch");
  Tensor v = Tensor::zeros({m, n_});
  kern::matmul_tn(a->value.data.data(), b->value.data.data(), v.data.data(), m, k, n_);
  return tape_of(a).make(std::move(v), {a, b}, [m, k, n_](Node& n) {
    if (n.parents[0]->requires_grad)
      kern::matmul_nt(n.parents[1]->value.data.data(), n.grad.data.data(),
                      n.parents[0]->g().data.data(), k, n_, m, true);
    if (n.parents[1]->requires_grad)
      kern::matmul(n.parents[0]->value.data.data(), n.grad.data.data(),
                   n.parents[1]->g().data.data(), k, m, n_, true);
  });
}

NodePtr matmul_nt(NodePtr a, NodePtr b) {
  const int64_t m = a->value.shape[0], k = a->value.shape[1], n_ = b->value.shape[0];
  if (b->value.shape[1] != k) throw ShapeError("matmul_nt: inner dim mismatch");
  Tensor v = Tensor::zeros({m, n_});
  kern::matmul_nt(a->value.data.data(), b->value.data.data(), v.data.data(), m, k, n_);
  return tape_of(a).make(std::move(v), {a, b}, [m, k, n_](Node& n) {
    if (n.parents[0]->requires_grad)
      kern::matmul(n.grad.data.data(), n.parents[1]->value.data.data(),
                   n.parents[0]->g().data.data(), m, n_, k, true);
    if (n.parents[1]->requires_grad)
      kern::matmul_tn(n.grad.data.data(), n.parents[0]->value.data.data(),
                      n.parents[1]->g().data.data(), n_, m, k, true);
  });
}

NodePtr add_bias_rows(NodePtr x, NodePtr b) {
  const int64_t r = x->value.shape[0], c = x->value.shape[1];
  if (b->value.numel() != c) throw ShapeError("add_bias_rows: bias size mismatch");
  Tensor v = x->value;
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) v.data[i * c + j] += b->value.data[j];
  return tape_of(x).make(std::move(v), {x, b}, [r, c](Node& n) {
    if (n.parents[0]->requires_grad) {
      auto& pg = n.parents[0]->g().data;
      for (size_t i = 0; i < n.grad.data.size(); ++i) pg[i] += n.grad.data[i];
    }
    if (n.parents[1]->requires_grad) {
      auto& pg = n.parents[1]->g().data;
      for (int64_t j = 0; j < c; ++j) {
        double acc = 0.0;
        for (int64_t i = 0; i < r; ++i) acc += n.grad.data[i * c + j];
        pg[j] += acc;
      }
    }
  });
}

NodePtr add_bias_channels(NodePtr x, NodePtr b) {
  const int64_t c = x->value.shape[0], l = x->value.shape[1];
  if (b->value.numel() != c) throw ShapeError("add_bias_channels: bias size mismatch");
  Tensor v = x->value;
  for (int64_t i = 0; i < c; ++i)
    for (int64_t t = 0; t < l; ++t) v.data[i * l + t] += b->value.data[i];
  return tape_of(x).make(std::move(v), {x, b}, [c, l](Node& n) {
    if (n.parents[0]->requires_grad) {
      auto& pg = n.parents[0]->g().data;
      for (size_t i = 0; i < n.grad.data.size(); ++i) pg[i] += n.grad.data[i];
    }
    if (n.parents[1]->requires_grad) {
      auto& pg = n.parents[1]->g().data;
      for (int64_t i = 0; i < c; ++i) {
        double acc = 0.0;
        for (int64_t t = 0; t < l; ++t) acc += n.grad.data[i * l + t];
        pg[i] += acc;
      }
    }
  });
}

NodePtr conv1d(NodePtr x, NodePtr w, NodePtr b, int64_t stride, int64_t pad_l) {
  const int64_t ci = x->value.shape[0], l = x->value.shape[1];
  const int64_t co = w->value.shape[0], kw = w->value.shape[2];
  if (w->value.shape[1] != ci) throw ShapeError("conv1d: channel mismatch");
  if (l + pad_l - kw < 0) throw ShapeError("conv1d: empty output");
  const int64_t lout = (l + pad_l - kw) / stride + 1;
  Tensor v = Tensor::zeros({co, lout});
  kern::conv1d(x->value.data.data(), w->value.data.data(),
               b ? b->value.data.data() : nullptr, v.data.data(), ci, l, co, kw, stride, pad_l,
               lout);
  std::vector<NodePtr> parents = {x, w};
  if (b) parents.push_back(b);
  return tape_of(x).make(std::move(v), std::move(parents),
                         [ci, l, co, kw, stride, pad_l, lout](Node& n) {
    const double* gy = n.grad.data.data();
    if (n.parents[0]->requires_grad) {
      Tensor gx = Tensor::zeros({ci, l});
      kern::conv1d_input_grad(gy, n.parents[1]->value.data.data(), gx.data.data(), ci, l, co,
                              kw, stride, pad_l, lout);
      auto& pg = n.parents[0]->g().data;
      for (size_t i = 0; i < pg.size(); ++i) pg[i] += gx.data[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor gw = Tensor::zeros({co, ci, kw});
      Tensor gb = Tensor::zeros({co});
      kern::conv1d_weight_grad(gy, n.parents[0]->value.data.data(), gw.data.data(),
                               gb.data.data(), ci, l, co, kw, stride, pad_l, lout);
      auto& pw = n.parents[1]->g().data;
      for (size_t i = 0; i < pw.size(); ++i) pw[i] += gw.data[i];
      if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
        auto& pb = n.parents[2]->g().data;
        for (int64_t o = 0; o < co; ++o) pb[o] += gb.data[o];
      }
    }
  });
}

NodePtr conv_transpose1d(NodePtr x, NodePtr w, NodePtr b, int64_t stride, int64_t pad_l) {
  const int64_t ci = x->value.shape[0], l = x->value.shape[1];
  const int64_t co = w->value.shape[1], kw = w->value.shape[2];
  if (w->value.shape[0] != ci) throw ShapeError("conv_transpose1d: channel mismatch");
  const int64_t lout = (l - 1) * stride + kw - pad_l;
  if (lout <= 0) throw ShapeError("conv_transpose1d: empty output");
  Tensor v = Tensor::zeros({co, lout});
  kern::conv_transpose1d(x->value.data.data(), w->value.data.data(),
                         b ? b->value.data.data() : nullptr, v.data.data(), ci, l, co, kw,
                         stride, pad_l, lout);
  std::vector<NodePtr> parents = {x, w};
  if (b) parents.push_back(b);
  return tape_of(x).make(std::move(v), std::move(parents),
                         [ci, l, co, kw, stride, pad_l, lout](Node& n) {
    const double* gy = n.grad.data.data();
    if (n.parents[0]->requires_grad) {
      Tensor gx = Tensor::zeros({ci, l});
      kern::conv_transpose1d_input_grad(gy, n.parents[1]->value.data.data(), gx.data.data(), ci,
                                        l, co, kw, stride, pad_l, lout);
      auto& pg = n.parents[0]->g().data;
      for (size_t i = 0; i < pg.size(); ++i) pg[i] += gx.data[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor gw = Tensor::zeros({ci, co, kw});
      Tensor gb = Tensor::zeros({co});
      kern::conv_transpose1d_weight_grad(gy, n.parents[0]->value.data.data(), gw.data.data(),
                                         gb.data.data(), ci, l, co, kw, stride, pad_l, lout);
      auto& pw = n.parents[1]->g().data;
      for (size_t i = 0; i < pw.size(); ++i) pw[i] += gw.data[i];
      if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
        auto& pb = n.parents[2]->g().data;
        for (int64_t o = 0; o < co; ++o) pb[o] += gb.data[o];
      }
    }
  });
}

NodePtr avg_pool1d(NodePtr x, int64_t factor) {
  const int64_t c = x->value.shape[0], l = x->value.shape[1];
  const int64_t lout = l / factor;
  Tensor v = Tensor::zeros({c, lout});
  kern::avg_pool1d(x->value.data.data(), v.data.data(), c, l, factor);
  return tape_of(x).make(std::move(v), {x}, [c, l, factor](Node& n) {
    Tensor gx = Tensor::zeros({c, l});
    kern::avg_pool1d_grad(n.grad.data.data(), gx.data.data(), c, l, factor);
    auto& pg = n.parents[0]->g().data;
    for (size_t i = 0; i < pg.size(); ++i) pg[i] += gx.data[i];
  });
}

NodePtr silu(NodePtr x) {
  Tensor v = x->value;
  for (auto& e : v.data) e = e / (1.0 + std::exp(-e));
  return tape_of(x).make(std::move(v), {x}, [](Node& n) {
    auto& pg = n.parents[0]->g().data;
    const auto& xv = n.parents[0]->value.data;
    for (size_t i = 0; i < n.grad.data.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-xv[i]));
      pg[i] += n.grad.data[i] * s * (1.0 + xv[i] * (1.0 - s));
    }
  });
}

NodePtr elu(NodePtr x) {
  Tensor v = x->value;
  for (auto& e : v.data) e = e > 0.0 ? e : std::expm1(e);
  return tape_of(x).make(std::move(v), {x}, [](Node& n) {
    auto& pg = n.parents[0]->g().data;
    const auto& xv = n.parents[0]->value.data;
    const auto& yv = n.value.data;
    for (size_t i = 0; i < n.grad.data.size(); ++i)
      pg[i] += n.grad.data[i] * (xv[i] > 0.0 ? 1.0 : yv[i] + 1.0);
  });
}

NodePtr tanh_op(NodePtr x) {
  Tensor v = x->value;
  for (auto& e : v.data) e = std::tanh(e);
  return tape_of(x).make(std::move(v), {x}, [](Node& n) {
    auto& pg = n.parents[0]->g().data;
    const auto& yv = n.value.data;
    for (size_t i = 0; i < n.grad.data.size(); ++i)
      pg[i] += n.grad.data[i] * (1.0 - yv[i] * yv[i]);
  });
}

NodePtr leaky_relu(NodePtr x, double slope) {
  Tensor v = x->value;
  for (auto& e : v.data) e = e > 0.0 ? e : slope * e;
  return tape_of(x).make(std::move(v), {x}, [slope](Node& n) {
    auto& pg = n.parents[0]->g().data;
    const auto& xv = n.parents[0]->value.data;
    for (size_t i = 0; i < n.grad.data.size(); ++i)
      pg[i] += n.grad.data[i] * (xv[i] > 0.0 ? 1.0 : slope);
  });
}

NodePtr rmsnorm(NodePtr x, NodePtr gain, double eps) {
  const int64_t r = x->value.shape[0], h = x->value.shape[1];
  if (gain->value.numel() != h) throw ShapeError("rmsnorm: gain size mismatch");
  Tensor v = Tensor::zeros({r, h});
  std::vector<double> inv_rms(r);
  for (int64_t i = 0; i < r; ++i) {
    double ms = 0.0;
    for (int64_t j = 0; j < h; ++j) ms += x->value.data[i * h + j] * x->value.data[i * h + j];
    inv_rms[i] = 1.0 / std::sqrt(ms / double(h) + eps);
    for (int64_t j = 0; j < h; ++j)
      v.data[i * h + j] = x->value.data[i * h + j] * inv_rms[i] * gain->value.data[j];
  }
  return tape_of(x).make(std::move(v), {x, gain}, [r, h, inv_rms](Node& n) {
    const auto& xv = n.parents[0]->value.data;
    const auto& gv = n.parents[1]->value.data;
    if (n.parents[0]->requires_grad) {
      auto& pg = n.parents[0]->g().data;
      for (int64_t i = 0; i < r; ++i) {
        // y_j = x_j * ir * g_j with ir = (mean x^2 + eps)^{-1/2}
        double dot = 0.0;  // sum_j dL/dy_j * g_j * x_j
        for (int64_t j = 0; j < h; ++j) dot += n.grad.data[i * h + j] * gv[j] * xv[i * h + j];
        const double ir = inv_rms[i];
        const double k = dot * ir * ir * ir / double(h);
        for (int64_t j = 0; j < h; ++j)
          pg[i * h + j] += n.grad.data[i * h + j] * gv[j] * ir - k * xv[i * h + j];
      }
    }
    if (n.parents[1]->requires_grad) {
      auto& pg = n.parents[1]->g().data;
      for (int64_t j = 0; j < h; ++j) {
        double acc = 0.0;
        for (int64_t i = 0; i < r; ++i)
          acc += n.grad.data[i * h + j] * xv[i * h + j] * inv_rms[i];
        pg[j] += acc;
      }
    }
  });
}

namespace {

NodePtr softmax_impl(NodePtr x, bool causal) {
  const int64_t r = x->value.shape[0], c = x->value.shape[1];
  Tensor v = Tensor::zeros({r, c});
  for (int64_t i = 0; i < r; ++i) {
    const int64_t lim = causal ? std::min(i + 1, c) : c;
    double mx = -1e300;
    for (int64_t j = 0; j < lim; ++j) mx = std::max(mx, x->value.data[i * c + j]);
    double z = 0.0;
    for (int64_t j = 0; j < lim; ++j) {
      v.data[i * c + j] = std::exp(x->value.data[i * c + j] - mx);
      z += v.data[i * c + j];
    }
    for (int64_t j = 0; j < lim; ++j) v.data[i * c + j] /= z;
  }
  return tape_of(x).make(std::move(v), {x}, [r, c](Node& n) {
    auto& pg = n.parents[0]->g().data;
    const auto& y = n.value.data;
    for (int64_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (int64_t j = 0; j < c; ++j) dot += n.grad.data[i * c + j] * y[i * c + j];
      for (int64_t j = 0; j < c; ++j)
        pg[i * c + j] += y[i * c + j] * (n.grad.data[i * c + j] - dot);
    }
  });
}

}  // namespace

NodePtr softmax_rows(NodePtr x) { return softmax_impl(std::move(x), false); }
NodePtr softmax_rows_causal(NodePtr x) { return softmax_impl(std::move(x), true); }

NodePtr rope(NodePtr x, double base) {
  const int64_t r = x->value.shape[0], d = x->value.shape[1];
  if (d % 2 != 0) throw ShapeError("rope: odd feature dim");
  std::vector<double> cs(r * d / 2), sn(r * d / 2);
  for (int64_t t = 0; t < r; ++t)
    for (int64_t i = 0; i < d / 2; ++i) {
      const double theta = double(t) * std::pow(base, -2.0 * double(i) / double(d));
      cs[t * d / 2 + i] = std::cos(theta);
      sn[t * d / 2 + i] = std::sin(theta);
    }
  Tensor v = Tensor::zeros({r, d});
  for (int64_t t = 0; t < r; ++t)
    for (int64_t i = 0; i < d / 2; ++i) {
      const double x0 = x->value.data[t * d + 2 * i], x1 = x->value.data[t * d + 2 * i + 1];
      const double c = cs[t * d / 2 + i], s = sn[t * d / 2 + i];
      v.data[t * d + 2 * i] = x0 * c - x1 * s;
      v.data[t * d + 2 * i + 1] = x0 * s + x1 * c;
    }
  return tape_of(x).make(std::move(v), {x}, [r, d, cs, sn](Node& n) {
    auto& pg = n.parents[0]->g().data;
    for (int64_t t = 0; t < r; ++t)
      for (int64_t i = 0; i < d / 2; ++i) {
        const double g0 = n.grad.data[t * d + 2 * i], g1 = n.grad.data[t * d + 2 * i + 1];
        const double c = cs[t * d / 2 + i], s = sn[t * d / 2 + i];
        pg[t * d + 2 * i] += g0 * c + g1 * s;
        pg[t * d + 2 * i + 1] += -g0 * s + g1 * c;
      }
  });
}

NodePtr normalize_l2_rows(NodePtr x, double eps) {
  const int64_t r = x->value.shape[0], c = x->value.shape[1];
  Tensor v = Tensor::zeros({r, c});
  std::vector<double> norms(r);
  for (int64_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j) s += x->value.data[i * c + j] * x->value.data[i * c + j];
    norms[i] = std::max(std::sqrt(s), eps);
    for (int64_t j = 0; j < c; ++j) v.data[i * c + j] = x->value.data[i * c + j] / norms[i];
  }
  return tape_of(x).make(std::move(v), {x}, [r, c, norms, eps](Node& n) {
    auto& pg = n.parents[0]->g().data;
    const auto& y = n.value.data;
    const auto& xv = n.parents[0]->value.data;
    for (int64_t i = 0; i < r; ++i) {
      double xn = 0.0;
      for (int64_t j = 0; j < c; ++j) xn += xv[i * c + j] * xv[i * c + j];
      if (std::sqrt(xn) <= eps) {
        for (int64_t j = 0; j < c; ++j) pg[i * c + j] += n.grad.data[i * c + j] / eps;
        continue;
      }
      double dot = 0.0;
      for (int64_t j = 0; j < c; ++j) dot += n.grad.data[i * c + j] * y[i * c + j];
      for (int64_t j = 0; j < c; ++j)
        pg[i * c + j] += (n.grad.data[i * c + j] - dot * y[i * c + j]) / norms[i];
    }
  });
}

NodePtr gather_rows(NodePtr table, const std::vector<int32_t>& ids) {
  const int64_t v_ = table->value.shape[0], h = table->value.shape[1];
  const int64_t n_ = int64_t(ids.size());
  Tensor v = Tensor::zeros({n_, h});
  for (int64_t i = 0; i < n_; ++i) {
    if (ids[i] < 0 || ids[i] >= v_) throw IndexError("gather_rows: id out of range");
    std::copy(table->value.data.begin() + int64_t(ids[i]) * h,
              table->value.data.begin() + int64_t(ids[i]) * h + h, v.data.begin() + i * h);
  }
  return tape_of(table).make(std::move(v), {table}, [ids, n_, h](Node& n) {
    kern::scatter_rows_add(n.grad.data.data(), ids.data(), n.parents[0]->g().data.data(), n_,
                           h);
  });
}

NodePtr gather_rows2(NodePtr ta, NodePtr tb, const std::vector<int32_t>& ids) {
  const int64_t ra = ta->value.shape[0], h = ta->value.shape[1];
  const int64_t rb = tb->value.shape[0];
  if (tb->value.shape[1] != h) throw ShapeError("gather_rows2: width mismatch");
  const int64_t n_ = int64_t(ids.size());
  Tensor v = Tensor::zeros({n_, h});
  for (int64_t i = 0; i < n_; ++i) {
    const int64_t id = ids[i];
    if (id < 0 || id >= ra + rb) throw IndexError("gather_rows2: id out of range");
    const auto& src = id < ra ? ta->value.data : tb->value.data;
    const int64_t row = id < ra ? id : id - ra;
    std::copy(src.begin() + row * h, src.begin() + row * h + h, v.data.begin() + i * h);
  }
  return tape_of(ta).make(std::move(v), {ta, tb}, [ids, ra, n_, h](Node& n) {
    for (int64_t i = 0; i < n_; ++i) {
      Node* dst = (ids[i] < ra ? n.parents[0] : n.parents[1]).get();
      if (!dst->requires_grad) continue;
      const int64_t row = ids[i] < ra ? ids[i] : ids[i] - ra;
      auto& pg = dst->g().data;
      for (int64_t j = 0; j < h; ++j) pg[row * h + j] += n.grad.data[i * h + j];
    }
  });
}

NodePtr matmul_nt_const(NodePtr a, const Tensor& b) {
  NodePtr bn = tape_of(a).leaf(b, false);
  return matmul_nt(std::move(a), std::move(bn));
}

namespace {

NodePtr ce_impl(NodePtr logits, const std::vector<int32_t>& ids, double smooth_eps) {
  const int64_t r = logits->value.shape[0], v_ = logits->value.shape[1];
  if (int64_t(ids.size()) != r) throw ShapeError("ce_rows: target count mismatch");
  Tensor out = Tensor::zeros({r});
  Tensor probs = Tensor::zeros({r, v_});
  for (int64_t i = 0; i < r; ++i) {
    if (ids[i] < 0 || ids[i] >= v_) throw IndexError("ce_rows: target out of range");
    double mx = -1e300;
    for (int64_t j = 0; j < v_; ++j) mx = std::max(mx, logits->value.data[i * v_ + j]);
    double z = 0.0;
    for (int64_t j = 0; j < v_; ++j) z += std::exp(logits->value.data[i * v_ + j] - mx);
    const double logz = std::log(z) + mx;
    for (int64_t j = 0; j < v_; ++j)
      probs.data[i * v_ + j] = std::exp(logits->value.data[i * v_ + j] - logz);
    if (smooth_eps == 0.0) {
      out.data[i] = logz - logits->value.data[i * v_ + ids[i]];
    } else {
      // -sum_j target_j log p_j with target = (1-eps)*onehot + eps/v
      double acc = 0.0;
      for (int64_t j = 0; j < v_; ++j) {
        double tgt = smooth_eps / double(v_);
        if (j == ids[i]) tgt += 1.0 - smooth_eps;
        acc += tgt * (logz - logits->value.data[i * v_ + j]);
      }
      out.data[i] = acc;
    }
  }
  return tape_of(logits).make(std::move(out), {logits},
                              [r, v_, ids, smooth_eps, probs](Node& n) {
    auto& pg = n.parents[0]->g().data;
    for (int64_t i = 0; i < r; ++i) {
      const double gi = n.grad.data[i];
      for (int64_t j = 0; j < v_; ++j) {
        double tgt = smooth_eps / double(v_);
        if (j == ids[i]) tgt += 1.0 - smooth_eps;
        pg[i * v_ + j] += gi * (probs.data[i * v_ + j] - tgt);
      }
    }
  });
}

}  // namespace

NodePtr ce_rows(NodePtr logits, const std::vector<int32_t>& ids) {
  return ce_impl(std::move(logits), ids, 0.0);
}

NodePtr ce_rows_smoothed(NodePtr logits, const std::vector<int32_t>& ids, double eps) {
  return ce_impl(std::move(logits), ids, eps);
}

NodePtr sum_all(NodePtr x) {
  double s = 0.0;
  for (double e : x->value.data) s += e;
  return tape_of(x).make(Tensor::scalar(s), {x}, [](Node& n) {
    auto& pg = n.parents[0]->g().data;
    for (auto& e : pg) e += n.grad.data[0];
  });
}

NodePtr mean_all(NodePtr x) {
  const double inv = 1.0 / double(x->value.numel());
  double s = 0.0;
  for (double e : x->value.data) s += e;
  return tape_of(x).make(Tensor::scalar(s * inv), {x}, [inv](Node& n) {
    auto& pg = n.parents[0]->g().data;
    for (auto& e : pg) e += n.grad.data[0] * inv;
  });
}

NodePtr sum_squares(NodePtr x) {
  double s = 0.0;
  for (double e : x->value.data) s += e * e;
  return tape_of(x).make(Tensor::scalar(s), {x}, [](Node& n) {
    auto& pg = n.parents[0]->g().data;
    const auto& xv = n.parents[0]->value.data;
    for (size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad.data[0] * 2.0 * xv[i];
  });
}

NodePtr dot_const(NodePtr v, const Tensor& w) {
  if (v->value.numel() != w.numel()) throw ShapeError("dot_const: size mismatch");
  double s = 0.0;
  for (size_t i = 0; i < w.data.size(); ++i) s += v->value.data[i] * w.data[i];
  return tape_of(v).make(Tensor::scalar(s), {v}, [w](Node& n) {
    auto& pg = n.parents[0]->g().data;
    for (size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad.data[0] * w.data[i];
  });
}

NodePtr sqrt_s(NodePtr s, double eps) {
  const double y = std::sqrt(s->value.data[0] + eps);
  return tape_of(s).make(Tensor::scalar(y), {s}, [y](Node& n) {
    n.parents[0]->g().data[0] += n.grad.data[0] * 0.5 / std::max(y, 1e-300);
  });
}

NodePtr div_ss(NodePtr a, NodePtr b) {
  const double bv = b->value.data[0];
  return tape_of(a).make(Tensor::scalar(a->value.data[0] / bv), {a, b}, [](Node& n) {
    const double av = n.parents[0]->value.data[0], bv2 = n.parents[1]->value.data[0];
    if (n.parents[0]->requires_grad) n.parents[0]->g().data[0] += n.grad.data[0] / bv2;
    if (n.parents[1]->requires_grad)
      n.parents[1]->g().data[0] -= n.grad.data[0] * av / (bv2 * bv2);
  });
}

NodePtr div_by_scalar(NodePtr x, NodePtr s) {
  if (s->value.numel() != 1) throw ShapeError("div_by_scalar: divisor must be scalar");
  const double sv = s->value.data[0];
  Tensor v = x->value;
  for (auto& e : v.data) e /= sv;
  return tape_of(x).make(std::move(v), {x, s}, [](Node& n) {
    const double sv2 = n.parents[1]->value.data[0];
    const auto& xv = n.parents[0]->value.data;
    if (n.parents[0]->requires_grad) {
      auto& pg = n.parents[0]->g().data;
      for (size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad.data[i] / sv2;
    }
    if (n.parents[1]->requires_grad) {
      double acc = 0.0;
      for (size_t i = 0; i < xv.size(); ++i) acc += n.grad.data[i] * xv[i];
      n.parents[1]->g().data[0] -= acc / (sv2 * sv2);
    }
  });
}

NodePtr wsum(const std::vector<NodePtr>& scalars, const std::vector<double>& weights) {
  if (scalars.empty() || scalars.size() != weights.size())
    throw ContractError("wsum: size mismatch");
  double s = 0.0;
  for (size_t i = 0; i < scalars.size(); ++i) s += scalars[i]->value.data[0] * weights[i];
  return tape_of(scalars[0]).make(Tensor::scalar(s), scalars, [weights](Node& n) {
    for (size_t i = 0; i < n.parents.size(); ++i)
      if (n.parents[i]->requires_grad)
        n.parents[i]->g().data[0] += n.grad.data[0] * weights[i];
  });
}

NodePtr l1_mean(NodePtr a, NodePtr b) {
  check_same_shape(a, b, "l1_mean");
  const double inv = 1.0 / double(a->value.numel());
  double s = 0.0;
  for (size_t i = 0; i < a->value.data.size(); ++i)
    s += std::abs(a->value.data[i] - b->value.data[i]);
  return tape_of(a).make(Tensor::scalar(s * inv), {a, b}, [inv](Node& n) {
    const auto& av = n.parents[0]->value.data;
    const auto& bv = n.parents[1]->value.data;
    const double g = n.grad.data[0] * inv;
    for (size_t i = 0; i < av.size(); ++i) {
      const double sgn = av[i] > bv[i] ? 1.0 : (av[i] < bv[i] ? -1.0 : 0.0);
      if (n.parents[0]->requires_grad) n.parents[0]->g().data[i] += g * sgn;
      if (n.parents[1]->requires_grad) n.parents[1]->g().data[i] -= g * sgn;
    }
  });
}

NodePtr mse_mean(NodePtr a, NodePtr b) {
  check_same_shape(a, b, "mse_mean");
  const double inv = 1.0 / double(a->value.numel());
  double s = 0.0;
  for (size_t i = 0; i < a->value.data.size(); ++i) {
    const double d = a->value.data[i] - b->value.data[i];
    s += d * d;
  }
  return tape_of(a).make(Tensor::scalar(s * inv), {a, b}, [inv](Node& n) {
    const auto& av = n.parents[0]->value.data;
    const auto& bv = n.parents[1]->value.data;
    const double g = n.grad.data[0] * inv * 2.0;
    for (size_t i = 0; i < av.size(); ++i) {
      const double d = av[i] - bv[i];
      if (n.parents[0]->requires_grad) n.parents[0]->g().data[i] += g * d;
      if (n.parents[1]->requires_grad) n.parents[1]->g().data[i] -= g * d;
    }
  });
}

NodePtr log_eps(NodePtr x, double eps) {
  Tensor v = x->value;
  for (auto& e : v.data) e = std::log(e + eps);
  return tape_of(x).make(std::move(v), {x}, [eps](Node& n) {
    auto& pg = n.parents[0]->g().data;
    const auto& xv = n.parents[0]->value.data;
    for (size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad.data[i] / (xv[i] + eps);
  });
}

NodePtr hinge_mean(NodePtr x, double margin, double sign) {
  const double inv = 1.0 / double(x->value.numel());
  double s = 0.0;
  for (double e : x->value.data) s += std::max(0.0, margin - sign * e);
  return tape_of(x).make(Tensor::scalar(s * inv), {x}, [margin, sign, inv](Node& n) {
    auto& pg = n.parents[0]->g().data;
    const auto& xv = n.parents[0]->value.data;
    const double g = n.grad.data[0] * inv;
    for (size_t i = 0; i < pg.size(); ++i)
      if (margin - sign * xv[i] > 0.0) pg[i] -= g * sign;
  });
}

namespace {

// reflect-pad index map for pad width fft/2 on both sides
inline int64_t reflect_index(int64_t q, int64_t l) {
  while (q < 0 || q >= l) {
    if (q < 0) q = -q;
    if (q >= l) q = 2 * l - 2 - q;
  }
  return q;
}

}  // namespace

NodePtr stft(NodePtr x, int64_t fft_size, int64_t hop, const std::vector<double>& window) {
  if (x->value.shape.size() != 1) throw ShapeError("stft: expected 1-d signal");
  if (int64_t(window.size()) != fft_size) throw ShapeError("stft: window size mismatch");
  const int64_t l = x->value.shape[0];
  if (l <= fft_size / 2) throw ShapeError("stft: signal shorter than pad width");
  const int64_t f = fft_size / 2 + 1;
  const int64_t frames = 1 + l / hop;
  const int64_t pad = fft_size / 2;
  Tensor v = Tensor::zeros({2, f, frames});
#pragma omp parallel for schedule(static)
  for (int64_t bfr = 0; bfr < frames; ++bfr) {
    std::vector<double> re(fft_size), im(fft_size, 0.0);
    for (int64_t n_ = 0; n_ < fft_size; ++n_) {
      const int64_t q = reflect_index(bfr * hop - pad + n_, l);
      re[n_] = x->value.data[q] * window[n_];
    }
    kern::fft(re.data(), im.data(), fft_size, false);
    for (int64_t k = 0; k < f; ++k) {
      v.data[k * frames + bfr] = re[k];
      v.data[(f + k) * frames + bfr] = im[k];
    }
  }
  return tape_of(x).make(std::move(v), {x}, [l, fft_size, hop, window, f, frames, pad](Node& n) {
    auto& pg = n.parents[0]->g().data;
    std::vector<double> re(fft_size), im(fft_size);
    for (int64_t bfr = 0; bfr < frames; ++bfr) {
      // adjoint of the rfft: inverse-transform the half-spectrum grad without
      // hermitian doubling, take the real part, window, overlap-add
      std::fill(re.begin(), re.end(), 0.0);
      std::fill(im.begin(), im.end(), 0.0);
      for (int64_t k = 0; k < f; ++k) {
        re[k] = n.grad.data[k * frames + bfr];
        im[k] = n.grad.data[(f + k) * frames + bfr];
      }
      kern::fft(re.data(), im.data(), fft_size, true);
      for (int64_t n_ = 0; n_ < fft_size; ++n_) {
        const int64_t q = reflect_index(bfr * hop - pad + n_, l);
        pg[q] += re[n_] * window[n_];
      }
    }
  });
}

NodePtr complex_magnitude(NodePtr spec) {
  const int64_t f = spec->value.shape[1], b = spec->value.shape[2];
  Tensor v = Tensor::zeros({f, b});
  for (int64_t i = 0; i < f * b; ++i) {
    const double re = spec->value.data[i], im = spec->value.data[f * b + i];
    v.data[i] = std::sqrt(re * re + im * im);
  }
  return tape_of(spec).make(std::move(v), {spec}, [f, b](Node& n) {
    auto& pg = n.parents[0]->g().data;
    const auto& sv = n.parents[0]->value.data;
    const auto& mag = n.value.data;
    for (int64_t i = 0; i < f * b; ++i) {
      if (mag[i] < 1e-12) continue;
      const double g = n.grad.data[i] / mag[i];
      pg[i] += g * sv[i];
      pg[f * b + i] += g * sv[f * b + i];
    }
  });
}

NodePtr phase_loss(NodePtr hat, const Tensor& ref, double mask_floor) {
  if (!hat->value.same_shape(ref)) throw ShapeError("phase_loss: shape mismatch");
  const int64_t fb = hat->value.shape[1] * hat->value.shape[2];
  int64_t count = 0;
  double total = 0.0;
  for (int64_t i = 0; i < fb; ++i) {
    const double rr = ref.data[i], ri = ref.data[fb + i];
    const double rmag = std::sqrt(rr * rr + ri * ri);
    if (rmag < mask_floor) continue;
    ++count;
    const double hr = hat->value.data[i], hi = hat->value.data[fb + i];
    const double hmag = std::sqrt(hr * hr + hi * hi);
    if (hmag < 1e-12) {
      total += 1.0;  // |unit(ref) - 0| with unit ref
      continue;
    }
    const double vx = rr / rmag - hr / hmag, vy = ri / rmag - hi / hmag;
    total += std::sqrt(vx * vx + vy * vy);
  }
  const double value = count > 0 ? total / double(count) : 0.0;
  return tape_of(hat).make(Tensor::scalar(value), {hat},
                           [fb, ref, mask_floor, count](Node& n) {
    if (count == 0) return;
    auto& pg = n.parents[0]->g().data;
    const double g = n.grad.data[0] / double(count);
    for (int64_t i = 0; i < fb; ++i) {
      const double rr = ref.data[i], ri = ref.data[fb + i];
      const double rmag = std::sqrt(rr * rr + ri * ri);
      if (rmag < mask_floor) continue;
      const double hr = n.parents[0]->value.data[i], hi = n.parents[0]->value.data[fb + i];
      const double hmag = std::sqrt(hr * hr + hi * hi);
      if (hmag < 1e-12) continue;
      const double vx = rr / rmag - hr / hmag, vy = ri / rmag - hi / hmag;
      const double d = std::sqrt(vx * vx + vy * vy);
      if (d < 1e-12) continue;
      // d(d)/d(hr,hi) through unit(hat) = (hr,hi)/hmag
      const double h3 = hmag * hmag * hmag;
      const double dux_dhr = hi * hi / h3, dux_dhi = -hr * hi / h3;
      const double duy_dhr = -hr * hi / h3, duy_dhi = hr * hr / h3;
      pg[i] += g * (-vx * dux_dhr - vy * duy_dhr) / d;
      pg[fb + i] += g * (-vx * dux_dhi - vy * duy_dhi) / d;
    }
  });
}

}  // namespace pcodec::ag
