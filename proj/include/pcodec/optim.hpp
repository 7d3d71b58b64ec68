#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pcodec/params.hpp"
#include "pcodec/tensor.hpp"

namespace pcodec {

inline double grad_global_norm(const std::vector<const ParamStore*>& stores) {
  double ss = 0.0;
  for (const auto* store : stores)
    for (const auto& e : store->entries())
      for (double g : e.grad.data) ss += g * g;
  return std::sqrt(ss);
}

inline double grad_global_norm(const ParamStore& store) { return grad_global_norm({&store}); }

// Uniformly rescales gradients in place so the joint norm is at most
// max_norm. Returns the pre-clip norm.
inline double clip_grad_norm(const std::vector<ParamStore*>& stores, double max_norm) {
  std::vector<const ParamStore*> views(stores.begin(), stores.end());
  const double norm = grad_global_norm(views);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto* store : stores)
      for (auto& e : store->entries())
        for (double& g : e.grad.data) g *= s;
  }
  return norm;
}

inline double clip_grad_norm(ParamStore& store, double max_norm) {
  return clip_grad_norm(std::vector<ParamStore*>{&store}, max_norm);
}

// Momentum SGD with coupled L2 weight decay: v <- m*v + g + wd*p, p -= lr*v.
class SgdM {
 public:
  SgdM(double lr, double momentum, double weight_decay)
      : lr_(lr), momentum_(momentum), wd_(weight_decay) {}

  void step(ParamStore& store) {
    ensure(store);
    auto& es = store.entries();
    for (size_t i = 0; i < es.size(); ++i) {
      auto& p = es[i].value.data;
      const auto& g = es[i].grad.data;
      auto& v = velocity_[i].data;
      for (size_t j = 0; j < p.size(); ++j) {
        v[j] = momentum_ * v[j] + g[j] + wd_ * p[j];
        p[j] -= lr_ * v[j];
      }
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::vector<Tensor>& velocity() { return velocity_; }

 private:
  void ensure(const ParamStore& store) {
    if (!velocity_.empty()) return;
    for (const auto& e : store.entries()) velocity_.push_back(Tensor::zeros(e.value.shape));
  }

  double lr_, momentum_, wd_;
  std::vector<Tensor> velocity_;
};

// Adam with decoupled weight decay.
class AdamW {
 public:
  explicit AdamW(double lr, double beta1 = 0.9, double beta2 = 0.99, double weight_decay = 0.0,
                 double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), wd_(weight_decay), eps_(eps) {}

  void step(ParamStore& store) {
    ensure(store);
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, double(t_));
    const double bc2 = 1.0 - std::pow(b2_, double(t_));
    auto& es = store.entries();
    for (size_t i = 0; i < es.size(); ++i) {
      auto& p = es[i].value.data;
      const auto& g = es[i].grad.data;
      auto& m = m_[i].data;
      auto& v = v_[i].data;
      for (size_t j = 0; j < p.size(); ++j) {
        m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
        v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
        p[j] -= lr_ * ((m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_) + wd_ * p[j]);
      }
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  int64_t steps() const { return t_; }
  void set_steps(int64_t t) { t_ = t; }
  std::vector<Tensor>& first_moment() { return m_; }
  std::vector<Tensor>& second_moment() { return v_; }

 private:
  void ensure(const ParamStore& store) {
    if (!m_.empty()) return;
    for (const auto& e : store.entries()) {
      m_.push_back(Tensor::zeros(e.value.shape));
      v_.push_back(Tensor::zeros(e.value.shape));
    }
  }

  double lr_, b1_, b2_, wd_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace pcodec
