#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "pcodec/errors.hpp"
#include "pcodec/graph.hpp"
#include "pcodec/rng.hpp"
#include "pcodec/tensor.hpp"

namespace pcodec {

// Named parameter group with per-tensor gradient accumulators. Each model
// registers its tensors once; every forward pass binds the current values as
// leaves on a tape, and accumulate_grads folds the leaf gradients back.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  Tensor& add(const std::string& name, Tensor init) {
    if (by_name_.count(name)) throw ContractError("param already registered: " + name);
    by_name_[name] = entries_.size();
    entries_.push_back({name, std::move(init), {}});
    Entry& e = entries_.back();
    e.grad = Tensor::zeros(e.value.shape);
    return e.value;
  }

  bool has(const std::string& name) const { return by_name_.count(name) > 0; }

  size_t index_of(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ContractError("unknown param: " + name);
    return it->second;
  }

  Entry& entry(const std::string& name) { return entries_[index_of(name)]; }

  Tensor& value(const std::string& name) { return entry(name).value; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  void zero_grads() {
    for (auto& e : entries_)
      std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
  }

  int64_t numel() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  uint64_t hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : entries_) {
      h = fnv1a64(e.name.data(), e.name.size(), h);
      h = hash_tensor(e.value, h);
    }
    return h;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> by_name_;
};

struct Binding {
  ParamStore* store = nullptr;
  std::vector<ag::NodePtr> leaves;  // aligned with store entries

  ag::NodePtr operator[](const std::string& name) const {
    return leaves[store->index_of(name)];
  }
};

inline Binding bind(ParamStore& store, ag::Tape& tape, bool trainable = true) {
  Binding b;
  b.store = &store;
  b.leaves.reserve(store.entries().size());
  for (auto& e : store.entries()) b.leaves.push_back(tape.leaf(e.value, trainable));
  return b;
}

inline void accumulate_grads(const Binding& b, double scl = 1.0) {
  for (size_t i = 0; i < b.leaves.size(); ++i) {
    if (!b.leaves[i]->grad_alloc) continue;
    auto& dst = b.store->entries()[i].grad.data;
    const auto& src = b.leaves[i]->grad.data;
    for (size_t j = 0; j < dst.size(); ++j) dst[j] += src[j] * scl;
  }
}

inline Tensor randn_tensor(Rng& rng, std::vector<int64_t> shape, double scale) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& e : t.data) e = rng.normal() * scale;
  return t;
}

}  // namespace pcodec
