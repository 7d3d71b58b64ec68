#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "pcodec/graph.hpp"
#include "pcodec/tensor.hpp"

namespace pcodec::sa {

struct SaConfig {
  int64_t bank_capacity = 512;
  double alpha = 5.0;  // logit scale
  double eps = 0.1;    // label smoothing
};

// Contiguous 1-based block indices [floor(L/3), floor(0.8*L)].
std::vector<int64_t> select_layers(int64_t l);

// Row at 1-based index valid_len, as a [1, H] node.
ag::NodePtr pool_last(ag::NodePtr hidden, int64_t valid_len);

// Mean over layers of (1 - cos) between l2-normalized pooled states. The
// text side is detached inside, so only the audio branch receives gradient.
ag::NodePtr cosine_align(const std::vector<ag::NodePtr>& audio_states,
                         const std::vector<ag::NodePtr>& text_states);

// FIFO of l2-normalized, gradient-free vectors serving as negatives.
class MemoryBank {
 public:
  explicit MemoryBank(int64_t capacity = 512);

  void push(const std::vector<double>& v);
  int64_t size() const { return int64_t(entries_.size()); }
  int64_t capacity() const { return capacity_; }
  const std::deque<std::vector<double>>& entries() const { return entries_; }

  Tensor as_tensor() const;          // [n, h] snapshot, insertion order
  void restore(const Tensor& rows);  // replaces contents

 private:
  int64_t capacity_;
  std::deque<std::vector<double>> entries_;
};

// Smoothed cross-entropy over {positive, bank...} with logits alpha * cosine.
ag::NodePtr contrastive_loss(ag::NodePtr audio_vec, ag::NodePtr text_pos,
                             const MemoryBank& bank, double alpha, double eps);

}  // namespace pcodec::sa
