#include "pcodec/salign.hpp"

#include <cmath>

#include "pcodec/errors.hpp"

namespace pcodec::sa {

std::vector<int64_t> select_layers(int64_t l) {
  if (l < 3) throw ConfigError("select_layers: need at least 3 layers");
  const int64_t lo = l / 3;
  const int64_t hi = (4 * l) / 5;
  std::vector<int64_t> out;
  for (int64_t i = lo; i <= hi; ++i) out.push_back(i);
  return out;
}

ag::NodePtr pool_last(ag::NodePtr hidden, int64_t valid_len) {
  const int64_t t = hidden->value.shape[0];
  if (valid_len < 1 || valid_len > t) throw ShapeError("pool_last: valid length out of range");
  return ag::slice_rows(std::move(hidden), valid_len - 1, valid_len);
}

ag::NodePtr cosine_align(const std::vector<ag::NodePtr>& audio_states,
                         const std::vector<ag::NodePtr>& text_states) {
  if (audio_states.empty() || audio_states.size() != text_states.size())
    throw ShapeError("cosine_align: layer set mismatch");
  std::vector<ag::NodePtr> terms;
  for (size_t i = 0; i < audio_states.size(); ++i) {
    auto a = ag::normalize_l2_rows(audio_states[i]);
    auto t = ag::normalize_l2_rows(ag::stopgrad(text_states[i]));
    terms.push_back(
        ag::add_const(ag::scale(ag::matmul_nt(a, t), -1.0), Tensor::full({1, 1}, 1.0)));
  }
  return ag::wsum(terms, std::vector<double>(terms.size(), 1.0 / double(terms.size())));
}

MemoryBank::MemoryBank(int64_t capacity) : capacity_(capacity) {
  if (capacity < 1) throw ConfigError("memory bank: capacity must be positive");
}

void MemoryBank::push(const std::vector<double>& v) {
  double ss = 0.0;
  for (double e : v) ss += e * e;
  const double inv = 1.0 / std::max(std::sqrt(ss), 1e-12);
  std::vector<double> unit(v.size());
  for (size_t i = 0; i < v.size(); ++i) unit[i] = v[i] * inv;
  entries_.push_back(std::move(unit));
  while (int64_t(entries_.size()) > capacity_) entries_.pop_front();
}

Tensor MemoryBank::as_tensor() const {
  if (entries_.empty()) return Tensor::zeros({0, 0});
  Tensor t = Tensor::zeros({int64_t(entries_.size()), int64_t(entries_.front().size())});
  int64_t row = 0;
  for (const auto& e : entries_) {
    std::copy(e.begin(), e.end(), t.data.begin() + row * int64_t(e.size()));
    ++row;
  }
  return t;
}

void MemoryBank::restore(const Tensor& rows) {
  entries_.clear();
  if (rows.numel() == 0) return;
  const int64_t n = rows.shape[0], h = rows.shape[1];
  for (int64_t i = 0; i < n; ++i)
    entries_.emplace_back(rows.data.begin() + i * h, rows.data.begin() + (i + 1) * h);
  while (int64_t(entries_.size()) > capacity_) entries_.pop_front();
}

ag::NodePtr contrastive_loss(ag::NodePtr audio_vec, ag::NodePtr text_pos,
                             const MemoryBank& bank, double alpha, double eps) {
  auto a = ag::normalize_l2_rows(std::move(audio_vec));
  auto pos = ag::normalize_l2_rows(ag::stopgrad(std::move(text_pos)));
  ag::NodePtr sims = ag::matmul_nt(a, pos);  // [1, 1]
  if (bank.size() > 0) sims = ag::concat_cols({sims, ag::matmul_nt_const(a, bank.as_tensor())});
  return ag::mean_all(ag::ce_rows_smoothed(ag::scale(sims, alpha), {0}, eps));
}

}  // namespace pcodec::sa
