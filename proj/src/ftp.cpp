#include "pcodec/ftp.hpp"

#include <algorithm>
#include <string>

#include "pcodec/errors.hpp"

namespace pcodec::ftp {

std::vector<double> ftp_weights(int64_t k) {
  if (k < 1) throw ConfigError("ftp_weights: need at least one head");
  double hk = 0.0;
  for (int64_t j = 1; j <= k; ++j) hk += 1.0 / double(j);
  std::vector<double> w(static_cast<size_t>(k));
  for (int64_t j = 1; j <= k; ++j) w[size_t(j - 1)] = (1.0 / double(j)) / hk;
  return w;
}

FtpHeads init_heads(const Tensor& w_lm, const std::vector<int32_t>& audio_ids, int64_t k,
                    int64_t hidden) {
  if (w_lm.shape.size() != 2 || w_lm.shape[1] != hidden)
    throw ShapeError("init_heads: head width mismatch");
  if (audio_ids.empty()) throw ShapeError("init_heads: empty audio vocabulary");
  Tensor slice = Tensor::zeros({int64_t(audio_ids.size()), hidden});
  for (size_t i = 0; i < audio_ids.size(); ++i) {
    const int64_t id = audio_ids[i];
    if (id < 0 || id >= w_lm.shape[0]) throw ShapeError("init_heads: audio id outside lm head");
    std::copy(w_lm.data.begin() + id * hidden, w_lm.data.begin() + (id + 1) * hidden,
              slice.data.begin() + int64_t(i) * hidden);
  }
  FtpHeads heads;
  heads.k = k;
  heads.hidden = hidden;
  heads.audio_vocab = int64_t(audio_ids.size());
  heads.weights = ftp_weights(k);
  for (int64_t i = 0; i < k; ++i) heads.params.add("h" + std::to_string(i) + ".w", slice);
  return heads;
}

ag::NodePtr ftp_loss(ag::NodePtr hidden, const std::vector<int32_t>& targets,
                     const FtpHeads& heads, const Binding& b) {
  const int64_t t = hidden->value.shape[0];
  if (int64_t(targets.size()) != t) throw ShapeError("ftp_loss: target count mismatch");
  if (t <= heads.k)
    throw ShapeError("ftp_loss: need more than " + std::to_string(heads.k) + " positions");
  auto base = ag::slice_rows(std::move(hidden), 0, t - heads.k);
  std::vector<ag::NodePtr> terms;
  for (int64_t k = 1; k <= heads.k; ++k) {
    auto logits = ag::matmul_nt(base, b["h" + std::to_string(k - 1) + ".w"]);
    std::vector<int32_t> tg(targets.begin() + k, targets.begin() + k + (t - heads.k));
    terms.push_back(ag::mean_all(ag::ce_rows(logits, tg)));
  }
  return ag::wsum(terms, heads.weights);
}

}  // namespace pcodec::ftp
