#include "pcodec/bridge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pcodec/errors.hpp"

namespace pcodec::bridge {

void BridgeParams::validate() const {
  if (latent_dim < 1 || audio_vocab < 2) throw ConfigError("bridge: bad dimensions");
  if (!(tau_start >= tau_end) || !(tau_end > 0.0))
    throw ConfigError("bridge: need tau_start >= tau_end > 0");
  if (tau_steps < 1) throw ConfigError("bridge: tau_steps must be positive");
}

void BridgeParams::init(Rng& rng) {
  validate();
  params.add("w", randn_tensor(rng, {latent_dim, audio_vocab},
                               1.0 / std::sqrt(double(latent_dim))));
}

double temperature(int64_t step, const BridgeParams& p) {
  if (step < 0) throw ContractError("temperature: negative step");
  const double frac = double(std::min(step, p.tau_steps)) / double(p.tau_steps);
  return p.tau_end +
         (p.tau_start - p.tau_end) * 0.5 * (1.0 + std::cos(3.141592653589793 * frac));
}

BridgeOutput bridge_forward(const BridgeParams& p, ag::NodePtr z, ag::NodePtr w_bridge,
                            ag::NodePtr e_audio, int64_t step, Rng* rng) {
  if (!z->value.all_finite()) throw GuardError("bridge_forward: non-finite latents");
  const double tau = temperature(step, p);
  BridgeOutput out;
  out.logits = ag::clamp(ag::matmul(std::move(z), std::move(w_bridge)), -80.0, 80.0);
  const int64_t t = out.logits->value.shape[0], v = out.logits->value.shape[1];
  ag::NodePtr perturbed = ag::scale(out.logits, 1.0 / tau);
  if (rng) {
    Tensor g = Tensor::zeros({t, v});
    for (auto& e : g.data) e = rng->gumbel();
    perturbed = ag::add_const(perturbed, g);
  }
  ag::NodePtr soft = ag::softmax_rows(perturbed);
  Tensor hard = Tensor::zeros({t, v});
  out.tokens.resize(size_t(t));
  for (int64_t i = 0; i < t; ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < v; ++j)
      if (perturbed->value.at(i, j) > perturbed->value.at(i, best)) best = j;
    hard.data[i * v + best] = 1.0;
    out.tokens[size_t(i)] = int32_t(best);
  }
  out.one_hot = ag::straight_through(hard, soft);
  out.embeddings = ag::matmul(out.one_hot, std::move(e_audio));
  return out;
}

ag::NodePtr bridge_ce(ag::NodePtr logits, const std::vector<int32_t>& codec_tokens) {
  return ag::mean_all(ag::ce_rows(std::move(logits), codec_tokens));
}

Augmented lm_branch_augment(const audio::Waveform& w, const std::vector<int32_t>& tokens,
                            int64_t audio_vocab, Rng& rng) {
  if (audio_vocab < 1) throw ConfigError("lm_branch_augment: empty vocabulary");
  Augmented out;
  out.offset = rng.uniform_int(2 * kJitterMax + 1) - kJitterMax;
  out.jittered.sample_rate = w.sample_rate;
  const int64_t n = int64_t(w.samples.size());
  out.jittered.samples.assign(size_t(n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t src = i - out.offset;
    if (src >= 0 && src < n) out.jittered.samples[size_t(i)] = w.samples[size_t(src)];
  }
  out.noised = tokens;
  const int64_t t = int64_t(tokens.size());
  out.replaced = int64_t(std::floor(kCodeNoiseFrac * double(t) + 0.5));  // round half up
  std::vector<int64_t> idx(static_cast<size_t>(t));
  std::iota(idx.begin(), idx.end(), int64_t(0));
  for (int64_t i = 0; i < out.replaced; ++i) {
    const int64_t j = i + rng.uniform_int(t - i);
    std::swap(idx[size_t(i)], idx[size_t(j)]);
    out.noised[size_t(idx[size_t(i)])] = int32_t(rng.uniform_int(audio_vocab));
  }
  return out;
}

}  // namespace pcodec::bridge
