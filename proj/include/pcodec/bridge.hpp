#pragma once

#include <cstdint>
#include <vector>

#include "pcodec/audio.hpp"
#include "pcodec/graph.hpp"
#include "pcodec/params.hpp"
#include "pcodec/rng.hpp"

namespace pcodec::bridge {

struct BridgeParams {
  int64_t latent_dim = 0;
  int64_t audio_vocab = 0;
  double tau_start = 1.0;
  double tau_end = 0.3;
  int64_t tau_steps = 20000;
  ParamStore params;  // "w": [latent_dim, audio_vocab]

  void validate() const;
  void init(Rng& rng);
};

// Cosine anneal from tau_start to tau_end over tau_steps, constant after.
double temperature(int64_t step, const BridgeParams& p);

struct BridgeOutput {
  ag::NodePtr logits;      // [T, V], clamped to [-80, 80]
  ag::NodePtr one_hot;     // hard forward value, soft-softmax backward
  ag::NodePtr embeddings;  // [T, H] = one_hot * E_audio
  std::vector<int32_t> tokens;
};

// Hard Gumbel-Softmax over bridge logits. rng == nullptr drops the noise
// (deterministic argmax; forward then independent of temperature).
BridgeOutput bridge_forward(const BridgeParams& p, ag::NodePtr z, ag::NodePtr w_bridge,
                            ag::NodePtr e_audio, int64_t step, Rng* rng);

// Mean cross-entropy of the bridge logits against the quantizer's tokens.
ag::NodePtr bridge_ce(ag::NodePtr logits, const std::vector<int32_t>& codec_tokens);

inline constexpr int64_t kJitterMax = 24;        // samples
inline constexpr double kCodeNoiseFrac = 0.015;  // fraction of positions replaced

struct Augmented {
  audio::Waveform jittered;
  std::vector<int32_t> noised;
  int64_t offset = 0;    // applied shift, in [-kJitterMax, kJitterMax]
  int64_t replaced = 0;  // number of token positions replaced
};

// LM-branch-only augmentation: integer phase jitter with zero fill plus
// replacement of round(kCodeNoiseFrac * T) token positions by random ids.
Augmented lm_branch_augment(const audio::Waveform& w, const std::vector<int32_t>& tokens,
                            int64_t audio_vocab, Rng& rng);

}  // namespace pcodec::bridge
