#pragma once

#include <cstdint>
#include <vector>

#include "pcodec/audio.hpp"
#include "pcodec/graph.hpp"
#include "pcodec/params.hpp"

namespace pcodec::codec {

struct CodecConfig {
  int latent_dim = 32;                       // C
  int hop = 320;                             // samples per token frame
  int codebook_size = 256;                   // V_codec
  std::vector<int> strides = {4, 4, 4, 5};   // product must equal hop
  std::vector<int> channels = {12, 16, 24, 32};
  int refine_kernel = 5;                     // stride-1 conv after each stage
  double ema_decay = 0.99;
  double commitment_weight = 0.25;
  int sample_rate = 16000;

  void validate() const;
  int token_rate() const { return sample_rate / hop; }
};

struct Codebook {
  Tensor vectors;     // [V, C]
  Tensor ema_counts;  // [V]
  Tensor ema_sums;    // [V, C]

  void init(int v, int c, Rng& rng);
  // Decays every entry's statistics, folds in the selected frames, and
  // recomputes vectors for entries used in this batch only, so unused
  // entries keep bitwise-identical vectors.
  void ema_update(const Tensor& z, const std::vector<int32_t>& tokens, double decay);
  // Entries whose ema_count fell below min_count are reseeded from random
  // encoder frames.
  int reseed_dead(const Tensor& z, Rng& rng, double min_count = 1e-3);
};

struct LatentSequence {
  Tensor frames;  // [T, C]
  int frame_rate = 50;
};

struct CodecModel {
  CodecConfig cfg;
  ParamStore params;  // encoder + decoder weights (gradient-trained)
  Codebook codebook;  // EMA state, not gradient-trained

  void init(Rng& rng);
};

// Conv-stack encoder over [1, L]; returns latents as [T, C] with
// T = floor(L / hop). Extra tail samples are ignored.
ag::NodePtr encode(const CodecConfig& cfg, const Binding& b, ag::NodePtr x);

struct QuantizeResult {
  std::vector<int32_t> tokens;
  ag::NodePtr z_q;      // straight-through: value = codebook rows, grad -> z
  ag::NodePtr commit;   // mean over frames+dims of (z - stopgrad(z_q))^2
  Tensor z_q_values;    // [T, C]
};

QuantizeResult quantize(ag::Tape& tape, ag::NodePtr z, Codebook& cb, bool training,
                        double ema_decay);

// Decoder over [T, C] latents; returns waveform node of length T * hop.
ag::NodePtr decode(const CodecConfig& cfg, const Binding& b, ag::NodePtr z_q);

// Value-only convenience paths used by eval and data preparation.
LatentSequence encode_values(CodecModel& model, const audio::Waveform& w);
std::vector<int32_t> tokenize(CodecModel& model, const audio::Waveform& w);
audio::Waveform reconstruct(CodecModel& model, const audio::Waveform& w);

}  // namespace pcodec::codec
