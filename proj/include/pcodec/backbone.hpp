#pragma once

#include <cstdint>
#include <vector>

#include "pcodec/graph.hpp"
#include "pcodec/params.hpp"
#include "pcodec/rng.hpp"

namespace pcodec::lm {

struct BackboneConfig {
  int64_t layers = 8;
  int64_t hidden = 128;
  int64_t heads = 4;
  int64_t text_vocab = 64;
  int64_t audio_vocab = 256;
  int64_t max_seq = 256;
  int64_t ffn_mult = 4;
  // Brief next-token pass over a synthetic text grammar before freezing, so
  // the frozen hidden geometry is nontrivial. Zero skips it.
  int64_t pretrain_steps = 120;
  double adam_lr = 3e-3;  // used by the pretrain pass and train_token_lm

  int64_t vocab() const { return text_vocab + audio_vocab; }
  void validate() const;
};

// Pre-norm causal transformer (RMSNorm, rotary positions, SiLU MLP). The core
// store holds the transformer blocks, the text embedding rows, the final norm
// and the output head; the audio store holds only the trainable audio
// embedding rows. With core_trainable the same struct serves as a fully
// trainable from-scratch token LM.
struct Backbone {
  BackboneConfig cfg;
  ParamStore core;   // "emb_text", "blk{i}.*", "out.g", "w_lm"
  ParamStore audio;  // "emb_audio": [audio_vocab, hidden]
  bool core_trainable = false;
};

Backbone build_backbone(const BackboneConfig& cfg, uint64_t seed);

struct ForwardResult {
  std::vector<ag::NodePtr> hidden;  // post-block states, one [T, H] per layer
  ag::NodePtr logits;               // [T, vocab]
};

ForwardResult forward_hidden(const BackboneConfig& cfg, const Binding& core, ag::NodePtr emb);

// ids live in the combined space: [0, text_vocab) hits the frozen text rows,
// [text_vocab, vocab) the trainable audio rows.
ag::NodePtr embed_tokens(const BackboneConfig& cfg, const Binding& core, const Binding& audio,
                         const std::vector<int32_t>& ids);

struct NllResult {
  double mean_nll = 0.0;
  std::vector<double> per_token;  // -log p(c_t | c_<t) for t = 2..T
};

// Teacher-forced NLL of an audio token sequence (ids in [0, audio_vocab)),
// normalized over the audio sub-vocabulary.
NllResult sequence_nll(Backbone& b, const std::vector<int32_t>& audio_tokens);

// Token-weighted mean NLL across a corpus of audio token sequences.
double corpus_nll(Backbone& b, const std::vector<std::vector<int32_t>>& corpus);

struct TokenLmResult {
  Backbone model;
  std::vector<double> epoch_loss;  // corpus NLL before training, then after each epoch
};

// Trains a fresh, fully trainable token LM by next-token cross-entropy.
TokenLmResult train_token_lm(const std::vector<std::vector<int32_t>>& corpus,
                             const BackboneConfig& cfg, int64_t epochs, uint64_t seed);

}  // namespace pcodec::lm
