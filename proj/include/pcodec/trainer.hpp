#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcodec/audio.hpp"
#include "pcodec/backbone.hpp"
#include "pcodec/bridge.hpp"
#include "pcodec/codec.hpp"
#include "pcodec/ftp.hpp"
#include "pcodec/gan.hpp"
#include "pcodec/optim.hpp"
#include "pcodec/salign.hpp"
#include "pcodec/spectral.hpp"

namespace pcodec::trainer {

struct LambdaTargets {
  double bridge = 1.0;
  double ftp = 0.2;
  double cos = 0.1;
  double ctr = 0.05;
};

struct CodecWeights {
  double mel = 1.5;
  double ms_mel = 0.5;
  double mr_stft = 0.5;
  double cstft = 0.8;
};

// Three-phase staggered schedule: discriminator-only, then codec+FTP ramp,
// then semantic alignment. Delays and warmups are in optimizer steps.
struct ScheduleConfig {
  int64_t total_steps = 25000;
  int64_t d_only_until = 10000;  // codec optimizer held until here
  int64_t ftp_delay = 10000;
  int64_t ftp_warmup = 2000;
  int64_t sa_delay = 12000;
  int64_t sa_warmup = 2000;
  LambdaTargets targets;
  CodecWeights weights;
  double grad_clip = 15.0;
  bool cosine_ramp = false;  // linear ramps by default
  bool lr_warmup = false;
  int64_t lr_warmup_steps = 2000;

  void validate() const;
  // Same shape at 1/ratio the length (warmups kept >= 1).
  ScheduleConfig scaled(int64_t ratio) const;
};

struct Lambdas {
  double bridge = 0.0;
  double ftp = 0.0;
  double cos = 0.0;
  double ctr = 0.0;
};

struct ScheduleState {
  int64_t step = 0;
  int phase = 1;  // 1 = D-only, 2 = +codec/FTP, 3 = +SA
  Lambdas lambda;
  bool codec_opt_active = false;
  gan::GanGateState gate;
};

ScheduleState schedule_at(int64_t step, const ScheduleConfig& cfg);

struct LossBreakdown {
  double mel = 0, ms_mel = 0, mr_stft = 0, cstft = 0, commit = 0;
  double gan_g = 0, fm = 0, d_loss = 0, r1 = 0;
  double bridge = 0, ftp = 0, cos = 0, ctr = 0;
  double codec = 0;  // weighted codec composite
  double total = 0;  // codec + lambda-weighted LM terms
  double grad_norm = 0;
  bool skipped = false;
  std::string guard_event;
};

// Fills parts.codec / parts.total from the raw terms and returns the total.
// Every input term must be finite; gan_g and fm enter with unit weight (fm
// carries its own schedule weight), commit with commit_weight.
double total_loss(LossBreakdown& parts, const ScheduleState& st, const ScheduleConfig& cfg,
                  double commit_weight);

struct GuardOutcome {
  Tensor logits;  // clamped to [-80, 80]
  Tensor audio;   // clamped to [-1.2, 1.2]
  bool skip = false;
};

GuardOutcome guards(const Tensor& logits, const Tensor& audio, double loss);

// The codec must stay batch-statistics free (no running-stat layers).
void assert_no_batch_stats(const ParamStore& params);

struct TrainerConfig {
  codec::CodecConfig codec;
  spectral::SpectralConfig spectral;
  gan::GanConfig gan;
  lm::BackboneConfig backbone;
  ScheduleConfig schedule;
  sa::SaConfig sa;
  double tau_start = 1.0;
  double tau_end = 0.3;
  int64_t tau_steps = 20000;
  int64_t ftp_k = 5;
  double codec_lr = 5e-6, codec_momentum = 0.9, codec_wd = 1e-4;
  double aux_lr = 1e-4;
  double disc_lr = 1e-4;
  double adam_beta1 = 0.9, adam_beta2 = 0.99;
  int64_t accum = 10;         // micro-batches per optimizer step
  double segment_seconds = 1.0;
  int64_t reseed_interval = 250;  // dead-code reseeding cadence, in steps
  bool use_bridge = true;
  bool use_ftp = true;
  bool use_sa = true;

  void validate() const;
};

struct Models {
  codec::CodecModel codec;
  gan::DiscriminatorBank disc;
  lm::Backbone backbone;  // frozen core + trainable audio embeddings
  bridge::BridgeParams bridge;
  ftp::FtpHeads heads;
  sa::MemoryBank bank;
};

struct Trainer {
  TrainerConfig cfg;
  uint64_t seed = 0;
  Models m;
  ScheduleState sched;    // step to run next, plus the GAN gate
  int64_t opt_steps = 0;  // completed optimizer steps (R1 cadence)
  SgdM opt_codec;
  AdamW opt_audio, opt_bridge, opt_ftp, opt_disc;

  Trainer(const TrainerConfig& c, uint64_t s)
      : cfg(c),
        seed(s),
        m{{}, {}, {}, {}, {}, sa::MemoryBank(c.sa.bank_capacity)},
        opt_codec(c.codec_lr, c.codec_momentum, c.codec_wd),
        opt_audio(c.aux_lr, c.adam_beta1, c.adam_beta2),
        opt_bridge(c.aux_lr, c.adam_beta1, c.adam_beta2),
        opt_ftp(c.aux_lr, c.adam_beta1, c.adam_beta2),
        opt_disc(c.disc_lr, c.adam_beta1, c.adam_beta2) {}
};

Trainer make_trainer(const TrainerConfig& cfg, uint64_t seed);

struct TrainItem {
  audio::Segment seg;
  std::vector<int32_t> transcript;
};

std::vector<TrainItem> make_items(const std::vector<audio::Utterance>& corpus, double seconds);

// Deterministic micro-batch for a given step (uniform with replacement).
std::vector<TrainItem> sample_batch(const std::vector<TrainItem>& items, int64_t accum,
                                    uint64_t seed, int64_t step);

// Per-micro-batch loss graph. Nodes are null when the term is inactive this
// step. soft_bridge swaps the straight-through one-hot for the soft posterior
// and update_ema freezes quantizer statistics; both exist for gradient tests.
struct MicroNodes {
  ag::NodePtr mel, ms_mel, mr_stft, cstft, commit;
  ag::NodePtr gan_g, fm, d_loss;
  ag::NodePtr bridge_ce, ftp_loss, cos, ctr;
  std::vector<int32_t> tokens;     // quantizer tokens, clean branch
  std::vector<int32_t> tokens_lm;  // quantizer tokens, jittered LM branch
  Tensor z_values;                 // encoder latents, clean branch
  std::vector<double> text_vec;  // pooled text state (bank push after the step)
  Binding codec, disc, audio, bridge, heads;
};

MicroNodes build_micro(Trainer& t, ag::Tape& tape, const TrainItem& item,
                       const ScheduleState& st, Rng& rng, bool soft_bridge = false,
                       bool update_ema = true);

// One optimizer step over cfg.accum micro-batches. Throws ShapeError on a
// wrong batch size and ContractError past total_steps. A non-finite loss or
// guard trip skips every update (parameters and optimizer state untouched)
// and reports the event in the returned breakdown.
LossBreakdown train_step(Trainer& t, const std::vector<TrainItem>& micro);

}  // namespace pcodec::trainer
