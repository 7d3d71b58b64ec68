#include "pcodec/config.hpp"

#include <fstream>
#include <sstream>

#include "pcodec/errors.hpp"

namespace pcodec::codec {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CodecConfig, latent_dim, hop, codebook_size,
                                                strides, channels, refine_kernel, ema_decay,
                                                commitment_weight, sample_rate)
}

namespace pcodec::spectral {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SpectralConfig, mel_bins, mel_fft, mel_hop,
                                                ms_bins, fft_sizes, phase_weight, eps_floor,
                                                mask_floor)
}

namespace pcodec::gan {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GanConfig, periods, msd_scales, ch1, ch2,
                                                leaky_slope, r1_gamma, r1_interval, fm_start,
                                                fm_end, pause_threshold, pause_steps)
}

namespace pcodec::lm {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BackboneConfig, layers, hidden, heads, text_vocab,
                                                audio_vocab, max_seq, ffn_mult, pretrain_steps,
                                                adam_lr)
}

namespace pcodec::sa {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SaConfig, bank_capacity, alpha, eps)
}

namespace pcodec::trainer {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LambdaTargets, bridge, ftp, cos, ctr)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CodecWeights, mel, ms_mel, mr_stft, cstft)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScheduleConfig, total_steps, d_only_until,
                                                ftp_delay, ftp_warmup, sa_delay, sa_warmup,
                                                targets, weights, grad_clip, cosine_ramp,
                                                lr_warmup, lr_warmup_steps)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainerConfig, codec, spectral, gan, backbone,
                                                schedule, sa, tau_start, tau_end, tau_steps,
                                                ftp_k, codec_lr, codec_momentum, codec_wd, aux_lr,
                                                disc_lr, adam_beta1, adam_beta2, accum,
                                                segment_seconds, reseed_interval, use_bridge,
                                                use_ftp, use_sa)
}

namespace pcodec::cfg {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CorpusSettings, n_utterances, content_vocab,
                                                cluster_size, within, grammar_seed, min_symbols,
                                                max_symbols, gain_lo, gain_hi, pitch_lo, pitch_hi,
                                                noise_lo, noise_hi, smooth_lo, smooth_hi,
                                                sample_rate, symbol_duration)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(IoPaths, data_dir, checkpoint, lm_checkpoint,
                                                tokens)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExperimentSettings, heldout, slm_train,
                                                eval_pairs, mel_utts, slm_epochs, ppl_ratio_bar,
                                                coh_margin, mel_bar)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, trainer, slm, corpus, experiment, io)

audio::CorpusSpec CorpusSettings::materialize() const {
  audio::CorpusSpec s;
  s.n_utterances = n_utterances;
  s.content_vocab = content_vocab;
  s.grammar = audio::cluster_grammar(content_vocab, cluster_size, within, grammar_seed);
  s.min_symbols = min_symbols;
  s.max_symbols = max_symbols;
  s.gain_range = {gain_lo, gain_hi};
  s.pitch_range = {pitch_lo, pitch_hi};
  s.noise_range = {noise_lo, noise_hi};
  s.smoothing_range = {smooth_lo, smooth_hi};
  s.sample_rate = sample_rate;
  s.symbol_duration = symbol_duration;
  audio::validate_spec(s);
  return s;
}

RunConfig paper_defaults() {
  RunConfig rc;
  rc.slm.layers = 2;
  rc.slm.hidden = 32;
  rc.slm.heads = 2;
  rc.slm.text_vocab = 0;
  rc.slm.audio_vocab = rc.trainer.codec.codebook_size;
  rc.slm.max_seq = 64;
  rc.slm.pretrain_steps = 0;
  return rc;
}

RunConfig desk_defaults() {
  RunConfig rc = paper_defaults();
  rc.trainer.schedule = rc.trainer.schedule.scaled(10);
  rc.trainer.backbone.layers = 4;
  rc.trainer.backbone.hidden = 48;
  rc.trainer.backbone.heads = 4;
  rc.trainer.backbone.text_vocab = 32;
  rc.trainer.backbone.max_seq = 64;
  rc.trainer.tau_steps = 2000;
  rc.trainer.accum = 2;
  rc.trainer.segment_seconds = 0.32;
  return rc;
}

void validate_run(const RunConfig& rc) {
  rc.trainer.validate();
  if (rc.trainer.use_sa && rc.corpus.content_vocab > rc.trainer.backbone.text_vocab)
    throw ConfigError("config: corpus content_vocab exceeds backbone text_vocab");
  if (rc.slm.audio_vocab != rc.trainer.codec.codebook_size)
    throw ConfigError("config: slm audio_vocab must equal the codec codebook size");
  if (rc.experiment.heldout < 1 || rc.experiment.eval_pairs < 1 || rc.experiment.mel_utts < 1 ||
      rc.experiment.slm_train < 1 || rc.experiment.slm_epochs < 1)
    throw ConfigError("config: experiment split sizes must be positive");
  // With an external data_dir the real corpus size is only known at load time.
  if (rc.io.data_dir.empty() && rc.corpus.n_utterances <= rc.experiment.heldout)
    throw ConfigError("config: corpus smaller than the held-out split");
}

nlohmann::json to_json(const RunConfig& rc) {
  nlohmann::json j;
  to_json(j, rc);  // macro-generated overload
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig rc;
  try {
    from_json(j, rc);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON: " + path);
  return run_config_from_json(j);
}

void save_run_config(const std::string& path, const RunConfig& rc) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open config for writing: " + path);
  f << to_json(rc).dump(2) << "\n";
}

uint64_t config_hash(const RunConfig& rc) {
  const std::string dump = to_json(rc).dump();
  return fnv1a64(dump.data(), dump.size());
}

std::string hash_hex(uint64_t h) {
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

nlohmann::json log_line(const trainer::LossBreakdown& b, const trainer::ScheduleState& st) {
  nlohmann::json j;
  j["step"] = st.step;
  j["phase"] = st.phase;
  j["mel"] = b.mel;
  j["ms_mel"] = b.ms_mel;
  j["mr_stft"] = b.mr_stft;
  j["cstft"] = b.cstft;
  j["commit"] = b.commit;
  j["gan_g"] = b.gan_g;
  j["fm"] = b.fm;
  j["d_loss"] = b.d_loss;
  j["r1"] = b.r1;
  j["bridge"] = b.bridge;
  j["ftp"] = b.ftp;
  j["cos"] = b.cos;
  j["ctr"] = b.ctr;
  j["codec"] = b.codec;
  j["total"] = b.total;
  j["grad_norm"] = b.grad_norm;
  j["lambda"] = {{"bridge", st.lambda.bridge},
                 {"ftp", st.lambda.ftp},
                 {"cos", st.lambda.cos},
                 {"ctr", st.lambda.ctr}};
  j["skipped"] = b.skipped;
  j["guard"] = b.guard_event;
  return j;
}

}  // namespace pcodec::cfg
