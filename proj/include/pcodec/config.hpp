#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "pcodec/audio.hpp"
#include "pcodec/backbone.hpp"
#include "pcodec/trainer.hpp"

namespace pcodec::cfg {

// JSON-friendly corpus description; the transition grammar is materialized
// from (content_vocab, cluster_size, within, grammar_seed).
struct CorpusSettings {
  int64_t n_utterances = 2200;
  int content_vocab = 32;
  int cluster_size = 4;
  double within = 0.85;
  uint64_t grammar_seed = 7;
  int min_symbols = 4, max_symbols = 12;
  double gain_lo = 0.5, gain_hi = 1.0;
  double pitch_lo = -2.0, pitch_hi = 2.0;
  double noise_lo = 0.0, noise_hi = 0.02;
  double smooth_lo = 0.0, smooth_hi = 0.6;
  int sample_rate = 16000;
  double symbol_duration = 0.08;

  audio::CorpusSpec materialize() const;
};

struct IoPaths {
  std::string data_dir;       // training corpus (wav + manifest)
  std::string checkpoint;     // codec trainer snapshot
  std::string lm_checkpoint;  // token-LM snapshot
  std::string tokens;         // line-delimited token sequences
};

struct ExperimentSettings {
  int64_t heldout = 200;     // utterances reserved for evaluation
  int64_t slm_train = 600;   // utterances tokenized for token-LM training
  int64_t eval_pairs = 220;  // coherence pairs
  int64_t mel_utts = 100;    // held-out utterances for mel distance
  int64_t slm_epochs = 3;
  double ppl_ratio_bar = 1.5;
  double coh_margin = 0.05;
  double mel_bar = 1.10;
};

struct RunConfig {
  trainer::TrainerConfig trainer;
  lm::BackboneConfig slm;  // from-scratch token LM for evaluation
  CorpusSettings corpus;
  ExperimentSettings experiment;
  IoPaths io;
};

RunConfig paper_defaults();
RunConfig desk_defaults();

// Cross-module coherence on top of the per-struct validators: transcripts
// must fit the text embedding when semantic alignment is on, and the token-LM
// vocabulary must match the codec's codebook.
void validate_run(const RunConfig& rc);

nlohmann::json to_json(const RunConfig& rc);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& rc);

// FNV-1a over the canonical (sorted-key) JSON dump.
uint64_t config_hash(const RunConfig& rc);
std::string hash_hex(uint64_t h);

nlohmann::json log_line(const trainer::LossBreakdown& b, const trainer::ScheduleState& st);

}  // namespace pcodec::cfg
