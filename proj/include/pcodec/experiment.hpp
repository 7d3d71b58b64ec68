#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcodec/audio.hpp"
#include "pcodec/config.hpp"
#include "pcodec/trainer.hpp"

namespace pcodec::exp {

struct VariantSpec {
  std::string name;
  bool bridge = true, ftp = true, sa = true;
  int64_t k = 5;
};

// baseline | full | ftp_only | sa_only | k1; ConfigError otherwise.
VariantSpec variant_by_name(const std::string& name);

trainer::TrainerConfig variant_config(const trainer::TrainerConfig& base, const VariantSpec& v);

struct RunMetrics {
  std::string variant;
  uint64_t seed = 0;
  double ppl = 0.0;
  double lm_final_loss = 0.0;
  double coherence = 0.0;
  int64_t pairs = 0;
  int64_t excluded = 0;
  double mel = 0.0;
  double final_total = 0.0;  // last training-step total
  int64_t steps = 0;
};

using ProgressFn = void (*)(const std::string& tag, int64_t step, int64_t total);

// Trains the variant end to end (codec -> token streams -> token LM) and
// evaluates perplexity, coherence and held-out mel distance. Results are
// cached as <out_dir>/<variant>_s<seed>.json keyed by the config hash.
RunMetrics run_variant(const cfg::RunConfig& rc, const VariantSpec& v, uint64_t seed,
                       const std::vector<audio::Utterance>& train_set,
                       const std::vector<audio::Utterance>& heldout, const std::string& out_dir,
                       ProgressFn progress = nullptr);

struct SeedComparison {
  uint64_t seed = 0;
  RunMetrics base, treat;
  double ppl_ratio = 0.0;  // baseline / treatment
  bool ppl_pass = false, coh_pass = false, mel_pass = false;
};

struct ExperimentReport {
  std::string treatment;
  std::vector<SeedComparison> seeds;
  int64_t ppl_passes = 0, coh_passes = 0, mel_passes = 0;
  bool all_pass = false;
};

// Splits the corpus, then compares `treatment` against the baseline across
// seeds base_seed .. base_seed+n_seeds-1.
ExperimentReport run_comparison(const cfg::RunConfig& rc, const std::string& treatment,
                                int64_t n_seeds, uint64_t base_seed,
                                const std::vector<audio::Utterance>& corpus,
                                const std::string& out_dir, ProgressFn progress = nullptr);

nlohmann::json to_json(const RunMetrics& m);
nlohmann::json to_json(const ExperimentReport& r);

}  // namespace pcodec::exp
