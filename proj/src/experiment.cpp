#include "pcodec/experiment.hpp"

#include <filesystem>
#include <fstream>

#include "pcodec/errors.hpp"
#include "pcodec/eval.hpp"

namespace pcodec::exp {

VariantSpec variant_by_name(const std::string& name) {
  if (name == "baseline") return {name, false, false, false, 5};
  if (name == "full") return {name, true, true, true, 5};
  if (name == "ftp_only") return {name, true, true, false, 5};
  if (name == "sa_only") return {name, true, false, true, 5};
  if (name == "k1") return {name, true, true, true, 1};
  throw ConfigError("unknown variant: " + name);
}

trainer::TrainerConfig variant_config(const trainer::TrainerConfig& base, const VariantSpec& v) {
  trainer::TrainerConfig c = base;
  c.use_bridge = v.bridge;
  c.use_ftp = v.ftp;
  c.use_sa = v.sa;
  c.ftp_k = v.k;
  return c;
}

namespace {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunMetrics, variant, seed, ppl, lm_final_loss,
                                                coherence, pairs, excluded, mel, final_total,
                                                steps)

std::string cache_path(const std::string& out_dir, const VariantSpec& v, uint64_t seed) {
  return out_dir + "/" + v.name + "_s" + std::to_string(seed) + ".json";
}

bool load_cached(const std::string& path, uint64_t hash, RunMetrics& out) {
  std::ifstream f(path);
  if (!f) return false;
  nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
  if (j.is_discarded() || !j.contains("config_hash")) return false;
  if (j["config_hash"].get<std::string>() != cfg::hash_hex(hash)) return false;
  from_json(j["metrics"], out);
  return true;
}

void store_cache(const std::string& path, uint64_t hash, const RunMetrics& m) {
  nlohmann::json j;
  j["config_hash"] = cfg::hash_hex(hash);
  to_json(j["metrics"], m);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write cache: " + path);
  f << j.dump(2) << "\n";
}

std::vector<std::vector<int32_t>> tokenize_set(codec::CodecModel& model,
                                               const std::vector<audio::Utterance>& utts,
                                               int64_t limit) {
  std::vector<std::vector<int32_t>> out;
  const int64_t n = std::min<int64_t>(limit, int64_t(utts.size()));
  for (int64_t i = 0; i < n; ++i)
    out.push_back(codec::tokenize(model, utts[size_t(i)].audio));
  return out;
}

constexpr audio::NuisanceKind kPairKinds[] = {
    audio::NuisanceKind::kGain, audio::NuisanceKind::kPitchOffset, audio::NuisanceKind::kNoise,
    audio::NuisanceKind::kSmoothing};

}  // namespace

RunMetrics run_variant(const cfg::RunConfig& rc, const VariantSpec& v, uint64_t seed,
                       const std::vector<audio::Utterance>& train_set,
                       const std::vector<audio::Utterance>& heldout, const std::string& out_dir,
                       ProgressFn progress) {
  if (train_set.empty() || heldout.empty())
    throw ConfigError("run_variant: need non-empty train and held-out sets");
  const uint64_t hash = cfg::config_hash(rc);
  std::filesystem::create_directories(out_dir);
  const std::string cache = cache_path(out_dir, v, seed);
  RunMetrics m;
  if (load_cached(cache, hash, m)) return m;

  m.variant = v.name;
  m.seed = seed;

  const trainer::TrainerConfig tc = variant_config(rc.trainer, v);
  cfg::RunConfig vrc = rc;
  vrc.trainer = tc;
  cfg::validate_run(vrc);
  trainer::Trainer t = trainer::make_trainer(tc, seed);
  const auto items = trainer::make_items(train_set, tc.segment_seconds);
  for (int64_t step = 0; step < tc.schedule.total_steps; ++step) {
    const auto batch = trainer::sample_batch(items, tc.accum, seed, step);
    const auto b = trainer::train_step(t, batch);
    m.final_total = b.total;
    if (progress && step % 100 == 0) progress(v.name, step, tc.schedule.total_steps);
  }
  m.steps = tc.schedule.total_steps;

  // Token LM on this codec's streams, evaluated on held-out streams.
  const auto lm_train = tokenize_set(t.m.codec, train_set, rc.experiment.slm_train);
  const auto lm_eval = tokenize_set(t.m.codec, heldout, int64_t(heldout.size()));
  auto lm_res = lm::train_token_lm(lm_train, rc.slm, rc.experiment.slm_epochs, seed + 17);
  m.lm_final_loss = lm_res.epoch_loss.back();
  const auto ppl = eval::perplexity(lm_res.model, lm_eval);
  m.ppl = ppl.ppl;

  const auto spec = rc.corpus.materialize();
  std::vector<audio::IncoherentPair> pairs;
  for (int64_t i = 0; i < rc.experiment.eval_pairs; ++i) {
    const auto& u = heldout[size_t(i) % heldout.size()];
    pairs.push_back(audio::make_incoherent_pair(u, spec, kPairKinds[size_t(i) % 4],
                                                seed * 1000 + uint64_t(i)));
  }
  const auto coh = eval::coherence_accuracy(t.m.codec, lm_res.model, pairs);
  m.coherence = coh.accuracy;
  m.pairs = coh.evaluated;
  m.excluded = coh.excluded;

  double mel_acc = 0.0;
  const int64_t mel_n = std::min<int64_t>(rc.experiment.mel_utts, int64_t(heldout.size()));
  for (int64_t i = 0; i < mel_n; ++i) {
    const auto& w = heldout[size_t(i)].audio;
    audio::Waveform recon = codec::reconstruct(t.m.codec, w);
    audio::Waveform ref = w;
    ref.samples.resize(recon.samples.size());  // codec drops tail samples
    mel_acc += eval::mel_distance(ref, recon);
  }
  m.mel = mel_acc / double(mel_n);

  store_cache(cache, hash, m);
  return m;
}

ExperimentReport run_comparison(const cfg::RunConfig& rc, const std::string& treatment,
                                int64_t n_seeds, uint64_t base_seed,
                                const std::vector<audio::Utterance>& corpus,
                                const std::string& out_dir, ProgressFn progress) {
  if (int64_t(corpus.size()) <= rc.experiment.heldout)
    throw ConfigError("run_comparison: corpus smaller than the held-out split");
  const int64_t split = int64_t(corpus.size()) - rc.experiment.heldout;
  const std::vector<audio::Utterance> train_set(corpus.begin(), corpus.begin() + split);
  const std::vector<audio::Utterance> heldout(corpus.begin() + split, corpus.end());

  const VariantSpec base_v = variant_by_name("baseline");
  const VariantSpec treat_v = variant_by_name(treatment);

  ExperimentReport rep;
  rep.treatment = treatment;
  for (int64_t s = 0; s < n_seeds; ++s) {
    SeedComparison c;
    c.seed = base_seed + uint64_t(s);
    c.base = run_variant(rc, base_v, c.seed, train_set, heldout, out_dir, progress);
    c.treat = run_variant(rc, treat_v, c.seed, train_set, heldout, out_dir, progress);
    c.ppl_ratio = c.treat.ppl > 0 ? c.base.ppl / c.treat.ppl : 0.0;
    c.ppl_pass = c.ppl_ratio >= rc.experiment.ppl_ratio_bar;
    c.coh_pass = c.treat.coherence >= c.base.coherence + rc.experiment.coh_margin;
    c.mel_pass = c.treat.mel <= rc.experiment.mel_bar * c.base.mel;
    rep.ppl_passes += c.ppl_pass;
    rep.coh_passes += c.coh_pass;
    rep.mel_passes += c.mel_pass;
    rep.seeds.push_back(std::move(c));
  }
  rep.all_pass = rep.ppl_passes == n_seeds && rep.coh_passes == n_seeds &&
                 rep.mel_passes == n_seeds;
  return rep;
}

nlohmann::json to_json(const RunMetrics& m) {
  nlohmann::json j;
  to_json(j, m);
  return j;
}

nlohmann::json to_json(const ExperimentReport& r) {
  nlohmann::json j;
  j["treatment"] = r.treatment;
  j["ppl_passes"] = r.ppl_passes;
  j["coh_passes"] = r.coh_passes;
  j["mel_passes"] = r.mel_passes;
  j["all_pass"] = r.all_pass;
  j["seeds"] = nlohmann::json::array();
  for (const auto& c : r.seeds) {
    nlohmann::json s;
    s["seed"] = c.seed;
    s["baseline"] = to_json(c.base);
    s["treatment"] = to_json(c.treat);
    s["ppl_ratio"] = c.ppl_ratio;
    s["ppl_pass"] = c.ppl_pass;
    s["coh_pass"] = c.coh_pass;
    s["mel_pass"] = c.mel_pass;
    j["seeds"].push_back(std::move(s));
  }
  return j;
}

}  // namespace pcodec::exp
