// Command-line entry point: corpus synthesis, codec training, token-LM
// training, evaluation reports, schedule inspection and the full
// baseline-vs-treatment experiment. Every artifact records the config hash so
// a run is reproducible from (config file, seed) alone.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pcodec/checkpoint.hpp"
#include "pcodec/config.hpp"
#include "pcodec/errors.hpp"
#include "pcodec/eval.hpp"
#include "pcodec/experiment.hpp"

namespace fs = std::filesystem;
using namespace pcodec;

namespace {

struct Opts {
  std::string config;
  std::string out = "out";
  uint64_t seed = 0;
  int64_t steps = -1;  // <0: run the configured schedule to the end
  bool baseline = false;
  int64_t seeds = 3;
};

cfg::RunConfig load_rc(const Opts& o) {
  cfg::RunConfig rc = o.config.empty() ? cfg::paper_defaults() : cfg::load_run_config(o.config);
  if (o.baseline) {
    rc.trainer.use_bridge = false;
    rc.trainer.use_ftp = false;
    rc.trainer.use_sa = false;
  }
  return rc;
}

std::vector<audio::Utterance> corpus_source(const cfg::RunConfig& rc, uint64_t seed) {
  if (!rc.io.data_dir.empty()) return audio::read_corpus(rc.io.data_dir);
  return audio::generate_corpus(rc.corpus.materialize(), seed);
}

// Evaluation always uses the tail of the corpus; training uses the rest.
std::vector<audio::Utterance> heldout_split(std::vector<audio::Utterance>& corpus, int64_t n) {
  const int64_t keep = std::max<int64_t>(int64_t(corpus.size()) - n, 0);
  std::vector<audio::Utterance> tail(corpus.begin() + keep, corpus.end());
  corpus.resize(size_t(keep));
  return tail;
}

constexpr audio::NuisanceKind kPairKinds[] = {
    audio::NuisanceKind::kGain, audio::NuisanceKind::kPitchOffset, audio::NuisanceKind::kNoise,
    audio::NuisanceKind::kSmoothing};

std::vector<audio::IncoherentPair> build_pairs(const cfg::RunConfig& rc,
                                               const std::vector<audio::Utterance>& heldout,
                                               uint64_t seed) {
  if (heldout.empty()) throw ConfigError("coherence pairs: held-out set is empty");
  const auto spec = rc.corpus.materialize();
  std::vector<audio::IncoherentPair> pairs;
  for (int64_t i = 0; i < rc.experiment.eval_pairs; ++i)
    pairs.push_back(audio::make_incoherent_pair(heldout[size_t(i) % heldout.size()], spec,
                                                kPairKinds[size_t(i) % 4],
                                                seed * 1000 + uint64_t(i)));
  return pairs;
}

void progress(const std::string& tag, int64_t step, int64_t total) {
  std::cerr << "  " << tag << " " << step << "/" << total << "\n";
}

int cmd_synth_data(const Opts& o) {
  const cfg::RunConfig rc = load_rc(o);
  const auto spec = rc.corpus.materialize();
  const auto corpus = audio::generate_corpus(spec, o.seed);
  fs::create_directories(o.out);
  audio::write_corpus((fs::path(o.out) / "corpus").string(), spec, corpus);
  double seconds = 0.0;
  for (const auto& u : corpus) seconds += double(u.audio.samples.size()) / spec.sample_rate;
  nlohmann::ordered_json j{{"config_hash", cfg::hash_hex(cfg::config_hash(rc))},
                           {"seed", o.seed},
                           {"n_utterances", corpus.size()},
                           {"sample_rate", spec.sample_rate},
                           {"total_seconds", seconds}};
  std::ofstream f(fs::path(o.out) / "synth.json", std::ios::trunc);
  if (!f) throw IoError("cannot write synth manifest in " + o.out);
  f << j.dump(2) << "\n";
  std::cout << "wrote " << corpus.size() << " utterances (" << seconds << " s) to " << o.out
            << "/corpus  config_hash " << cfg::hash_hex(cfg::config_hash(rc)) << "\n";
  return 0;
}

int cmd_train(const Opts& o) {
  const cfg::RunConfig rc = load_rc(o);
  cfg::validate_run(rc);
  const uint64_t hash = cfg::config_hash(rc);

  auto corpus = corpus_source(rc, o.seed);
  auto heldout = heldout_split(corpus, rc.experiment.heldout);
  if (corpus.empty()) corpus.swap(heldout);  // tiny corpora train on everything
  const auto items = trainer::make_items(corpus, rc.trainer.segment_seconds);

  trainer::Trainer t = trainer::make_trainer(rc.trainer, o.seed);
  const int64_t total = rc.trainer.schedule.total_steps;
  const int64_t n = o.steps >= 0 ? std::min(o.steps, total) : total;

  fs::create_directories(o.out);
  std::ofstream log(fs::path(o.out) / "train_log.jsonl", std::ios::trunc);
  if (!log) throw IoError("cannot write train log in " + o.out);
  log << nlohmann::ordered_json{{"run", "train"},
                                {"config_hash", cfg::hash_hex(hash)},
                                {"seed", o.seed},
                                {"steps", n}}
             .dump()
      << "\n";

  for (int64_t step = 0; step < n; ++step) {
    const trainer::ScheduleState st = t.sched;
    const auto batch = trainer::sample_batch(items, rc.trainer.accum, o.seed, step);
    const auto b = trainer::train_step(t, batch);
    log << cfg::log_line(b, st).dump() << "\n";
    if (step % 250 == 0)
      std::cerr << "  step " << step << "/" << n << " total " << b.total << "\n";
  }

  cfg::save_run_config((fs::path(o.out) / "config.json").string(), rc);
  ckpt::save_trainer((fs::path(o.out) / "codec.ckpt").string(), t, hash);

  // Token streams for the slm pipeline, tokenized with the final codec.
  const int64_t slm_n = std::min<int64_t>(rc.experiment.slm_train, int64_t(corpus.size()));
  std::vector<std::vector<int32_t>> train_tokens, heldout_tokens;
  for (int64_t i = 0; i < slm_n; ++i)
    train_tokens.push_back(codec::tokenize(t.m.codec, corpus[size_t(i)].audio));
  for (const auto& u : heldout) heldout_tokens.push_back(codec::tokenize(t.m.codec, u.audio));
  eval::write_token_corpus((fs::path(o.out) / "tokens_train.txt").string(), train_tokens);
  eval::write_token_corpus((fs::path(o.out) / "tokens_heldout.txt").string(), heldout_tokens);
  nlohmann::ordered_json tj{{"config_hash", cfg::hash_hex(hash)},
                            {"seed", o.seed},
                            {"train_sequences", train_tokens.size()},
                            {"heldout_sequences", heldout_tokens.size()}};
  std::ofstream tf(fs::path(o.out) / "tokens.json", std::ios::trunc);
  tf << tj.dump(2) << "\n";

  std::cout << "trained " << n << " steps  checkpoint " << o.out
            << "/codec.ckpt  config_hash " << cfg::hash_hex(hash) << "\n";
  return 0;
}

int cmd_train_slm(const Opts& o) {
  const cfg::RunConfig rc = load_rc(o);
  if (rc.io.tokens.empty())
    throw ConfigError("train-slm: io.tokens must name a token corpus");
  const uint64_t hash = cfg::config_hash(rc);
  const auto corpus = eval::read_token_corpus(rc.io.tokens);
  auto res = lm::train_token_lm(corpus, rc.slm, rc.experiment.slm_epochs, o.seed);
  fs::create_directories(o.out);
  ckpt::save_token_lm((fs::path(o.out) / "slm.ckpt").string(), res.model, hash);
  int64_t tokens = 0;
  for (const auto& s : corpus) tokens += int64_t(s.size());
  eval::write_report((fs::path(o.out) / "slm_report.jsonl").string(),
                     "train-slm-s" + std::to_string(o.seed), hash,
                     {{"nll_initial", res.epoch_loss.front(), tokens},
                      {"nll_final", res.epoch_loss.back(), tokens}});
  std::cout << "token lm: nll " << res.epoch_loss.front() << " -> " << res.epoch_loss.back()
            << " over " << rc.experiment.slm_epochs << " epochs  checkpoint " << o.out
            << "/slm.ckpt\n";
  return 0;
}

int cmd_eval_recon(const Opts& o) {
  const cfg::RunConfig rc = load_rc(o);
  if (rc.io.checkpoint.empty())
    throw ConfigError("eval-recon: io.checkpoint must name a trainer snapshot");
  trainer::Trainer t = ckpt::load_trainer(rc.io.checkpoint, rc.trainer);
  auto corpus = corpus_source(rc, o.seed);
  const auto heldout = heldout_split(corpus, rc.experiment.heldout);
  if (heldout.empty()) throw ConfigError("eval-recon: held-out set is empty");
  const int64_t n = std::min<int64_t>(rc.experiment.mel_utts, int64_t(heldout.size()));
  double mel = 0.0, stft = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const auto& w = heldout[size_t(i)].audio;
    audio::Waveform recon = codec::reconstruct(t.m.codec, w);
    audio::Waveform ref = w;
    ref.samples.resize(recon.samples.size());  // codec drops tail samples
    mel += eval::mel_distance(ref, recon);
    stft += eval::stft_distance(ref, recon);
  }
  mel /= double(n);
  stft /= double(n);
  fs::create_directories(o.out);
  eval::write_report((fs::path(o.out) / "recon_report.jsonl").string(),
                     "eval-recon-s" + std::to_string(o.seed), cfg::config_hash(rc),
                     {{"mel_distance", mel, n}, {"stft_distance", stft, n}});
  std::cout << "mel_distance " << mel << "  stft_distance " << stft << "  (" << n
            << " utterances)\n";
  return 0;
}

int cmd_eval_lm(const Opts& o) {
  const cfg::RunConfig rc = load_rc(o);
  if (rc.io.lm_checkpoint.empty())
    throw ConfigError("eval-lm: io.lm_checkpoint must name a token-lm snapshot");
  if (rc.io.tokens.empty()) throw ConfigError("eval-lm: io.tokens must name a token corpus");
  lm::Backbone b = ckpt::load_token_lm(rc.io.lm_checkpoint, rc.slm);
  const auto corpus = eval::read_token_corpus(rc.io.tokens);
  const auto r = eval::perplexity(b, corpus);
  fs::create_directories(o.out);
  eval::write_report((fs::path(o.out) / "lm_report.jsonl").string(),
                     "eval-lm-s" + std::to_string(o.seed), cfg::config_hash(rc),
                     {{"ppl", r.ppl, r.tokens}, {"mean_nll", r.mean_nll, r.tokens}});
  std::cout << "ppl " << r.ppl << "  mean_nll " << r.mean_nll << "  (" << r.tokens
            << " tokens)\n";
  return 0;
}

int cmd_eval_coherence(const Opts& o) {
  const cfg::RunConfig rc = load_rc(o);
  if (rc.io.checkpoint.empty())
    throw ConfigError("eval-coherence: io.checkpoint must name a trainer snapshot");
  if (rc.io.lm_checkpoint.empty())
    throw ConfigError("eval-coherence: io.lm_checkpoint must name a token-lm snapshot");
  trainer::Trainer t = ckpt::load_trainer(rc.io.checkpoint, rc.trainer);
  lm::Backbone b = ckpt::load_token_lm(rc.io.lm_checkpoint, rc.slm);
  auto corpus = corpus_source(rc, o.seed);
  const auto heldout = heldout_split(corpus, rc.experiment.heldout);
  const auto pairs = build_pairs(rc, heldout, o.seed);
  const auto r = eval::coherence_accuracy(t.m.codec, b, pairs);
  fs::create_directories(o.out);
  eval::write_report((fs::path(o.out) / "coherence_report.jsonl").string(),
                     "eval-coherence-s" + std::to_string(o.seed), cfg::config_hash(rc),
                     {{"coherence", r.accuracy, r.evaluated},
                      {"excluded", double(r.excluded), int64_t(pairs.size())}});
  std::cout << "coherence " << r.accuracy << "  (" << r.evaluated << " pairs, " << r.excluded
            << " excluded)\n";
  return 0;
}

int cmd_inspect_schedule(const Opts& o) {
  const cfg::RunConfig rc = load_rc(o);
  const trainer::ScheduleConfig& sc = rc.trainer.schedule;
  sc.validate();
  std::vector<int64_t> marks{0,
                             sc.d_only_until / 2,
                             sc.d_only_until - 1,
                             sc.d_only_until,
                             sc.ftp_delay - 1,
                             sc.ftp_delay,
                             sc.ftp_delay + sc.ftp_warmup / 2,
                             sc.ftp_delay + sc.ftp_warmup,
                             sc.sa_delay - 1,
                             sc.sa_delay,
                             sc.sa_delay + sc.sa_warmup / 2,
                             sc.sa_delay + sc.sa_warmup,
                             sc.total_steps};
  for (auto& m : marks) m = std::clamp<int64_t>(m, 0, sc.total_steps);
  std::sort(marks.begin(), marks.end());
  marks.erase(std::unique(marks.begin(), marks.end()), marks.end());
  std::cout << "config_hash " << cfg::hash_hex(cfg::config_hash(rc)) << "\n";
  char buf[160];
  for (int64_t m : marks) {
    const auto st = trainer::schedule_at(m, sc);
    std::snprintf(buf, sizeof buf,
                  "step %7lld  phase %d  codec_opt %d  lambda_bridge %.4f  lambda_ftp %.4f  "
                  "lambda_cos %.4f  lambda_ctr %.4f",
                  static_cast<long long>(m), st.phase, int(st.codec_opt_active),
                  st.lambda.bridge, st.lambda.ftp, st.lambda.cos, st.lambda.ctr);
    std::cout << buf << "\n";
  }
  return 0;
}

int cmd_experiment(const Opts& o) {
  const cfg::RunConfig rc = load_rc(o);
  cfg::validate_run(rc);
  const auto corpus = corpus_source(rc, o.seed);
  const auto rep = exp::run_comparison(rc, "full", o.seeds, o.seed, corpus, o.out, progress);

  fs::create_directories(o.out);
  nlohmann::ordered_json j{{"config_hash", cfg::hash_hex(cfg::config_hash(rc))},
                           {"report", exp::to_json(rep)}};
  std::ofstream f(fs::path(o.out) / "experiment_report.json", std::ios::trunc);
  if (!f) throw IoError("cannot write experiment report in " + o.out);
  f << j.dump(2) << "\n";

  for (const auto& s : rep.seeds) {
    std::cout << "seed " << s.seed << ": ppl " << s.base.ppl << " -> " << s.treat.ppl
              << " (ratio " << s.ppl_ratio << (s.ppl_pass ? ", pass" : ", FAIL")
              << ")  coherence " << s.base.coherence << " -> " << s.treat.coherence
              << (s.coh_pass ? " (pass)" : " (FAIL)") << "  mel " << s.base.mel << " -> "
              << s.treat.mel << (s.mel_pass ? " (pass)" : " (FAIL)") << "\n";
  }
  std::cout << "aggregate: ppl " << rep.ppl_passes << "/" << rep.seeds.size() << "  coherence "
            << rep.coh_passes << "/" << rep.seeds.size() << "  mel " << rep.mel_passes << "/"
            << rep.seeds.size() << "  all_pass " << (rep.all_pass ? "true" : "false") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"llm-facing neural audio codec: training, evaluation, experiments"};
  app.require_subcommand(1);

  Opts o;
  auto add_common = [&](CLI::App* sub, bool with_steps = false, bool with_baseline = false,
                        bool with_seeds = false) {
    sub->add_option("--config", o.config, "run-config json (defaults to paper-scale settings)");
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--out", o.out, "output directory");
    if (with_steps) sub->add_option("--steps", o.steps, "stop after this many steps");
    if (with_baseline)
      sub->add_flag("--baseline", o.baseline, "reconstruction-only control (no bridge/ftp/sa)");
    if (with_seeds) sub->add_option("--seeds", o.seeds, "number of seeds to compare");
  };

  add_common(app.add_subcommand("synth-data", "render a synthetic corpus to wav + manifest"));
  add_common(app.add_subcommand("train", "train the codec with the staggered schedule"), true,
             true);
  add_common(app.add_subcommand("train-slm", "train a token lm on a token corpus"));
  add_common(app.add_subcommand("eval-recon", "mel/stft distance of a trained codec"), false,
             true);
  add_common(app.add_subcommand("eval-lm", "perplexity of a token lm on a token corpus"));
  add_common(app.add_subcommand("eval-coherence", "paired coherence accuracy"), false, true);
  add_common(app.add_subcommand("inspect-schedule", "print the loss-schedule table"));
  add_common(app.add_subcommand("experiment", "baseline vs full pipeline across seeds"), false,
             false, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 1;
  }

  try {
    if (app.got_subcommand("synth-data")) return cmd_synth_data(o);
    if (app.got_subcommand("train")) return cmd_train(o);
    if (app.got_subcommand("train-slm")) return cmd_train_slm(o);
    if (app.got_subcommand("eval-recon")) return cmd_eval_recon(o);
    if (app.got_subcommand("eval-lm")) return cmd_eval_lm(o);
    if (app.got_subcommand("eval-coherence")) return cmd_eval_coherence(o);
    if (app.got_subcommand("inspect-schedule")) return cmd_inspect_schedule(o);
    if (app.got_subcommand("experiment")) return cmd_experiment(o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IndexError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
