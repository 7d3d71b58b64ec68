#include "pcodec/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "pcodec/errors.hpp"

namespace pcodec::trainer {

void ScheduleConfig::validate() const {
  if (total_steps <= 0) throw ConfigError("schedule: total_steps must be positive");
  if (d_only_until < 0 || d_only_until > ftp_delay || ftp_delay > sa_delay ||
      sa_delay > total_steps)
    throw ConfigError("schedule: need 0 <= d_only_until <= ftp_delay <= sa_delay <= total_steps");
  if (ftp_warmup <= 0 || sa_warmup <= 0) throw ConfigError("schedule: warmups must be positive");
  if (grad_clip <= 0.0) throw ConfigError("schedule: grad_clip must be positive");
  if (lr_warmup && lr_warmup_steps <= 0)
    throw ConfigError("schedule: lr_warmup_steps must be positive");
}

ScheduleConfig ScheduleConfig::scaled(int64_t ratio) const {
  if (ratio <= 0) throw ConfigError("schedule: scale ratio must be positive");
  ScheduleConfig s = *this;
  s.total_steps = std::max<int64_t>(1, total_steps / ratio);
  s.d_only_until = d_only_until / ratio;
  s.ftp_delay = ftp_delay / ratio;
  s.ftp_warmup = std::max<int64_t>(1, ftp_warmup / ratio);
  s.sa_delay = sa_delay / ratio;
  s.sa_warmup = std::max<int64_t>(1, sa_warmup / ratio);
  s.lr_warmup_steps = std::max<int64_t>(1, lr_warmup_steps / ratio);
  return s;
}

namespace {

double ramp(int64_t step, int64_t delay, int64_t warmup, double target, bool cosine) {
  if (step <= delay) return 0.0;
  const double frac = std::min(1.0, double(step - delay) / double(warmup));
  if (!cosine) return target * frac;
  return target * 0.5 * (1.0 - std::cos(M_PI * frac));
}

}  // namespace

ScheduleState schedule_at(int64_t step, const ScheduleConfig& cfg) {
  cfg.validate();
  if (step < 0 || step > cfg.total_steps)
    throw ContractError("schedule_at: step outside [0, total_steps]");
  ScheduleState st;
  st.step = step;
  st.phase = step < cfg.d_only_until ? 1 : (step < cfg.sa_delay ? 2 : 3);
  st.codec_opt_active = step >= cfg.d_only_until;
  st.lambda.bridge = cfg.targets.bridge;
  st.lambda.ftp = ramp(step, cfg.ftp_delay, cfg.ftp_warmup, cfg.targets.ftp, cfg.cosine_ramp);
  st.lambda.cos = ramp(step, cfg.sa_delay, cfg.sa_warmup, cfg.targets.cos, cfg.cosine_ramp);
  st.lambda.ctr = ramp(step, cfg.sa_delay, cfg.sa_warmup, cfg.targets.ctr, cfg.cosine_ramp);
  return st;
}

double total_loss(LossBreakdown& p, const ScheduleState& st, const ScheduleConfig& cfg,
                  double commit_weight) {
  const std::pair<const char*, double> parts[] = {
      {"mel", p.mel},   {"ms_mel", p.ms_mel}, {"mr_stft", p.mr_stft}, {"cstft", p.cstft},
      {"commit", p.commit}, {"gan_g", p.gan_g}, {"fm", p.fm},          {"bridge", p.bridge},
      {"ftp", p.ftp},   {"cos", p.cos},       {"ctr", p.ctr}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) throw GuardError(std::string("total_loss: non-finite term: ") + name);
  p.codec = cfg.weights.mel * p.mel + cfg.weights.ms_mel * p.ms_mel +
            cfg.weights.mr_stft * p.mr_stft + cfg.weights.cstft * p.cstft +
            commit_weight * p.commit + p.gan_g + p.fm;
  p.total = p.codec + st.lambda.bridge * p.bridge + st.lambda.ftp * p.ftp +
            st.lambda.cos * p.cos + st.lambda.ctr * p.ctr;
  return p.total;
}

GuardOutcome guards(const Tensor& logits, const Tensor& audio, double loss) {
  GuardOutcome g;
  g.logits = logits;
  for (auto& v : g.logits.data) v = std::clamp(v, -80.0, 80.0);
  g.audio = audio;
  for (auto& v : g.audio.data) v = std::clamp(v, -1.2, 1.2);
  g.skip = !std::isfinite(loss);
  return g;
}

void assert_no_batch_stats(const ParamStore& params) {
  for (const auto& e : params.entries())
    if (e.name.find("running_") != std::string::npos || e.name.find("bn.") != std::string::npos)
      throw ContractError("batch-statistics parameter present: " + e.name);
}

void TrainerConfig::validate() const {
  codec.validate();
  spectral.validate();
  gan.validate();
  backbone.validate();
  schedule.validate();
  if (backbone.audio_vocab != codec.codebook_size)
    throw ConfigError("trainer: backbone audio_vocab must equal the codec codebook size");
  if (accum < 1) throw ConfigError("trainer: accum must be >= 1");
  if (segment_seconds <= 0.0) throw ConfigError("trainer: segment_seconds must be positive");
  if (ftp_k < 1) throw ConfigError("trainer: ftp_k must be >= 1");
  if (tau_start < tau_end || tau_end <= 0.0 || tau_steps <= 0)
    throw ConfigError("trainer: need tau_start >= tau_end > 0 and tau_steps > 0");
  if (codec_lr <= 0 || aux_lr <= 0 || disc_lr <= 0) throw ConfigError("trainer: lrs must be positive");
  if (reseed_interval < 1) throw ConfigError("trainer: reseed_interval must be >= 1");
  if ((use_ftp || use_sa) && !use_bridge)
    throw ConfigError("trainer: FTP/SA require the bridge (they live on the LM branch)");
  const int64_t seg_samples = int64_t(segment_seconds * codec.sample_rate);
  const int64_t frames = seg_samples / codec.hop;
  if (frames < 1) throw ConfigError("trainer: segment shorter than one token frame");
  if (use_ftp && frames <= ftp_k)
    throw ConfigError("trainer: segment must yield more frames than ftp_k");
  if (frames > backbone.max_seq)
    throw ConfigError("trainer: segment frames exceed backbone max_seq");
  if (frames * codec.hop < 208)
    throw ConfigError("trainer: segment too short for the discriminators");
  if (use_sa && backbone.layers < 3)
    throw ConfigError("trainer: SA needs at least 3 backbone layers");
}

Trainer make_trainer(const TrainerConfig& cfg, uint64_t seed) {
  cfg.validate();
  Trainer t(cfg, seed);
  Rng rc = Rng::substream(seed, 0x434f444543ULL);  // "CODEC"
  t.m.codec.cfg = cfg.codec;
  t.m.codec.init(rc);
  assert_no_batch_stats(t.m.codec.params);
  Rng rd = Rng::substream(seed, 0x44495343ULL);  // "DISC"
  t.m.disc.cfg = cfg.gan;
  t.m.disc.init(rd);
  t.m.backbone = lm::build_backbone(cfg.backbone, seed ^ 0x4c4d434f5245ULL);
  if (cfg.use_bridge) {
    t.m.bridge.latent_dim = cfg.codec.latent_dim;
    t.m.bridge.audio_vocab = cfg.codec.codebook_size;
    t.m.bridge.tau_start = cfg.tau_start;
    t.m.bridge.tau_end = cfg.tau_end;
    t.m.bridge.tau_steps = cfg.tau_steps;
    Rng rb = Rng::substream(seed, 0x4252ULL);
    t.m.bridge.init(rb);
  }
  if (cfg.use_ftp) {
    std::vector<int32_t> audio_ids(size_t(cfg.codec.codebook_size));
    for (size_t i = 0; i < audio_ids.size(); ++i)
      audio_ids[i] = int32_t(cfg.backbone.text_vocab + int64_t(i));
    t.m.heads = ftp::init_heads(t.m.backbone.core.value("w_lm"), audio_ids, cfg.ftp_k,
                                cfg.backbone.hidden);
  }
  t.sched = schedule_at(0, cfg.schedule);
  return t;
}

std::vector<TrainItem> make_items(const std::vector<audio::Utterance>& corpus, double seconds) {
  std::vector<TrainItem> items;
  for (const auto& u : corpus) {
    if (u.transcript.empty()) throw ConfigError("make_items: utterance without transcript");
    for (auto& s : audio::segment(u.audio, seconds)) items.push_back({std::move(s), u.transcript});
  }
  if (items.empty()) throw ConfigError("make_items: empty corpus");
  return items;
}

std::vector<TrainItem> sample_batch(const std::vector<TrainItem>& items, int64_t accum,
                                    uint64_t seed, int64_t step) {
  if (items.empty()) throw ConfigError("sample_batch: no items");
  Rng rng = Rng::substream(seed, 0x4241544348ULL + uint64_t(step));  // "BATCH"
  std::vector<TrainItem> out;
  out.reserve(size_t(accum));
  for (int64_t i = 0; i < accum; ++i) out.push_back(items[rng.uniform_int(int64_t(items.size()))]);
  return out;
}

namespace {

Tensor row_tensor(const double* src, int64_t n) {
  Tensor x = Tensor::zeros({1, n});
  std::memcpy(x.data.data(), src, size_t(n) * sizeof(double));
  return x;
}

}  // namespace

MicroNodes build_micro(Trainer& t, ag::Tape& tape, const TrainItem& item,
                       const ScheduleState& st, Rng& rng, bool soft_bridge, bool update_ema) {
  const TrainerConfig& cfg = t.cfg;
  MicroNodes out;
  out.codec = bind(t.m.codec.params, tape, true);
  out.audio = bind(t.m.backbone.audio, tape, true);

  const auto& samples = item.seg.wave.samples;
  const int64_t frames = int64_t(samples.size()) / cfg.codec.hop;
  if (frames < 1) throw ShapeError("build_micro: segment shorter than one frame");
  const int64_t out_len = frames * cfg.codec.hop;

  auto x = tape.constant(row_tensor(samples.data(), int64_t(samples.size())));
  auto z = codec::encode(cfg.codec, out.codec, x);
  out.z_values = z->value;
  for (double v : out.z_values.data)
    if (!std::isfinite(v)) throw GuardError("build_micro: non-finite encoder latents");

  auto q = codec::quantize(tape, z, t.m.codec.codebook, update_ema, cfg.codec.ema_decay);
  out.tokens = q.tokens;
  out.commit = q.commit;
  auto x_hat = ag::clamp(codec::decode(cfg.codec, out.codec, q.z_q), -1.2, 1.2);

  std::vector<double> ref(samples.begin(), samples.begin() + out_len);
  auto rt = spectral::recon_loss(tape, ref, x_hat, cfg.spectral, cfg.codec.sample_rate);
  out.mel = rt.mel;
  out.ms_mel = rt.ms_mel;
  out.mr_stft = rt.mr_stft;
  out.cstft = rt.cstft;

  if (!gan::gate_paused(st.gate, st.step)) {
    out.disc = bind(t.m.disc.params, tape, true);
    Binding disc_frozen = bind(t.m.disc.params, tape, false);
    auto real = tape.constant(row_tensor(ref.data(), out_len));
    auto fake = ag::reshape(x_hat, {1, out_len});  // disc wants [1, L], stft wants 1-d
    auto real_b = gan::discriminate(cfg.gan, out.disc, real);
    auto fake_d = gan::discriminate(cfg.gan, out.disc, ag::stopgrad(fake));
    out.d_loss = gan::d_hinge(real_b, fake_d);
    auto fake_g = gan::discriminate(cfg.gan, disc_frozen, fake);
    out.gan_g = gan::g_hinge(fake_g);
    const double fmw = gan::fm_weight_at(cfg.gan, st.step, cfg.schedule.d_only_until,
                                         cfg.schedule.total_steps);
    out.fm = gan::fm_l1(real_b, fake_g, fmw);
  }

  if (!cfg.use_bridge || st.lambda.bridge <= 0.0) return out;

  out.bridge = bind(t.m.bridge.params, tape, true);
  Binding core = bind(t.m.backbone.core, tape, false);

  auto aug = bridge::lm_branch_augment(item.seg.wave, out.tokens, cfg.codec.codebook_size, rng);
  auto xj = tape.constant(row_tensor(aug.jittered.samples.data(), int64_t(samples.size())));
  auto zj = codec::encode(cfg.codec, out.codec, xj);
  auto qj = codec::quantize(tape, zj, t.m.codec.codebook, false, cfg.codec.ema_decay);
  out.tokens_lm = qj.tokens;

  ag::NodePtr logits, one_hot;
  if (soft_bridge) {
    const double tau = bridge::temperature(st.step, t.m.bridge);
    logits = ag::clamp(ag::matmul(zj, out.bridge["w"]), -80.0, 80.0);
    one_hot = ag::softmax_rows(ag::scale(logits, 1.0 / tau));
  } else {
    auto bo = bridge::bridge_forward(t.m.bridge, zj, out.bridge["w"], out.audio["emb_audio"],
                                     st.step, &rng);
    logits = bo.logits;
    one_hot = bo.one_hot;
  }
  out.bridge_ce = bridge::bridge_ce(logits, qj.tokens);

  if (aug.replaced > 0) {
    const int64_t v = cfg.codec.codebook_size;
    Tensor keep = Tensor::zeros({frames, v});
    std::fill(keep.data.begin(), keep.data.end(), 1.0);
    Tensor noise = Tensor::zeros({frames, v});
    for (int64_t i = 0; i < frames; ++i) {
      if (aug.noised[size_t(i)] == out.tokens[size_t(i)]) continue;
      for (int64_t j = 0; j < v; ++j) keep.data[size_t(i * v + j)] = 0.0;
      noise.data[size_t(i * v + aug.noised[size_t(i)])] = 1.0;
    }
    one_hot = ag::add_const(ag::mul_const(one_hot, keep), noise);
  }

  auto emb = ag::matmul(one_hot, out.audio["emb_audio"]);
  auto fr = lm::forward_hidden(cfg.backbone, core, emb);

  if (cfg.use_ftp && st.lambda.ftp > 0.0) {
    out.heads = bind(t.m.heads.params, tape, true);
    out.ftp_loss = ftp::ftp_loss(fr.hidden.back(), qj.tokens, t.m.heads, out.heads);
  }

  if (cfg.use_sa && (st.lambda.cos > 0.0 || st.lambda.ctr > 0.0)) {
    const auto sel = sa::select_layers(cfg.backbone.layers);
    const int64_t valid_frames =
        std::clamp<int64_t>((item.seg.valid + cfg.codec.hop - 1) / cfg.codec.hop, 1, frames);
    auto t_emb = ag::gather_rows(core["emb_text"], item.transcript);
    auto t_fr = lm::forward_hidden(cfg.backbone, core, t_emb);
    std::vector<ag::NodePtr> a_states, t_states;
    for (int64_t li : sel) {
      a_states.push_back(sa::pool_last(fr.hidden[size_t(li - 1)], valid_frames));
      t_states.push_back(sa::pool_last(t_fr.hidden[size_t(li - 1)], int64_t(item.transcript.size())));
    }
    out.cos = sa::cosine_align(a_states, t_states);
    out.ctr = sa::contrastive_loss(a_states.back(), t_states.back(), t.m.bank, cfg.sa.alpha,
                                   cfg.sa.eps);
    out.text_vec = t_states.back()->value.data;
  }
  return out;
}

namespace {

struct GraphTotal {
  ag::NodePtr node;
  bool has_disc = false;
};

// Mirrors total_loss term for term so breakdown.total tracks the graph value.
GraphTotal graph_total(const MicroNodes& n, const ScheduleState& st, const ScheduleConfig& cfg,
                       double commit_weight) {
  std::vector<ag::NodePtr> terms;
  std::vector<double> w;
  auto push = [&](ag::NodePtr node, double weight) {
    if (node) {
      terms.push_back(node);
      w.push_back(weight);
    }
  };
  push(n.mel, cfg.weights.mel);
  push(n.ms_mel, cfg.weights.ms_mel);
  push(n.mr_stft, cfg.weights.mr_stft);
  push(n.cstft, cfg.weights.cstft);
  push(n.commit, commit_weight);
  push(n.gan_g, 1.0);
  push(n.fm, 1.0);
  push(n.bridge_ce, st.lambda.bridge);
  push(n.ftp_loss, st.lambda.ftp);
  push(n.cos, st.lambda.cos);
  push(n.ctr, st.lambda.ctr);
  GraphTotal g;
  g.node = ag::wsum(terms, w);
  if (n.d_loss) {
    g.node = ag::add(g.node, n.d_loss);
    g.has_disc = true;
  }
  return g;
}

double node_value(const ag::NodePtr& n) { return n ? n->value.data[0] : 0.0; }

}  // namespace

LossBreakdown train_step(Trainer& t, const std::vector<TrainItem>& micro) {
  const TrainerConfig& cfg = t.cfg;
  if (int64_t(micro.size()) != cfg.accum)
    throw ShapeError("train_step: expected accum micro-batches");
  if (t.sched.step >= cfg.schedule.total_steps)
    throw ContractError("train_step: schedule exhausted");

  ScheduleState st = schedule_at(t.sched.step, cfg.schedule);
  st.gate = t.sched.gate;

  t.m.codec.params.zero_grads();
  t.m.disc.params.zero_grads();
  t.m.backbone.audio.zero_grads();
  if (cfg.use_bridge) t.m.bridge.params.zero_grads();
  if (cfg.use_ftp) t.m.heads.params.zero_grads();

  LossBreakdown agg;
  std::vector<std::vector<double>> bank_pushes;
  Tensor last_z;
  bool have_disc = false;
  const double inv = 1.0 / double(cfg.accum);

  for (size_t i = 0; i < micro.size(); ++i) {
    Rng mrng = Rng::substream(t.seed, 0x4d49ull << 32 | (uint64_t(st.step) << 8) | uint64_t(i));
    ag::Tape tape;
    LossBreakdown part;
    try {
      MicroNodes n = build_micro(t, tape, micro[i], st, mrng);
      last_z = n.z_values;
      part.mel = node_value(n.mel);
      part.ms_mel = node_value(n.ms_mel);
      part.mr_stft = node_value(n.mr_stft);
      part.cstft = node_value(n.cstft);
      part.commit = node_value(n.commit);
      part.gan_g = node_value(n.gan_g);
      part.fm = node_value(n.fm);
      part.d_loss = node_value(n.d_loss);
      part.bridge = node_value(n.bridge_ce);
      part.ftp = node_value(n.ftp_loss);
      part.cos = node_value(n.cos);
      part.ctr = node_value(n.ctr);
      total_loss(part, st, cfg.schedule, cfg.codec.commitment_weight);
      if (!std::isfinite(part.total) || !std::isfinite(part.d_loss))
        throw GuardError("train_step: non-finite loss");

      GraphTotal root = graph_total(n, st, cfg.schedule, cfg.codec.commitment_weight);
      tape.backward(root.node);
      accumulate_grads(n.codec, inv);
      accumulate_grads(n.audio, inv);
      if (n.bridge.store) accumulate_grads(n.bridge, inv);
      if (n.heads.store) accumulate_grads(n.heads, inv);
      if (n.disc.store) {
        accumulate_grads(n.disc, inv);
        have_disc = true;
      }
      if (!n.text_vec.empty()) bank_pushes.push_back(std::move(n.text_vec));
    } catch (const GuardError& e) {
      agg.skipped = true;
      agg.guard_event = e.what();
      break;
    }
    agg.mel += part.mel * inv;
    agg.ms_mel += part.ms_mel * inv;
    agg.mr_stft += part.mr_stft * inv;
    agg.cstft += part.cstft * inv;
    agg.commit += part.commit * inv;
    agg.gan_g += part.gan_g * inv;
    agg.fm += part.fm * inv;
    agg.d_loss += part.d_loss * inv;
    agg.bridge += part.bridge * inv;
    agg.ftp += part.ftp * inv;
    agg.cos += part.cos * inv;
    agg.ctr += part.ctr * inv;
  }

  if (agg.skipped) {
    t.m.codec.params.zero_grads();
    t.m.disc.params.zero_grads();
    t.m.backbone.audio.zero_grads();
    if (cfg.use_bridge) t.m.bridge.params.zero_grads();
    if (cfg.use_ftp) t.m.heads.params.zero_grads();
    t.sched = st;
    t.sched.step = st.step + 1;
    return agg;
  }

  total_loss(agg, st, cfg.schedule, cfg.codec.commitment_weight);

  const bool gan_on = have_disc;
  if (gan_on && t.opt_steps % cfg.gan.r1_interval == 0) {
    const auto& s0 = micro[0].seg.wave.samples;
    const int64_t n0 = (int64_t(s0.size()) / cfg.codec.hop) * cfg.codec.hop;
    std::vector<double> real(s0.begin(), s0.begin() + n0);
    agg.r1 = gan::r1_penalty_value(t.m.disc, real);
    gan::r1_accumulate_grads(t.m.disc, real, 1.0);
  }

  std::vector<ParamStore*> stores = {&t.m.codec.params, &t.m.backbone.audio};
  if (cfg.use_bridge) stores.push_back(&t.m.bridge.params);
  if (cfg.use_ftp && t.m.heads.params.numel() > 0) stores.push_back(&t.m.heads.params);
  if (gan_on) stores.push_back(&t.m.disc.params);
  agg.grad_norm = clip_grad_norm(stores, cfg.schedule.grad_clip);

  if (cfg.schedule.lr_warmup) {
    const double s =
        std::min(1.0, double(st.step + 1) / double(cfg.schedule.lr_warmup_steps));
    t.opt_codec.set_lr(cfg.codec_lr * s);
    t.opt_audio.set_lr(cfg.aux_lr * s);
    t.opt_bridge.set_lr(cfg.aux_lr * s);
    t.opt_ftp.set_lr(cfg.aux_lr * s);
    t.opt_disc.set_lr(cfg.disc_lr * s);
  }

  if (st.codec_opt_active) t.opt_codec.step(t.m.codec.params);
  t.opt_audio.step(t.m.backbone.audio);
  if (cfg.use_bridge) t.opt_bridge.step(t.m.bridge.params);
  if (cfg.use_ftp && t.m.heads.params.numel() > 0) t.opt_ftp.step(t.m.heads.params);
  if (gan_on) t.opt_disc.step(t.m.disc.params);
  ++t.opt_steps;

  for (auto& v : bank_pushes) t.m.bank.push(v);

  if (gan_on && agg.total > 0.0)
    st.gate = gan::gan_gate(st.gate, agg.fm, agg.total, st.step, cfg.gan);

  if ((st.step + 1) % cfg.reseed_interval == 0 && last_z.numel() > 0) {
    Rng rr = Rng::substream(t.seed, 0x5253ull << 32 | uint64_t(st.step));
    t.m.codec.codebook.reseed_dead(last_z, rr);
  }

  t.sched = st;
  t.sched.step = st.step + 1;
  return agg;
}

}  // namespace pcodec::trainer
