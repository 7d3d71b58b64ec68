#include "pcodec/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pcodec/audio.hpp"
#include "pcodec/errors.hpp"
#include "pcodec/optim.hpp"

namespace pcodec::lm {

void BackboneConfig::validate() const {
  if (layers < 1) throw ConfigError("backbone: need at least one layer");
  if (heads < 1 || hidden % heads != 0) throw ConfigError("backbone: hidden % heads != 0");
  if ((hidden / heads) % 2 != 0) throw ConfigError("backbone: head width must be even");
  if (audio_vocab < 2) throw ConfigError("backbone: audio_vocab must be >= 2");
  if (text_vocab < 0) throw ConfigError("backbone: negative text_vocab");
  if (max_seq < 2) throw ConfigError("backbone: max_seq must be >= 2");
  if (ffn_mult < 1) throw ConfigError("backbone: ffn_mult must be >= 1");
}

namespace {

void init_core(const BackboneConfig& cfg, ParamStore& core, Rng& rng) {
  const int64_t h = cfg.hidden, f = cfg.hidden * cfg.ffn_mult;
  const double wh = 1.0 / std::sqrt(double(h)), wf = 1.0 / std::sqrt(double(f));
  if (cfg.text_vocab > 0)
    core.add("emb_text", randn_tensor(rng, {cfg.text_vocab, h}, 0.02));
  for (int64_t i = 0; i < cfg.layers; ++i) {
    const std::string p = "blk" + std::to_string(i);
    core.add(p + ".att.g", Tensor::full({h}, 1.0));
    core.add(p + ".wq", randn_tensor(rng, {h, h}, wh));
    core.add(p + ".wk", randn_tensor(rng, {h, h}, wh));
    core.add(p + ".wv", randn_tensor(rng, {h, h}, wh));
    core.add(p + ".wo", randn_tensor(rng, {h, h}, wh));
    core.add(p + ".mlp.g", Tensor::full({h}, 1.0));
    core.add(p + ".w1", randn_tensor(rng, {f, h}, wh));
    core.add(p + ".w2", randn_tensor(rng, {h, f}, wf));
  }
  core.add("out.g", Tensor::full({h}, 1.0));
  core.add("w_lm", randn_tensor(rng, {cfg.vocab(), h}, wh));
}

std::vector<int32_t> sample_grammar_seq(const Tensor& grammar, int64_t len, Rng& rng) {
  const int64_t v = grammar.shape[0];
  std::vector<int32_t> seq(len);
  seq[0] = int32_t(rng.uniform_int(v));
  for (int64_t i = 1; i < len; ++i) {
    const double u = rng.uniform();
    double acc = 0.0;
    int64_t pick = v - 1;
    for (int64_t j = 0; j < v; ++j) {
      acc += grammar.at(seq[i - 1], j);
      if (u < acc) {
        pick = j;
        break;
      }
    }
    seq[i] = int32_t(pick);
  }
  return seq;
}

// Brief next-token training over a cluster grammar so the frozen text
// geometry reflects sequence structure instead of random init.
void pretrain_text(Backbone& b, uint64_t seed) {
  const BackboneConfig& cfg = b.cfg;
  Tensor grammar = audio::cluster_grammar(int(cfg.text_vocab), 4, 0.85, seed ^ 0x7454455854ULL);
  Rng rng = Rng::substream(seed, 0x505245ULL);
  AdamW opt(cfg.adam_lr);
  const int64_t max_len = std::min<int64_t>(cfg.max_seq, 24);
  for (int64_t s = 0; s < cfg.pretrain_steps; ++s) {
    const int64_t len = 8 + rng.uniform_int(std::max<int64_t>(1, max_len - 7));
    std::vector<int32_t> seq = sample_grammar_seq(grammar, len, rng);
    ag::Tape tape;
    Binding core = bind(b.core, tape, true);
    auto emb = ag::gather_rows(core["emb_text"], seq);
    auto fr = forward_hidden(cfg, core, emb);
    auto text_logits = ag::slice_cols(fr.logits, 0, cfg.text_vocab);
    auto loss = ag::mean_all(ag::ce_rows(ag::slice_rows(text_logits, 0, len - 1),
                                         {seq.begin() + 1, seq.end()}));
    tape.backward(loss);
    b.core.zero_grads();
    accumulate_grads(core);
    clip_grad_norm(b.core, 10.0);
    opt.step(b.core);
  }
}

// Copy a randomly chosen source row and add noise at 1% of its RMS.
void copy_perturb_rows(Tensor& table, int64_t dst0, int64_t n_dst, int64_t src0, int64_t n_src,
                       int64_t h, Rng& rng) {
  for (int64_t i = 0; i < n_dst; ++i) {
    const int64_t src = src0 + rng.uniform_int(n_src);
    double ss = 0.0;
    for (int64_t j = 0; j < h; ++j) ss += table.data[src * h + j] * table.data[src * h + j];
    const double sigma = 0.01 * std::sqrt(ss / double(h));
    for (int64_t j = 0; j < h; ++j)
      table.data[(dst0 + i) * h + j] = table.data[src * h + j] + sigma * rng.normal();
  }
}

}  // namespace

Backbone build_backbone(const BackboneConfig& cfg, uint64_t seed) {
  cfg.validate();
  Backbone b;
  b.cfg = cfg;
  Rng rng(seed);
  init_core(cfg, b.core, rng);
  b.audio.add("emb_audio", randn_tensor(rng, {cfg.audio_vocab, cfg.hidden}, 0.02));
  if (cfg.text_vocab > 0 && cfg.pretrain_steps > 0) pretrain_text(b, seed);
  if (cfg.text_vocab > 0) {
    // Audio rows reuse pretrained text geometry: copy random text rows with a
    // small perturbation, both in the embedding table and the output head.
    Rng prng = Rng::substream(seed, 0x41554449ULL);
    const Tensor& text = b.core.value("emb_text");
    Tensor& ea = b.audio.value("emb_audio");
    for (int64_t i = 0; i < cfg.audio_vocab; ++i) {
      const int64_t src = prng.uniform_int(cfg.text_vocab);
      double ss = 0.0;
      for (int64_t j = 0; j < cfg.hidden; ++j)
        ss += text.at(src, j) * text.at(src, j);
      const double sigma = 0.01 * std::sqrt(ss / double(cfg.hidden));
      for (int64_t j = 0; j < cfg.hidden; ++j)
        ea.data[i * cfg.hidden + j] = text.at(src, j) + sigma * prng.normal();
    }
    Tensor& w_lm = b.core.value("w_lm");
    copy_perturb_rows(w_lm, cfg.text_vocab, cfg.audio_vocab, 0, cfg.text_vocab, cfg.hidden,
                      prng);
  }
  return b;
}

ForwardResult forward_hidden(const BackboneConfig& cfg, const Binding& core, ag::NodePtr emb) {
  const int64_t t = emb->value.shape[0];
  if (t > cfg.max_seq) throw ShapeError("forward_hidden: sequence longer than max_seq");
  if (emb->value.shape[1] != cfg.hidden)
    throw ShapeError("forward_hidden: embedding width mismatch");
  const int64_t dh = cfg.hidden / cfg.heads;
  const double inv_sqrt = 1.0 / std::sqrt(double(dh));
  ForwardResult res;
  ag::NodePtr h = std::move(emb);
  for (int64_t i = 0; i < cfg.layers; ++i) {
    const std::string p = "blk" + std::to_string(i);
    auto a = ag::rmsnorm(h, core[p + ".att.g"]);
    auto q = ag::matmul_nt(a, core[p + ".wq"]);
    auto k = ag::matmul_nt(a, core[p + ".wk"]);
    auto v = ag::matmul_nt(a, core[p + ".wv"]);
    std::vector<ag::NodePtr> ctx;
    for (int64_t hd = 0; hd < cfg.heads; ++hd) {
      auto qh = ag::rope(ag::slice_cols(q, hd * dh, (hd + 1) * dh));
      auto kh = ag::rope(ag::slice_cols(k, hd * dh, (hd + 1) * dh));
      auto vh = ag::slice_cols(v, hd * dh, (hd + 1) * dh);
      auto att = ag::softmax_rows_causal(ag::scale(ag::matmul_nt(qh, kh), inv_sqrt));
      ctx.push_back(ag::matmul(att, vh));
    }
    h = ag::add(h, ag::matmul_nt(ag::concat_cols(ctx), core[p + ".wo"]));
    auto m = ag::rmsnorm(h, core[p + ".mlp.g"]);
    h = ag::add(h, ag::matmul_nt(ag::silu(ag::matmul_nt(m, core[p + ".w1"])), core[p + ".w2"]));
    res.hidden.push_back(h);
  }
  res.logits = ag::matmul_nt(ag::rmsnorm(h, core["out.g"]), core["w_lm"]);
  return res;
}

ag::NodePtr embed_tokens(const BackboneConfig& cfg, const Binding& core, const Binding& audio,
                         const std::vector<int32_t>& ids) {
  for (int32_t id : ids)
    if (id < 0 || id >= cfg.vocab()) throw IndexError("embed_tokens: id out of range");
  if (cfg.text_vocab == 0) return ag::gather_rows(audio["emb_audio"], ids);
  return ag::gather_rows2(core["emb_text"], audio["emb_audio"], ids);
}

namespace {

struct BoundNll {
  Binding core, audio;
  ag::NodePtr per_token;  // [T-1]
};

BoundNll audio_nll_node(Backbone& b, ag::Tape& tape, const std::vector<int32_t>& tokens,
                        bool trainable) {
  const int64_t t = int64_t(tokens.size());
  if (t < 2) throw ShapeError("sequence_nll: need at least two tokens");
  for (int32_t id : tokens)
    if (id < 0 || id >= b.cfg.audio_vocab) throw IndexError("sequence_nll: token out of range");
  BoundNll r;
  r.core = bind(b.core, tape, trainable && b.core_trainable);
  r.audio = bind(b.audio, tape, trainable);
  std::vector<int32_t> combined(tokens);
  for (auto& id : combined) id += int32_t(b.cfg.text_vocab);
  auto fr = forward_hidden(b.cfg, r.core, embed_tokens(b.cfg, r.core, r.audio, combined));
  auto audio_logits = b.cfg.text_vocab > 0
                          ? ag::slice_cols(fr.logits, b.cfg.text_vocab, b.cfg.vocab())
                          : fr.logits;
  r.per_token =
      ag::ce_rows(ag::slice_rows(audio_logits, 0, t - 1), {tokens.begin() + 1, tokens.end()});
  return r;
}

}  // namespace

NllResult sequence_nll(Backbone& b, const std::vector<int32_t>& audio_tokens) {
  ag::Tape tape;
  auto bound = audio_nll_node(b, tape, audio_tokens, false);
  NllResult r;
  r.per_token = bound.per_token->value.data;
  double s = 0.0;
  for (double e : r.per_token) s += e;
  r.mean_nll = s / double(r.per_token.size());
  return r;
}

double corpus_nll(Backbone& b, const std::vector<std::vector<int32_t>>& corpus) {
  double sum = 0.0;
  int64_t count = 0;
  for (const auto& seq : corpus) {
    if (seq.size() < 2) continue;
    NllResult r = sequence_nll(b, seq);
    for (double e : r.per_token) sum += e;
    count += int64_t(r.per_token.size());
  }
  if (count == 0) throw ConfigError("corpus_nll: no scorable sequences");
  return sum / double(count);
}

TokenLmResult train_token_lm(const std::vector<std::vector<int32_t>>& corpus,
                             const BackboneConfig& cfg, int64_t epochs, uint64_t seed) {
  if (corpus.empty()) throw ConfigError("train_token_lm: empty corpus");
  BackboneConfig c = cfg;
  c.pretrain_steps = 0;  // from scratch; token structure comes from the corpus
  TokenLmResult out;
  out.model = build_backbone(c, seed);
  out.model.core_trainable = true;
  AdamW opt_core(cfg.adam_lr);
  AdamW opt_audio(cfg.adam_lr);
  Rng rng = Rng::substream(seed, 0x544c4dULL);
  out.epoch_loss.push_back(corpus_nll(out.model, corpus));
  std::vector<size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), size_t(0));
  for (int64_t e = 0; e < epochs; ++e) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[size_t(rng.uniform_int(int64_t(i)))]);
    for (size_t idx : order) {
      if (corpus[idx].size() < 2) continue;
      ag::Tape tape;
      auto bound = audio_nll_node(out.model, tape, corpus[idx], true);
      tape.backward(ag::mean_all(bound.per_token));
      out.model.core.zero_grads();
      out.model.audio.zero_grads();
      accumulate_grads(bound.core);
      accumulate_grads(bound.audio);
      clip_grad_norm({&out.model.core, &out.model.audio}, 10.0);
      opt_core.step(out.model.core);
      opt_audio.step(out.model.audio);
    }
    out.epoch_loss.push_back(corpus_nll(out.model, corpus));
  }
  return out;
}

}  // namespace pcodec::lm
