#include <cmath>
#include <vector>

#include "doctest.h"
#include "pcodec/audio.hpp"
#include "pcodec/backbone.hpp"
#include "pcodec/errors.hpp"
#include "pcodec/gradcheck.hpp"
#include "pcodec/optim.hpp"

using namespace pcodec;
using namespace pcodec::lm;

namespace {

BackboneConfig tiny_cfg() {
  BackboneConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.text_vocab = 0;
  cfg.audio_vocab = 4;
  cfg.max_seq = 32;
  cfg.ffn_mult = 2;
  cfg.pretrain_steps = 0;
  return cfg;
}

// Blocks zeroed into identities, one-hot embeddings, and an output head that
// points each symbol at its cyclic successor: a model whose next-token
// distribution is known in closed form.
Backbone cyclic_oracle_model() {
  Backbone b = build_backbone(tiny_cfg(), 7);
  auto zero = [&](const std::string& name) {
    auto& t = b.core.value(name);
    std::fill(t.data.begin(), t.data.end(), 0.0);
  };
  zero("blk0.wo");
  zero("blk0.w2");
  Tensor& emb = b.audio.value("emb_audio");
  std::fill(emb.data.begin(), emb.data.end(), 0.0);
  for (int64_t i = 0; i < 4; ++i) emb.data[i * 8 + i] = 5.0;
  Tensor& w = b.core.value("w_lm");
  std::fill(w.data.begin(), w.data.end(), 0.0);
  for (int64_t j = 0; j < 4; ++j) w.data[j * 8 + (j + 3) % 4] = 30.0;
  return b;
}

std::vector<int32_t> grammar_walk(const Tensor& grammar, int64_t len, Rng& rng) {
  const int64_t v = grammar.shape[0];
  std::vector<int32_t> seq(len);
  seq[0] = int32_t(rng.uniform_int(v));
  for (int64_t i = 1; i < len; ++i) {
    const double u = rng.uniform();
    double acc = 0.0;
    seq[i] = int32_t(v - 1);
    for (int64_t j = 0; j < v; ++j) {
      acc += grammar.at(seq[i - 1], j);
      if (u < acc) {
        seq[i] = int32_t(j);
        break;
      }
    }
  }
  return seq;
}

}  // namespace

TEST_SUITE("backbone") {
  TEST_CASE("config validation") {
    BackboneConfig cfg = tiny_cfg();
    cfg.heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_cfg();
    cfg.heads = 8;  // head width 1 is odd, breaks rotary pairs
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_cfg();
    cfg.audio_vocab = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_cfg();
    cfg.layers = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }

  TEST_CASE("build is deterministic in the seed") {
    BackboneConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 8;
    cfg.heads = 2;
    cfg.text_vocab = 8;
    cfg.audio_vocab = 8;
    cfg.max_seq = 32;
    cfg.ffn_mult = 2;
    cfg.pretrain_steps = 8;
    Backbone a = build_backbone(cfg, 3);
    Backbone b = build_backbone(cfg, 3);
    Backbone c = build_backbone(cfg, 4);
    CHECK(a.core.hash() == b.core.hash());
    CHECK(a.audio.hash() == b.audio.hash());
    CHECK(a.core.hash() != c.core.hash());

    for (const auto& e : a.core.entries())
      for (double v : e.value.data) REQUIRE(std::isfinite(v));
    for (double v : a.audio.value("emb_audio").data) REQUIRE(std::isfinite(v));

    cfg.pretrain_steps = 0;
    CHECK(build_backbone(cfg, 3).core.hash() != a.core.hash());
  }

  TEST_CASE("audio rows inherit text-embedding scale") {
    BackboneConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 16;
    cfg.heads = 2;
    cfg.text_vocab = 12;
    cfg.audio_vocab = 24;
    cfg.max_seq = 32;
    cfg.pretrain_steps = 10;
    Backbone b = build_backbone(cfg, 11);
    auto mean_row_norm = [&](const Tensor& t) {
      double s = 0.0;
      for (int64_t i = 0; i < t.shape[0]; ++i) {
        double ss = 0.0;
        for (int64_t j = 0; j < t.shape[1]; ++j) ss += t.at(i, j) * t.at(i, j);
        s += std::sqrt(ss);
      }
      return s / double(t.shape[0]);
    };
    const double text = mean_row_norm(b.core.value("emb_text"));
    const double audio = mean_row_norm(b.audio.value("emb_audio"));
    CHECK(audio > 0.5 * text);
    CHECK(audio < 2.0 * text);
  }

  TEST_CASE("embedding lookup mixes text and audio rows") {
    BackboneConfig cfg = tiny_cfg();
    cfg.text_vocab = 3;
    cfg.hidden = 4;
    cfg.audio_vocab = 2;
    Backbone b = build_backbone(cfg, 1);
    ag::Tape tape;
    Binding core = bind(b.core, tape, false);
    Binding audio = bind(b.audio, tape, false);
    auto emb = embed_tokens(cfg, core, audio, {0, 3, 2, 4});
    const Tensor& text = b.core.value("emb_text");
    const Tensor& ea = b.audio.value("emb_audio");
    for (int64_t j = 0; j < 4; ++j) {
      CHECK(emb->value.at(0, j) == text.at(0, j));
      CHECK(emb->value.at(1, j) == ea.at(0, j));
      CHECK(emb->value.at(2, j) == text.at(2, j));
      CHECK(emb->value.at(3, j) == ea.at(1, j));
    }
    CHECK_THROWS_AS(embed_tokens(cfg, core, audio, {5}), IndexError);
    CHECK_THROWS_AS(embed_tokens(cfg, core, audio, {-1}), IndexError);
  }

  TEST_CASE("forward shapes and sequence-length guard") {
    BackboneConfig cfg = tiny_cfg();
    cfg.layers = 2;
    Backbone b = build_backbone(cfg, 5);
    ag::Tape tape;
    Binding core = bind(b.core, tape, false);
    Binding audio = bind(b.audio, tape, false);
    auto fr = forward_hidden(cfg, core, embed_tokens(cfg, core, audio, {0, 1, 2}));
    CHECK(fr.hidden.size() == 2);
    CHECK(fr.hidden[0]->value.shape == std::vector<int64_t>{3, 8});
    CHECK(fr.logits->value.shape == std::vector<int64_t>{3, 4});
    for (double v : fr.logits->value.data) REQUIRE(std::isfinite(v));

    std::vector<int32_t> longseq(cfg.max_seq + 1, 0);
    CHECK_THROWS_AS(
        forward_hidden(cfg, core, embed_tokens(cfg, core, audio, longseq)), ShapeError);
  }

  TEST_CASE("causal: perturbing position t leaves earlier rows bitwise unchanged") {
    BackboneConfig cfg = tiny_cfg();
    cfg.layers = 2;
    Backbone b = build_backbone(cfg, 9);
    std::vector<int32_t> tokens = {0, 1, 2, 3, 0, 1, 2, 3};
    auto logits_of = [&](const std::vector<int32_t>& ids) {
      ag::Tape tape;
      Binding core = bind(b.core, tape, false);
      Binding audio = bind(b.audio, tape, false);
      return forward_hidden(cfg, core, embed_tokens(cfg, core, audio, ids)).logits->value;
    };
    Tensor base = logits_of(tokens);
    for (size_t t : {size_t(3), size_t(7)}) {
      std::vector<int32_t> mod = tokens;
      mod[t] = (mod[t] + 1) % 4;
      Tensor changed = logits_of(mod);
      for (size_t i = 0; i < t; ++i)
        for (int64_t j = 0; j < 4; ++j)
          REQUIRE(changed.at(int64_t(i), j) == base.at(int64_t(i), j));
      bool row_t_moved = false;
      for (int64_t j = 0; j < 4; ++j)
        row_t_moved = row_t_moved || changed.at(int64_t(t), j) != base.at(int64_t(t), j);
      CHECK(row_t_moved);
    }
  }

  TEST_CASE("sequence_nll: oracle model scores its own cycle at ~0") {
    Backbone b = cyclic_oracle_model();
    std::vector<int32_t> tokens;
    for (int i = 0; i < 12; ++i) tokens.push_back(int32_t(i % 4));
    NllResult r = sequence_nll(b, tokens);
    CHECK(r.per_token.size() == 11);
    CHECK(r.mean_nll < 1e-6);
    for (double v : r.per_token) CHECK(v < 1e-6);
  }

  TEST_CASE("sequence_nll: zero head gives the uniform baseline ln V") {
    BackboneConfig cfg = tiny_cfg();
    cfg.audio_vocab = 256;
    cfg.hidden = 8;
    Backbone b = build_backbone(cfg, 2);
    auto& w = b.core.value("w_lm");
    std::fill(w.data.begin(), w.data.end(), 0.0);
    NllResult r = sequence_nll(b, {5, 200, 17, 3});
    CHECK(r.mean_nll == doctest::Approx(std::log(256.0)).epsilon(1e-9));
  }

  TEST_CASE("sequence_nll: mean matches per-token, guards fire") {
    Backbone b = build_backbone(tiny_cfg(), 13);
    NllResult r = sequence_nll(b, {0, 1, 2, 3, 2, 1});
    double s = 0.0;
    for (double v : r.per_token) s += v;
    CHECK(r.mean_nll == doctest::Approx(s / double(r.per_token.size())).epsilon(1e-9));
    CHECK_THROWS_AS(sequence_nll(b, {0}), ShapeError);
    CHECK_THROWS_AS(sequence_nll(b, {0, 4}), IndexError);
    CHECK_THROWS_AS(corpus_nll(b, {{0}, {}}), ConfigError);

    // corpus_nll weights by token count, not by sequence
    double c = corpus_nll(b, {{0, 1, 2}, {3, 3}});
    NllResult a1 = sequence_nll(b, {0, 1, 2});
    NllResult a2 = sequence_nll(b, {3, 3});
    double expect =
        (a1.per_token[0] + a1.per_token[1] + a2.per_token[0]) / 3.0;
    CHECK(c == doctest::Approx(expect).epsilon(1e-12));
  }

  TEST_CASE("full-stack gradcheck through mixed embeddings") {
    BackboneConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 4;
    cfg.heads = 2;
    cfg.text_vocab = 3;
    cfg.audio_vocab = 3;
    cfg.max_seq = 16;
    cfg.ffn_mult = 2;
    cfg.pretrain_steps = 0;
    Backbone b = build_backbone(cfg, 21);
    const std::vector<int32_t> ids = {0, 4, 1, 5, 2, 3};
    const std::vector<int32_t> targets = {4, 1, 5, 2, 3, 0};
    auto err = ag::gradcheck_max_err(
        {b.core.value("emb_text"), b.audio.value("emb_audio"), b.core.value("blk0.wq"),
         b.core.value("blk0.w1"), b.core.value("w_lm")},
        [&](ag::Tape& tape, const std::vector<ag::NodePtr>& p) {
          Binding core = bind(b.core, tape, false);
          Binding audio = bind(b.audio, tape, false);
          core.leaves[b.core.index_of("emb_text")] = p[0];
          audio.leaves[b.audio.index_of("emb_audio")] = p[1];
          core.leaves[b.core.index_of("blk0.wq")] = p[2];
          core.leaves[b.core.index_of("blk0.w1")] = p[3];
          core.leaves[b.core.index_of("w_lm")] = p[4];
          auto fr = forward_hidden(cfg, core, embed_tokens(cfg, core, audio, ids));
          return ag::mean_all(ag::ce_rows(fr.logits, targets));
        },
        1e-5, 8);
    CHECK(err < 1e-4);
  }

  TEST_CASE("frozen core stays bitwise fixed while audio rows train") {
    BackboneConfig cfg = tiny_cfg();
    cfg.text_vocab = 6;
    Backbone b = build_backbone(cfg, 17);
    const uint64_t core_before = b.core.hash();
    const uint64_t audio_before = b.audio.hash();
    AdamW opt(1e-2);
    std::vector<int32_t> combined = {6, 7, 8, 9, 6, 7};  // audio ids offset by text_vocab
    for (int step = 0; step < 5; ++step) {
      ag::Tape tape;
      Binding core = bind(b.core, tape, false);
      Binding audio = bind(b.audio, tape, true);
      auto fr = forward_hidden(cfg, core, embed_tokens(cfg, core, audio, combined));
      auto loss = ag::mean_all(ag::ce_rows(fr.logits, {7, 8, 9, 6, 7, 8}));
      tape.backward(loss);
      b.audio.zero_grads();
      accumulate_grads(audio);
      opt.step(b.audio);
    }
    CHECK(b.core.hash() == core_before);
    CHECK(b.audio.hash() != audio_before);
  }

  TEST_CASE("train_token_lm learns a cluster grammar") {
    Tensor grammar = audio::cluster_grammar(8, 4, 0.9, 99);
    Rng rng(42);
    std::vector<std::vector<int32_t>> corpus;
    for (int i = 0; i < 24; ++i) corpus.push_back(grammar_walk(grammar, 16, rng));
    BackboneConfig cfg = tiny_cfg();
    cfg.hidden = 16;
    cfg.audio_vocab = 8;
    cfg.adam_lr = 3e-3;
    TokenLmResult r = train_token_lm(corpus, cfg, 3, 1);
    REQUIRE(r.epoch_loss.size() == 4);
    CHECK(r.epoch_loss[3] < r.epoch_loss[0]);

    TokenLmResult again = train_token_lm(corpus, cfg, 3, 1);
    CHECK(again.epoch_loss.back() == r.epoch_loss.back());
    CHECK(again.model.core.hash() == r.model.core.hash());
    CHECK(again.model.audio.hash() == r.model.audio.hash());

    CHECK_THROWS_AS(train_token_lm({}, cfg, 1, 1), ConfigError);
  }

  TEST_CASE("train_token_lm drives a one-token corpus to perplexity ~1") {
    std::vector<std::vector<int32_t>> corpus(4, std::vector<int32_t>(10, 2));
    BackboneConfig cfg = tiny_cfg();
    cfg.adam_lr = 0.05;
    TokenLmResult r = train_token_lm(corpus, cfg, 30, 3);
    CHECK(std::exp(r.epoch_loss.back()) < 1.05);
    CHECK(std::exp(r.epoch_loss.back()) >= 1.0);
  }
}
