#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pcodec/audio.hpp"
#include "pcodec/errors.hpp"

using namespace pcodec;
using namespace pcodec::audio;

namespace {

CorpusSpec tiny_spec() {
  CorpusSpec s;
  s.n_utterances = 2;
  s.content_vocab = 8;
  s.grammar = uniform_grammar(8);
  s.min_symbols = 3;
  s.max_symbols = 6;
  return s;
}

}  // namespace

TEST_SUITE("audio") {
  TEST_CASE("corpus generation is deterministic in (spec, seed)") {
    auto spec = tiny_spec();
    auto a = generate_corpus(spec, 7);
    auto b = generate_corpus(spec, 7);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].transcript == b[i].transcript);
      CHECK(a[i].audio.samples == b[i].audio.samples);  // byte-identical
    }
    auto c = generate_corpus(spec, 8);
    bool same = a[0].audio.samples == c[0].audio.samples;
    CHECK_FALSE(same);
  }

  TEST_CASE("utterance length follows symbol count") {
    auto spec = tiny_spec();
    spec.min_symbols = spec.max_symbols = 5;
    auto u = generate_utterance(spec, 3, 0);
    CHECK(u.transcript.size() == 5);
    CHECK(u.audio.samples.size() == size_t(5 * 0.08 * 16000));  // 6400
  }

  TEST_CASE("samples stay finite and inside the amplitude budget") {
    auto spec = tiny_spec();
    spec.n_utterances = 4;
    for (const auto& u : generate_corpus(spec, 19)) {
      for (double s : u.audio.samples) {
        REQUIRE(std::isfinite(s));
        REQUIRE(std::abs(s) <= 1.2);
      }
    }
  }

  TEST_CASE("invalid grammar rows are rejected") {
    auto spec = tiny_spec();
    spec.grammar.at(2, 0) += 0.5;
    CHECK_THROWS_AS(generate_corpus(spec, 1), ConfigError);
  }

  TEST_CASE("cluster grammar rows are distributions") {
    Tensor g = cluster_grammar(16, 4, 0.9, 5);
    for (int i = 0; i < 16; ++i) {
      double s = 0.0, inside = 0.0;
      for (int j = 0; j < 16; ++j) {
        s += g.at(i, j);
        if (j / 4 == i / 4) inside += g.at(i, j);
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(inside == doctest::Approx(0.9).epsilon(1e-12));
    }
  }

  TEST_CASE("wav round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "pcodec_wav_test";
    std::filesystem::create_directories(dir);

    Waveform silence;
    silence.samples.assign(16000, 0.0);
    write_wav((dir / "s.wav").string(), silence);
    auto rs = read_wav((dir / "s.wav").string());
    CHECK(rs.sample_rate == 16000);
    REQUIRE(rs.samples.size() == 16000);
    for (double v : rs.samples) CHECK(v == 0.0);

    Waveform sine;
    sine.samples.resize(2000);
    for (size_t i = 0; i < sine.samples.size(); ++i)
      sine.samples[i] = std::sin(2.0 * M_PI * 440.0 * double(i) / 16000.0);
    write_wav((dir / "t.wav").string(), sine);
    auto rt = read_wav((dir / "t.wav").string());
    REQUIRE(rt.samples.size() == sine.samples.size());
    double max_err = 0.0;
    for (size_t i = 0; i < rt.samples.size(); ++i)
      max_err = std::max(max_err, std::abs(rt.samples[i] - sine.samples[i]));
    CHECK(max_err <= std::pow(2.0, -15.0));
  }

  TEST_CASE("malformed wav files name the offending field") {
    const auto dir = std::filesystem::temp_directory_path() / "pcodec_wav_test";
    std::filesystem::create_directories(dir);

    // stereo header
    {
      Waveform w;
      w.samples.assign(64, 0.25);
      write_wav((dir / "stereo.wav").string(), w);
      std::fstream f(dir / "stereo.wav",
                     std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(22);  // channel count field
      const char two[2] = {2, 0};
      f.write(two, 2);
      f.close();
      try {
        read_wav((dir / "stereo.wav").string());
        FAIL("expected FormatError");
      } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("channels") != std::string::npos);
      }
    }
    // truncated data chunk
    {
      Waveform w;
      w.samples.assign(64, 0.25);
      write_wav((dir / "trunc.wav").string(), w);
      std::filesystem::resize_file(dir / "trunc.wav", 80);
      try {
        read_wav((dir / "trunc.wav").string());
        FAIL("expected FormatError");
      } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("data") != std::string::npos);
      }
    }
  }

  TEST_CASE("segment pads the final remainder") {
    Waveform w;
    w.samples.assign(64000, 0.5);
    auto segs = segment(w, 4.0);
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].valid == 64000);

    w.samples.assign(96000, 0.5);
    segs = segment(w, 4.0);
    REQUIRE(segs.size() == 2);
    CHECK(segs[0].valid == 64000);
    CHECK(segs[1].valid == 32000);
    CHECK(segs[1].wave.samples.size() == 64000);
    CHECK(segs[1].wave.samples[32000] == 0.0);
    CHECK(segs[1].wave.samples.back() == 0.0);
  }

  TEST_CASE("incoherent pair shares a bit-identical prefix") {
    auto spec = tiny_spec();
    spec.min_symbols = spec.max_symbols = 6;
    auto u = generate_utterance(spec, 11, 0);
    auto p1 = make_incoherent_pair(u, spec, NuisanceKind::kGain, 42);
    auto p2 = make_incoherent_pair(u, spec, NuisanceKind::kGain, 42);
    CHECK(p1.coherent.samples == p2.coherent.samples);
    CHECK(p1.incoherent.samples == p2.incoherent.samples);
    CHECK(p1.split_frac == p2.split_frac);
    REQUIRE(p1.split_frac >= 0.3);
    REQUIRE(p1.split_frac <= 0.7);

    const int64_t split = int64_t(double(p1.coherent.samples.size()) * p1.split_frac);
    for (int64_t i = 0; i < split; ++i)
      REQUIRE(p1.coherent.samples[i] == p1.incoherent.samples[i]);
    double post_diff = 0.0;
    for (size_t i = split; i < p1.coherent.samples.size(); ++i)
      post_diff += std::abs(p1.coherent.samples[i] - p1.incoherent.samples[i]);
    CHECK(post_diff > 1e-3);
  }

  TEST_CASE("every nuisance kind produces a detectable switch") {
    auto spec = tiny_spec();
    spec.noise_range = {0.005, 0.03};  // keep the factor resample meaningful
    auto u = generate_utterance(spec, 13, 1);
    for (auto kind : {NuisanceKind::kGain, NuisanceKind::kPitchOffset, NuisanceKind::kNoise,
                      NuisanceKind::kSmoothing}) {
      auto p = make_incoherent_pair(u, spec, kind, 99);
      double diff = 0.0;
      for (size_t i = 0; i < p.coherent.samples.size(); ++i)
        diff += std::abs(p.coherent.samples[i] - p.incoherent.samples[i]);
      CHECK(diff > 1e-4);
    }
    CHECK_THROWS_AS(nuisance_kind_from_name("reverb"), ConfigError);
  }

  TEST_CASE("corpus manifest round trip") {
    const auto dir = (std::filesystem::temp_directory_path() / "pcodec_corpus_test").string();
    auto spec = tiny_spec();
    auto corpus = generate_corpus(spec, 21);
    write_corpus(dir, spec, corpus);
    auto loaded = read_corpus(dir);
    REQUIRE(loaded.size() == corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) {
      CHECK(loaded[i].transcript == corpus[i].transcript);
      CHECK(loaded[i].nuisance.gain == doctest::Approx(corpus[i].nuisance.gain));
      REQUIRE(loaded[i].audio.samples.size() == corpus[i].audio.samples.size());
      double max_err = 0.0;
      for (size_t j = 0; j < corpus[i].audio.samples.size(); ++j)
        max_err = std::max(max_err,
                           std::abs(loaded[i].audio.samples[j] - corpus[i].audio.samples[j]));
      CHECK(max_err <= std::pow(2.0, -15.0));
    }
  }
}
