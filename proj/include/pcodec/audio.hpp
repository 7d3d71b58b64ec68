#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcodec/rng.hpp"
#include "pcodec/tensor.hpp"

namespace pcodec::audio {

struct Waveform {
  std::vector<double> samples;  // amplitude in [-1.2, 1.2]
  int sample_rate = 16000;
};

// One perturbation setting per nuisance kind.
struct Nuisance {
  double gain = 1.0;          // linear amplitude factor
  double pitch_offset = 0.0;  // semitones
  double noise_level = 0.0;   // additive white-noise amplitude
  double smoothing = 0.0;     // one-pole lowpass coefficient in [0, 1)
};

struct Utterance {
  Waveform audio;
  std::vector<int32_t> transcript;
  Nuisance nuisance;
};

struct Range {
  double lo = 0.0, hi = 0.0;
};

struct CorpusSpec {
  int64_t n_utterances = 0;
  int content_vocab = 32;
  Tensor grammar;  // [vocab, vocab] first-order transition rows
  int min_symbols = 4, max_symbols = 12;
  Range gain_range{0.5, 1.0};
  Range pitch_range{-2.0, 2.0};
  Range noise_range{0.0, 0.02};
  Range smoothing_range{0.0, 0.6};
  int sample_rate = 16000;
  double symbol_duration = 0.08;  // seconds per content symbol
};

enum class NuisanceKind { kGain, kPitchOffset, kNoise, kSmoothing };

NuisanceKind nuisance_kind_from_name(const std::string& name);

void validate_spec(const CorpusSpec& spec);
Tensor uniform_grammar(int vocab);
// Block-diagonal-ish grammar: symbols group into clusters with a high
// probability of staying inside the cluster. Gives transcripts local
// structure a language model can exploit.
Tensor cluster_grammar(int vocab, int cluster_size, double within, uint64_t seed);

std::vector<int32_t> sample_transcript(const CorpusSpec& spec, Rng& rng);
Nuisance sample_nuisance(const CorpusSpec& spec, Rng& rng);

// Renders a transcript as concatenated harmonic bursts (fundamental + two
// overtones, 5 ms linear fades). `switch_at` (sample index) swaps in `after`
// mid-render; pass length >= total samples for a single-setting render.
Waveform render_transcript(const std::vector<int32_t>& transcript, const CorpusSpec& spec,
                           const Nuisance& before, const Nuisance& after, int64_t switch_at,
                           Rng& rng);

std::vector<Utterance> generate_corpus(const CorpusSpec& spec, uint64_t seed);
Utterance generate_utterance(const CorpusSpec& spec, uint64_t seed, int64_t index);

struct IncoherentPair {
  Waveform coherent;
  Waveform incoherent;
  double split_frac = 0.0;
};

IncoherentPair make_incoherent_pair(const Utterance& u, const CorpusSpec& spec,
                                    NuisanceKind factor, uint64_t seed);

Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

struct Segment {
  Waveform wave;
  int64_t valid = 0;  // samples before zero padding
};

std::vector<Segment> segment(const Waveform& w, double seconds);

// On-disk corpus: wav files plus a line-delimited manifest.
void write_corpus(const std::string& dir, const CorpusSpec& spec,
                  const std::vector<Utterance>& corpus);
std::vector<Utterance> read_corpus(const std::string& dir);

}  // namespace pcodec::audio
