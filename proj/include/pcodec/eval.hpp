#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcodec/audio.hpp"
#include "pcodec/backbone.hpp"
#include "pcodec/codec.hpp"

namespace pcodec::eval {

// Mean l1 distance between log-mel spectrograms. Unlike the training loss,
// no RMS normalization is applied, so gain errors count.
double mel_distance(const audio::Waveform& ref, const audio::Waveform& hyp, int bins = 100,
                    int fft_size = 1024, int hop = 256);

// Spectral convergence + log-magnitude l1, summed over FFT sizes (hop = fft/4).
double stft_distance(const audio::Waveform& ref, const audio::Waveform& hyp,
                     const std::vector<int>& fft_sizes = {512, 1024, 2048});

double ppl_from_loss(double mean_nll);

struct PplResult {
  double mean_nll = 0.0;
  double ppl = 0.0;
  int64_t tokens = 0;  // predicted tokens (sequence length minus one each)
};

// Token-weighted perplexity of a token LM over a corpus.
PplResult perplexity(lm::Backbone& model, const std::vector<std::vector<int32_t>>& corpus);

struct CoherenceResult {
  double accuracy = 0.0;
  int64_t evaluated = 0;
  int64_t excluded = 0;  // pairs dropped because tokenization failed
};

// Fraction of pairs where the coherent rendering has strictly lower mean NLL
// per token under the LM. Exact ties count as incorrect.
CoherenceResult coherence_accuracy(codec::CodecModel& tokenizer, lm::Backbone& model,
                                   const std::vector<audio::IncoherentPair>& pairs);

struct Metric {
  std::string name;
  double value = 0.0;
  int64_t n = 0;
};

// Line-delimited report: one JSON object per metric, keys in a fixed order,
// identical inputs produce byte-identical files. Non-finite values are
// rejected with the offending key named.
void write_report(const std::string& path, const std::string& run_id, uint64_t config_hash,
                  const std::vector<Metric>& metrics);

std::vector<std::vector<int32_t>> read_token_corpus(const std::string& path);
void write_token_corpus(const std::string& path, const std::vector<std::vector<int32_t>>& corpus);

}  // namespace pcodec::eval
