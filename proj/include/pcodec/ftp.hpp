#pragma once

#include <cstdint>
#include <vector>

#include "pcodec/graph.hpp"
#include "pcodec/params.hpp"

namespace pcodec::ftp {

// Inverse-distance weights (1/k) normalized by the harmonic number H_K.
std::vector<double> ftp_weights(int64_t k);

struct FtpHeads {
  int64_t k = 0;
  int64_t hidden = 0;
  int64_t audio_vocab = 0;
  std::vector<double> weights;
  ParamStore params;  // "h{i}.w": [audio_vocab, hidden], bias-free
};

// Every head starts as a copy of the audio-row slice of the output head and
// trains independently afterwards.
FtpHeads init_heads(const Tensor& w_lm, const std::vector<int32_t>& audio_ids, int64_t k,
                    int64_t hidden);

// (1/(T-K)) sum_{t=1..T-K} sum_{k=1..K} w_k * CE(M_k(h_t), c_{t+k})
ag::NodePtr ftp_loss(ag::NodePtr hidden, const std::vector<int32_t>& targets,
                     const FtpHeads& heads, const Binding& b);

}  // namespace pcodec::ftp
