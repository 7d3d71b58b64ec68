#pragma once

#include <map>
#include <string>
#include <vector>

#include "pcodec/graph.hpp"
#include "pcodec/tensor.hpp"

namespace pcodec::spectral {

struct SpectralConfig {
  int mel_bins = 100;   // primary mel term
  int mel_fft = 1024;
  int mel_hop = 256;
  int ms_bins = 80;     // multi-scale mel term
  std::vector<int> fft_sizes = {512, 1024, 2048};  // hop = fft/4 for these
  double phase_weight = 0.5;
  double eps_floor = 1e-5;   // inside every log
  double mask_floor = 1e-4;  // phase undefined below this reference magnitude

  void validate() const;
};

std::vector<double> hann_window(int n);  // periodic
// Triangular, area-normalized filterbank over [0, Nyquist], [bins, fft/2+1].
Tensor mel_filterbank(int bins, int fft_size, int sample_rate);
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// log(mel-filtered power + eps_floor) of a raw signal, [frames, bins].
Tensor log_mel(const std::vector<double>& samples, int sample_rate, int bins, int fft_size,
               int hop, double eps_floor = 1e-5);

struct ReconTerms {
  ag::NodePtr mel;      // RMS-normalized 100-bin log-mel l1
  ag::NodePtr ms_mel;   // 80-bin log-mel l1 summed over fft sizes
  ag::NodePtr mr_stft;  // spectral convergence + log-magnitude l1, summed
  ag::NodePtr cstft;    // phase_weight * masked unit-phase distance, summed
};

// x is the fixed reference; x_hat is the differentiable reconstruction.
ReconTerms recon_loss(ag::Tape& tape, const std::vector<double>& x, ag::NodePtr x_hat,
                      const SpectralConfig& cfg, int sample_rate);

}  // namespace pcodec::spectral
