#include "pcodec/spectral.hpp"

#include <algorithm>
#include <cmath>

#include "pcodec/errors.hpp"
#include "pcodec/kernels.hpp"

namespace pcodec::spectral {

void SpectralConfig::validate() const {
  auto pow2 = [](int n) { return n > 0 && (n & (n - 1)) == 0; };
  if (!pow2(mel_fft) || mel_hop >= mel_fft) throw ConfigError("spectral: bad mel fft/hop");
  for (int f : fft_sizes)
    if (!pow2(f)) throw ConfigError("spectral: fft sizes must be powers of two");
  if (mel_bins < 2 || ms_bins < 2) throw ConfigError("spectral: too few mel bins");
  if (phase_weight < 0.0) throw ConfigError("spectral: negative phase weight");
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * double(i) / double(n));
  return w;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Tensor mel_filterbank(int bins, int fft_size, int sample_rate) {
  const int f = fft_size / 2 + 1;
  const double mel_hi = hz_to_mel(double(sample_rate) / 2.0);
  std::vector<double> hz(bins + 2);
  for (int i = 0; i < bins + 2; ++i)
    hz[i] = mel_to_hz(mel_hi * double(i) / double(bins + 1));
  Tensor fb = Tensor::zeros({bins, f});
  for (int b = 0; b < bins; ++b) {
    const double lo = hz[b], mid = hz[b + 1], hi = hz[b + 2];
    const double norm = 2.0 / (hi - lo);  // unit area per filter
    for (int k = 0; k < f; ++k) {
      const double fk = double(k) * double(sample_rate) / double(fft_size);
      double w = 0.0;
      if (fk > lo && fk < mid)
        w = (fk - lo) / (mid - lo);
      else if (fk >= mid && fk < hi)
        w = (hi - fk) / (hi - mid);
      fb.at(b, k) = w * norm;
    }
  }
  return fb;
}

namespace {

int64_t reflect_idx(int64_t q, int64_t l) {
  while (q < 0 || q >= l) {
    if (q < 0) q = -q;
    if (q >= l) q = 2 * l - 2 - q;
  }
  return q;
}

}  // namespace

Tensor log_mel(const std::vector<double>& samples, int sample_rate, int bins, int fft_size,
               int hop, double eps_floor) {
  const int64_t l = int64_t(samples.size());
  if (l <= fft_size / 2) throw ShapeError("log_mel: input shorter than pad width");
  const int64_t f = fft_size / 2 + 1;
  const int64_t frames = 1 + l / hop;
  const Tensor fb = mel_filterbank(bins, fft_size, sample_rate);
  const std::vector<double> win = hann_window(fft_size);
  Tensor power = Tensor::zeros({f, frames});
#pragma omp parallel for schedule(static)
  for (int64_t b = 0; b < frames; ++b) {
    std::vector<double> re(fft_size), im(fft_size, 0.0);
    for (int64_t n = 0; n < fft_size; ++n)
      re[n] = samples[reflect_idx(b * hop - fft_size / 2 + n, l)] * win[n];
    kern::fft(re.data(), im.data(), fft_size, false);
    for (int64_t k = 0; k < f; ++k) power.at(k, b) = re[k] * re[k] + im[k] * im[k];
  }
  Tensor mel = Tensor::zeros({bins, frames});
  kern::matmul(fb.data.data(), power.data.data(), mel.data.data(), bins, f, frames);
  Tensor out = Tensor::zeros({frames, bins});
  for (int64_t b = 0; b < frames; ++b)
    for (int64_t m = 0; m < bins; ++m) out.at(b, m) = std::log(mel.at(m, b) + eps_floor);
  return out;
}

namespace {

// [bins, frames] log-mel node from a signal node
ag::NodePtr graph_log_mel(ag::Tape& tape, ag::NodePtr sig, const Tensor& fb, int fft_size,
                          int hop, const std::vector<double>& win, double eps_floor) {
  ag::NodePtr spec = ag::stft(sig, fft_size, hop, win);
  ag::NodePtr mag = ag::complex_magnitude(spec);
  ag::NodePtr power = ag::mul(mag, mag);
  ag::NodePtr mel = ag::matmul(tape.constant(fb), power);
  return ag::log_eps(mel, eps_floor);
}

ag::NodePtr rms_normalize(ag::Tape& tape, ag::NodePtr sig) {
  (void)tape;
  ag::NodePtr ms = ag::scale(ag::sum_squares(sig), 1.0 / double(sig->value.numel()));
  return ag::div_by_scalar(sig, ag::sqrt_s(ms, 1e-12));
}

}  // namespace

ReconTerms recon_loss(ag::Tape& tape, const std::vector<double>& x, ag::NodePtr x_hat,
                      const SpectralConfig& cfg, int sample_rate) {
  cfg.validate();
  if (int64_t(x.size()) != x_hat->value.numel())
    throw ShapeError("recon_loss: length mismatch");
  Tensor xt = Tensor::zeros({int64_t(x.size())});
  xt.data = x;
  ag::NodePtr x_ref = tape.constant(xt);

  ReconTerms out;
  {
    const Tensor fb = mel_filterbank(cfg.mel_bins, cfg.mel_fft, sample_rate);
    const std::vector<double> win = hann_window(cfg.mel_fft);
    ag::NodePtr ref =
        graph_log_mel(tape, rms_normalize(tape, x_ref), fb, cfg.mel_fft, cfg.mel_hop, win,
                      cfg.eps_floor);
    ag::NodePtr hat =
        graph_log_mel(tape, rms_normalize(tape, x_hat), fb, cfg.mel_fft, cfg.mel_hop, win,
                      cfg.eps_floor);
    out.mel = ag::l1_mean(hat, ref);
  }

  std::vector<ag::NodePtr> ms_terms, mr_terms, ph_terms;
  for (int fft_size : cfg.fft_sizes) {
    const int hop = fft_size / 4;
    const std::vector<double> win = hann_window(fft_size);
    ag::NodePtr spec_ref = ag::stft(x_ref, fft_size, hop, win);
    ag::NodePtr spec_hat = ag::stft(x_hat, fft_size, hop, win);
    ag::NodePtr mag_ref = ag::complex_magnitude(spec_ref);
    ag::NodePtr mag_hat = ag::complex_magnitude(spec_hat);

    const Tensor fb = mel_filterbank(cfg.ms_bins, fft_size, sample_rate);
    ag::NodePtr mel_ref = ag::log_eps(
        ag::matmul(tape.constant(fb), ag::mul(mag_ref, mag_ref)), cfg.eps_floor);
    ag::NodePtr mel_hat = ag::log_eps(
        ag::matmul(tape.constant(fb), ag::mul(mag_hat, mag_hat)), cfg.eps_floor);
    ms_terms.push_back(ag::l1_mean(mel_hat, mel_ref));

    ag::NodePtr diff = ag::sub(mag_hat, mag_ref);
    ag::NodePtr sc = ag::div_ss(ag::sqrt_s(ag::sum_squares(diff), 1e-24),
                                ag::sqrt_s(ag::sum_squares(mag_ref), 1e-24));
    ag::NodePtr lm = ag::l1_mean(ag::log_eps(mag_hat, cfg.eps_floor),
                                 ag::log_eps(mag_ref, cfg.eps_floor));
    mr_terms.push_back(sc);
    mr_terms.push_back(lm);

    ph_terms.push_back(ag::phase_loss(spec_hat, spec_ref->value, cfg.mask_floor));
  }
  out.ms_mel = ag::wsum(ms_terms, std::vector<double>(ms_terms.size(), 1.0));
  out.mr_stft = ag::wsum(mr_terms, std::vector<double>(mr_terms.size(), 1.0));
  out.cstft = ag::wsum(ph_terms, std::vector<double>(ph_terms.size(), cfg.phase_weight));
  return out;
}

}  // namespace pcodec::spectral
