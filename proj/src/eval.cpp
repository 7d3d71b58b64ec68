#include "pcodec/eval.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "pcodec/errors.hpp"
#include "pcodec/graph.hpp"
#include "pcodec/spectral.hpp"

namespace pcodec::eval {

double mel_distance(const audio::Waveform& ref, const audio::Waveform& hyp, int bins,
                    int fft_size, int hop) {
  if (ref.samples.size() != hyp.samples.size())
    throw ShapeError("mel_distance: length mismatch");
  if (ref.sample_rate != hyp.sample_rate) throw ShapeError("mel_distance: sample rate mismatch");
  const Tensor a = spectral::log_mel(ref.samples, ref.sample_rate, bins, fft_size, hop);
  const Tensor b = spectral::log_mel(hyp.samples, hyp.sample_rate, bins, fft_size, hop);
  double acc = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) acc += std::abs(a.data[i] - b.data[i]);
  return acc / double(a.data.size());
}

double stft_distance(const audio::Waveform& ref, const audio::Waveform& hyp,
                     const std::vector<int>& fft_sizes) {
  if (ref.samples.size() != hyp.samples.size())
    throw ShapeError("stft_distance: length mismatch");
  constexpr double kEps = 1e-5;
  ag::Tape tape;
  Tensor rt = Tensor::zeros({int64_t(ref.samples.size())});
  rt.data = ref.samples;
  Tensor ht = Tensor::zeros({int64_t(hyp.samples.size())});
  ht.data = hyp.samples;
  auto rn = tape.constant(rt);
  auto hn = tape.constant(ht);
  double total = 0.0;
  for (int fft_size : fft_sizes) {
    const std::vector<double> win = spectral::hann_window(fft_size);
    auto mag_r = ag::complex_magnitude(ag::stft(rn, fft_size, fft_size / 4, win));
    auto mag_h = ag::complex_magnitude(ag::stft(hn, fft_size, fft_size / 4, win));
    auto sc = ag::div_ss(ag::sqrt_s(ag::sum_squares(ag::sub(mag_h, mag_r)), 1e-24),
                         ag::sqrt_s(ag::sum_squares(mag_r), 1e-24));
    auto lm = ag::l1_mean(ag::log_eps(mag_h, kEps), ag::log_eps(mag_r, kEps));
    total += sc->value.data[0] + lm->value.data[0];
  }
  return total;
}

double ppl_from_loss(double mean_nll) { return std::exp(mean_nll); }

PplResult perplexity(lm::Backbone& model, const std::vector<std::vector<int32_t>>& corpus) {
  if (corpus.empty()) throw ConfigError("perplexity: empty corpus");
  PplResult r;
  double acc = 0.0;
  for (const auto& seq : corpus) {
    const auto nll = lm::sequence_nll(model, seq);
    for (double v : nll.per_token) acc += v;
    r.tokens += int64_t(nll.per_token.size());
  }
  if (r.tokens == 0) throw ConfigError("perplexity: no predicted tokens");
  r.mean_nll = acc / double(r.tokens);
  r.ppl = ppl_from_loss(r.mean_nll);
  return r;
}

CoherenceResult coherence_accuracy(codec::CodecModel& tokenizer, lm::Backbone& model,
                                   const std::vector<audio::IncoherentPair>& pairs) {
  if (pairs.empty()) throw ConfigError("coherence_accuracy: no pairs");
  CoherenceResult r;
  int64_t correct = 0;
  for (const auto& p : pairs) {
    double nll_c = 0.0, nll_i = 0.0;
    try {
      nll_c = lm::sequence_nll(model, codec::tokenize(tokenizer, p.coherent)).mean_nll;
      nll_i = lm::sequence_nll(model, codec::tokenize(tokenizer, p.incoherent)).mean_nll;
    } catch (const std::runtime_error&) {
      ++r.excluded;
      continue;
    }
    ++r.evaluated;
    if (nll_c < nll_i) ++correct;  // ties count as incorrect
  }
  if (r.evaluated == 0) throw ConfigError("coherence_accuracy: every pair was excluded");
  r.accuracy = double(correct) / double(r.evaluated);
  return r;
}

void write_report(const std::string& path, const std::string& run_id, uint64_t config_hash,
                  const std::vector<Metric>& metrics) {
  std::ostringstream out;
  for (const auto& m : metrics) {
    if (!std::isfinite(m.value))
      throw ConfigError("write_report: non-finite metric: " + m.name);
    std::ostringstream hex;
    hex << std::hex << config_hash;
    nlohmann::ordered_json j;
    j["run_id"] = run_id;
    j["config_hash"] = hex.str();
    j["metric"] = m.name;
    j["value"] = m.value;
    j["n"] = m.n;
    out << j.dump() << "\n";
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open report for writing: " + path);
  f << out.str();
  if (!f) throw IoError("short write to report: " + path);
}

std::vector<std::vector<int32_t>> read_token_corpus(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open token corpus: " + path);
  std::vector<std::vector<int32_t>> corpus;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::vector<int32_t> seq;
    long long v;
    while (is >> v) seq.push_back(int32_t(v));
    if (!is.eof()) throw FormatError("token corpus: non-integer token on line " +
                                     std::to_string(corpus.size() + 1));
    corpus.push_back(std::move(seq));
  }
  return corpus;
}

void write_token_corpus(const std::string& path, const std::vector<std::vector<int32_t>>& corpus) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open token corpus for writing: " + path);
  for (const auto& seq : corpus) {
    for (size_t i = 0; i < seq.size(); ++i) f << (i ? " " : "") << seq[i];
    f << "\n";
  }
}

}  // namespace pcodec::eval
