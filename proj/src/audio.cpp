#include "pcodec/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "pcodec/errors.hpp"

namespace pcodec::audio {

namespace {

constexpr double kTwoPi = 6.283185307179586;
constexpr double kBaseFreq = 110.0;  // symbol s sounds at 110 * 2^(s/16) Hz
constexpr double kFadeSeconds = 0.005;
constexpr double kHarmonicAmps[3] = {0.22, 0.11, 0.055};

double symbol_freq(int32_t sym, double pitch_offset) {
  return kBaseFreq * std::pow(2.0, double(sym) / 16.0 + pitch_offset / 12.0);
}

}  // namespace

NuisanceKind nuisance_kind_from_name(const std::string& name) {
  if (name == "gain") return NuisanceKind::kGain;
  if (name == "pitch") return NuisanceKind::kPitchOffset;
  if (name == "noise") return NuisanceKind::kNoise;
  if (name == "smoothing") return NuisanceKind::kSmoothing;
  throw ConfigError("unknown nuisance kind: " + name);
}

void validate_spec(const CorpusSpec& spec) {
  if (spec.n_utterances <= 0) throw ConfigError("corpus: n_utterances must be positive");
  if (spec.content_vocab < 2) throw ConfigError("corpus: content_vocab must be >= 2");
  if (spec.min_symbols < 1 || spec.max_symbols < spec.min_symbols)
    throw ConfigError("corpus: invalid utterance length range");
  if (spec.sample_rate <= 0) throw ConfigError("corpus: sample_rate must be positive");
  if (spec.symbol_duration <= 2.0 * kFadeSeconds)
    throw ConfigError("corpus: symbol_duration too short for fades");
  const int v = spec.content_vocab;
  if (spec.grammar.shape != std::vector<int64_t>{v, v})
    throw ConfigError("corpus: grammar must be [vocab, vocab]");
  for (int i = 0; i < v; ++i) {
    double s = 0.0;
    for (int j = 0; j < v; ++j) {
      const double p = spec.grammar.at(i, j);
      if (p < 0.0 || !std::isfinite(p)) throw ConfigError("corpus: grammar has invalid entry");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9)
      throw ConfigError("corpus: grammar row " + std::to_string(i) + " sums to " +
                        std::to_string(s));
  }
  for (const Range* r : {&spec.gain_range, &spec.pitch_range, &spec.noise_range,
                         &spec.smoothing_range})
    if (r->lo > r->hi) throw ConfigError("corpus: nuisance range inverted");
  if (spec.smoothing_range.hi >= 1.0) throw ConfigError("corpus: smoothing must stay below 1");
}

Tensor uniform_grammar(int vocab) {
  Tensor g = Tensor::full({vocab, vocab}, 1.0 / double(vocab));
  return g;
}

Tensor cluster_grammar(int vocab, int cluster_size, double within, uint64_t seed) {
  if (cluster_size < 1 || vocab % cluster_size != 0)
    throw ConfigError("cluster_grammar: cluster_size must divide vocab");
  Rng rng(seed);
  Tensor g = Tensor::zeros({vocab, vocab});
  const int outside = vocab - cluster_size;
  for (int i = 0; i < vocab; ++i) {
    const int c0 = (i / cluster_size) * cluster_size;
    // random but row-normalized mass inside the cluster, uniform leak outside
    std::vector<double> w(cluster_size);
    double tot = 0.0;
    for (auto& e : w) {
      e = 0.2 + rng.uniform();
      tot += e;
    }
    for (int j = 0; j < cluster_size; ++j) g.at(i, c0 + j) = within * w[j] / tot;
    if (outside > 0) {
      const double leak = (1.0 - within) / double(outside);
      for (int j = 0; j < vocab; ++j)
        if (j < c0 || j >= c0 + cluster_size) g.at(i, j) = leak;
    } else {
      for (int j = 0; j < cluster_size; ++j) g.at(i, c0 + j) /= within;
    }
  }
  return g;
}

std::vector<int32_t> sample_transcript(const CorpusSpec& spec, Rng& rng) {
  const int64_t len = spec.min_symbols + rng.uniform_int(spec.max_symbols - spec.min_symbols + 1);
  std::vector<int32_t> out(len);
  out[0] = int32_t(rng.uniform_int(spec.content_vocab));
  for (int64_t i = 1; i < len; ++i) {
    const double u = rng.uniform();
    double acc = 0.0;
    int32_t next = spec.content_vocab - 1;
    for (int j = 0; j < spec.content_vocab; ++j) {
      acc += spec.grammar.at(out[i - 1], j);
      if (u < acc) {
        next = int32_t(j);
        break;
      }
    }
    out[i] = next;
  }
  return out;
}

Nuisance sample_nuisance(const CorpusSpec& spec, Rng& rng) {
  Nuisance n;
  n.gain = rng.uniform(spec.gain_range.lo, spec.gain_range.hi);
  n.pitch_offset = rng.uniform(spec.pitch_range.lo, spec.pitch_range.hi);
  n.noise_level = rng.uniform(spec.noise_range.lo, spec.noise_range.hi);
  n.smoothing = rng.uniform(spec.smoothing_range.lo, spec.smoothing_range.hi);
  return n;
}

Waveform render_transcript(const std::vector<int32_t>& transcript, const CorpusSpec& spec,
                           const Nuisance& before, const Nuisance& after, int64_t switch_at,
                           Rng& rng) {
  if (transcript.empty()) throw ContractError("render_transcript: empty transcript");
  const int64_t sym_len = int64_t(std::llround(spec.symbol_duration * spec.sample_rate));
  const int64_t fade = int64_t(std::llround(kFadeSeconds * spec.sample_rate));
  const int64_t total = sym_len * int64_t(transcript.size());
  Waveform w;
  w.sample_rate = spec.sample_rate;
  w.samples.resize(total);
  double phase[3] = {0.0, 0.0, 0.0};
  double lp_state = 0.0;
  for (int64_t n = 0; n < total; ++n) {
    const Nuisance& nu = n < switch_at ? before : after;
    const int64_t si = n / sym_len, pos = n % sym_len;
    const double f0 = symbol_freq(transcript[si], nu.pitch_offset);
    double tone = 0.0;
    for (int h = 0; h < 3; ++h) {
      phase[h] += kTwoPi * f0 * double(h + 1) / double(spec.sample_rate);
      if (phase[h] > kTwoPi) phase[h] -= kTwoPi * std::floor(phase[h] / kTwoPi);
      tone += kHarmonicAmps[h] * std::sin(phase[h]);
    }
    double env = 1.0;
    if (pos < fade) env = double(pos) / double(fade);
    const int64_t from_end = sym_len - 1 - pos;
    if (from_end < fade) env = std::min(env, double(from_end) / double(fade));
    // noise drawn every sample so the draw sequence is independent of the
    // nuisance values; prefix identity across a mid-render switch relies on it
    const double noise = rng.uniform(-1.0, 1.0);
    const double x = nu.gain * tone * env + nu.noise_level * noise;
    lp_state = (1.0 - nu.smoothing) * x + nu.smoothing * lp_state;
    w.samples[n] = lp_state;
  }
  return w;
}

Utterance generate_utterance(const CorpusSpec& spec, uint64_t seed, int64_t index) {
  Rng rng = Rng::substream(seed, uint64_t(index));
  Utterance u;
  u.transcript = sample_transcript(spec, rng);
  u.nuisance = sample_nuisance(spec, rng);
  const int64_t never = int64_t(u.transcript.size()) *
                        int64_t(std::llround(spec.symbol_duration * spec.sample_rate));
  u.audio = render_transcript(u.transcript, spec, u.nuisance, u.nuisance, never, rng);
  return u;
}

std::vector<Utterance> generate_corpus(const CorpusSpec& spec, uint64_t seed) {
  validate_spec(spec);
  std::vector<Utterance> out(spec.n_utterances);
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < spec.n_utterances; ++i) out[i] = generate_utterance(spec, seed, i);
  return out;
}

IncoherentPair make_incoherent_pair(const Utterance& u, const CorpusSpec& spec,
                                    NuisanceKind factor, uint64_t seed) {
  Rng rng = Rng::substream(seed, 0x70A1Bull);
  IncoherentPair pair;
  pair.split_frac = rng.uniform(0.3, 0.7);
  const int64_t total = int64_t(u.audio.samples.size());
  const int64_t split_at = int64_t(double(total) * pair.split_frac);

  auto resample = [&](double cur, const Range& r) {
    // insist on a visibly different value so the switch is detectable
    const double width = std::max(r.hi - r.lo, 1e-9);
    for (int tries = 0; tries < 16; ++tries) {
      const double v = rng.uniform(r.lo, r.hi);
      if (std::abs(v - cur) > 0.25 * width) return v;
    }
    return std::abs(cur - r.lo) > std::abs(r.hi - cur) ? r.lo : r.hi;
  };

  Nuisance switched = u.nuisance;
  switch (factor) {
    case NuisanceKind::kGain:
      switched.gain = resample(u.nuisance.gain, spec.gain_range);
      break;
    case NuisanceKind::kPitchOffset:
      switched.pitch_offset = resample(u.nuisance.pitch_offset, spec.pitch_range);
      break;
    case NuisanceKind::kNoise:
      switched.noise_level = resample(u.nuisance.noise_level, spec.noise_range);
      break;
    case NuisanceKind::kSmoothing:
      switched.smoothing = resample(u.nuisance.smoothing, spec.smoothing_range);
      break;
  }

  // identical noise streams for both renders keeps the prefixes bit-identical
  const uint64_t render_key = rng.next_u64();
  Rng rng_a = Rng::substream(seed, render_key);
  Rng rng_b = Rng::substream(seed, render_key);
  pair.coherent = render_transcript(u.transcript, spec, u.nuisance, u.nuisance, total, rng_a);
  pair.incoherent =
      render_transcript(u.transcript, spec, u.nuisance, switched, split_at, rng_b);
  return pair;
}

// ---- WAV I/O (RIFF, PCM16 mono) ----

namespace {

uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return uint16_t(b[0] | b[1] << 8);
}

void write_u32(std::ostream& out, uint32_t v) {
  const char b[4] = {char(v & 0xff), char(v >> 8 & 0xff), char(v >> 16 & 0xff),
                     char(v >> 24 & 0xff)};
  out.write(b, 4);
}

void write_u16(std::ostream& out, uint16_t v) {
  const char b[2] = {char(v & 0xff), char(v >> 8 & 0xff)};
  out.write(b, 2);
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("wav: cannot open " + path);
  char tag[4];
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "RIFF", 4) != 0) throw FormatError("wav: missing RIFF tag");
  read_u32(in);  // riff size, unchecked; data chunk length is authoritative
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "WAVE", 4) != 0) throw FormatError("wav: missing WAVE tag");

  Waveform w;
  bool got_fmt = false;
  while (in.read(tag, 4)) {
    const uint32_t size = read_u32(in);
    if (!in) throw FormatError("wav: truncated chunk header");
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError("wav: fmt chunk too small");
      const uint16_t format = read_u16(in);
      const uint16_t channels = read_u16(in);
      const uint32_t sr = read_u32(in);
      read_u32(in);  // byte rate
      read_u16(in);  // block align
      const uint16_t bits = read_u16(in);
      if (format != 1)
        throw FormatError("wav: audio_format " + std::to_string(format) + " (want PCM 1)");
      if (channels != 1)
        throw FormatError("wav: channels " + std::to_string(channels) + " (want mono 1)");
      if (bits != 16)
        throw FormatError("wav: bits_per_sample " + std::to_string(bits) + " (want 16)");
      w.sample_rate = int(sr);
      in.ignore(std::streamsize(size) - 16 + (size & 1));
      got_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!got_fmt) throw FormatError("wav: data chunk before fmt chunk");
      if (size % 2 != 0) throw FormatError("wav: data chunk size not sample-aligned");
      const int64_t n = size / 2;
      w.samples.resize(n);
      std::vector<unsigned char> raw(size);
      in.read(reinterpret_cast<char*>(raw.data()), size);
      if (!in) throw FormatError("wav: data chunk truncated");
      for (int64_t i = 0; i < n; ++i) {
        const int16_t s = int16_t(raw[2 * i] | raw[2 * i + 1] << 8);
        w.samples[i] = double(s) / 32767.0;
      }
      return w;
    } else {
      in.ignore(std::streamsize(size) + (size & 1));
    }
  }
  throw FormatError("wav: missing data chunk");
}

void write_wav(const std::string& path, const Waveform& w) {
  if (w.samples.empty()) throw ContractError("wav: refusing to write empty waveform");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("wav: cannot open " + path + " for writing");
  const uint32_t data_size = uint32_t(w.samples.size() * 2);
  out.write("RIFF", 4);
  write_u32(out, 36 + data_size);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32(out, 16);
  write_u16(out, 1);  // PCM
  write_u16(out, 1);  // mono
  write_u32(out, uint32_t(w.sample_rate));
  write_u32(out, uint32_t(w.sample_rate) * 2);
  write_u16(out, 2);
  write_u16(out, 16);
  out.write("data", 4);
  write_u32(out, data_size);
  std::vector<char> raw(data_size);
  for (size_t i = 0; i < w.samples.size(); ++i) {
    const double clipped = std::min(1.0, std::max(-1.0, w.samples[i]));
    const int16_t s = int16_t(std::lround(clipped * 32767.0));
    raw[2 * i] = char(s & 0xff);
    raw[2 * i + 1] = char(s >> 8 & 0xff);
  }
  out.write(raw.data(), data_size);
  if (!out) throw IoError("wav: short write to " + path);
}

std::vector<Segment> segment(const Waveform& w, double seconds) {
  if (seconds <= 0.0) throw ContractError("segment: seconds must be positive");
  const int64_t n = int64_t(std::llround(seconds * w.sample_rate));
  const int64_t len = int64_t(w.samples.size());
  std::vector<Segment> out;
  for (int64_t start = 0; start < len; start += n) {
    Segment s;
    s.wave.sample_rate = w.sample_rate;
    s.valid = std::min(n, len - start);
    s.wave.samples.assign(n, 0.0);
    std::copy(w.samples.begin() + start, w.samples.begin() + start + s.valid,
              s.wave.samples.begin());
    out.push_back(std::move(s));
  }
  return out;
}

void write_corpus(const std::string& dir, const CorpusSpec& spec,
                  const std::vector<Utterance>& corpus) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.jsonl");
  if (!manifest) throw IoError("corpus: cannot write manifest in " + dir);
  nlohmann::ordered_json meta{{"type", "meta"},
                              {"n_utterances", corpus.size()},
                              {"content_vocab", spec.content_vocab},
                              {"sample_rate", spec.sample_rate},
                              {"symbol_duration", spec.symbol_duration}};
  manifest << meta.dump() << "\n";
  char name[32];
  for (size_t i = 0; i < corpus.size(); ++i) {
    std::snprintf(name, sizeof name, "utt_%06zu.wav", i);
    write_wav((fs::path(dir) / name).string(), corpus[i].audio);
    const Nuisance& nu = corpus[i].nuisance;
    nlohmann::ordered_json rec{{"path", name},
                               {"transcript", corpus[i].transcript},
                               {"nuisance",
                                {{"gain", nu.gain},
                                 {"pitch_offset", nu.pitch_offset},
                                 {"noise_level", nu.noise_level},
                                 {"smoothing", nu.smoothing}}}};
    manifest << rec.dump() << "\n";
  }
}

std::vector<Utterance> read_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / "manifest.jsonl");
  if (!manifest) throw IoError("corpus: cannot read manifest in " + dir);
  std::vector<Utterance> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("corpus manifest: ") + e.what());
    }
    if (rec.value("type", "") == "meta") continue;
    Utterance u;
    u.audio = read_wav((fs::path(dir) / rec.at("path").get<std::string>()).string());
    u.transcript = rec.at("transcript").get<std::vector<int32_t>>();
    const auto& nu = rec.at("nuisance");
    u.nuisance.gain = nu.at("gain").get<double>();
    u.nuisance.pitch_offset = nu.at("pitch_offset").get<double>();
    u.nuisance.noise_level = nu.at("noise_level").get<double>();
    u.nuisance.smoothing = nu.at("smoothing").get<double>();
    out.push_back(std::move(u));
  }
  if (out.empty()) throw FormatError("corpus manifest: no utterance records");
  return out;
}

}  // namespace pcodec::audio
