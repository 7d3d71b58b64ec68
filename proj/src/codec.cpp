#include "pcodec/codec.hpp"

#include <cmath>

#include "pcodec/errors.hpp"
#include "pcodec/kernels.hpp"

namespace pcodec::codec {

void CodecConfig::validate() const {
  if (latent_dim < 1 || codebook_size < 2) throw ConfigError("codec: bad latent/codebook size");
  if (strides.size() != channels.size()) throw ConfigError("codec: strides/channels mismatch");
  int prod = 1;
  for (int s : strides) prod *= s;
  if (prod != hop) throw ConfigError("codec: stride product must equal hop");
  if (sample_rate % hop != 0) throw ConfigError("codec: hop must divide sample_rate");
  if (ema_decay <= 0.0 || ema_decay >= 1.0) throw ConfigError("codec: ema_decay out of (0,1)");
}

void Codebook::init(int v, int c, Rng& rng) {
  vectors = randn_tensor(rng, {v, c}, 1.0 / std::sqrt(double(c)));
  ema_counts = Tensor::full({v}, 1.0);
  ema_sums = vectors;  // consistent with counts of one
}

void Codebook::ema_update(const Tensor& z, const std::vector<int32_t>& tokens, double decay) {
  const int64_t v = vectors.shape[0], c = vectors.shape[1];
  const int64_t t = z.shape[0];
  for (int64_t i = 0; i < v; ++i) ema_counts.data[i] *= decay;
  for (auto& e : ema_sums.data) e *= decay;
  std::vector<char> touched(v, 0);
  for (int64_t f = 0; f < t; ++f) {
    const int32_t k = tokens[f];
    touched[k] = 1;
    ema_counts.data[k] += 1.0 - decay;
    for (int64_t j = 0; j < c; ++j) ema_sums.data[k * c + j] += (1.0 - decay) * z.at(f, j);
  }
  for (int64_t i = 0; i < v; ++i) {
    if (!touched[i]) continue;
    const double denom = std::max(ema_counts.data[i], 1e-12);
    for (int64_t j = 0; j < c; ++j) vectors.data[i * c + j] = ema_sums.data[i * c + j] / denom;
  }
}

int Codebook::reseed_dead(const Tensor& z, Rng& rng, double min_count) {
  const int64_t v = vectors.shape[0], c = vectors.shape[1];
  const int64_t t = z.shape[0];
  int reseeded = 0;
  for (int64_t i = 0; i < v; ++i) {
    if (ema_counts.data[i] >= min_count) continue;
    const int64_t f = rng.uniform_int(t);
    for (int64_t j = 0; j < c; ++j) {
      vectors.data[i * c + j] = z.at(f, j);
      ema_sums.data[i * c + j] = z.at(f, j);
    }
    ema_counts.data[i] = 1.0;
    ++reseeded;
  }
  return reseeded;
}

void CodecModel::init(Rng& rng) {
  cfg.validate();
  int in_ch = 1;
  for (size_t i = 0; i < cfg.strides.size(); ++i) {
    const int out_ch = cfg.channels[i];
    const int s = cfg.strides[i], rk = cfg.refine_kernel;
    const std::string p = "enc" + std::to_string(i);
    params.add(p + ".down.w",
               randn_tensor(rng, {out_ch, in_ch, s}, 1.0 / std::sqrt(double(in_ch * s))));
    params.add(p + ".down.b", Tensor::zeros({out_ch}));
    params.add(p + ".ref.w",
               randn_tensor(rng, {out_ch, out_ch, rk}, 1.0 / std::sqrt(double(out_ch * rk))));
    params.add(p + ".ref.b", Tensor::zeros({out_ch}));
    in_ch = out_ch;
  }
  params.add("enc_out.w",
             randn_tensor(rng, {cfg.latent_dim, in_ch, 1}, 1.0 / std::sqrt(double(in_ch))));
  params.add("enc_out.b", Tensor::zeros({cfg.latent_dim}));

  int ch = cfg.channels.back();
  params.add("dec_in.w",
             randn_tensor(rng, {ch, cfg.latent_dim, 1}, 1.0 / std::sqrt(double(cfg.latent_dim))));
  params.add("dec_in.b", Tensor::zeros({ch}));
  for (size_t i = 0; i < cfg.strides.size(); ++i) {
    const size_t ri = cfg.strides.size() - 1 - i;
    const int s = cfg.strides[ri], rk = cfg.refine_kernel;
    const int out_ch = ri == 0 ? cfg.channels[0] : cfg.channels[ri - 1];
    const std::string p = "dec" + std::to_string(i);
    params.add(p + ".up.w",
               randn_tensor(rng, {ch, out_ch, s}, 1.0 / std::sqrt(double(ch * s))));
    params.add(p + ".up.b", Tensor::zeros({out_ch}));
    params.add(p + ".ref.w",
               randn_tensor(rng, {out_ch, out_ch, rk}, 1.0 / std::sqrt(double(out_ch * rk))));
    params.add(p + ".ref.b", Tensor::zeros({out_ch}));
    ch = out_ch;
  }
  params.add("dec_out.w", randn_tensor(rng, {1, ch, 1}, 1.0 / std::sqrt(double(ch))));
  params.add("dec_out.b", Tensor::zeros({1}));

  codebook.init(cfg.codebook_size, cfg.latent_dim, rng);
}

ag::NodePtr encode(const CodecConfig& cfg, const Binding& b, ag::NodePtr x) {
  const int64_t l = x->value.shape[1];
  if (l < cfg.hop) throw ShapeError("encode: input shorter than one hop");
  const int64_t t = l / cfg.hop;
  if (t * cfg.hop != l) x = ag::slice_cols(x, 0, t * cfg.hop);
  ag::NodePtr h = x;
  for (size_t i = 0; i < cfg.strides.size(); ++i) {
    const std::string p = "enc" + std::to_string(i);
    h = ag::conv1d(h, b[p + ".down.w"], b[p + ".down.b"], cfg.strides[i], 0);
    h = ag::elu(h);
    h = ag::conv1d(h, b[p + ".ref.w"], b[p + ".ref.b"], 1, cfg.refine_kernel - 1);
    h = ag::elu(h);
  }
  h = ag::conv1d(h, b["enc_out.w"], b["enc_out.b"], 1, 0);  // [C, T]
  return ag::transpose2d(h);                                // [T, C]
}

QuantizeResult quantize(ag::Tape& tape, ag::NodePtr z, Codebook& cb, bool training,
                        double ema_decay) {
  if (!z->value.all_finite()) throw GuardError("quantize: non-finite latents");
  const int64_t t = z->value.shape[0], c = z->value.shape[1];
  const int64_t v = cb.vectors.shape[0];
  QuantizeResult out;
  out.tokens.resize(t);
  kern::nn_scan(z->value.data.data(), cb.vectors.data.data(), out.tokens.data(), t, c, v);
  out.z_q_values = Tensor::zeros({t, c});
  for (int64_t f = 0; f < t; ++f)
    std::copy(cb.vectors.data.begin() + int64_t(out.tokens[f]) * c,
              cb.vectors.data.begin() + int64_t(out.tokens[f]) * c + c,
              out.z_q_values.data.begin() + f * c);
  out.commit = ag::mse_mean(z, tape.constant(out.z_q_values));
  out.z_q = ag::straight_through(out.z_q_values, z);
  if (training) cb.ema_update(z->value, out.tokens, ema_decay);
  return out;
}

ag::NodePtr decode(const CodecConfig& cfg, const Binding& b, ag::NodePtr z_q) {
  ag::NodePtr h = ag::transpose2d(z_q);  // [C, T]
  h = ag::conv1d(h, b["dec_in.w"], b["dec_in.b"], 1, 0);
  h = ag::elu(h);
  for (size_t i = 0; i < cfg.strides.size(); ++i) {
    const size_t ri = cfg.strides.size() - 1 - i;
    const std::string p = "dec" + std::to_string(i);
    h = ag::conv_transpose1d(h, b[p + ".up.w"], b[p + ".up.b"], cfg.strides[ri], 0);
    h = ag::elu(h);
    h = ag::conv1d(h, b[p + ".ref.w"], b[p + ".ref.b"], 1, cfg.refine_kernel - 1);
    h = ag::elu(h);
  }
  h = ag::conv1d(h, b["dec_out.w"], b["dec_out.b"], 1, 0);
  h = ag::tanh_op(h);  // bounded output keeps the guards quiet
  return ag::reshape(h, {h->value.shape[1]});
}

LatentSequence encode_values(CodecModel& model, const audio::Waveform& w) {
  ag::Tape tape;
  Binding b = bind(model.params, tape, false);
  Tensor x = Tensor::zeros({1, int64_t(w.samples.size())});
  x.data = w.samples;
  ag::NodePtr z = encode(model.cfg, b, tape.constant(x));
  LatentSequence out;
  out.frames = z->value;
  out.frame_rate = model.cfg.token_rate();
  return out;
}

std::vector<int32_t> tokenize(CodecModel& model, const audio::Waveform& w) {
  LatentSequence z = encode_values(model, w);
  const int64_t t = z.frames.shape[0], c = z.frames.shape[1];
  std::vector<int32_t> tokens(t);
  kern::nn_scan(z.frames.data.data(), model.codebook.vectors.data.data(), tokens.data(), t, c,
                model.codebook.vectors.shape[0]);
  return tokens;
}

audio::Waveform reconstruct(CodecModel& model, const audio::Waveform& w) {
  ag::Tape tape;
  Binding b = bind(model.params, tape, false);
  Tensor x = Tensor::zeros({1, int64_t(w.samples.size())});
  x.data = w.samples;
  ag::NodePtr z = encode(model.cfg, b, tape.constant(x));
  QuantizeResult q = quantize(tape, z, model.codebook, false, model.cfg.ema_decay);
  ag::NodePtr y = decode(model.cfg, b, q.z_q);
  audio::Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples = y->value.data;
  return out;
}

}  // namespace pcodec::codec
