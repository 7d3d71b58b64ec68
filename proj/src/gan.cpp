#include "pcodec/gan.hpp"

#include <algorithm>
#include <cmath>

#include "pcodec/errors.hpp"

namespace pcodec::gan {

void GanConfig::validate() const {
  if (periods != std::vector<int>{2, 3, 5, 7, 11})
    throw ConfigError("gan: periods must be {2,3,5,7,11}");
  if (msd_scales != 3) throw ConfigError("gan: exactly 3 msd scales");
  if (r1_interval < 1) throw ConfigError("gan: r1_interval must be positive");
  if (pause_steps < 0) throw ConfigError("gan: negative pause window");
}

GanGateState gan_gate(GanGateState state, double fm_loss, double total_loss, int64_t step,
                      const GanConfig& cfg) {
  if (total_loss <= 0.0) throw ContractError("gan_gate: total_loss must be positive");
  if (!gate_paused(state, step) && fm_loss / total_loss > cfg.pause_threshold)
    state.paused_until = step + cfg.pause_steps;
  return state;
}

double fm_weight_at(const GanConfig& cfg, int64_t step, int64_t gan_start,
                    int64_t total_steps) {
  if (total_steps <= gan_start) return cfg.fm_end;
  double frac = double(step - gan_start) / double(total_steps - gan_start);
  frac = std::min(1.0, std::max(0.0, frac));
  return cfg.fm_start + (cfg.fm_end - cfg.fm_start) * frac;
}

void DiscriminatorBank::init(Rng& rng) {
  cfg.validate();
  auto conv = [&](const std::string& name, int in, int out, int k) {
    params.add(name + ".w", randn_tensor(rng, {out, in, k}, 1.0 / std::sqrt(double(in * k))));
    params.add(name + ".b", Tensor::zeros({out}));
  };
  for (int p : cfg.periods) {
    const std::string s = "mpd" + std::to_string(p);
    conv(s + ".l0", p, cfg.ch1, 5);
    conv(s + ".l1", cfg.ch1, cfg.ch2, 5);
    conv(s + ".out", cfg.ch2, 1, 3);
  }
  for (int k = 0; k < cfg.msd_scales; ++k) {
    const std::string s = "msd" + std::to_string(k);
    conv(s + ".l0", 1, cfg.ch1, 15);
    conv(s + ".l1", cfg.ch1, cfg.ch2, 15);
    conv(s + ".out", cfg.ch2, 1, 3);
  }
}

namespace {

// smallest input length that keeps every layer of a sub-discriminator non-empty
// (two k_body convs at `stride` with left pad k_body/2, then the k3/s1/pad1 head)
int64_t min_stack_input(int64_t k_body, int64_t stride) {
  int64_t need = 2;  // head needs l + 1 - 3 >= 0
  for (int i = 0; i < 2; ++i) need = (need - 1) * stride + k_body - k_body / 2;
  return need;
}

SubOutput run_sub(const GanConfig& cfg, const Binding& b, const std::string& s, ag::NodePtr h,
                  int k_body, int stride) {
  SubOutput out;
  h = ag::leaky_relu(ag::conv1d(h, b[s + ".l0.w"], b[s + ".l0.b"], stride, k_body / 2),
                     cfg.leaky_slope);
  out.features.push_back(h);
  h = ag::leaky_relu(ag::conv1d(h, b[s + ".l1.w"], b[s + ".l1.b"], stride, k_body / 2),
                     cfg.leaky_slope);
  out.features.push_back(h);
  out.score = ag::conv1d(h, b[s + ".out.w"], b[s + ".out.b"], 1, 1);
  return out;
}

}  // namespace

ag::NodePtr period_view(ag::NodePtr x, int p) {
  const int64_t t = x->value.shape[1] / p;
  if (t < 1) throw ShapeError("period_view: input shorter than one period");
  return ag::transpose2d(ag::reshape(ag::slice_cols(x, 0, t * p), {t, p}));
}

std::vector<SubOutput> discriminate(const GanConfig& cfg, const Binding& b, ag::NodePtr x) {
  const int64_t l = x->value.shape[1];
  const int max_period = *std::max_element(cfg.periods.begin(), cfg.periods.end());
  const int64_t need = std::max(max_period * min_stack_input(5, 3),
                                (int64_t(1) << (cfg.msd_scales - 1)) * min_stack_input(15, 4));
  if (l < need) throw ShapeError("discriminate: input too short for the discriminator stacks");
  std::vector<SubOutput> out;
  for (int p : cfg.periods)
    out.push_back(run_sub(cfg, b, "mpd" + std::to_string(p), period_view(x, p), 5, 3));
  for (int k = 0; k < cfg.msd_scales; ++k) {
    ag::NodePtr h = x;
    if (k > 0) h = ag::avg_pool1d(x, int64_t(1) << k);
    out.push_back(run_sub(cfg, b, "msd" + std::to_string(k), h, 15, 4));
  }
  return out;
}

ag::NodePtr d_hinge(const std::vector<SubOutput>& real, const std::vector<SubOutput>& fake) {
  if (real.size() != fake.size()) throw ShapeError("d_hinge: bundle count mismatch");
  std::vector<ag::NodePtr> terms;
  for (size_t i = 0; i < real.size(); ++i) {
    terms.push_back(ag::hinge_mean(real[i].score, 1.0, 1.0));   // mean relu(1 - s_real)
    terms.push_back(ag::hinge_mean(fake[i].score, 1.0, -1.0));  // mean relu(1 + s_fake)
  }
  return ag::wsum(terms, std::vector<double>(terms.size(), 1.0 / double(real.size())));
}

ag::NodePtr g_hinge(const std::vector<SubOutput>& fake) {
  std::vector<ag::NodePtr> means;
  for (const auto& sub : fake) means.push_back(ag::mean_all(sub.score));
  return ag::wsum(means, std::vector<double>(means.size(), -1.0 / double(fake.size())));
}

ag::NodePtr fm_l1(const std::vector<SubOutput>& real, const std::vector<SubOutput>& fake,
                  double fm_weight) {
  if (real.size() != fake.size()) throw ShapeError("fm_l1: bundle count mismatch");
  std::vector<ag::NodePtr> terms;
  for (size_t i = 0; i < real.size(); ++i) {
    if (real[i].features.size() != fake[i].features.size())
      throw ShapeError("fm_l1: feature depth mismatch");
    for (size_t j = 0; j < real[i].features.size(); ++j)
      terms.push_back(ag::l1_mean(fake[i].features[j], ag::stopgrad(real[i].features[j])));
  }
  return ag::wsum(terms, std::vector<double>(terms.size(), fm_weight / double(terms.size())));
}

namespace {

// gradient of the summed real scores w.r.t. the input samples
std::vector<double> score_input_grad(DiscriminatorBank& bank, const std::vector<double>& real) {
  ag::Tape tape;
  Binding b = bind(bank.params, tape, false);
  Tensor x = Tensor::zeros({1, int64_t(real.size())});
  x.data = real;
  ag::NodePtr xn = tape.leaf(x, true);
  auto subs = discriminate(bank.cfg, b, xn);
  std::vector<ag::NodePtr> sums;
  for (auto& s : subs) sums.push_back(ag::sum_all(s.score));
  tape.backward(ag::wsum(sums, std::vector<double>(sums.size(), 1.0)));
  return xn->grad_alloc ? xn->grad.data : std::vector<double>(real.size(), 0.0);
}

// d(sum of real scores)/d(params) at a shifted input, written into `out`
void score_param_grad(DiscriminatorBank& bank, const std::vector<double>& x,
                      std::vector<Tensor>& out) {
  ag::Tape tape;
  Binding b = bind(bank.params, tape, true);
  Tensor xt = Tensor::zeros({1, int64_t(x.size())});
  xt.data = x;
  auto subs = discriminate(bank.cfg, b, tape.constant(xt));
  std::vector<ag::NodePtr> sums;
  for (auto& s : subs) sums.push_back(ag::sum_all(s.score));
  tape.backward(ag::wsum(sums, std::vector<double>(sums.size(), 1.0)));
  out.clear();
  for (auto& leaf : b.leaves)
    out.push_back(leaf->grad_alloc ? leaf->grad : Tensor::zeros(leaf->value.shape));
}

}  // namespace

double r1_penalty_value(DiscriminatorBank& bank, const std::vector<double>& real) {
  const std::vector<double> g = score_input_grad(bank, real);
  double ss = 0.0;
  for (double e : g) ss += e * e;
  return 0.5 * bank.cfg.r1_gamma * ss;
}

void r1_accumulate_grads(DiscriminatorBank& bank, const std::vector<double>& real,
                         double scale, double fd_step) {
  const std::vector<double> g = score_input_grad(bank, real);
  double norm = 0.0;
  for (double e : g) norm += e * e;
  norm = std::sqrt(norm);
  if (norm < 1e-15) return;  // flat discriminator: penalty locally constant
  const double eps = fd_step / norm;

  // dP/dtheta = gamma * d/d(eps) [ d(sum scores)/dtheta at x + eps*g ]
  std::vector<double> shifted(real.size());
  std::vector<Tensor> plus, minus;
  for (size_t i = 0; i < real.size(); ++i) shifted[i] = real[i] + eps * g[i];
  score_param_grad(bank, shifted, plus);
  for (size_t i = 0; i < real.size(); ++i) shifted[i] = real[i] - eps * g[i];
  score_param_grad(bank, shifted, minus);

  auto& entries = bank.params.entries();
  const double k = scale * bank.cfg.r1_gamma / (2.0 * eps);
  for (size_t p = 0; p < entries.size(); ++p)
    for (size_t j = 0; j < entries[p].grad.data.size(); ++j)
      entries[p].grad.data[j] += k * (plus[p].data[j] - minus[p].data[j]);
}

}  // namespace pcodec::gan
