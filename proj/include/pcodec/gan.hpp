#pragma once

#include <cstdint>
#include <vector>

#include "pcodec/graph.hpp"
#include "pcodec/params.hpp"

namespace pcodec::gan {

struct GanConfig {
  std::vector<int> periods = {2, 3, 5, 7, 11};  // MPD
  int msd_scales = 3;                           // identity, 2x, 4x avg-pooled
  int ch1 = 8, ch2 = 16;                        // sub-discriminator widths
  double leaky_slope = 0.1;
  double r1_gamma = 2.0;
  int r1_interval = 16;  // optimizer steps between penalties
  double fm_start = 1.5, fm_end = 1.0;
  double pause_threshold = 0.99;  // strict: pause only when fraction exceeds it
  int pause_steps = 500;

  void validate() const;
};

struct GanGateState {
  int64_t paused_until = -1;  // first step at which updates resume; -1 = never paused
  double fm_weight = 1.5;
};

inline bool gate_paused(const GanGateState& s, int64_t step) { return step < s.paused_until; }

GanGateState gan_gate(GanGateState state, double fm_loss, double total_loss, int64_t step,
                      const GanConfig& cfg);

// Linear 1.5 -> 1.0 between generator-GAN activation and the final step.
double fm_weight_at(const GanConfig& cfg, int64_t step, int64_t gan_start, int64_t total_steps);

struct DiscriminatorBank {
  GanConfig cfg;
  ParamStore params;
  void init(Rng& rng);
};

struct SubOutput {
  ag::NodePtr score;                  // [1, l'] sequence of logits
  std::vector<ag::NodePtr> features;  // hidden activations, shallow to deep
};

// Period-strided 2-D view of [1, l]: returns [p, floor(l/p)] where channel c
// holds samples x[t*p + c]; the tail that does not fill a row is dropped.
ag::NodePtr period_view(ag::NodePtr x, int p);

// 5 MPD + 3 MSD bundles, in that order.
std::vector<SubOutput> discriminate(const GanConfig& cfg, const Binding& b, ag::NodePtr x);

ag::NodePtr d_hinge(const std::vector<SubOutput>& real, const std::vector<SubOutput>& fake);
ag::NodePtr g_hinge(const std::vector<SubOutput>& fake);
// real features act as constants; pass the bundles from a no-grad binding
ag::NodePtr fm_l1(const std::vector<SubOutput>& real, const std::vector<SubOutput>& fake,
                  double fm_weight);

// (gamma/2) * ||d(sum of real scores)/d(input)||^2, computed exactly.
double r1_penalty_value(DiscriminatorBank& bank, const std::vector<double>& real);
// Accumulates d(penalty)/d(params) * scale into the bank's grad buffers via a
// central-difference Hessian-vector product (avoids double backward).
void r1_accumulate_grads(DiscriminatorBank& bank, const std::vector<double>& real,
                         double scale, double fd_step = 1e-4);

}  // namespace pcodec::gan
