#pragma once

#include <span>
#include <utility>
#include <vector>

#include "nmsparse/mask_core.hpp"
#include "nmsparse/rng.hpp"

namespace nmsparse {

// Seeded uniform source with draws clamped away from {0, 1} so the Gumbel
// transform -log(-log u) stays finite.
class NoiseSource {
 public:
  explicit NoiseSource(std::uint64_t seed, double eps_min = 1e-10)
      : rng_(seed), eps_min_(eps_min) {}

  double uniform();
  double gumbel();
  double eps_min() const { return eps_min_; }

 private:
  Rng rng_;
  double eps_min_;
};

std::vector<double> sample_gumbel(NoiseSource& noise, std::size_t count);

// y_i = exp((kappa*pi_i + g_i)/tau) / sum_j exp((kappa*pi_j + g_j)/tau),
// computed with max subtraction and renormalized to sum to one.
void soft_index_into(std::span<const double> logits, std::span<const double> noise, double tau,
                     double kappa, std::span<double> out);
std::vector<double> soft_index(std::span<const double> logits, std::span<const double> noise,
                               double tau, double kappa);

// Weighted average of candidate masks: soft_idx x S, entries in [0,1]
// summing to n.
std::vector<double> differentiable_mask(std::span<const double> soft_idx,
                                        const MaskCandidateSet& set);

// softmax(kappa * logits)
std::vector<double> probability_from_logits(std::span<const double> logits, double kappa);

enum class TauDecay { Geometric, Linear };

// kappa interpolates linearly start->end; tau decays geometrically
// (log-linear) by default, with a linear option. Endpoints are exact.
struct GumbelSchedule {
  double tau_start = 4.0;
  double tau_end = 0.05;
  double kappa_start = 1e2;
  double kappa_end = 5e2;
  int total_steps = 2000;
  TauDecay tau_decay = TauDecay::Geometric;

  void validate() const;
  // (tau, kappa) at step in [0, total_steps]
  std::pair<double, double> at(int step) const;
};

}  // namespace nmsparse
