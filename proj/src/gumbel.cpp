#include "nmsparse/gumbel.hpp"

#include <algorithm>
#include <cmath>

#include "nmsparse/serialize.hpp"

namespace nmsparse {

double NoiseSource::uniform() {
  double u = rng_.uniform();
  return std::clamp(u, eps_min_, 1.0 - eps_min_);
}

double NoiseSource::gumbel() { return -std::log(-std::log(uniform())); }

std::vector<double> sample_gumbel(NoiseSource& noise, std::size_t count) {
  if (count == 0) throw ValidationError("sample_gumbel: count must be positive");
  std::vector<double> g(count);
  for (double& v : g) v = noise.gumbel();
  return g;
}

void soft_index_into(std::span<const double> logits, std::span<const double> noise, double tau,
                     double kappa, std::span<double> out) {
  if (tau <= 0.0) throw ValidationError("soft_index: tau must be positive");
  if (kappa <= 0.0) throw ValidationError("soft_index: kappa must be positive");
  if (logits.size() != noise.size() || logits.size() != out.size())
    throw ValidationError("soft_index: length mismatch");
  const double inv_tau = 1.0 / tau;
  double mx = -1e300;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = (kappa * logits[i] + noise[i]) * inv_tau;
    mx = std::max(mx, out[i]);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(out[i] - mx);
    sum += out[i];
  }
  const double inv = 1.0 / sum;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;
}

std::vector<double> soft_index(std::span<const double> logits, std::span<const double> noise,
                               double tau, double kappa) {
  std::vector<double> out(logits.size());
  soft_index_into(logits, noise, tau, kappa, out);
  return out;
}

std::vector<double> differentiable_mask(std::span<const double> soft_idx,
                                        const MaskCandidateSet& set) {
  if (soft_idx.size() != static_cast<std::size_t>(set.size()))
    throw ValidationError("differentiable_mask: expected " + std::to_string(set.size()) +
                          " weights, got " + std::to_string(soft_idx.size()));
  std::vector<double> mask(static_cast<std::size_t>(set.m), 0.0);
  for (int i = 0; i < set.size(); ++i) {
    const double w = soft_idx[static_cast<std::size_t>(i)];
    const auto& bits = set.masks[static_cast<std::size_t>(i)];
    for (int j = 0; j < set.m; ++j)
      if (bits[static_cast<std::size_t>(j)]) mask[static_cast<std::size_t>(j)] += w;
  }
  return mask;
}

std::vector<double> probability_from_logits(std::span<const double> logits, double kappa) {
  if (kappa <= 0.0) throw ValidationError("probability_from_logits: kappa must be positive");
  std::vector<double> p(logits.size());
  double mx = -1e300;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = kappa * logits[i];
    mx = std::max(mx, p[i]);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(p[i] - mx);
    sum += p[i];
  }
  const double inv = 1.0 / sum;
  for (double& v : p) v *= inv;
  return p;
}

void GumbelSchedule::validate() const {
  if (tau_start <= 0 || tau_end <= 0 || kappa_start <= 0 || kappa_end <= 0)
    throw ValidationError("schedule values must be positive");
  if (tau_start < tau_end) throw ValidationError("schedule requires tau_start >= tau_end");
  if (kappa_start > kappa_end) throw ValidationError("schedule requires kappa_start <= kappa_end");
  if (total_steps < 0) throw ValidationError("schedule requires total_steps >= 0");
}

std::pair<double, double> GumbelSchedule::at(int step) const {
  validate();
  if (step < 0 || step > total_steps)
    throw ValidationError("schedule step " + std::to_string(step) + " outside [0, " +
                          std::to_string(total_steps) + "]");
  if (total_steps == 0) return {tau_start, kappa_start};
  if (step == total_steps) return {tau_end, kappa_end};  // exact endpoint
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  const double kappa = kappa_start + (kappa_end - kappa_start) * frac;
  double tau;
  if (tau_decay == TauDecay::Geometric) {
    tau = tau_start * std::pow(tau_end / tau_start, frac);
  } else {
    tau = tau_start + (tau_end - tau_start) * frac;
  }
  return {tau, kappa};
}

}  // namespace nmsparse
