#pragma once

#include <string>
#include <vector>

#include "sdsd/d2d.hpp"
#include "sdsd/solver.hpp"

namespace sdsd {

/* Finite-support state distribution. The exact-expectation machinery (dual
 * minimization, identity-level inequality checks) only works on finite
 * support, so experiments needing exact anchors run on one of these. */
struct DiscreteDistribution {
  std::vector<NetworkState> atoms;
  std::vector<double> probs;

  size_t size() const { return atoms.size(); }
  void validate(const D2DParams& params) const;  // probs sum to 1 within 1e-12, states in support

  // atom list schema: one "atom = <prob> <m> id:cost:gain ..." line per atom
  std::string serialize() const;
  static DiscreteDistribution deserialize_lines(const std::vector<std::string>& atom_lines);
  void save(const std::string& path) const;
  static DiscreteDistribution load(const std::string& path);
};

/* Stratified sampler quantization of the continuous state law: one stratum per
 * active-set size (the size law is uniform, so strata get equal weight), atoms
 * inside a stratum drawn with the given seed and weighted equally. */
DiscreteDistribution build_surrogate(const D2DParams& params, int64_t atoms_target, uint64_t seed);

/* Solver-facing wrapper around a DiscreteDistribution. Exact means and dual
 * values come for free: the subgradient splits into a dual-only part and the
 * winner offset, so the expectation over atoms is one precomputed scalar and
 * every per-slot quantity is O(1). */
class SurrogateProblem final : public StochasticProblem {
 public:
  SurrogateProblem(DiscreteDistribution dist, D2DParams params);

  int dual_dim() const override { return 1; }
  double subgradient_bound() const override { return sdsd::subgradient_bound(params_); }
  bool has_exact_mean() const override { return true; }
  SlotRecord sample_slot(std::span<const double> lambda, int64_t t, Rng& rng) override;
  std::optional<double> exact_dual(std::span<const double> lambda) const override;

  double mean_offset() const { return mean_offset_; }
  double exact_mean_subgradient(double lambda) const;
  const DiscreteDistribution& dist() const { return dist_; }
  const D2DParams& params() const { return params_; }
  // exact expectation of the best cost-ceiling rate, for the feasibility margin
  double exact_slater_rate() const;

 private:
  DiscreteDistribution dist_;
  D2DParams params_;
  std::vector<double> cum_;     // cumulative probabilities for sampling
  std::vector<double> offset_;  // winner_offset per atom
  std::vector<int> winner_;
  double mean_offset_ = 0;
};

}  // namespace sdsd
