#pragma once

#include <span>
#include <vector>

#include "sdsd/d2d.hpp"

namespace sdsd {

/* Dual-free slot rules the solver gets compared against. Winner choice and
 * power budget are decoupled: winners never depend on the budget, so the
 * budget can be solved afterwards to match another policy's power use. */

int random_winner(const NetworkState& state, Rng& rng);   // uniform over the active set
int opportunistic_winner(const NetworkState& state);      // cheapest cache, ties to smallest id

/* Allocation at a fixed per-slot budget q in cost units. Baselines take the
 * rate the channel gives them at the granted power; there is no separate rate
 * decision to report. */
Allocation budget_allocation(int winner_id, const NetworkState& state, double budget,
                             const D2DParams& params);

struct MatchReport {
  double target_power = 0;    // total transmit power to match
  double achieved_power = 0;
  double budget = 0;          // per-slot cost-unit budget that gets closest
  double scale = 0;           // budget / cost_max
  bool matched = false;       // achieved within 1 percent of target
  bool clamped = false;       // budget hit the cost box, exact match impossible
};

/* Solves sum_t budget / c_w(t) = target for the constant budget, then clamps
 * onto [cost_min, cost_max]. Winners must be chosen before calling. */
MatchReport matched_power_scaling(double target_power, std::span<const int> winners,
                                  std::span<const NetworkState> states,
                                  const D2DParams& params);

struct PolicyMetrics {
  double downloaded_data = 0;             // sum of realized rates times slot duration
  double cost_incurred = 0;               // sum of winner cost-units
  double aggregate_power = 0;             // sum of granted powers
  double avg_utility_minus_penalty = 0;   // ln(mean realized rate) - mean cost
  double utility_minus_penalty_total = 0; // the same, scaled by the slot count
  int64_t slots = 0;
};

PolicyMetrics policy_metrics(const std::vector<Allocation>& allocations,
                             double slot_duration = 1.0);

/* Replays a fixed state sequence instead of sampling, so different policies
 * can be run against the identical channel realization. The horizon must not
 * exceed the list. */
class ReplayProblem final : public StochasticProblem {
 public:
  ReplayProblem(std::vector<NetworkState> states, D2DParams params);
  int dual_dim() const override { return 1; }
  double subgradient_bound() const override { return sdsd::subgradient_bound(params_); }
  bool has_exact_mean() const override { return false; }
  SlotRecord sample_slot(std::span<const double> lambda, int64_t t, Rng& rng) override;
  int64_t slots() const { return (int64_t)states_.size(); }
  const std::vector<NetworkState>& states() const { return states_; }

 private:
  std::vector<NetworkState> states_;
  D2DParams params_;
};

}  // namespace sdsd
