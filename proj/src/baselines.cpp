#include "sdsd/baselines.hpp"

#include <algorithm>
#include <cmath>

namespace sdsd {

int random_winner(const NetworkState& state, Rng& rng) {
  if (state.size() == 0) throw ConfigError("baseline: empty active set");
  return state.active[(size_t)rng.below((uint64_t)state.size())];
}

int opportunistic_winner(const NetworkState& state) {
  if (state.size() == 0) throw ConfigError("baseline: empty active set");
  int best = 0;
  for (int i = 1; i < state.size(); ++i) {
    if (state.costs[i] < state.costs[best]) best = i;  // strict, ties keep the smaller id
  }
  return state.active[best];
}

namespace {

int index_of(int winner_id, const NetworkState& state) {
  auto it = std::lower_bound(state.active.begin(), state.active.end(), winner_id);
  if (it == state.active.end() || *it != winner_id) {
    throw ConfigError("baseline: winner id is not in the active set");
  }
  return (int)(it - state.active.begin());
}

}  // namespace

Allocation budget_allocation(int winner_id, const NetworkState& state, double budget,
                             const D2DParams& params) {
  if (!(budget >= params.cost_min && budget <= params.cost_max)) {
    throw ConfigError("baseline: budget outside the cost box");
  }
  int i = index_of(winner_id, state);
  Allocation a;
  a.winner = winner_id;
  a.cost = budget;
  a.power = budget / state.costs[i];
  a.realized_rate = params.rate_of(winner_id, a.power, state.gains[i]);
  a.rate_target = a.realized_rate;
  return a;
}

MatchReport matched_power_scaling(double target_power, std::span<const int> winners,
                                  std::span<const NetworkState> states,
                                  const D2DParams& params) {
  if (winners.size() != states.size() || winners.empty()) {
    throw ConfigError("baseline: winner list and state list must align and be nonempty");
  }
  if (!(target_power > 0) || !std::isfinite(target_power)) {
    throw ConfigError("baseline: target power must be positive and finite");
  }
  double inv_cost_sum = 0;
  for (size_t t = 0; t < winners.size(); ++t) {
    int i = index_of(winners[t], states[t]);
    inv_cost_sum += 1.0 / states[t].costs[i];
  }
  MatchReport rep;
  rep.target_power = target_power;
  double exact = target_power / inv_cost_sum;
  rep.budget = std::clamp(exact, params.cost_min, params.cost_max);
  rep.clamped = rep.budget != exact;
  rep.scale = rep.budget / params.cost_max;
  rep.achieved_power = rep.budget * inv_cost_sum;
  rep.matched = std::abs(rep.achieved_power - target_power) <= 0.01 * target_power;
  return rep;
}

PolicyMetrics policy_metrics(const std::vector<Allocation>& allocations, double slot_duration) {
  if (allocations.empty()) throw ConfigError("baseline: no allocations to score");
  if (!(slot_duration > 0)) throw ConfigError("baseline: slot duration must be positive");
  PolicyMetrics m;
  m.slots = (int64_t)allocations.size();
  double sum_rate = 0;
  for (const Allocation& a : allocations) {
    sum_rate += a.realized_rate;
    m.cost_incurred += a.cost;
    m.aggregate_power += a.power;
  }
  m.downloaded_data = sum_rate * slot_duration;
  double mean_rate = sum_rate / m.slots;
  double mean_cost = m.cost_incurred / m.slots;
  // utility of the averaged rate, matching the objective the solver optimizes;
  // a policy whose average delivered rate is nonpositive gets NaN, not a score
  m.avg_utility_minus_penalty =
      mean_rate > 0 ? std::log(mean_rate) - mean_cost : std::numeric_limits<double>::quiet_NaN();
  m.utility_minus_penalty_total = m.avg_utility_minus_penalty * m.slots;
  return m;
}

ReplayProblem::ReplayProblem(std::vector<NetworkState> states, D2DParams params)
    : states_(std::move(states)), params_(std::move(params)) {
  params_.validate();
  if (states_.empty()) throw ConfigError("replay: empty state list");
  for (const NetworkState& st : states_) st.check(params_);
}

SlotRecord ReplayProblem::sample_slot(std::span<const double> lambda, int64_t t, Rng& rng) {
  (void)rng;  // the channel is already fixed
  if (t < 0 || t >= (int64_t)states_.size()) {
    throw ConfigError("replay: slot index ran past the state list");
  }
  const NetworkState& state = states_[(size_t)t];
  Allocation a = slot_allocation(lambda[0], state, params_);
  SlotRecord rec;
  rec.subgrad.value = {a.realized_rate - a.rate_target};
  rec.slot_primal = std::log(a.rate_target) - a.cost;
  rec.winner = a.winner;
  rec.power = a.power;
  rec.cost = a.cost;
  rec.rate_target = a.rate_target;
  rec.realized_rate = a.realized_rate;
  return rec;
}

}  // namespace sdsd
