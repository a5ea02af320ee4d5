#include <cmath>
#include <vector>

#include "doctest.h"
#include "sdsd/baselines.hpp"
#include "sdsd/solver.hpp"

using namespace sdsd;

namespace {

NetworkState make_state(std::vector<int> ids, std::vector<double> costs,
                        std::vector<double> gains) {
  NetworkState s;
  s.active = std::move(ids);
  s.costs = std::move(costs);
  s.gains = std::move(gains);
  return s;
}

}  // namespace

TEST_CASE("random winner is uniform over the active set") {
  NetworkState s = make_state({2, 5, 9}, {2, 5, 9}, {1.0, 1.0, 1.0});
  Rng a(7), b(7);
  for (int i = 0; i < 20; i++) CHECK(random_winner(s, a) == random_winner(s, b));

  Rng rng(13);
  int c2 = 0, c5 = 0, c9 = 0;
  for (int i = 0; i < 3000; i++) {
    int w = random_winner(s, rng);
    if (w == 2) c2++;
    else if (w == 5) c5++;
    else if (w == 9) c9++;
    else FAIL("winner outside the active set");
  }
  CHECK(c2 > 850);
  CHECK(c5 > 850);
  CHECK(c9 > 850);
  CHECK_THROWS_AS(random_winner(NetworkState{}, rng), ConfigError);
}

TEST_CASE("opportunistic winner is the cheapest cache") {
  CHECK(opportunistic_winner(make_state({1, 4, 6}, {4.0, 2.0, 7.0}, {1, 1, 1})) == 4);
  // cost tie keeps the smaller id
  CHECK(opportunistic_winner(make_state({1, 5, 9}, {3.0, 2.0, 2.0}, {1, 1, 1})) == 5);
  CHECK_THROWS_AS(opportunistic_winner(NetworkState{}), ConfigError);
}

TEST_CASE("budget allocation spends exactly the budget") {
  D2DParams p;
  NetworkState s = make_state({4, 8}, {4.0, 8.0}, {10.0, 20.0});
  Allocation a = budget_allocation(4, s, 10.0, p);
  CHECK(a.winner == 4);
  CHECK(a.cost == 10.0);
  CHECK(a.power == 2.5);
  CHECK(a.realized_rate == doctest::Approx(std::log(2.5 * 10.0) + 1.0).epsilon(1e-14));
  CHECK(a.rate_target == a.realized_rate);  // baselines take what the channel gives

  CHECK_THROWS_AS(budget_allocation(4, s, 0.5, p), ConfigError);
  CHECK_THROWS_AS(budget_allocation(4, s, 26.0, p), ConfigError);
  CHECK_THROWS_AS(budget_allocation(5, s, 10.0, p), ConfigError);  // not active
}

TEST_CASE("matched power scaling solves for the constant budget") {
  D2DParams p;
  std::vector<NetworkState> states = {make_state({1}, {1.0}, {2.0}),
                                      make_state({2}, {2.0}, {2.0})};
  std::vector<int> winners = {1, 2};

  MatchReport rep = matched_power_scaling(3.0, winners, states, p);
  CHECK(rep.budget == doctest::Approx(2.0).epsilon(1e-14));  // 3 / (1 + 1/2)
  CHECK(rep.achieved_power == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(rep.matched);
  CHECK_FALSE(rep.clamped);
  CHECK(rep.scale == doctest::Approx(2.0 / 25.0).epsilon(1e-14));

  MatchReport high = matched_power_scaling(100.0, winners, states, p);
  CHECK(high.budget == 25.0);
  CHECK(high.clamped);
  CHECK_FALSE(high.matched);
  CHECK(high.achieved_power == doctest::Approx(37.5).epsilon(1e-12));

  MatchReport low = matched_power_scaling(0.3, winners, states, p);
  CHECK(low.budget == 1.0);
  CHECK(low.clamped);
  CHECK(low.achieved_power == doctest::Approx(1.5).epsilon(1e-12));

  CHECK_THROWS_AS(matched_power_scaling(-1.0, winners, states, p), ConfigError);
  std::vector<int> short_list = {1};
  CHECK_THROWS_AS(matched_power_scaling(3.0, short_list, states, p), ConfigError);
}

TEST_CASE("policy metrics arithmetic") {
  Allocation a;
  a.realized_rate = 2.0;
  a.cost = 1.0;
  a.power = 0.5;
  Allocation b;
  b.realized_rate = 4.0;
  b.cost = 3.0;
  b.power = 1.5;
  PolicyMetrics m = policy_metrics({a, b}, 2.0);
  CHECK(m.slots == 2);
  CHECK(m.downloaded_data == doctest::Approx(12.0).epsilon(1e-15));
  CHECK(m.cost_incurred == 4.0);
  CHECK(m.aggregate_power == 2.0);
  CHECK(m.avg_utility_minus_penalty == doctest::Approx(std::log(3.0) - 2.0).epsilon(1e-14));
  CHECK(m.utility_minus_penalty_total ==
        doctest::Approx(2.0 * (std::log(3.0) - 2.0)).epsilon(1e-14));

  Allocation bad;
  bad.realized_rate = -1.0;
  bad.cost = 1.0;
  PolicyMetrics nan_m = policy_metrics({bad}, 1.0);
  CHECK(std::isnan(nan_m.avg_utility_minus_penalty));

  CHECK_THROWS_AS(policy_metrics({}, 1.0), ConfigError);
  CHECK_THROWS_AS(policy_metrics({a}, 0.0), ConfigError);
}

TEST_CASE("replay problem pins the channel across policies") {
  D2DParams p;
  Rng rng(3);
  std::vector<NetworkState> states;
  for (int i = 0; i < 40; i++) states.push_back(sample_state(p, rng));
  ReplayProblem replay(states, p);
  CHECK(replay.slots() == 40);
  CHECK_FALSE(replay.has_exact_mean());

  // the rng argument is dead weight: different seeds, identical slots
  Rng r1(1), r2(999);
  std::vector<double> lam = {0.4};
  SlotRecord s1 = replay.sample_slot(lam, 7, r1);
  SlotRecord s2 = replay.sample_slot(lam, 7, r2);
  CHECK(s1.subgrad.value[0] == s2.subgrad.value[0]);
  CHECK(s1.winner == s2.winner);
  CHECK(s1.cost == s2.cost);

  // and the slot reproduces the direct allocation
  Allocation a = slot_allocation(0.4, states[7], p);
  CHECK(s1.winner == a.winner);
  CHECK(s1.realized_rate == a.realized_rate);
  CHECK(s1.rate_target == a.rate_target);
  CHECK(s1.subgrad.value[0] == a.realized_rate - a.rate_target);

  CHECK_THROWS_AS(replay.sample_slot(lam, 40, r1), ConfigError);

  // a full solver pass over the replay stays inside the state list
  SolverConfig cfg;
  cfg.step_size = 0.1;
  cfg.horizon = 40;
  cfg.seed = 0;
  cfg.initial_dual = DualVector{{0.0}, 50.0};
  Trace tr = run_solver(replay, cfg);
  CHECK(tr.size() == 40);
  cfg.horizon = 41;
  CHECK_THROWS_AS(run_solver(replay, cfg), std::runtime_error);

  CHECK_THROWS_AS(ReplayProblem({}, p), ConfigError);
}
