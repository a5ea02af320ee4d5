#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "sdsd/d2d.hpp"

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

TEST_CASE("transmit budget clamps onto the cost box") {
  D2DParams p;
  CHECK(p.q_of(5.0) == 5.0);
  CHECK(p.q_of(0.1) == 1.0);
  CHECK(p.q_of(30.0) == 25.0);
  CHECK(p.log_unit() == 1.0);

  p.log_base = LogBase::Base2;
  CHECK(p.log_unit() == M_LN2);
  CHECK(p.q_of(5.0) == doctest::Approx(5.0 / M_LN2).epsilon(1e-15));
}

TEST_CASE("power candidate is the clamped stationary point") {
  D2DParams p;
  CHECK(power_candidate(5.0, 1.0, p) == 5.0);
  CHECK(power_candidate(0.1, 1.0, p) == 1.0);     // floor c*p >= cost_min
  CHECK(power_candidate(1000.0, 2.0, p) == 12.5); // ceiling c*p <= cost_max
  // budget in cost units never depends on who transmits
  CHECK(2.0 * power_candidate(5.0, 2.0, p) == doctest::Approx(p.q_of(5.0)).epsilon(1e-15));
  CHECK_THROWS_AS(power_candidate(1.0, 0.0, p), std::invalid_argument);
  CHECK_THROWS_AS(power_candidate(-1.0, 1.0, p), std::invalid_argument);
}

TEST_CASE("rate choice is the clamped inverse") {
  D2DParams p;
  CHECK(rate_choice(2.0, p) == 0.5);
  CHECK(rate_choice(0.0, p) == 10.0);
  CHECK(rate_choice(0.05, p) == 10.0);
  CHECK(rate_choice(100.0, p) == 0.2);
  CHECK_THROWS_AS(rate_choice(-0.5, p), std::invalid_argument);
}

TEST_CASE("winner selection per fading mode") {
  D2DParams slow;
  slow.fading = Fading::Slow;
  // gains over cost: 5 versus 6
  CHECK(select_user(make_state({2, 3}, {2, 3}, {10, 18}), slow) == 3);
  // exact tie goes to the smaller id
  CHECK(select_user(make_state({2, 3}, {2, 3}, {10, 15}), slow) == 2);

  // per-cache offsets can flip the slow-fading order: log(2) + 0 versus 0 + 2
  D2DParams fast;
  fast.psi.assign(25, 1.0);
  fast.psi[0] = 0.0;
  fast.psi[1] = 2.0;
  CHECK(select_user(make_state({1, 2}, {1, 2}, {2, 2}), fast) == 2);
  D2DParams slow2 = fast;
  slow2.fading = Fading::Slow;
  CHECK(select_user(make_state({1, 2}, {1, 2}, {2, 2}), slow2) == 1);

  CHECK_THROWS_AS(select_user(NetworkState{}, slow), std::invalid_argument);
}

TEST_CASE("slot allocation and subgradient on hand states") {
  D2DParams p;  // fast fading, natural log, default psi = 1
  NetworkState s = make_state({1}, {1}, {1.0});
  Allocation a = slot_allocation(1.0, s, p);
  CHECK(a.winner == 1);
  CHECK(a.power == 1.0);
  CHECK(a.cost == 1.0);
  CHECK(a.rate_target == 1.0);
  CHECK(a.realized_rate == 1.0);  // log(1) + psi
  CHECK(slot_subgradient(1.0, s, p).value[0] == 0.0);

  // gain e gives realized log(e) + 1 = 2, so f = +1; gain 1/e gives f = -1
  NetworkState up = make_state({1}, {1}, {std::exp(1.0)});
  NetworkState down = make_state({1}, {1}, {std::exp(-1.0)});
  CHECK(slot_subgradient(1.0, up, p).value[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(slot_subgradient(1.0, down, p).value[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK_FALSE(slot_subgradient(1.0, up, p).mean_value.has_value());
}

TEST_CASE("subgradient decomposes into budget part plus winner offset") {
  D2DParams p;
  NetworkState s = make_state({3, 7}, {3, 7}, {12.0, 40.0});
  double off = winner_offset(s, p);
  int w = select_user(s, p);
  size_t j = w == 3 ? 0 : 1;
  CHECK(off == doctest::Approx(std::log(s.gains[j] / s.costs[j]) + 1.0).epsilon(1e-14));
  for (double lam : {0.01, 0.3, 1.0, 4.0, 60.0}) {
    double f = slot_subgradient(lam, s, p).value[0];
    double decomposed = std::log(p.q_of(lam)) + off - rate_choice(lam, p);
    CHECK(f == doctest::Approx(decomposed).epsilon(1e-12));
  }
}

TEST_CASE("subgradient noise never depends on the dual point") {
  D2DParams p;
  Rng rng(404);
  for (int i = 0; i < 50; i++) {
    NetworkState s = sample_state(p, rng);
    double mo = 3.7;  // any reference level
    double e0 = subgradient_error(0.01, s, p, mo);
    CHECK(e0 == winner_offset(s, p) - mo);
    for (double lam : {0.1, 1.0, 10.0, 100.0}) {
      CHECK(subgradient_error(lam, s, p, mo) == e0);
    }
  }
  // two-atom law: deviations sit symmetrically around the mean
  D2DParams q;
  NetworkState a1 = make_state({1}, {1}, {2.0});
  NetworkState a2 = make_state({2}, {2}, {3.0});
  double o1 = winner_offset(a1, q), o2 = winner_offset(a2, q);
  double mo = 0.5 * (o1 + o2);
  CHECK(subgradient_error(1.0, a1, q, mo) ==
        doctest::Approx(0.5 * (o1 - o2)).epsilon(1e-15));
  CHECK(subgradient_error(1.0, a2, q, mo) ==
        doctest::Approx(-0.5 * (o1 - o2)).epsilon(1e-15));
}

TEST_CASE("worst-case subgradient magnitude per mode") {
  D2DParams p;  // natural, fast
  CHECK(subgradient_bound(p) == doctest::Approx(std::log(25.0 * 65.0) + 10.0 + 1.0).epsilon(1e-14));

  p.log_base = LogBase::Base2;
  p.fading = Fading::Slow;
  CHECK(subgradient_bound(p) == doctest::Approx(std::log2(25.0 * 65.0) + 10.0).epsilon(1e-14));

  p.fading = Fading::Fast;
  CHECK(subgradient_bound(p) == doctest::Approx(std::log2(25.0 * 65.0) + 11.0).epsilon(1e-14));

  // every realizable slot respects the bound
  D2DParams def;
  double G = subgradient_bound(def);
  Rng rng(8);
  for (int i = 0; i < 2000; i++) {
    NetworkState s = sample_state(def, rng);
    double lam = rng.uniform(0.0, 100.0);
    CHECK(std::fabs(slot_subgradient(lam, s, def).value[0]) <= G * (1 + 1e-12));
  }
}

TEST_CASE("strict feasibility margin") {
  D2DParams p;
  p.fading = Fading::Slow;
  NetworkState s = make_state({1, 2}, {1, 2}, {1.0, 8.0});
  // cost-ceiling rates log(25*1/1) and log(25*8/2)
  CHECK(slater_rate_at(s, p) == doctest::Approx(std::log(100.0)).epsilon(1e-14));

  SlaterReport rep = make_slater_report(p, std::log(25.0), 0.0);
  CHECK(rep.margin == doctest::Approx(std::log(25.0) - 0.2).epsilon(1e-14));
  CHECK(rep.feasible);
  CHECK(rep.rate_floor == 0.2);

  SlaterReport bad = make_slater_report(p, 0.1, 0.0);
  CHECK_FALSE(bad.feasible);

  SlaterReport mc = slater_check_mc(D2DParams{}, 20000, 3);
  CHECK(mc.feasible);
  CHECK(mc.margin > 2.0);
  CHECK(mc.margin_se > 0.0);
  CHECK(mc.margin_se < 0.1);
}

TEST_CASE("dual box rule takes the binding branch times headroom") {
  D2DParams p;
  SlaterReport rep;
  rep.margin = 2.0;
  rep.feasible = true;
  // ratio (3 - log 0.2)/2 is about 2.3, the floor 1/0.2 = 5 binds
  CHECK(lambda_max_rule(p, rep, 0.0, 3.0, 10.0) == doctest::Approx(50.0).epsilon(1e-12));
  rep.margin = 0.5;
  double ratio = (3.0 - std::log(0.2)) / 0.5;
  CHECK(lambda_max_rule(p, rep, 0.0, 3.0, 10.0) == doctest::Approx(10.0 * ratio).epsilon(1e-12));
  rep.margin = 0.0;
  CHECK_THROWS_AS(lambda_max_rule(p, rep, 0.0, 3.0, 10.0), std::runtime_error);
}

TEST_CASE("sampled states respect the configured support") {
  D2DParams p;
  Rng rng(21);
  for (int i = 0; i < 2000; i++) {
    NetworkState s = sample_state(p, rng);
    CHECK_NOTHROW(s.check(p));
    CHECK(s.size() >= 5);
    CHECK(s.size() <= 25);
    std::set<int> seen;
    for (size_t j = 0; j < s.active.size(); j++) {
      CHECK(seen.insert(s.active[j]).second);
      if (j > 0) CHECK(s.active[j] > s.active[j - 1]);
      CHECK(s.costs[j] == (double)s.active[j]);  // indexed cost model
      CHECK(s.gains[j] >= 0.1);
      CHECK(s.gains[j] <= 65.0);
    }
  }
  for (int m : {1, 5, 25}) CHECK(sample_state_sized(p, m, rng).size() == m);
  CHECK_THROWS_AS(sample_state_sized(p, 0, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_state_sized(p, 26, rng), std::invalid_argument);

  D2DParams u = p;
  u.cost_model = CostModel::Uniform;
  u.cost_support_min = 2.0;
  u.cost_support_max = 3.0;
  for (int i = 0; i < 100; i++) {
    NetworkState s = sample_state(u, rng);
    for (double c : s.costs) {
      CHECK(c >= 2.0);
      CHECK(c <= 3.0);
    }
  }
}

TEST_CASE("truncated rayleigh matches numeric integration") {
  // E[gamma | gamma in box] via Simpson on the untruncated density
  double sigma = 20.0, lo = 0.1, hi = 65.0;
  auto dens = [&](double g) { return g / (sigma * sigma) * std::exp(-g * g / (2 * sigma * sigma)); };
  int n = 20000;
  double h = (hi - lo) / n, num = 0, den = 0;
  for (int i = 0; i <= n; i++) {
    double g = lo + h * i;
    double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    num += w * g * dens(g);
    den += w * dens(g);
  }
  double expect = num / den;

  D2DParams p;
  Rng rng(17);
  double sum = 0;
  int64_t cnt = 0;
  for (int i = 0; i < 20000; i++) {
    NetworkState s = sample_state(p, rng);
    for (double g : s.gains) {
      sum += g;
      cnt++;
    }
  }
  double se_cap = 0.08;  // about 12/sqrt(3e5) plus slack
  CHECK(std::fabs(sum / cnt - expect) < 4 * se_cap);
}

TEST_CASE("hopeless rayleigh support trips the rejection cap") {
  D2DParams p;
  p.rayleigh_sigma = 1e-3;  // essentially no mass above gamma_min
  Rng rng(1);
  CHECK_THROWS_AS(sample_state_sized(p, 5, rng), ConfigError);
}

TEST_CASE("mean offset estimate is reproducible with standard errors") {
  D2DParams p;
  auto [m1, se1] = mean_offset_mc(p, 4000, 5);
  auto [m2, se2] = mean_offset_mc(p, 4000, 5);
  CHECK(m1 == m2);
  CHECK(se1 == se2);
  CHECK(se1 > 0);
  auto [m3, se3] = mean_offset_mc(p, 4000, 6);
  CHECK(m1 != m3);
  CHECK(std::fabs(m1 - m3) < 6 * (se1 + se3));
}

TEST_CASE("params serialize and parse back identically") {
  D2DParams p;
  std::string text = d2d_params_to_kv(p);
  KvFile kv = KvFile::parse_string(text);
  D2DParams back = d2d_params_from_kv(kv);
  CHECK(kv.unread_keys().empty());
  CHECK(d2d_params_to_kv(back) == text);

  D2DParams q;
  q.log_base = LogBase::Base2;
  q.fading = Fading::Slow;
  q.cost_model = CostModel::Uniform;
  q.cost_support_min = 0.5;
  q.cost_support_max = 7.0;
  q.rate_max = 12.0;
  q.active_min = 3;
  std::string text2 = d2d_params_to_kv(q);
  D2DParams back2 = d2d_params_from_kv(KvFile::parse_string(text2));
  CHECK(d2d_params_to_kv(back2) == text2);
  CHECK(back2.log_base == LogBase::Base2);
  CHECK(back2.fading == Fading::Slow);
  CHECK(back2.cost_model == CostModel::Uniform);
}

TEST_CASE("inconsistent params are rejected") {
  D2DParams p;
  p.cost_min = 30.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);

  D2DParams q;
  q.active_max = 30;
  CHECK_THROWS_AS(q.validate(), ConfigError);

  D2DParams r;
  r.psi = {1.0, 2.0};  // wrong length
  CHECK_THROWS_AS(r.validate(), ConfigError);

  D2DParams s;
  s.rate_min = 0.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}
