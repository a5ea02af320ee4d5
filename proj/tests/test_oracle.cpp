#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "sdsd/oracle.hpp"

using namespace sdsd;

namespace {

// single cache, unit cost, unit gain, no fading offset: everything closed form
D2DParams one_atom_params() {
  D2DParams p;
  p.num_ues = 1;
  p.active_min = 1;
  p.active_max = 1;
  p.fading = Fading::Slow;
  return p;
}

DiscreteDistribution one_atom_dist() {
  DiscreteDistribution d;
  NetworkState s;
  s.active = {1};
  s.costs = {1.0};
  s.gains = {1.0};
  d.atoms = {s};
  d.probs = {1.0};
  return d;
}

// fixed point of ln x = 1/x; the one-atom dual minimum sits at it
constexpr double kLogFix = 1.7632228343518967;

}  // namespace

TEST_CASE("grid tables span the boxes endpoint to endpoint") {
  D2DParams p;
  GridTables t = make_grid_tables(p, 5000);
  CHECK(t.resolution == 5000);
  REQUIRE(t.r_grid.size() == 5000);
  REQUIRE(t.q_grid.size() == 5000);
  CHECK(t.r_grid.front() == 0.2);
  CHECK(t.r_grid.back() == 10.0);
  CHECK(t.q_grid.front() == 1.0);
  CHECK(t.q_grid.back() == 25.0);
  CHECK(t.ln_r[100] == std::log(t.r_grid[100]));
  CHECK(t.log_q[100] == p.log_of(t.q_grid[100]));
  CHECK_THROWS_AS(make_grid_tables(p, 999), ConfigError);
}

TEST_CASE("grid slack follows the curvature formula and shrinks") {
  D2DParams p;
  for (double lam : {0.1, 1.0, 30.0}) {
    double hr = (10.0 - 0.2) / (20000 - 1);
    double hq = (25.0 - 1.0) / (20000 - 1);
    double expect = hr * hr / (8 * 0.2 * 0.2) + hq * hq * lam / 8.0;
    CHECK(grid_slack(lam, p, 20000) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(grid_slack(lam, p, 40000) < grid_slack(lam, p, 20000));
  }
}

TEST_CASE("one-atom dual has the closed-form minimum") {
  D2DParams p = one_atom_params();
  DiscreteDistribution d = one_atom_dist();

  // at lambda = 1: r = 1, q = 1, so g = (0 - 1) + (0 - 1) = -2 exactly
  CHECK(exact_dual_value(1.0, d, p) == -2.0);

  DualMinimum dm = grid_dual_minimize(d, p, 10.0, 4000);
  CHECK(dm.lambda_star == doctest::Approx(kLogFix).epsilon(1e-7));
  double D_true = -(kLogFix + 1.0 / kLogFix);
  CHECK(dm.D == doctest::Approx(D_true).epsilon(1e-12));
  // minimum certified against neighbors
  CHECK(exact_dual_value(dm.lambda_star - 1e-4, d, p) > dm.D);
  CHECK(exact_dual_value(dm.lambda_star + 1e-4, d, p) > dm.D);
}

TEST_CASE("closed-form slot objective matches the exhaustive grid") {
  D2DParams p;
  GridTables tables = make_grid_tables(p, 20000);
  Rng rng(2024);
  for (int i = 0; i < 120; i++) {
    NetworkState s = sample_state(p, rng);
    double lam = std::exp(rng.uniform(std::log(0.01), std::log(100.0)));
    Allocation a = slot_allocation(lam, s, p);
    double closed = std::log(a.rate_target) - lam * a.rate_target + lam * a.realized_rate - a.cost;
    GridArgmax g = grid_primal_argmax(lam, s, p, tables);
    CHECK(g.objective <= closed + 1e-9);  // the grid cannot beat the true max
    CHECK(closed - g.objective <= grid_slack(lam, p, tables.resolution));
  }
}

TEST_CASE("piecewise winner route agrees with the selection rule") {
  D2DParams p;
  Rng rng(555);
  int checked = 0;
  for (int i = 0; i < 400; i++) {
    NetworkState s = sample_state(p, rng);
    double lam = std::exp(rng.uniform(std::log(0.01), std::log(100.0)));
    PiecewiseArgmax pw = piecewise_winner(lam, s, p);
    if (pw.best - pw.second <= 1e-9) continue;  // near-tie, either id is right
    CHECK(pw.winner == select_user(s, p));
    checked++;
  }
  CHECK(checked > 300);
}

TEST_CASE("piecewise power term has the advertised three branches") {
  D2DParams p;
  double c = 3.0, gamma = 12.0, psi = 1.0;
  // below the lower clamp the budget pins to cost_min
  CHECK(piecewise_power_term(0.5, c, gamma, psi, p) ==
        doctest::Approx(0.5 * (std::log(1.0 * gamma / c) + psi) - 1.0).epsilon(1e-12));
  // above the upper clamp it pins to cost_max
  CHECK(piecewise_power_term(40.0, c, gamma, psi, p) ==
        doctest::Approx(40.0 * (std::log(25.0 * gamma / c) + psi) - 25.0).epsilon(1e-12));
  // interior: q = lambda
  double lam = 7.0;
  CHECK(piecewise_power_term(lam, c, gamma, psi, p) ==
        doctest::Approx(lam * (std::log(lam * gamma / c) + psi) - lam).epsilon(1e-12));
}

TEST_CASE("two dual-value routes and two mean-subgradient routes agree") {
  D2DParams p;
  DiscreteDistribution d = build_surrogate(p, 200, 77);
  SurrogateProblem prob(d, p);
  for (double lam : {0.01, 0.11, 0.9, 1.0, 2.7, 24.9, 25.0, 26.0, 80.0}) {
    double via_atoms = exact_dual_value(lam, d, p);
    double via_offset = surrogate_dual_value(lam, p, prob.mean_offset());
    CHECK(via_atoms == doctest::Approx(via_offset).epsilon(1e-12));
    CHECK(*prob.exact_dual(std::vector<double>{lam}) == via_offset);

    double s_atoms = exact_expected_subgradient(lam, d, p);
    double s_offset = prob.exact_mean_subgradient(lam);
    CHECK(s_atoms == doctest::Approx(s_offset).epsilon(1e-12));
  }
}

TEST_CASE("reference computation round trips through disk") {
  D2DParams p;
  p.num_ues = 6;
  p.active_min = 2;
  p.active_max = 6;
  ReferenceOptions opt;
  opt.surrogate_atoms = 60;
  opt.surrogate_seed = 3;
  opt.dual_grid_resolution = 2000;
  OracleReference ref = compute_reference(p, opt);
  CHECK(ref.lambda_star > 0);
  CHECK(ref.lambda_max > ref.lambda_star);
  CHECK(ref.G == subgradient_bound(p));
  CHECK(std::isfinite(ref.best_primal));
  CHECK(std::fabs(ref.duality_gap) < 0.05);
  CHECK(ref.dist.size() == 60);

  const char* path = "test_oracle_ref.kv";
  std::remove(path);
  save_reference(ref, path);
  CHECK(!ref.content_hash.empty());
  OracleReference back = load_reference(path);
  CHECK(back.lambda_star == ref.lambda_star);
  CHECK(back.D == ref.D);
  CHECK(back.G == ref.G);
  CHECK(back.chi == ref.chi);
  CHECK(back.lambda_max == ref.lambda_max);
  CHECK(back.mean_offset == ref.mean_offset);
  CHECK(back.content_hash == ref.content_hash);
  CHECK(back.dist.size() == ref.dist.size());
  CHECK(back.dist.probs == ref.dist.probs);
  CHECK(d2d_params_to_kv(back.params) == d2d_params_to_kv(ref.params));

  // anchors carry the loaded numbers and a working dual evaluator
  Anchors anchors = anchors_from_reference(back);
  CHECK(anchors.lambda_star[0] == back.lambda_star);
  CHECK(anchors.D == back.D);
  CHECK(anchors.P_hat == back.D);
  CHECK(anchors.dual_eval(std::vector<double>{back.lambda_star}) ==
        doctest::Approx(back.D).epsilon(1e-9));
  std::remove(path);
}

TEST_CASE("tampered or missing reference files are refused") {
  D2DParams p;
  p.num_ues = 4;
  p.active_min = 1;
  p.active_max = 4;
  ReferenceOptions opt;
  opt.surrogate_atoms = 20;
  opt.surrogate_seed = 5;
  opt.dual_grid_resolution = 2000;
  OracleReference ref = compute_reference(p, opt);
  const char* path = "test_oracle_tamper.kv";
  save_reference(ref, path);

  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  size_t pos = text.find("lambda_star = ");
  REQUIRE(pos != std::string::npos);
  text[pos + 14] = text[pos + 14] == '9' ? '8' : '9';
  std::ofstream(path) << text;
  CHECK_THROWS_AS(load_reference(path), OracleError);

  CHECK_THROWS_AS(load_reference("no_such_reference.kv"), OracleError);
  std::remove(path);
}

TEST_CASE("projected descent reference recovers a known 2d minimum") {
  // g(x) = |x - a|^2 / 2 over [0, 10]^2, subgradient x - a
  std::vector<double> a = {1.2, 3.4};
  auto subgrad = [&](std::span<const double> x) {
    return std::vector<double>{x[0] - a[0], x[1] - a[1]};
  };
  std::vector<double> x = reference_minimize(subgrad, 2, 10.0, 200000, 1.0);
  REQUIRE(x.size() == 2);
  CHECK(x[0] == doctest::Approx(1.2).epsilon(1e-3));
  CHECK(x[1] == doctest::Approx(3.4).epsilon(1e-3));

  // constrained: minimum of |x + 1|^2 over the box sits at the corner 0
  auto sub2 = [&](std::span<const double> x2) { return std::vector<double>{x2[0] + 1.0}; };
  std::vector<double> y = reference_minimize(sub2, 1, 10.0, 50000, 1.0);
  CHECK(y[0] == doctest::Approx(0.0).epsilon(1e-6));
}
