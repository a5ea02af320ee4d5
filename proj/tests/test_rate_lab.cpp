#include <cmath>
#include <vector>

#include "doctest.h"
#include "sdsd/discrete.hpp"
#include "sdsd/oracle.hpp"
#include "sdsd/rate_lab.hpp"

using namespace sdsd;

namespace {

SlotRecord slot(double lambda, double f, double mean, double g, double primal, double rate,
                double cost) {
  SlotRecord rec;
  rec.lambda = {lambda};
  rec.subgrad.value = {f};
  rec.subgrad.mean_value = {{mean}};
  rec.slot_dual = g;
  rec.slot_primal = primal;
  rec.rate_target = rate;
  rec.cost = cost;
  return rec;
}

Anchors plain_anchors() {
  Anchors a;
  a.lambda_star = {3.0};
  a.D = 1.0;
  a.P_hat = 1.0;
  a.G = 2.0;
  return a;
}

}  // namespace

TEST_CASE("bound arithmetic") {
  CHECK(dual_gap_bound(1.0, 4.0, 2, 0.1, 3.0, 0.25) == doctest::Approx(2.7).epsilon(1e-15));
  CHECK(primal_gap_bound(1.0, 4.0, 2, 0.1, 3.0, 0.25) == doctest::Approx(-0.7).epsilon(1e-15));
  CHECK_THROWS_AS(dual_gap_bound(1.0, 4.0, 0, 0.1, 3.0, 0.25), std::invalid_argument);
  CHECK_THROWS_AS(primal_gap_bound(1.0, 4.0, 0, 0.1, 3.0, 0.25), std::invalid_argument);
}

TEST_CASE("epoch accumulator against a hand-computed trace") {
  EpochAccumulator acc(0.5, DualVector{{2.0}, 50.0}, plain_anchors());
  // B0 = (2-3)^2 = 1, R0 = 4
  acc.observe(slot(2.0, 5.0, 4.0, 7.0, 0.3, 2.0, 1.0));
  CHECK(acc.reports().empty());  // epoch 1 completes at t = 2 for eps = 1/2
  acc.observe(slot(1.5, 2.0, 3.0, 3.0, 0.5, 4.0, 2.0));
  REQUIRE(acc.reports().size() == 1);

  const EpochReport& r = acc.reports()[0];
  CHECK(r.n == 1);
  CHECK(r.t == 2);
  CHECK(r.epsilon == 0.5);
  // noises are +1 and -1; lambda - lambda* are -1 and -1.5
  CHECK(r.Ct == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(r.Ct_prime == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(r.avg_dual == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(r.min_dual == 3.0);
  CHECK(r.avg_primal == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(r.primal_at_avg == doctest::Approx(std::log(3.0) - 1.5).epsilon(1e-15));
  CHECK(r.B0_over_2n == 0.5);
  CHECK(r.R0_over_2n == 2.0);
  CHECK(r.eps_G2_over_2 == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.bound1 == doctest::Approx(1.0 + 0.5 + 1.0 + 0.25).epsilon(1e-14));
  CHECK(r.bound2 == doctest::Approx(1.0 - 2.0 - 1.0 - 0.25).epsilon(1e-14));
  CHECK(acc.slots() == 2);

  // off-boundary snapshot keeps the epoch count, averages move on
  acc.observe(slot(1.0, 3.0, 3.0, 4.0, 0.1, 1.0, 1.0));
  EpochReport s = acc.snapshot();
  CHECK(s.n == 1);
  CHECK(s.t == 3);
  CHECK(s.avg_dual == doctest::Approx(14.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("accumulator falls back to anchor evaluators") {
  Anchors a = plain_anchors();
  a.dual_eval = [](std::span<const double> lam) { return 7.0 - lam[0]; };
  a.mean_eval = [](std::span<const double> lam) { return std::vector<double>{lam[0]}; };
  EpochAccumulator acc(0.5, DualVector{{2.0}, 50.0}, a);

  SlotRecord rec;  // no slot_dual, no mean_value
  rec.lambda = {2.0};
  rec.subgrad.value = {3.0};
  rec.slot_primal = 0.0;
  rec.rate_target = 1.0;
  acc.observe(rec);
  acc.observe(rec);
  const EpochReport& r = acc.reports().at(0);
  CHECK(r.avg_dual == 5.0);                              // dual_eval(2) = 5
  CHECK(r.Ct == doctest::Approx(1.0).epsilon(1e-15));    // noise 1 times (2-3)
  CHECK(r.Ct_prime == doctest::Approx(2.0).epsilon(1e-15));

  EpochAccumulator bare(0.5, DualVector{{2.0}, 50.0}, plain_anchors());
  CHECK_THROWS_AS(bare.observe(rec), std::runtime_error);
  CHECK_THROWS_AS(bare.snapshot(), std::runtime_error);
}

TEST_CASE("report rows follow the pinned header") {
  auto header = epoch_report_header();
  REQUIRE(header.size() == 10);
  CHECK(header[0] == "n");
  CHECK(header[3] == "C_t");
  CHECK(header[9] == "bound2");
  EpochReport r;
  r.n = 4;
  r.epsilon = 0.1;
  r.t = 40;
  r.Ct = 0.5;
  CHECK(epoch_report_row(r).size() == header.size());
  CHECK(epoch_report_row(r)[0] == "4");
  CHECK(epoch_report_row(r)[3] == "0.5");
}

TEST_CASE("noise terms over stored traces") {
  Trace tr;
  tr.append(slot(2.0, 5.0, 4.0, 7.0, 0.3, 2.0, 1.0));
  tr.append(slot(1.5, 2.0, 3.0, 3.0, 0.5, 4.0, 2.0));
  std::vector<double> star = {3.0};
  CHECK(noise_gap_term(tr, star, nullptr) == doctest::Approx(0.25).epsilon(1e-15));
  // anchored at the origin instead of lambda*
  CHECK(noise_primal_term(tr, nullptr) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("error averages over an index set") {
  std::vector<std::vector<double>> e = {{1.0}, {2.0}, {3.0}, {4.0}};
  std::vector<std::vector<double>> e_alt = {{0.0}, {1.0}, {1.0}, {2.0}};
  ErrorAverages got = error_averages(e, e_alt, {0, 2}, 4, 0.5);
  CHECK(got.L1 == doctest::Approx(1.0).epsilon(1e-15));        // (1+3)/4
  CHECK(got.L2_proxy == doctest::Approx(1.5).epsilon(1e-15));  // ((1+2)/4)/0.5
  CHECK_THROWS_AS(error_averages(e, e_alt, {5}, 4, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(error_averages(e, e_alt, {0}, 0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(error_averages(e, e_alt, {0}, 4, 0.0), std::invalid_argument);
}

TEST_CASE("decay fit recovers a clean power law") {
  auto cell = [](double scale, double value, int reps) {
    DecayCell c;
    c.scale = scale;
    c.rep_values.assign(reps, value);
    return c;
  };
  std::vector<DecayCell> cells = {cell(1.0, 1.0, 5), cell(4.0, 0.5, 5), cell(16.0, 0.25, 5)};
  DecayFit fit = decay_fit(cells);
  CHECK(fit.exponent == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(fit.ci_lo == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(fit.ci_hi == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(fit.cells_used == 3);
  CHECK_FALSE(fit.degenerate);

  cells.push_back(cell(64.0, -1.0, 5));  // negative medians cannot enter the log fit
  DecayFit fit2 = decay_fit(cells);
  CHECK(fit2.cells_used == 3);
  CHECK(fit2.cells_excluded == 1);
  CHECK(fit2.exponent == doctest::Approx(-0.5).epsilon(1e-12));

  std::vector<DecayCell> thin = {cell(1.0, 1.0, 3), cell(4.0, -1.0, 3), cell(16.0, -1.0, 3)};
  CHECK(decay_fit(thin).degenerate);
  CHECK_THROWS_AS(decay_fit({cell(1.0, 1.0, 3), cell(2.0, 1.0, 3)}), std::invalid_argument);
}

TEST_CASE("tail frequency uses a strict threshold") {
  double nu = 100.0, zeta = 0.1;
  double thr = std::pow(nu, zeta - 0.5);
  TailFrequency tf = tail_frequency({thr, thr + 0.01, 0.0}, nu, zeta);
  CHECK(tf.threshold == thr);
  CHECK(tf.freq == doctest::Approx(1.0 / 3.0).epsilon(1e-15));  // equality does not count
  CHECK(tf.wilson_lo > 0.0);
  CHECK(tf.wilson_lo < tf.freq);
  CHECK(tf.freq < tf.wilson_hi);
  CHECK(tf.wilson_hi < 1.0);

  TailFrequency none = tail_frequency({0.0, 0.0}, nu, zeta);
  CHECK(none.freq == 0.0);
  CHECK(none.wilson_hi > 0.0);

  CHECK_THROWS_AS(tail_frequency({1.0}, nu, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(tail_frequency({1.0}, 0.0, zeta), std::invalid_argument);
  CHECK_THROWS_AS(tail_frequency({}, nu, zeta), std::invalid_argument);
}

TEST_CASE("surrogate closed forms on the dual axis") {
  D2DParams p;
  // lambda = 1: r = 1, q = 1, so fbar = 0 + mo - 1 and g = 0 - 1 + mo - 1
  CHECK(surrogate_mean_subgradient(1.0, p, 2.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(surrogate_dual_value(1.0, p, 2.0) == doctest::Approx(0.0).epsilon(1e-15));

  // fbar is the derivative of g where both clamps are inactive
  for (double lam : {1.5, 2.7, 8.0}) {
    double h = 1e-6;
    double num = (surrogate_dual_value(lam + h, p, 2.0) - surrogate_dual_value(lam - h, p, 2.0)) /
                 (2 * h);
    CHECK(num == doctest::Approx(surrogate_mean_subgradient(lam, p, 2.0)).epsilon(1e-6));
  }
}

TEST_CASE("sampled dual values agree with the exact ones") {
  D2DParams p;
  DiscreteDistribution d = build_surrogate(p, 100, 11);
  SurrogateProblem prob(d, p);
  for (double lam : {0.2, 1.0, 5.0}) {
    double exact = *prob.exact_dual(std::vector<double>{lam});
    McEstimate mc = mc_dual_value(prob, std::vector<double>{lam}, 20000, 99);
    CHECK(mc.se > 0.0);
    CHECK(std::fabs(mc.value - exact) < 5 * mc.se + 1e-9);
  }
}

TEST_CASE("solver trajectory on the continuous problem is frozen") {
  // step 0.1, seed 42, ten slots from lambda = 0; regenerate with the solver
  // if the sampling pipeline deliberately changes
  const struct {
    double lambda, f;
    int winner;
    double cost, realized;
  } expect[10] = {
      {0, -5.5851921169275602, 1, 1, 4.4148078830724398},
      {0.55851921169275609, 2.5179357371477011, 1, 1, 4.3083844434136989},
      {0.30672563797798597, -0.44608381575822165, 6, 1, 2.8141588121233481},
      {0.35133401955380816, 0.66111994682431297, 2, 1, 3.5074141977197808},
      {0.28522202487137688, 1.2604432827500989, 1, 1, 4.7664838855084515},
      {0.15917769659636699, -2.2665286207154907, 3, 1, 4.0157585425152886},
      {0.38583055866791605, 0.70980704245073234, 3, 1, 3.3016183376796802},
      {0.3148498544228428, -0.58154990411329344, 10, 1, 2.5945671750358104},
      {0.37300484483417218, 1.3423394389279566, 1, 1, 4.0232697642286182},
      {0.23877090094137651, -0.25553320087159159, 3, 1, 3.9325818334873142},
  };

  D2DProblem problem(D2DParams{});
  SolverConfig cfg;
  cfg.step_size = 0.1;
  cfg.horizon = 10;
  cfg.seed = 42;
  cfg.initial_dual = DualVector{{0.0}, 50.0};
  Trace tr = run_solver(problem, cfg);
  REQUIRE(tr.size() == 10);
  size_t i = 0;
  tr.for_each([&](const SlotRecord& rec) {
    CHECK(rec.lambda[0] == expect[i].lambda);
    CHECK(rec.subgrad.value[0] == expect[i].f);
    CHECK(rec.winner == expect[i].winner);
    CHECK(rec.cost == expect[i].cost);
    CHECK(rec.realized_rate == expect[i].realized);
    i++;
  });
}
