#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sdsd/d2d.hpp"
#include "sdsd/solver.hpp"

namespace sdsd {

/* Everything the convergence statements mention, aggregated up to slot t.
 * Serialized column order: n, epsilon, t, C_t, C_t_prime, avg_dual, min_dual,
 * avg_primal, bound1, bound2. */
struct EpochReport {
  int64_t n = 0;
  double epsilon = 0;
  int64_t t = 0;
  double Ct = 0;          // |(1/t) sum <f - fbar, lambda - lambda*>|
  double Ct_prime = 0;    // |(1/t) sum <f - fbar, lambda>|
  double avg_dual = 0;    // (1/t) sum g(lambda_tau)
  double min_dual = 0;
  double avg_primal = 0;  // (1/t) sum of per-slot objectives
  double primal_at_avg = 0;  // objective at the averaged allocation
  double B0_over_2n = 0, R0_over_2n = 0, eps_G2_over_2 = 0;
  double bound1 = 0;  // D + B0/2n + eps G^2/2 + C_t      (avg_dual stays below)
  double bound2 = 0;  // P - R0/2n - eps G^2/2 - C'_t     (primal_at_avg stays above)
};

std::vector<std::string> epoch_report_header();
std::vector<std::string> epoch_report_row(const EpochReport& r);

/* Reference quantities the instrumentation measures against, supplied by the
 * oracle (exact on finite support, estimated otherwise). */
struct Anchors {
  std::vector<double> lambda_star;
  double D = 0;      // dual optimum g(lambda*)
  double P_hat = 0;  // primal reference, equal to D under zero gap
  double G = 0;
  // fallbacks for traces that lack per-slot values
  std::function<double(std::span<const double>)> dual_eval;
  std::function<std::vector<double>(std::span<const double>)> mean_eval;
};

/* Streaming aggregator: feed slot records in order, epoch-boundary reports
 * accumulate as floor(eps*t) ticks up. All sums are plain left-to-right doubles so
 * identical traces reduce identically. */
class EpochAccumulator {
 public:
  EpochAccumulator(double epsilon, const DualVector& lambda0, Anchors anchors);
  void observe(const SlotRecord& rec);
  const std::vector<EpochReport>& reports() const { return reports_; }
  EpochReport snapshot() const;  // report at the current slot count, any t >= 1
  int64_t slots() const { return t_; }

 private:
  double eps_;
  Anchors anchors_;
  double B0_ = 0, R0_ = 0;
  int64_t t_ = 0;
  int64_t last_epoch_ = 0;
  double sum_g_ = 0, min_g_ = 0, sum_primal_ = 0;
  double sum_ct_ = 0, sum_ctp_ = 0;
  double sum_rate_ = 0, sum_cost_ = 0;
  std::vector<EpochReport> reports_;
};

// the two inequality right-hand sides
double dual_gap_bound(double D, double B0, int64_t n, double epsilon, double G, double Ct);
double primal_gap_bound(double P, double R0, int64_t n, double epsilon, double G, double Ct_prime);

// trace-level noise terms, for post-hoc analysis of stored traces
double noise_gap_term(const Trace& trace, std::span<const double> lambda_star,
                      const std::function<std::vector<double>(std::span<const double>)>& mean_eval);
double noise_primal_term(const Trace& trace,
                         const std::function<std::vector<double>(std::span<const double>)>& mean_eval);

/* Averages of the subgradient noise at a fixed dual point: the plain average
 * over an index set (scaled by T), and the differenced average against a
 * second dual point divided by their distance. */
struct ErrorAverages {
  double L1 = 0;
  double L2_proxy = 0;
};
ErrorAverages error_averages(const std::vector<std::vector<double>>& e_at_lambda,
                             const std::vector<std::vector<double>>& e_at_lambda_alt,
                             const std::vector<int64_t>& index_set, int64_t T,
                             double lambda_distance);

/* Log-log least-squares decay rate of the replication median against the scale
 * variable, with a replication-bootstrap confidence interval. */
struct DecayCell {
  double scale = 0;                // n or epsilon
  std::vector<double> rep_values;  // one statistic per replication
};
struct DecayFit {
  double exponent = 0;
  double ci_lo = 0, ci_hi = 0;
  int cells_used = 0;
  int cells_excluded = 0;  // non-positive medians cannot enter the log fit
  bool degenerate = false; // fewer than 2 usable cells
};
DecayFit decay_fit(const std::vector<DecayCell>& cells, int bootstrap = 1000,
                   uint64_t seed = 1234);

struct TailFrequency {
  double threshold = 0;  // nu^(zeta - 1/2)
  double freq = 0;       // fraction of replications strictly above it
  double wilson_lo = 0, wilson_hi = 0;
};
TailFrequency tail_frequency(const std::vector<double>& values, double nu, double zeta);

/* Closed forms on the dual axis shared by the surrogate problem and the
 * instrumentation: with q(l) the clamped transmit budget in cost units and
 * r(l) the clamped rate request,
 *   fbar(l) = W log(q(l)/alpha) + mean_offset - r(l)
 *   g(l)    = ln r(l) - l r(l) + l (W log(q(l)/alpha) + mean_offset) - q(l).
 * Exact whenever mean_offset is the exact expectation of the winner offset. */
double surrogate_mean_subgradient(double lambda, const D2DParams& params, double mean_offset);
double surrogate_dual_value(double lambda, const D2DParams& params, double mean_offset);

struct McEstimate {
  double value = 0;
  double se = 0;
};
// sample-mean dual value for problems without closed forms: averages the
// realized slot optimum slot_primal + <lambda, f> over fresh draws
McEstimate mc_dual_value(StochasticProblem& problem, std::span<const double> lambda,
                         int64_t n_samples, uint64_t seed);

}  // namespace sdsd
