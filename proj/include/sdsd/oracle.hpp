#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "sdsd/d2d.hpp"
#include "sdsd/discrete.hpp"
#include "sdsd/rate_lab.hpp"

namespace sdsd {

struct OracleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/* Shared evaluation tables for the exhaustive slot search at one resolution:
 * the rate grid with its utilities, and the power grid kept in cost units
 * (q = c*p, one grid for every cache) with its logs. Endpoints included, so
 * clamped optima are always representable. */
struct GridTables {
  int resolution = 0;
  std::vector<double> r_grid, ln_r;
  std::vector<double> q_grid, log_q;  // log in the configured base
};
GridTables make_grid_tables(const D2DParams& params, int resolution);

struct GridArgmax {
  double r = 0;
  int winner = -1;
  double power = 0;
  double objective = 0;
  double runner_up = 0;  // best objective of the power search restricted to
                         // any other cache, for near-tie detection
};

/* Exhaustive maximizer of ln r - lambda r + lambda R_i(p) - c_i p over the
 * rate grid, every active cache, and the power grid. No closed forms inside;
 * this is the ground truth the closed forms are tested against. */
GridArgmax grid_primal_argmax(double lambda, const NetworkState& state, const D2DParams& params,
                              const GridTables& tables);
GridArgmax grid_primal_argmax(double lambda, const NetworkState& state, const D2DParams& params,
                              int resolution);

/* Curvature bound on what the grid can miss: both slot terms are concave with
 * second derivative bounded by 1/rate_min^2 (rate term) and
 * lambda W/(C_min^2 log_unit) (power term), so a grid of mesh h brackets the
 * true maximum within |phi''| h^2/8 per term. */
double grid_slack(double lambda, const D2DParams& params, int resolution);

/* The per-cache maximized power term as an explicit piecewise function of
 * lambda (flat below the lower clamp, log-linear between, affine above).
 * Evaluated directly per cache and maximized, it is the independent route to
 * the winner that never consults the gamma/c rule. */
struct PiecewiseArgmax {
  int winner = -1;
  double best = 0;
  double second = -std::numeric_limits<double>::infinity();
};
double piecewise_power_term(double lambda, double cost, double gain, double psi,
                            const D2DParams& params);
PiecewiseArgmax piecewise_winner(double lambda, const NetworkState& state,
                                 const D2DParams& params);

// exact expectation of the realized subgradient over a finite-support law
double exact_expected_subgradient(double lambda, const DiscreteDistribution& dist,
                                  const D2DParams& params);

// exact dual value per atom via the closed-form slot maximizers, summed with
// fixed order; independent of the one-scalar shortcut the surrogate uses
double exact_dual_value(double lambda, const DiscreteDistribution& dist, const D2DParams& params);

struct DualMinimum {
  double lambda_star = 0;
  double D = 0;
};
/* Grid scan of the exact dual over [0, lambda_hi], then golden-section down to
 * 1e-8 on the bracketing cell (the dual is convex, so the section search is
 * sound). */
DualMinimum grid_dual_minimize(const DiscreteDistribution& dist, const D2DParams& params,
                               double lambda_hi, int resolution);

struct PrimalEstimate {
  double p_hat = 0;        // the dual optimum doubles as the primal reference
  double best_primal = 0;  // feasible averaged-allocation objective at the horizon
  double gap = 0;          // p_hat - best_primal, Monte Carlo noise scale
  double constraint_at_best = 0;  // terminal running constraint average
  int64_t t_at_best = 0;          // slots behind the estimate (the horizon)
};
PrimalEstimate primal_optimum_estimate(const DiscreteDistribution& dist, const D2DParams& params,
                                       double lambda_star, double D, double lambda_max,
                                       double epsilon = 0.01, int64_t horizon = 200000,
                                       uint64_t seed = 7);

/* Reference minimizer for multi-constraint problems: projected descent on the
 * exact expected subgradient with diminishing steps. Modest accuracy, used to
 * anchor synthetic test problems where the scalar machinery does not apply. */
std::vector<double> reference_minimize(
    const std::function<std::vector<double>(std::span<const double>)>& exact_subgrad, int dim,
    double lambda_max, int64_t iterations = 1000000, double step0 = 1.0);

/* Everything downstream consumers need from the oracle, bundled with the
 * distribution it was computed on and written as a checksummed file. */
struct OracleReference {
  int format_version = 1;
  D2DParams params;
  int64_t surrogate_atoms = 1000;
  uint64_t surrogate_seed = 9001;
  int dual_grid_resolution = 10000;
  double lambda_star = 0, D = 0, G = 0;
  double chi = 0;          // exact feasibility margin on the surrogate
  double lambda_max = 0;   // recommended dual box
  double mean_offset = 0;  // exact E[winner_offset] on the surrogate
  double best_primal = 0, duality_gap = 0;
  DiscreteDistribution dist;
  std::string content_hash;  // git-style hash of the file this came from/went to
};

struct ReferenceOptions {
  int64_t surrogate_atoms = 1000;
  uint64_t surrogate_seed = 9001;
  int dual_grid_resolution = 10000;
  double headroom = 10.0;
};

OracleReference compute_reference(const D2DParams& params, const ReferenceOptions& opt);
// serialization is canonical: same reference, same bytes
std::string serialize_reference(const OracleReference& ref);
void save_reference(OracleReference& ref, const std::string& path);     // fills content_hash
OracleReference load_reference(const std::string& path);                // throws OracleError on
                                                                        // missing file or bad checksum
Anchors anchors_from_reference(const OracleReference& ref);

}  // namespace sdsd
