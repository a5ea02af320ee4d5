#pragma once

#include <string>
#include <vector>

#include "sdsd/solver.hpp"
#include "sdsd/util.hpp"

namespace sdsd {

enum class Fading { Slow, Fast };
enum class LogBase { Natural, Base2 };
enum class CostModel { Indexed, Uniform };

/* Problem parameters. Defaults reproduce the reference experiment setup:
 * 25 caches with cost c^i = i, cost box [1, 25], rate box [0.2, 10],
 * truncated Rayleigh gains on [0.1, 65], W = alpha = psi = 1. */
struct D2DParams {
  int num_ues = 25;
  double bandwidth = 1.0;   // W, rate units per log unit
  double alpha = 1.0;       // impairment in the rate law
  double cost_min = 1.0;    // C_min, floor of c*p
  double cost_max = 25.0;   // C_max, ceiling of c*p
  double rate_min = 0.2;
  double rate_max = 10.0;
  std::vector<double> psi;  // per-cache ergodic offset, used in fast fading
  Fading fading = Fading::Fast;
  LogBase log_base = LogBase::Natural;
  double gamma_min = 0.1;
  double gamma_max = 65.0;
  double rayleigh_sigma = 20.0;
  int active_min = 5;
  int active_max = 25;
  CostModel cost_model = CostModel::Indexed;
  double cost_support_min = 1.0;   // uniform cost model only
  double cost_support_max = 25.0;
  int64_t rejection_cap = 10000;

  void validate() const;  // throws ConfigError on inconsistent fields

  double log_of(double x) const;           // log in the configured base
  double log_unit() const;                 // ln 2 for base-2 rates, else 1
  // transmit budget in cost units at dual lambda: clamp of W*lambda (natural)
  // or W*lambda/ln2 (base 2) onto [cost_min, cost_max]
  double q_of(double lambda) const;
  double psi_of(int ue) const;             // 0 in slow fading
  // achievable rate of cache `ue` at power p and gain gamma
  double rate_of(int ue, double p, double gamma) const;

  double psi_max() const;
  double min_cost_support() const;  // smallest cost any cache can advertise
  double max_cost_support() const;
};

D2DParams d2d_params_from_kv(const KvFile& kv);
std::string d2d_params_to_kv(const D2DParams& p);  // canonical serialization

/* One slot's exogenous draw: which caches advertise, at what cost and gain.
 * Parallel arrays ordered by ascending cache id. */
struct NetworkState {
  std::vector<int> active;     // cache ids, 1-based
  std::vector<double> costs;
  std::vector<double> gains;

  int size() const { return (int)active.size(); }
  void check(const D2DParams& p) const;  // invariant guard, throws on violation
};

struct Allocation {
  int winner = -1;
  double power = 0;
  double cost = 0;          // winner's c * p, inside [cost_min, cost_max]
  double rate_target = 0;   // requested r
  double realized_rate = 0; // delivered rate at the granted power
};

NetworkState sample_state(const D2DParams& params, Rng& rng);
// same law conditioned on the active-set size
NetworkState sample_state_sized(const D2DParams& params, int m, Rng& rng);

// exact slot argmax of lambda*R(p) - c*p over the cost box; independent of gamma
double power_candidate(double lambda, double cost, const D2DParams& params);

// cache granted power this slot: argmax gamma/c (slow) or log(gamma/c) + psi
// (fast); ties to the smallest id; never depends on lambda
int select_user(const NetworkState& state, const D2DParams& params);

// exact argmax of ln r - lambda*r over [rate_min, rate_max]; lambda = 0 gives rate_max
double rate_choice(double lambda, const D2DParams& params);

Allocation slot_allocation(double lambda, const NetworkState& state, const D2DParams& params);

// realized constraint surplus f_t(lambda) = R_winner - r(lambda), a stochastic
// subgradient of the dual (K = 1, no mean attached)
SubgradientSample slot_subgradient(double lambda, const NetworkState& state,
                                   const D2DParams& params);

double dual_slot_update(double lambda, const NetworkState& state, const D2DParams& params,
                        double eps, double lambda_max);

// worst-case |f_t|: W*log(C_max*gamma_max/(alpha*c_min)) + r_max, plus W*psi_max
// in fast fading
double subgradient_bound(const D2DParams& params);

// the lambda-free part of the subgradient, W*log(gamma_w/c_w) + W*psi_w for the
// selected winner; the whole state dependence of f_t flows through this scalar
double winner_offset(const NetworkState& state, const D2DParams& params);

// best deliverable rate at cost-ceiling power, max_i R_i(C_max/c^i, gamma^i);
// its expectation minus rate_min is the strict-feasibility margin
double slater_rate_at(const NetworkState& state, const D2DParams& params);

struct SlaterReport {
  double margin = 0;        // E[slater_rate] - rate_min
  double margin_se = 0;     // standard error (0 for exact evaluations)
  bool feasible = false;
  double rate_floor = 0;    // the Slater point requests rate_min
  std::string point;        // human description of the Slater point
};

SlaterReport slater_check_mc(const D2DParams& params, int64_t n_samples, uint64_t seed);
SlaterReport make_slater_report(const D2DParams& params, double expected_rate, double se);

// recommended dual box: max((g(l~) - ln(rate_min)) / margin, 1/rate_min) * headroom
double lambda_max_rule(const D2DParams& params, const SlaterReport& slater, double lambda_tilde,
                       double dual_at_tilde, double headroom = 10.0);

// subgradient noise e_t = winner_offset - mean_offset; the dual argument is
// part of the contract but provably cancels, so the value never varies with it
double subgradient_error(double lambda, const NetworkState& state, const D2DParams& params,
                         double mean_offset);

// Monte Carlo estimate of E[winner_offset] with standard error
std::pair<double, double> mean_offset_mc(const D2DParams& params, int64_t n_samples, uint64_t seed);

/* The continuous-state problem driven by the generic solver. No exact mean is
 * available; instrumentation that needs one estimates it separately. */
class D2DProblem final : public StochasticProblem {
 public:
  explicit D2DProblem(D2DParams params) : params_(std::move(params)) { params_.validate(); }
  int dual_dim() const override { return 1; }
  double subgradient_bound() const override { return sdsd::subgradient_bound(params_); }
  bool has_exact_mean() const override { return false; }
  SlotRecord sample_slot(std::span<const double> lambda, int64_t t, Rng& rng) override;
  const D2DParams& params() const { return params_; }

 private:
  D2DParams params_;
};

}  // namespace sdsd
