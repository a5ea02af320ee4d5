#include "sdsd/rate_lab.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sdsd {

std::vector<std::string> epoch_report_header() {
  return {"n", "epsilon", "t", "C_t", "C_t_prime", "avg_dual", "min_dual", "avg_primal",
          "bound1", "bound2"};
}

std::vector<std::string> epoch_report_row(const EpochReport& r) {
  return {std::to_string(r.n), fmt_double(r.epsilon), std::to_string(r.t), fmt_double(r.Ct),
          fmt_double(r.Ct_prime), fmt_double(r.avg_dual), fmt_double(r.min_dual),
          fmt_double(r.avg_primal), fmt_double(r.bound1), fmt_double(r.bound2)};
}

EpochAccumulator::EpochAccumulator(double epsilon, const DualVector& lambda0, Anchors anchors)
    : eps_(epsilon), anchors_(std::move(anchors)) {
  if (!(eps_ > 0)) throw std::invalid_argument("EpochAccumulator: eps must be positive");
  if (anchors_.lambda_star.size() != lambda0.v.size())
    throw std::invalid_argument("EpochAccumulator: lambda_star dimension mismatch");
  for (size_t k = 0; k < lambda0.v.size(); k++) {
    double d = lambda0.v[k] - anchors_.lambda_star[k];
    B0_ += d * d;
    R0_ += lambda0.v[k] * lambda0.v[k];
  }
  min_g_ = std::numeric_limits<double>::infinity();
}

void EpochAccumulator::observe(const SlotRecord& rec) {
  double g = rec.slot_dual;
  if (!std::isfinite(g)) {
    if (!anchors_.dual_eval)
      throw std::runtime_error("EpochAccumulator: trace has no dual values and no evaluator");
    g = anchors_.dual_eval(rec.lambda);
  }
  std::vector<double> mean_store;
  const std::vector<double>* mean = nullptr;
  if (rec.subgrad.mean_value) {
    mean = &*rec.subgrad.mean_value;
  } else {
    if (!anchors_.mean_eval)
      throw std::runtime_error("EpochAccumulator: trace has no mean subgradients and no evaluator");
    mean_store = anchors_.mean_eval(rec.lambda);
    mean = &mean_store;
  }

  sum_g_ += g;
  min_g_ = std::min(min_g_, g);
  sum_primal_ += rec.slot_primal;
  for (size_t k = 0; k < rec.lambda.size(); k++) {
    double noise = rec.subgrad.value[k] - (*mean)[k];
    sum_ct_ += noise * (rec.lambda[k] - anchors_.lambda_star[k]);
    sum_ctp_ += noise * rec.lambda[k];
  }
  sum_rate_ += rec.rate_target;
  sum_cost_ += rec.cost;

  t_++;
  int64_t n = epoch_index(t_, eps_);
  if (n > last_epoch_) {
    last_epoch_ = n;
    reports_.push_back(snapshot());
  }
}

EpochReport EpochAccumulator::snapshot() const {
  if (t_ < 1) throw std::runtime_error("EpochAccumulator: no slots observed");
  EpochReport r;
  r.n = epoch_index(t_, eps_);
  r.epsilon = eps_;
  r.t = t_;
  double inv_t = 1.0 / (double)t_;
  r.Ct = std::abs(sum_ct_ * inv_t);
  r.Ct_prime = std::abs(sum_ctp_ * inv_t);
  r.avg_dual = sum_g_ * inv_t;
  r.min_dual = min_g_;
  r.avg_primal = sum_primal_ * inv_t;
  double mean_rate = sum_rate_ * inv_t;
  r.primal_at_avg =
      mean_rate > 0 ? std::log(mean_rate) - sum_cost_ * inv_t : std::numeric_limits<double>::quiet_NaN();
  int64_t n_safe = std::max<int64_t>(r.n, 1);  // pre-first-epoch snapshots use n = 1 terms
  r.B0_over_2n = B0_ / (2.0 * (double)n_safe);
  r.R0_over_2n = R0_ / (2.0 * (double)n_safe);
  r.eps_G2_over_2 = eps_ * anchors_.G * anchors_.G / 2.0;
  r.bound1 = dual_gap_bound(anchors_.D, B0_, n_safe, eps_, anchors_.G, r.Ct);
  r.bound2 = primal_gap_bound(anchors_.P_hat, R0_, n_safe, eps_, anchors_.G, r.Ct_prime);
  return r;
}

double dual_gap_bound(double D, double B0, int64_t n, double epsilon, double G, double Ct) {
  if (n < 1) throw std::invalid_argument("dual_gap_bound: needs a completed epoch");
  return D + B0 / (2.0 * (double)n) + epsilon * G * G / 2.0 + Ct;
}

double primal_gap_bound(double P, double R0, int64_t n, double epsilon, double G,
                        double Ct_prime) {
  if (n < 1) throw std::invalid_argument("primal_gap_bound: needs a completed epoch");
  return P - R0 / (2.0 * (double)n) - epsilon * G * G / 2.0 - Ct_prime;
}

namespace {

double noise_sum(const Trace& trace, const std::vector<double>* lambda_star,
                 const std::function<std::vector<double>(std::span<const double>)>& mean_eval) {
  double sum = 0;
  int64_t t = 0;
  trace.for_each([&](const SlotRecord& rec) {
    std::vector<double> mean_store;
    const std::vector<double>* mean = nullptr;
    if (rec.subgrad.mean_value) {
      mean = &*rec.subgrad.mean_value;
    } else {
      if (!mean_eval)
        throw std::runtime_error("noise term: trace has no mean subgradients and no evaluator");
      mean_store = mean_eval(rec.lambda);
      mean = &mean_store;
    }
    for (size_t k = 0; k < rec.lambda.size(); k++) {
      double anchor = lambda_star ? (*lambda_star)[k] : 0.0;
      sum += (rec.subgrad.value[k] - (*mean)[k]) * (rec.lambda[k] - anchor);
    }
    t++;
  });
  if (t == 0) throw std::invalid_argument("noise term: empty trace");
  return std::abs(sum / (double)t);
}

}  // namespace

double noise_gap_term(const Trace& trace, std::span<const double> lambda_star,
                      const std::function<std::vector<double>(std::span<const double>)>& mean_eval) {
  std::vector<double> star(lambda_star.begin(), lambda_star.end());
  return noise_sum(trace, &star, mean_eval);
}

double noise_primal_term(const Trace& trace,
                         const std::function<std::vector<double>(std::span<const double>)>& mean_eval) {
  return noise_sum(trace, nullptr, mean_eval);
}

ErrorAverages error_averages(const std::vector<std::vector<double>>& e_at_lambda,
                             const std::vector<std::vector<double>>& e_at_lambda_alt,
                             const std::vector<int64_t>& index_set, int64_t T,
                             double lambda_distance) {
  if (T < 1) throw std::invalid_argument("error_averages: T must be positive");
  if (e_at_lambda.empty()) throw std::invalid_argument("error_averages: empty error sequence");
  if (!(lambda_distance > 0))
    throw std::invalid_argument("error_averages: the two dual points must differ");
  size_t K = e_at_lambda[0].size();
  std::vector<double> acc(K, 0.0), acc_diff(K, 0.0);
  for (int64_t idx : index_set) {
    if (idx < 0 || (size_t)idx >= e_at_lambda.size() || (size_t)idx >= e_at_lambda_alt.size())
      throw std::invalid_argument("error_averages: index outside the error sequences");
    for (size_t k = 0; k < K; k++) {
      acc[k] += e_at_lambda[(size_t)idx][k];
      acc_diff[k] += e_at_lambda[(size_t)idx][k] - e_at_lambda_alt[(size_t)idx][k];
    }
  }
  double n1 = 0, n2 = 0;
  for (size_t k = 0; k < K; k++) {
    double a = acc[k] / (double)T, d = acc_diff[k] / (double)T;
    n1 += a * a;
    n2 += d * d;
  }
  return {std::sqrt(n1), std::sqrt(n2) / lambda_distance};
}

namespace {

double fit_slope(const std::vector<double>& logx, const std::vector<double>& logy) {
  double mx = 0, my = 0;
  size_t n = logx.size();
  for (size_t i = 0; i < n; i++) {
    mx += logx[i];
    my += logy[i];
  }
  mx /= (double)n;
  my /= (double)n;
  double num = 0, den = 0;
  for (size_t i = 0; i < n; i++) {
    num += (logx[i] - mx) * (logy[i] - my);
    den += (logx[i] - mx) * (logx[i] - mx);
  }
  if (den == 0) throw std::invalid_argument("decay_fit: scales are all equal");
  return num / den;
}

}  // namespace

DecayFit decay_fit(const std::vector<DecayCell>& cells, int bootstrap, uint64_t seed) {
  if (cells.size() < 3) throw std::invalid_argument("decay_fit: need at least 3 cells");
  DecayFit out;
  std::vector<double> logx, logy;
  std::vector<const DecayCell*> used;
  for (const auto& c : cells) {
    if (c.rep_values.empty()) throw std::invalid_argument("decay_fit: cell without replications");
    if (!(c.scale > 0)) throw std::invalid_argument("decay_fit: scales must be positive");
    double med = median_of(c.rep_values);
    if (med > 0) {
      logx.push_back(std::log(c.scale));
      logy.push_back(std::log(med));
      used.push_back(&c);
    } else {
      out.cells_excluded++;
    }
  }
  out.cells_used = (int)used.size();
  if (used.size() < 2) {
    out.degenerate = true;
    return out;
  }
  out.exponent = fit_slope(logx, logy);

  // percentile bootstrap over replications, cells resampled independently
  Rng rng(seed);
  std::vector<double> boots;
  boots.reserve((size_t)bootstrap);
  for (int b = 0; b < bootstrap; b++) {
    std::vector<double> bx, by;
    for (size_t i = 0; i < used.size(); i++) {
      const auto& vals = used[i]->rep_values;
      std::vector<double> resampled(vals.size());
      for (auto& v : resampled) v = vals[rng.below(vals.size())];
      double med = median_of(std::move(resampled));
      if (med > 0) {
        bx.push_back(logx[i]);
        by.push_back(std::log(med));
      }
    }
    if (bx.size() >= 2) boots.push_back(fit_slope(bx, by));
  }
  if (boots.size() >= 10) {
    out.ci_lo = quantile_of(boots, 0.025);
    out.ci_hi = quantile_of(boots, 0.975);
  } else {
    out.ci_lo = out.ci_hi = out.exponent;
  }
  return out;
}

TailFrequency tail_frequency(const std::vector<double>& values, double nu, double zeta) {
  if (!(zeta > 0 && zeta < 0.5))
    throw std::invalid_argument("tail_frequency: zeta must lie in (0, 1/2)");
  if (!(nu > 0)) throw std::invalid_argument("tail_frequency: nu must be positive");
  if (values.empty()) throw std::invalid_argument("tail_frequency: no values");
  TailFrequency out;
  out.threshold = std::pow(nu, zeta - 0.5);
  int64_t k = 0;
  for (double v : values)
    if (v > out.threshold) k++;
  double n = (double)values.size();
  out.freq = (double)k / n;
  const double z = 1.959963984540054;  // two-sided 95%
  double z2 = z * z;
  double denom = 1.0 + z2 / n;
  double center = (out.freq + z2 / (2 * n)) / denom;
  double half = z * std::sqrt(out.freq * (1 - out.freq) / n + z2 / (4 * n * n)) / denom;
  out.wilson_lo = std::max(0.0, center - half);
  out.wilson_hi = std::min(1.0, center + half);
  return out;
}

double surrogate_mean_subgradient(double lambda, const D2DParams& params, double mean_offset) {
  double q = params.q_of(lambda);
  double dlog = params.bandwidth * params.log_of(q / params.alpha);
  return dlog + mean_offset - rate_choice(lambda, params);
}

double surrogate_dual_value(double lambda, const D2DParams& params, double mean_offset) {
  double q = params.q_of(lambda);
  double dlog = params.bandwidth * params.log_of(q / params.alpha);
  double r = rate_choice(lambda, params);
  return (std::log(r) - lambda * r) + lambda * (dlog + mean_offset) - q;
}

McEstimate mc_dual_value(StochasticProblem& problem, std::span<const double> lambda,
                         int64_t n_samples, uint64_t seed) {
  if (n_samples < 2) throw std::invalid_argument("mc_dual_value: need at least 2 samples");
  Rng rng(seed);
  double sum = 0, sumsq = 0;
  for (int64_t i = 0; i < n_samples; i++) {
    SlotRecord rec = problem.sample_slot(lambda, i, rng);
    double v = rec.slot_primal;
    for (size_t k = 0; k < lambda.size(); k++) v += lambda[k] * rec.subgrad.value[k];
    sum += v;
    sumsq += v * v;
  }
  double n = (double)n_samples;
  double m = sum / n;
  double var = std::max(0.0, (sumsq - n * m * m) / (n - 1));
  return {m, std::sqrt(var / n)};
}

}  // namespace sdsd
