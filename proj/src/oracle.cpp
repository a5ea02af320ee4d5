#include "sdsd/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "sdsd/solver.hpp"

namespace sdsd {

namespace {

/* Rate part of the dual, max over [rate_min, rate_max] of ln r - lambda r.
 * Threshold tests instead of the clamp shortcut so this stays an independent
 * route for the cross checks. */
double rate_term(double lambda, const D2DParams& p) {
  double r;
  if (lambda * p.rate_max <= 1.0) {
    r = p.rate_max;
  } else if (lambda * p.rate_min >= 1.0) {
    r = p.rate_min;
  } else {
    r = 1.0 / lambda;
  }
  return std::log(r) - lambda * r;
}

void require_dual_point(double lambda) {
  if (!std::isfinite(lambda) || lambda < 0) {
    throw ConfigError("oracle: dual point must be finite and nonnegative");
  }
}

}  // namespace

GridTables make_grid_tables(const D2DParams& params, int resolution) {
  params.validate();
  if (resolution < 1000) {
    throw ConfigError("oracle: grid resolution below 1000 is not meaningful here");
  }
  GridTables tb;
  tb.resolution = resolution;
  tb.r_grid.resize(resolution);
  tb.ln_r.resize(resolution);
  tb.q_grid.resize(resolution);
  tb.log_q.resize(resolution);
  const double hr = (params.rate_max - params.rate_min) / (resolution - 1);
  const double hq = (params.cost_max - params.cost_min) / (resolution - 1);
  for (int i = 0; i < resolution; ++i) {
    // write the endpoints exactly so clamped optima are representable
    double r = (i == resolution - 1) ? params.rate_max : params.rate_min + hr * i;
    double q = (i == resolution - 1) ? params.cost_max : params.cost_min + hq * i;
    tb.r_grid[i] = r;
    tb.ln_r[i] = std::log(r);
    tb.q_grid[i] = q;
    tb.log_q[i] = params.log_of(q);
  }
  return tb;
}

GridArgmax grid_primal_argmax(double lambda, const NetworkState& state, const D2DParams& params,
                              const GridTables& tables) {
  require_dual_point(lambda);
  state.check(params);
  if (tables.resolution < 2) throw ConfigError("oracle: grid tables are empty");

  const int res = tables.resolution;
  GridArgmax out;

  // rate search, one pass
  double best_r_val = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < res; ++j) {
    double v = tables.ln_r[j] - lambda * tables.r_grid[j];
    if (v > best_r_val) {
      best_r_val = v;
      out.r = tables.r_grid[j];
    }
  }

  /* Power search. The objective for cache i at grid budget q_j is
   * lambda * (W log(q_j) + K_i) - q_j with K_i = W (log(gamma_i/(c_i alpha)) + psi_i),
   * scanned exhaustively per cache. No use of the fact that the q part does
   * not depend on i: the whole point is to find the winner the hard way. */
  const int m = state.size();
  std::vector<double> cache_best(m, -std::numeric_limits<double>::infinity());
  std::vector<int> cache_j(m, 0);
  for (int i = 0; i < m; ++i) {
    double ki = params.bandwidth *
                (params.log_of(state.gains[i] / (state.costs[i] * params.alpha)) +
                 params.psi_of(state.active[i]));
    double best = -std::numeric_limits<double>::infinity();
    int bj = 0;
    for (int j = 0; j < res; ++j) {
      double v = lambda * (params.bandwidth * tables.log_q[j] + ki) - tables.q_grid[j];
      if (v > best) {
        best = v;
        bj = j;
      }
    }
    cache_best[i] = best;
    cache_j[i] = bj;
  }

  int win = 0;
  for (int i = 1; i < m; ++i) {
    if (cache_best[i] > cache_best[win]) win = i;  // strict, ties stay at the smaller id
  }
  out.winner = state.active[win];
  out.power = tables.q_grid[cache_j[win]] / state.costs[win];
  out.objective = best_r_val + cache_best[win];
  out.runner_up = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < m; ++i) {
    if (i != win && cache_best[i] > out.runner_up) out.runner_up = cache_best[i];
  }
  return out;
}

GridArgmax grid_primal_argmax(double lambda, const NetworkState& state, const D2DParams& params,
                              int resolution) {
  return grid_primal_argmax(lambda, state, params, make_grid_tables(params, resolution));
}

double grid_slack(double lambda, const D2DParams& params, int resolution) {
  require_dual_point(lambda);
  params.validate();
  if (resolution < 2) throw ConfigError("oracle: slack needs at least 2 grid points");
  const double hr = (params.rate_max - params.rate_min) / (resolution - 1);
  const double hq = (params.cost_max - params.cost_min) / (resolution - 1);
  // concave objectives: a grid of mesh h misses at most |phi''|_max h^2 / 8
  double rate_part = hr * hr / (8.0 * params.rate_min * params.rate_min);
  double power_part = hq * hq * lambda * params.bandwidth /
                      (8.0 * params.cost_min * params.cost_min * params.log_unit());
  return rate_part + power_part;
}

double piecewise_power_term(double lambda, double cost, double gain, double psi,
                            const D2DParams& params) {
  require_dual_point(lambda);
  if (!(cost > 0) || !(gain > 0)) throw ConfigError("oracle: cost and gain must be positive");
  const double w = params.bandwidth;
  const double lu = params.log_unit();
  // stationary budget is q = lambda W / log_unit; flat below the floor, affine
  // above the ceiling, log-linear between
  const double lo = params.cost_min * lu / w;
  const double hi = params.cost_max * lu / w;
  auto rate_at = [&](double q) {
    return w * (params.log_of(q * gain / (cost * params.alpha)) + psi);
  };
  if (lambda <= lo) return lambda * rate_at(params.cost_min) - params.cost_min;
  if (lambda >= hi) return lambda * rate_at(params.cost_max) - params.cost_max;
  const double q = lambda * w / lu;
  return lambda * rate_at(q) - q;
}

PiecewiseArgmax piecewise_winner(double lambda, const NetworkState& state,
                                 const D2DParams& params) {
  state.check(params);
  PiecewiseArgmax out;
  double best = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < state.size(); ++i) {
    double t = piecewise_power_term(lambda, state.costs[i], state.gains[i],
                                    params.psi_of(state.active[i]), params);
    if (t > best) {
      out.second = best;
      best = t;
      out.winner = state.active[i];
    } else if (t > out.second) {
      out.second = t;
    }
  }
  out.best = best;
  return out;
}

double exact_expected_subgradient(double lambda, const DiscreteDistribution& dist,
                                  const D2DParams& params) {
  require_dual_point(lambda);
  dist.validate(params);
  double acc = 0;
  for (size_t a = 0; a < dist.size(); ++a) {
    acc += dist.probs[a] * slot_subgradient(lambda, dist.atoms[a], params).value[0];
  }
  return acc;
}

double exact_dual_value(double lambda, const DiscreteDistribution& dist, const D2DParams& params) {
  require_dual_point(lambda);
  dist.validate(params);
  double acc = 0;
  for (size_t a = 0; a < dist.size(); ++a) {
    const NetworkState& st = dist.atoms[a];
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < st.size(); ++i) {
      double t = piecewise_power_term(lambda, st.costs[i], st.gains[i],
                                      params.psi_of(st.active[i]), params);
      if (t > best) best = t;
    }
    acc += dist.probs[a] * best;
  }
  return rate_term(lambda, params) + acc;
}

namespace {

/* Same function as exact_dual_value with the per-cache log constants hoisted
 * out of the lambda loop. Used for the dense scan; the refined minimum is
 * reported through the plain evaluator. */
struct DualScanEvaluator {
  const DiscreteDistribution* dist;
  const D2DParams* params;
  double w, lu, lo, hi, log_cmin, log_cmax, cmin, cmax;
  std::vector<double> offset;  // log(gain/(cost alpha)) + psi, flattened
  std::vector<size_t> begin;   // per-atom slice bounds into offset

  explicit DualScanEvaluator(const DiscreteDistribution& d, const D2DParams& p)
      : dist(&d), params(&p) {
    w = p.bandwidth;
    lu = p.log_unit();
    lo = p.cost_min * lu / w;
    hi = p.cost_max * lu / w;
    log_cmin = p.log_of(p.cost_min);
    log_cmax = p.log_of(p.cost_max);
    cmin = p.cost_min;
    cmax = p.cost_max;
    begin.push_back(0);
    for (const NetworkState& st : d.atoms) {
      for (int i = 0; i < st.size(); ++i) {
        offset.push_back(p.log_of(st.gains[i] / (st.costs[i] * p.alpha)) +
                         p.psi_of(st.active[i]));
      }
      begin.push_back(offset.size());
    }
  }

  double eval(double lambda) const {
    double base_log, base_q;
    if (lambda <= lo) {
      base_log = log_cmin;
      base_q = cmin;
    } else if (lambda >= hi) {
      base_log = log_cmax;
      base_q = cmax;
    } else {
      base_q = lambda * w / lu;
      base_log = params->log_of(base_q);
    }
    double acc = 0;
    for (size_t a = 0; a < dist->size(); ++a) {
      double best = -std::numeric_limits<double>::infinity();
      for (size_t k = begin[a]; k < begin[a + 1]; ++k) {
        double t = lambda * w * (base_log + offset[k]);
        if (t > best) best = t;
      }
      acc += dist->probs[a] * (best - base_q);
    }
    return rate_term(lambda, *params) + acc;
  }
};

}  // namespace

DualMinimum grid_dual_minimize(const DiscreteDistribution& dist, const D2DParams& params,
                               double lambda_hi, int resolution) {
  dist.validate(params);
  if (!(lambda_hi > 0) || !std::isfinite(lambda_hi)) {
    throw ConfigError("oracle: dual scan needs a positive finite upper end");
  }
  if (resolution < 3) throw ConfigError("oracle: dual scan needs at least 3 points");

  DualScanEvaluator ev(dist, params);
  const double h = lambda_hi / (resolution - 1);
  int best_k = 0;
  double best_g = std::numeric_limits<double>::infinity();
  for (int k = 0; k < resolution; ++k) {
    double lam = (k == resolution - 1) ? lambda_hi : h * k;
    double g = ev.eval(lam);
    if (g < best_g) {
      best_g = g;
      best_k = k;
    }
  }

  // golden-section refinement on the bracketing cell; the dual is convex, so
  // the scan minimum brackets the true one within one mesh on either side
  double a = (best_k == 0) ? 0.0 : h * (best_k - 1);
  double b = (best_k >= resolution - 1) ? lambda_hi : h * (best_k + 1);
  const double inv_phi = 0.6180339887498949;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = ev.eval(x1);
  double f2 = ev.eval(x2);
  while (b - a > 1e-8) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = ev.eval(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = ev.eval(x2);
    }
  }
  DualMinimum out;
  out.lambda_star = 0.5 * (a + b);
  out.D = exact_dual_value(out.lambda_star, dist, params);
  return out;
}

PrimalEstimate primal_optimum_estimate(const DiscreteDistribution& dist, const D2DParams& params,
                                       double lambda_star, double D, double lambda_max,
                                       double epsilon, int64_t horizon, uint64_t seed) {
  (void)lambda_star;
  SurrogateProblem problem(dist, params);

  /* Streams one solver run and scores the terminal averaged allocation. The
   * averaged iterate is short of feasible by O(1/(eps t)) (the run ends with
   * lambda_t/eps of accumulated shortfall), so the scored point requests
   * min(mean target, mean delivered): delivering that much is guaranteed, and
   * the utility gives a true primal value. Terminal only; a best-over-t scan
   * would harvest early sampling noise and "beat" the dual optimum. */
  struct Scan final : public TraceSink {
    double sum_rate = 0, sum_realized = 0, sum_cost = 0, sum_f = 0;
    int64_t t = 0;

    void append(const SlotRecord& rec) override {
      ++t;
      sum_rate += rec.rate_target;
      sum_realized += rec.realized_rate;
      sum_cost += rec.cost;
      sum_f += rec.subgrad.value[0];
    }
  } scan;

  SolverConfig cfg;
  cfg.step_size = epsilon;
  cfg.horizon = horizon;
  cfg.seed = seed;
  cfg.initial_dual = DualVector{{0.0}, lambda_max};
  run_solver(problem, cfg, scan);

  PrimalEstimate out;
  out.p_hat = D;
  double r_feasible = std::min(scan.sum_rate, scan.sum_realized) / scan.t;
  if (scan.t == 0 || r_feasible <= 0) {
    out.best_primal = std::numeric_limits<double>::quiet_NaN();
    out.gap = std::numeric_limits<double>::quiet_NaN();
  } else {
    out.best_primal = std::log(r_feasible) - scan.sum_cost / scan.t;
    out.gap = D - out.best_primal;
  }
  out.constraint_at_best = scan.t > 0 ? scan.sum_f / scan.t : 0.0;
  out.t_at_best = scan.t;
  return out;
}

std::vector<double> reference_minimize(
    const std::function<std::vector<double>(std::span<const double>)>& exact_subgrad, int dim,
    double lambda_max, int64_t iterations, double step0) {
  if (dim < 1) throw ConfigError("oracle: reference minimizer needs dim >= 1");
  if (!(lambda_max > 0)) throw ConfigError("oracle: reference minimizer needs lambda_max > 0");
  if (iterations < 2) throw ConfigError("oracle: reference minimizer needs iterations >= 2");
  std::vector<double> lam(dim, 0.0), avg(dim, 0.0);
  const int64_t tail_start = iterations / 2;
  int64_t count = 0;
  for (int64_t t = 0; t < iterations; ++t) {
    std::vector<double> g = exact_subgrad(lam);
    if ((int)g.size() != dim) throw ConfigError("oracle: subgradient dimension mismatch");
    double step = step0 / std::sqrt((double)t + 1.0);
    for (int k = 0; k < dim; ++k) {
      lam[k] = std::clamp(lam[k] - step * g[k], 0.0, lambda_max);
    }
    if (t >= tail_start) {
      ++count;
      for (int k = 0; k < dim; ++k) avg[k] += (lam[k] - avg[k]) / count;
    }
  }
  return avg;
}

OracleReference compute_reference(const D2DParams& params, const ReferenceOptions& opt) {
  params.validate();
  OracleReference ref;
  ref.params = params;
  ref.surrogate_atoms = opt.surrogate_atoms;
  ref.surrogate_seed = opt.surrogate_seed;
  ref.dual_grid_resolution = opt.dual_grid_resolution;
  ref.dist = build_surrogate(params, opt.surrogate_atoms, opt.surrogate_seed);

  SurrogateProblem sp(ref.dist, params);
  ref.mean_offset = sp.mean_offset();
  ref.G = subgradient_bound(params);

  SlaterReport slater = make_slater_report(params, sp.exact_slater_rate(), 0.0);
  if (!slater.feasible) {
    throw ConfigError("oracle: no strict feasibility margin, the dual box rule needs one");
  }
  ref.chi = slater.margin;
  double g0 = exact_dual_value(0.0, ref.dist, params);
  ref.lambda_max = lambda_max_rule(params, slater, 0.0, g0, opt.headroom);

  DualMinimum dm = grid_dual_minimize(ref.dist, params, ref.lambda_max, opt.dual_grid_resolution);
  ref.lambda_star = dm.lambda_star;
  ref.D = dm.D;

  PrimalEstimate pe = primal_optimum_estimate(ref.dist, params, dm.lambda_star, dm.D,
                                              ref.lambda_max);
  ref.best_primal = pe.best_primal;
  ref.duality_gap = pe.gap;
  return ref;
}

std::string serialize_reference(const OracleReference& ref) {
  std::ostringstream os;
  os << "# solver reference anchors, machine written, do not edit\n";
  os << "format_version = " << ref.format_version << "\n";
  os << d2d_params_to_kv(ref.params);
  os << "surrogate_atoms = " << ref.surrogate_atoms << "\n";
  os << "surrogate_seed = " << ref.surrogate_seed << "\n";
  os << "dual_grid_resolution = " << ref.dual_grid_resolution << "\n";
  os << "lambda_star = " << fmt_double(ref.lambda_star) << "\n";
  os << "D = " << fmt_double(ref.D) << "\n";
  os << "G = " << fmt_double(ref.G) << "\n";
  os << "chi = " << fmt_double(ref.chi) << "\n";
  os << "lambda_max = " << fmt_double(ref.lambda_max) << "\n";
  os << "mean_offset = " << fmt_double(ref.mean_offset) << "\n";
  os << "best_primal = " << fmt_double(ref.best_primal) << "\n";
  os << "duality_gap = " << fmt_double(ref.duality_gap) << "\n";
  os << ref.dist.serialize();
  std::string body = os.str();
  return body + "checksum = " + sha1_hex(body) + "\n";
}

void save_reference(OracleReference& ref, const std::string& path) {
  std::string content = serialize_reference(ref);
  ref.content_hash = git_blob_hash(content);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw OracleError("cannot open reference file for writing: " + path);
  out << content;
  out.flush();
  if (!out) throw OracleError("short write on reference file: " + path);
}

OracleReference load_reference(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw OracleError("reference file missing: " + path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  auto pos = content.rfind("\nchecksum = ");
  if (pos == std::string::npos) throw OracleError("reference file has no checksum: " + path);
  std::string body = content.substr(0, pos + 1);
  std::string tail = content.substr(pos + 12);  // past "\nchecksum = "
  while (!tail.empty() && (tail.back() == '\n' || tail.back() == '\r')) tail.pop_back();
  if (sha1_hex(body) != tail) {
    throw OracleError("reference file failed its checksum, refusing to use it: " + path);
  }

  std::vector<std::string> atom_lines;
  std::string kv_text;
  std::istringstream is(body);
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("atom = ", 0) == 0) {
      atom_lines.push_back(line.substr(7));
    } else {
      kv_text += line;
      kv_text += '\n';
    }
  }

  KvFile kv = KvFile::parse_string(kv_text, path);
  auto need = [&](const char* key) {
    if (!kv.has(key)) throw OracleError(std::string("reference file lacks key '") + key +
                                        "': " + path);
  };
  need("format_version");
  OracleReference ref;
  ref.format_version = (int)kv.get_int("format_version", 0);
  if (ref.format_version != 1) {
    throw OracleError("reference file has unsupported format_version: " + path);
  }
  ref.params = d2d_params_from_kv(kv);
  for (const char* key : {"surrogate_atoms", "surrogate_seed", "dual_grid_resolution",
                          "lambda_star", "D", "G", "chi", "lambda_max", "mean_offset",
                          "best_primal", "duality_gap"}) {
    need(key);
  }
  ref.surrogate_atoms = kv.get_int("surrogate_atoms", 0);
  ref.surrogate_seed = (uint64_t)kv.get_int("surrogate_seed", 0);
  ref.dual_grid_resolution = (int)kv.get_int("dual_grid_resolution", 0);
  ref.lambda_star = kv.get_double("lambda_star", 0);
  ref.D = kv.get_double("D", 0);
  ref.G = kv.get_double("G", 0);
  ref.chi = kv.get_double("chi", 0);
  ref.lambda_max = kv.get_double("lambda_max", 0);
  ref.mean_offset = kv.get_double("mean_offset", 0);
  ref.best_primal = kv.get_double("best_primal", 0);
  ref.duality_gap = kv.get_double("duality_gap", 0);
  ref.dist = DiscreteDistribution::deserialize_lines(atom_lines);
  ref.dist.validate(ref.params);
  ref.content_hash = git_blob_hash(content);
  return ref;
}

Anchors anchors_from_reference(const OracleReference& ref) {
  Anchors a;
  a.lambda_star = {ref.lambda_star};
  a.D = ref.D;
  a.P_hat = ref.D;
  a.G = ref.G;
  D2DParams params = ref.params;
  double mo = ref.mean_offset;
  a.dual_eval = [params, mo](std::span<const double> l) {
    return surrogate_dual_value(l[0], params, mo);
  };
  a.mean_eval = [params, mo](std::span<const double> l) {
    return std::vector<double>{surrogate_mean_subgradient(l[0], params, mo)};
  };
  return a;
}

}  // namespace sdsd
