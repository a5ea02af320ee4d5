#include "sdsd/cli.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "sdsd/acceptance.hpp"
#include "sdsd/baselines.hpp"
#include "sdsd/oracle.hpp"
#include "sdsd/rate_lab.hpp"

namespace fs = std::filesystem;

namespace sdsd {
namespace {

/* Experiment settings on top of the problem parameters. Documented in the
 * README; every key has a default so a bare run works. */
struct ExperimentConfig {
  D2DParams params;
  std::string problem = "continuous";  // continuous | surrogate
  std::vector<double> epsilon_list = {0.01};
  int64_t horizon = 1000;
  std::vector<int64_t> epoch_count_list;
  int replications = 1;
  uint64_t base_seed = 1;
  double zeta = 0.1;
  std::string reference_file;
  int64_t surrogate_atoms = 1000;
  uint64_t surrogate_seed = 9001;
  int dual_grid_resolution = 10000;
  double lambda_max_override = 0;  // 0 keeps the reference recommendation
  double slot_duration = 1.0;
  int64_t trace_memory_cap = 1 << 18;  // records kept in memory before spilling
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (!isspace((unsigned char)c)) {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<double> parse_double_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  for (const std::string& item : split_list(s)) {
    if (item.empty()) throw ConfigError(what + ": empty list entry");
    size_t used = 0;
    double v = std::stod(item, &used);
    if (used != item.size()) throw ConfigError(what + ": cannot parse '" + item + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<int64_t> parse_int_list(const std::string& s, const std::string& what) {
  std::vector<int64_t> out;
  for (const std::string& item : split_list(s)) {
    if (item.empty()) throw ConfigError(what + ": empty list entry");
    size_t used = 0;
    int64_t v = std::stoll(item, &used);
    if (used != item.size()) throw ConfigError(what + ": cannot parse '" + item + "'");
    out.push_back(v);
  }
  return out;
}

ExperimentConfig load_experiment(const std::string& config_path) {
  ExperimentConfig cfg;
  if (config_path.empty()) {
    cfg.params.validate();
    return cfg;
  }
  KvFile kv = KvFile::parse_file(config_path);
  if (kv.has("problem_config")) {
    KvFile pk = KvFile::parse_file(kv.get_string("problem_config"));
    cfg.params = d2d_params_from_kv(pk);
    std::vector<std::string> extra = pk.unread_keys();
    if (!extra.empty()) {
      throw ConfigError(pk.origin() + ": unknown problem keys, first is '" + extra.front() + "'");
    }
  } else {
    cfg.params = d2d_params_from_kv(kv);
  }

  cfg.problem = kv.get_string("problem", cfg.problem);
  if (cfg.problem != "continuous" && cfg.problem != "surrogate") {
    throw ConfigError("problem must be 'continuous' or 'surrogate', got '" + cfg.problem + "'");
  }
  if (kv.has("epsilon_list")) {
    cfg.epsilon_list = parse_double_list(kv.get_string("epsilon_list"), "epsilon_list");
  }
  cfg.horizon = kv.get_int("horizon", cfg.horizon);
  if (kv.has("epoch_count_list")) {
    cfg.epoch_count_list = parse_int_list(kv.get_string("epoch_count_list"), "epoch_count_list");
  }
  cfg.replications = (int)kv.get_int("replications", cfg.replications);
  cfg.base_seed = (uint64_t)kv.get_int("base_seed", (int64_t)cfg.base_seed);
  cfg.zeta = kv.get_double("zeta", cfg.zeta);
  cfg.reference_file = kv.get_string("reference_file", cfg.reference_file);
  cfg.surrogate_atoms = kv.get_int("surrogate_atoms", cfg.surrogate_atoms);
  cfg.surrogate_seed = (uint64_t)kv.get_int("surrogate_seed", (int64_t)cfg.surrogate_seed);
  cfg.dual_grid_resolution = (int)kv.get_int("dual_grid_resolution", cfg.dual_grid_resolution);
  cfg.lambda_max_override = kv.get_double("lambda_max", cfg.lambda_max_override);
  cfg.slot_duration = kv.get_double("slot_duration", cfg.slot_duration);
  cfg.trace_memory_cap = kv.get_int("trace_memory_cap", cfg.trace_memory_cap);

  std::vector<std::string> unread = kv.unread_keys();
  if (!unread.empty()) {
    std::string joined;
    for (const std::string& k : unread) joined += (joined.empty() ? "" : ", ") + k;
    throw ConfigError(kv.origin() + ": unknown keys: " + joined);
  }

  if (cfg.replications < 1) throw ConfigError("replications must be at least 1");
  if (cfg.epsilon_list.empty()) throw ConfigError("epsilon_list is empty");
  for (double e : cfg.epsilon_list) {
    if (!(e > 0) || !std::isfinite(e)) throw ConfigError("every epsilon must be positive");
  }
  if (cfg.horizon < 1) throw ConfigError("horizon must be at least 1");
  for (int64_t n : cfg.epoch_count_list) {
    if (n < 1) throw ConfigError("epoch counts must be at least 1");
  }
  if (!(cfg.zeta >= 0 && cfg.zeta < 0.5)) throw ConfigError("zeta must lie in [0, 0.5)");
  if (cfg.surrogate_atoms < 1) throw ConfigError("surrogate_atoms must be at least 1");
  if (cfg.trace_memory_cap < 1) throw ConfigError("trace_memory_cap must be at least 1");
  if (cfg.slot_duration <= 0) throw ConfigError("slot_duration must be positive");
  cfg.params.validate();
  return cfg;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : ",") + fmt_double(x);
  return out;
}

std::string join_ints(const std::vector<int64_t>& v) {
  std::string out;
  for (int64_t x : v) out += (out.empty() ? "" : ",") + std::to_string(x);
  return out;
}

std::string experiment_config_echo(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "problem = " << cfg.problem << "\n";
  os << "epsilon_list = " << join_doubles(cfg.epsilon_list) << "\n";
  os << "horizon = " << cfg.horizon << "\n";
  if (!cfg.epoch_count_list.empty()) {
    os << "epoch_count_list = " << join_ints(cfg.epoch_count_list) << "\n";
  }
  os << "replications = " << cfg.replications << "\n";
  os << "base_seed = " << cfg.base_seed << "\n";
  os << "zeta = " << fmt_double(cfg.zeta) << "\n";
  if (!cfg.reference_file.empty()) os << "reference_file = " << cfg.reference_file << "\n";
  os << "surrogate_atoms = " << cfg.surrogate_atoms << "\n";
  os << "surrogate_seed = " << cfg.surrogate_seed << "\n";
  os << "dual_grid_resolution = " << cfg.dual_grid_resolution << "\n";
  if (cfg.lambda_max_override > 0) {
    os << "lambda_max = " << fmt_double(cfg.lambda_max_override) << "\n";
  }
  os << "slot_duration = " << fmt_double(cfg.slot_duration) << "\n";
  os << "trace_memory_cap = " << cfg.trace_memory_cap << "\n";
  os << d2d_params_to_kv(cfg.params);
  return os.str();
}

struct RefBundle {
  OracleReference ref;
  std::string source;  // "file" or "computed"
};

RefBundle acquire_reference(const ExperimentConfig& cfg, bool require_file) {
  if (!cfg.reference_file.empty()) {
    if (!fs::exists(cfg.reference_file)) {
      throw OracleError("oracle reference not found at '" + cfg.reference_file +
                        "'; run the oracle command first to create it");
    }
    RefBundle rb{load_reference(cfg.reference_file), "file"};
    if (d2d_params_to_kv(rb.ref.params) != d2d_params_to_kv(cfg.params)) {
      throw ConfigError(
          "problem parameters differ from the ones the reference file was built for; "
          "regenerate it with the oracle command");
    }
    return rb;
  }
  if (require_file) {
    throw OracleError(
        "no reference_file configured; run the oracle command and point reference_file at its "
        "output");
  }
  ReferenceOptions opt;
  opt.surrogate_atoms = cfg.surrogate_atoms;
  opt.surrogate_seed = cfg.surrogate_seed;
  opt.dual_grid_resolution = cfg.dual_grid_resolution;
  RefBundle rb{compute_reference(cfg.params, opt), "computed"};
  rb.ref.content_hash = git_blob_hash(serialize_reference(rb.ref));
  return rb;
}

double resolve_lambda_max(const ExperimentConfig& cfg, const OracleReference& ref) {
  return cfg.lambda_max_override > 0 ? cfg.lambda_max_override : ref.lambda_max;
}

std::unique_ptr<StochasticProblem> make_problem(const ExperimentConfig& cfg,
                                                const OracleReference& ref) {
  if (cfg.problem == "surrogate") {
    return std::make_unique<SurrogateProblem>(ref.dist, cfg.params);
  }
  return std::make_unique<D2DProblem>(cfg.params);
}

void write_preamble(std::ostream& out, const std::string& cmd, const ExperimentConfig& cfg,
                    const RefBundle& rb) {
  out << "# sdsd " << cmd << " output\n";
  std::istringstream is(experiment_config_echo(cfg));
  std::string line;
  while (std::getline(is, line)) out << "# " << line << "\n";
  out << "# reference_hash = " << (rb.ref.content_hash.empty() ? "none" : rb.ref.content_hash)
      << "\n";
  out << "# anchor_source = " << rb.source << "\n";
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open output file for writing: " + path);
  return out;
}

/* Fixed-order work distribution: jobs write into preassigned slots, so the
 * reduction after the join never depends on the worker count. */
void parallel_for(int workers, int jobs, const std::function<void(int)>& fn) {
  if (workers <= 1 || jobs <= 1) {
    for (int j = 0; j < jobs; ++j) fn(j);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mtx;
  std::exception_ptr first_err;
  auto worker = [&] {
    for (;;) {
      int j = next.fetch_add(1);
      if (j >= jobs) return;
      try {
        fn(j);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mtx);
        if (!first_err) first_err = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  int count = std::min(workers, jobs);
  pool.reserve((size_t)count);
  for (int w = 0; w < count; ++w) pool.emplace_back(worker);
  for (std::thread& th : pool) th.join();
  if (first_err) std::rethrow_exception(first_err);
}

std::vector<std::string> trace_csv_header() {
  return {"t",    "lambda", "f",    "fbar",        "g",            "slot_primal",
          "winner", "power",  "cost", "rate_target", "realized_rate"};
}

void write_trace_csv(const std::string& path, const ExperimentConfig& cfg, const RefBundle& rb,
                     const Anchors& anchors, const Trace& trace, double eps, int rep,
                     uint64_t seed) {
  std::ofstream out = open_out(path);
  write_preamble(out, "run", cfg, rb);
  out << "# epsilon = " << fmt_double(eps) << "\n";
  out << "# replication = " << rep << "\n";
  out << "# seed = " << seed << "\n";
  out << csv_row(trace_csv_header());
  trace.for_each([&](const SlotRecord& rec) {
    double g = std::isnan(rec.slot_dual) ? anchors.dual_eval(rec.lambda) : rec.slot_dual;
    double fbar = rec.subgrad.mean_value ? (*rec.subgrad.mean_value)[0]
                                         : anchors.mean_eval(rec.lambda)[0];
    out << csv_row({std::to_string(rec.t), fmt_double(rec.lambda[0]),
                    fmt_double(rec.subgrad.value[0]), fmt_double(fbar), fmt_double(g),
                    fmt_double(rec.slot_primal), std::to_string(rec.winner),
                    fmt_double(rec.power), fmt_double(rec.cost), fmt_double(rec.rate_target),
                    fmt_double(rec.realized_rate)});
  });
  out.flush();
  if (!out) throw ConfigError("short write: " + path);
}

void write_epochs_csv(const std::string& path, const ExperimentConfig& cfg, const RefBundle& rb,
                      const Anchors& anchors, const Trace& trace, double eps, int rep,
                      uint64_t seed) {
  EpochAccumulator acc(eps, DualVector{{0.0}, resolve_lambda_max(cfg, rb.ref)}, anchors);
  trace.for_each([&](const SlotRecord& rec) { acc.observe(rec); });

  std::ofstream out = open_out(path);
  write_preamble(out, "run", cfg, rb);
  out << "# epsilon = " << fmt_double(eps) << "\n";
  out << "# replication = " << rep << "\n";
  out << "# seed = " << seed << "\n";
  out << csv_row(epoch_report_header());
  for (const EpochReport& er : acc.reports()) out << csv_row(epoch_report_row(er));
  // close with the terminal state when the horizon stopped between boundaries
  if (acc.slots() > 0 &&
      (acc.reports().empty() || acc.reports().back().t != acc.slots())) {
    out << csv_row(epoch_report_row(acc.snapshot()));
  }
  out.flush();
  if (!out) throw ConfigError("short write: " + path);
}

int cmd_run(const ExperimentConfig& cfg, const std::string& out_dir, int workers) {
  fs::create_directories(out_dir);
  RefBundle rb = acquire_reference(cfg, false);
  Anchors anchors = anchors_from_reference(rb.ref);
  double box = resolve_lambda_max(cfg, rb.ref);

  const int eps_count = (int)cfg.epsilon_list.size();
  const int jobs = eps_count * cfg.replications;
  parallel_for(workers, jobs, [&](int j) {
    int k = j / cfg.replications;
    int r = j % cfg.replications;
    double eps = cfg.epsilon_list[(size_t)k];
    uint64_t seed = cfg.base_seed + (uint64_t)r;
    std::string stem = out_dir + "/run_e" + std::to_string(k) + "_r" + std::to_string(r);

    std::unique_ptr<StochasticProblem> problem = make_problem(cfg, rb.ref);
    SolverConfig scfg;
    scfg.step_size = eps;
    scfg.horizon = cfg.horizon;
    scfg.seed = seed;
    scfg.initial_dual = DualVector{{0.0}, box};
    scfg.trace_memory_cap = (size_t)cfg.trace_memory_cap;
    scfg.spill_path = stem + ".spill";
    {
      Trace trace((size_t)cfg.trace_memory_cap, scfg.spill_path);
      run_solver(*problem, scfg, trace);
      write_trace_csv(stem + "_trace.csv", cfg, rb, anchors, trace, eps, r, seed);
      write_epochs_csv(stem + "_epochs.csv", cfg, rb, anchors, trace, eps, r, seed);
    }
    std::error_code ec;
    fs::remove(scfg.spill_path, ec);
  });
  std::printf("run: wrote %d trace/epoch file pair(s) under %s\n", jobs, out_dir.c_str());
  return 0;
}

struct SweepCell {
  double scale = 0;  // n, or epsilon
  double eps = 0;
  int64_t n = 0;
  int64_t t = 0;  // slots to the boundary
};

int cmd_sweep(const ExperimentConfig& cfg, const std::string& mode, const std::string& out_dir,
              int workers) {
  if (cfg.problem != "surrogate") {
    throw ConfigError(
        "sweep measures the noise gap term against exact anchors; set problem = surrogate");
  }
  fs::create_directories(out_dir);
  RefBundle rb = acquire_reference(cfg, true);
  Anchors anchors = anchors_from_reference(rb.ref);
  const DualVector l0{{0.0}, resolve_lambda_max(cfg, rb.ref)};

  const bool vary_n = mode == "fix_eps_vary_n";
  std::vector<SweepCell> cells;
  if (vary_n) {
    if (cfg.epsilon_list.size() != 1) {
      throw ConfigError("fix_eps_vary_n uses exactly one entry in epsilon_list");
    }
    if (cfg.epoch_count_list.empty()) {
      throw ConfigError("fix_eps_vary_n needs epoch_count_list");
    }
    for (size_t i = 1; i < cfg.epoch_count_list.size(); ++i) {
      if (cfg.epoch_count_list[i] <= cfg.epoch_count_list[i - 1]) {
        throw ConfigError("epoch_count_list must increase strictly");
      }
    }
    double eps = cfg.epsilon_list[0];
    for (int64_t n : cfg.epoch_count_list) {
      cells.push_back(SweepCell{(double)n, eps, n, (int64_t)llround((double)n / eps)});
    }
  } else {
    if (cfg.epoch_count_list.size() != 1) {
      throw ConfigError("fix_n_vary_eps uses epoch_count_list with exactly one entry");
    }
    int64_t n = cfg.epoch_count_list[0];
    for (double eps : cfg.epsilon_list) {
      cells.push_back(SweepCell{eps, eps, n, (int64_t)llround((double)n / eps)});
    }
  }

  const int reps = cfg.replications;
  std::vector<std::vector<EpochReport>> results((size_t)cells.size());
  for (auto& v : results) v.resize((size_t)reps);

  if (vary_n) {
    // one trajectory per replication covers every boundary
    int64_t horizon = cells.back().t;
    parallel_for(workers, reps, [&](int r) {
      SurrogateProblem problem(rb.ref.dist, cfg.params);
      SolverConfig scfg;
      scfg.step_size = cells[0].eps;
      scfg.horizon = horizon;
      scfg.seed = cfg.base_seed + (uint64_t)r;
      scfg.initial_dual = l0;
      EpochAccumulator acc(scfg.step_size, l0, anchors);
      struct Sink final : public TraceSink {
        EpochAccumulator* acc;
        void append(const SlotRecord& rec) override { acc->observe(rec); }
      } sink;
      sink.acc = &acc;
      run_solver(problem, scfg, sink);
      for (size_t c = 0; c < cells.size(); ++c) {
        for (const EpochReport& er : acc.reports()) {
          if (er.n == cells[c].n) {
            results[c][(size_t)r] = er;
            break;
          }
        }
      }
    });
  } else {
    // cells are independent runs; replications share seeds across cells
    parallel_for(workers, (int)cells.size() * reps, [&](int j) {
      size_t c = (size_t)(j / reps);
      int r = j % reps;
      SurrogateProblem problem(rb.ref.dist, cfg.params);
      SolverConfig scfg;
      scfg.step_size = cells[c].eps;
      scfg.horizon = cells[c].t;
      scfg.seed = cfg.base_seed + (uint64_t)r;
      scfg.initial_dual = l0;
      EpochAccumulator acc(scfg.step_size, l0, anchors);
      struct Sink final : public TraceSink {
        EpochAccumulator* acc;
        void append(const SlotRecord& rec) override { acc->observe(rec); }
      } sink;
      sink.acc = &acc;
      run_solver(problem, scfg, sink);
      for (const EpochReport& er : acc.reports()) {
        if (er.n == cells[c].n) {
          results[c][(size_t)r] = er;
          break;
        }
      }
    });
  }

  for (size_t c = 0; c < cells.size(); ++c) {
    for (int r = 0; r < reps; ++r) {
      if (results[c][(size_t)r].t == 0) {
        throw ConfigError("sweep cell never reached its epoch boundary; check the lists");
      }
    }
  }

  // per-cell detail files
  for (size_t c = 0; c < cells.size(); ++c) {
    std::ofstream out = open_out(out_dir + "/sweep_cell" + std::to_string(c) + "_detail.csv");
    write_preamble(out, "sweep", cfg, rb);
    out << "# mode = " << mode << "\n";
    out << "# cell = " << c << "\n";
    out << "# scale = " << fmt_double(cells[c].scale) << "\n";
    std::vector<std::string> header = {"rep", "seed"};
    for (const std::string& h : epoch_report_header()) header.push_back(h);
    out << csv_row(header);
    for (int r = 0; r < reps; ++r) {
      std::vector<std::string> row = {std::to_string(r),
                                      std::to_string(cfg.base_seed + (uint64_t)r)};
      for (const std::string& f : epoch_report_row(results[c][(size_t)r])) row.push_back(f);
      out << csv_row(row);
    }
  }

  // ordered reduction into the summary
  std::vector<DecayCell> dcells;
  std::ofstream out = open_out(out_dir + "/sweep_summary.csv");
  write_preamble(out, "sweep", cfg, rb);
  out << "# mode = " << mode << "\n";
  out << csv_row({"cell", "mode", "scale", "epsilon", "n", "t", "replications", "ct_median",
                  "ct_q25", "ct_q75", "tail_nu", "tail_threshold", "tail_freq", "tail_wilson_lo",
                  "tail_wilson_hi"});
  std::vector<double> medians;
  for (size_t c = 0; c < cells.size(); ++c) {
    std::vector<double> cts;
    for (int r = 0; r < reps; ++r) cts.push_back(results[c][(size_t)r].Ct);
    dcells.push_back(DecayCell{cells[c].scale, cts});
    double med = median_of(cts);
    medians.push_back(med);
    double nu = vary_n ? (double)cells[c].n : 1.0 / cells[c].eps;
    TailFrequency tail = tail_frequency(cts, nu, cfg.zeta);
    out << csv_row({std::to_string(c), mode, fmt_double(cells[c].scale),
                    fmt_double(cells[c].eps), std::to_string(cells[c].n),
                    std::to_string(cells[c].t), std::to_string(reps), fmt_double(med),
                    fmt_double(quantile_of(cts, 0.25)), fmt_double(quantile_of(cts, 0.75)),
                    fmt_double(nu), fmt_double(tail.threshold), fmt_double(tail.freq),
                    fmt_double(tail.wilson_lo), fmt_double(tail.wilson_hi)});
  }
  bool monotone = true;
  for (size_t c = 1; c < medians.size(); ++c) {
    if (medians[c] > medians[c - 1]) monotone = false;
  }
  DecayFit fit;
  if (dcells.size() >= 3) {
    fit = decay_fit(dcells);
  } else {
    fit.degenerate = true;  // a slope through fewer than 3 cells is not a trend
    fit.cells_used = (int)dcells.size();
  }
  out << "# decay_fit exponent = " << fmt_double(fit.exponent) << "\n";
  out << "# decay_fit ci_lo = " << fmt_double(fit.ci_lo) << "\n";
  out << "# decay_fit ci_hi = " << fmt_double(fit.ci_hi) << "\n";
  out << "# decay_fit cells_used = " << fit.cells_used << "\n";
  out << "# decay_fit cells_excluded = " << fit.cells_excluded << "\n";
  out << "# decay_fit degenerate = " << (fit.degenerate ? "true" : "false") << "\n";
  out << "# medians_nonincreasing = " << (monotone ? "true" : "false") << "\n";

  std::printf("sweep: %zu cell(s) x %d replication(s), exponent %.4f, summary under %s\n",
              cells.size(), reps, fit.exponent, out_dir.c_str());
  return 0;
}

int cmd_oracle(const ExperimentConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  ReferenceOptions opt;
  opt.surrogate_atoms = cfg.surrogate_atoms;
  opt.surrogate_seed = cfg.surrogate_seed;
  opt.dual_grid_resolution = cfg.dual_grid_resolution;
  OracleReference ref = compute_reference(cfg.params, opt);
  std::string path =
      cfg.reference_file.empty() ? out_dir + "/reference.kv" : cfg.reference_file;
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  save_reference(ref, path);
  std::printf("oracle: wrote %s\n", path.c_str());
  std::printf("  lambda_star = %.12g\n  D = %.12g\n  G = %.12g\n  chi = %.12g\n", ref.lambda_star,
              ref.D, ref.G, ref.chi);
  std::printf("  lambda_max = %.12g\n  best_primal = %.12g\n  duality_gap = %.3g\n",
              ref.lambda_max, ref.best_primal, ref.duality_gap);
  std::printf("  atoms = %lld\n  hash = %s\n", (long long)ref.dist.size(),
              ref.content_hash.c_str());
  return 0;
}

int cmd_compare(const ExperimentConfig& cfg, const std::string& out_dir, int workers) {
  if (cfg.epsilon_list.size() != 1) {
    throw ConfigError("compare uses exactly one entry in epsilon_list");
  }
  fs::create_directories(out_dir);
  RefBundle rb = acquire_reference(cfg, false);
  const double eps = cfg.epsilon_list[0];
  const double box = resolve_lambda_max(cfg, rb.ref);
  const int seeds = cfg.replications;
  const int64_t slots = cfg.horizon;

  struct SeedResult {
    PolicyMetrics prop, opp, rand;
    MatchReport opp_match, rand_match;
  };
  std::vector<SeedResult> results((size_t)seeds);

  parallel_for(workers, seeds, [&](int s) {
    uint64_t seed = cfg.base_seed + (uint64_t)s;
    Rng state_rng(seed);
    std::vector<NetworkState> states;
    states.reserve((size_t)slots);
    for (int64_t t = 0; t < slots; ++t) states.push_back(sample_state(cfg.params, state_rng));

    ReplayProblem replay(states, cfg.params);
    struct AllocSink final : public TraceSink {
      std::vector<Allocation> allocs;
      void append(const SlotRecord& rec) override {
        Allocation a;
        a.winner = rec.winner;
        a.power = rec.power;
        a.cost = rec.cost;
        a.rate_target = rec.rate_target;
        a.realized_rate = rec.realized_rate;
        allocs.push_back(a);
      }
    } sink;
    SolverConfig scfg;
    scfg.step_size = eps;
    scfg.horizon = slots;
    scfg.seed = seed;
    scfg.initial_dual = DualVector{{0.0}, box};
    run_solver(replay, scfg, sink);

    SeedResult res;
    res.prop = policy_metrics(sink.allocs, cfg.slot_duration);

    Rng pick_rng(seed + 700001);
    std::vector<int> rand_winners, opp_winners;
    rand_winners.reserve(states.size());
    opp_winners.reserve(states.size());
    for (const NetworkState& st : states) {
      rand_winners.push_back(random_winner(st, pick_rng));
      opp_winners.push_back(opportunistic_winner(st));
    }
    auto scored = [&](const std::vector<int>& winners, PolicyMetrics& m, MatchReport& match) {
      match = matched_power_scaling(res.prop.aggregate_power, winners, states, cfg.params);
      std::vector<Allocation> allocs;
      allocs.reserve(states.size());
      for (size_t t = 0; t < states.size(); ++t) {
        allocs.push_back(budget_allocation(winners[t], states[t], match.budget, cfg.params));
      }
      m = policy_metrics(allocs, cfg.slot_duration);
    };
    scored(opp_winners, res.opp, res.opp_match);
    scored(rand_winners, res.rand, res.rand_match);
    results[(size_t)s] = res;
  });

  auto metric_row = [&](const char* policy, int s, const PolicyMetrics& m, double budget,
                        bool matched) {
    return csv_row({policy, std::to_string(s), std::to_string(m.slots),
                    fmt_double(m.downloaded_data), fmt_double(m.cost_incurred),
                    fmt_double(m.aggregate_power), fmt_double(m.avg_utility_minus_penalty),
                    fmt_double(m.utility_minus_penalty_total), fmt_double(budget),
                    matched ? "1" : "0"});
  };

  std::ofstream out = open_out(out_dir + "/compare.csv");
  write_preamble(out, "compare", cfg, rb);
  out << csv_row({"policy", "seed", "slots", "downloaded_data", "cost_incurred",
                  "aggregate_power", "avg_utility_minus_penalty", "utility_minus_penalty_total",
                  "budget", "power_matched"});
  int order_ok = 0, best_ok = 0, cost_ok = 0;
  double mean_util[3] = {0, 0, 0};
  for (int s = 0; s < seeds; ++s) {
    const SeedResult& r = results[(size_t)s];
    out << metric_row("proposed", s, r.prop, r.prop.cost_incurred / (double)r.prop.slots, true);
    out << metric_row("opportunistic", s, r.opp, r.opp_match.budget, r.opp_match.matched);
    out << metric_row("random", s, r.rand, r.rand_match.budget, r.rand_match.matched);
    bool prop_best = r.prop.avg_utility_minus_penalty > r.opp.avg_utility_minus_penalty &&
                     r.prop.avg_utility_minus_penalty > r.rand.avg_utility_minus_penalty;
    if (prop_best) ++best_ok;
    if (r.prop.avg_utility_minus_penalty > r.opp.avg_utility_minus_penalty &&
        r.opp.avg_utility_minus_penalty > r.rand.avg_utility_minus_penalty) {
      ++order_ok;
    }
    if (r.rand.cost_incurred > r.opp.cost_incurred) ++cost_ok;
    mean_util[0] += r.prop.avg_utility_minus_penalty / seeds;
    mean_util[1] += r.opp.avg_utility_minus_penalty / seeds;
    mean_util[2] += r.rand.avg_utility_minus_penalty / seeds;
  }

  std::ofstream sum = open_out(out_dir + "/compare_summary.csv");
  write_preamble(sum, "compare", cfg, rb);
  sum << csv_row({"seeds", "frac_proposed_best", "frac_expected_order",
                  "frac_random_cost_higher", "mean_util_proposed", "mean_util_opportunistic",
                  "mean_util_random"});
  sum << csv_row({std::to_string(seeds), fmt_double((double)best_ok / seeds),
                  fmt_double((double)order_ok / seeds), fmt_double((double)cost_ok / seeds),
                  fmt_double(mean_util[0]), fmt_double(mean_util[1]), fmt_double(mean_util[2])});

  std::printf("compare: %d seed(s), proposed best on %d, expected order on %d, results under %s\n",
              seeds, best_ok, order_ok, out_dir.c_str());
  return 0;
}

int cmd_selftest(const std::string& criteria, bool quick, uint64_t base_seed,
                 const std::string& out_dir) {
  AcceptanceOptions opt;
  opt.base_seed = base_seed;
  opt.quick = quick;
  std::vector<int64_t> ids;
  if (criteria.empty()) {
    for (int i = 1; i <= kNumCriteria; ++i) ids.push_back(i);
  } else {
    ids = parse_int_list(criteria, "criteria");
    for (int64_t id : ids) {
      if (id < 1 || id > kNumCriteria) {
        throw ConfigError("criteria entries must lie in 1.." + std::to_string(kNumCriteria));
      }
    }
  }

  fs::create_directories(out_dir);
  std::ofstream log = open_out(out_dir + "/selftest.txt");
  bool all_pass = true;
  for (int64_t id : ids) {
    CriterionResult res = run_criterion((int)id, opt);
    std::string line = criterion_line(res);
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    log << line << "\n";
    if (!res.pass) all_pass = false;
  }
  log << (all_pass ? "ALL PASS" : "FAILURES PRESENT") << "\n";
  std::printf("%s\n", all_pass ? "ALL PASS" : "FAILURES PRESENT");
  return all_pass ? 0 : 4;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"constant step-size stochastic dual subgradient experiment driver"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  int workers = 1;
  uint64_t seed_override = 0;
  app.add_option("--config", config_path, "key = value experiment config file");
  app.add_option("--out", out_dir, "output directory (default: out)");
  app.add_option("--workers", workers, "concurrent replications (default: 1)")
      ->check(CLI::PositiveNumber);
  CLI::Option* seed_opt = app.add_option("--seed", seed_override, "override base_seed");

  CLI::App* c_run = app.add_subcommand("run", "solver trajectories with epoch reports");
  CLI::App* c_sweep =
      app.add_subcommand("sweep", "replication sweep of the noise gap term over (epsilon, n)");
  std::string mode;
  c_sweep->add_option("--mode", mode, "fix_n_vary_eps | fix_eps_vary_n")
      ->required()
      ->check(CLI::IsMember({"fix_n_vary_eps", "fix_eps_vary_n"}));
  CLI::App* c_oracle =
      app.add_subcommand("oracle", "compute and write the checksummed reference anchors");
  CLI::App* c_compare =
      app.add_subcommand("compare", "score the solver against dual-free policies");
  CLI::App* c_selftest = app.add_subcommand("selftest", "run the release criteria");
  std::string criteria;
  bool quick = false;
  c_selftest->add_option("--criteria", criteria, "comma list of criterion ids (default: all)");
  c_selftest->add_flag("--quick", quick, "reduced draws; smoke only, not a release signal");
  for (CLI::App* sub : {c_run, c_sweep, c_oracle, c_compare, c_selftest}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (c_selftest->parsed()) {
      uint64_t base = seed_opt->count() ? seed_override : 42;  // release seed, fixed up front
      return cmd_selftest(criteria, quick, base, out_dir);
    }
    ExperimentConfig cfg = load_experiment(config_path);
    if (seed_opt->count()) cfg.base_seed = seed_override;
    if (c_run->parsed()) return cmd_run(cfg, out_dir, workers);
    if (c_sweep->parsed()) return cmd_sweep(cfg, mode, out_dir, workers);
    if (c_oracle->parsed()) return cmd_oracle(cfg, out_dir);
    if (c_compare->parsed()) return cmd_compare(cfg, out_dir, workers);
    throw ConfigError("no subcommand selected");
  } catch (const OracleError& e) {
    std::fprintf(stderr, "oracle error: %s\n", e.what());
    return 3;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace sdsd
