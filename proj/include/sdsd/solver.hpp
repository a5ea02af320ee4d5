#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdsd/util.hpp"

namespace sdsd {

/* Dual iterate constrained to the box [0, lambda_max]^K. */
struct DualVector {
  std::vector<double> v;
  double lambda_max = 0;

  int dim() const { return (int)v.size(); }
};

// coordinatewise clamp of raw onto [0, lambda_max]; rejects non-finite input
DualVector project_box(std::span<const double> raw, double lambda_max);

struct SubgradientSample {
  std::vector<double> value;                      // stochastic subgradient at lambda_t
  std::optional<std::vector<double>> mean_value;  // exact expectation when the
                                                  // state distribution is finite
  int64_t slot = 0;
};

// one projected descent step: project_box(lambda - eps * subgrad)
DualVector ssd_step(const DualVector& lambda, const SubgradientSample& subgrad, double eps);
DualVector ssd_step(const DualVector& lambda, std::span<const double> subgrad, double eps);

// completed-epoch count after t slots of step size eps
int64_t epoch_index(int64_t t, double eps);

// prefix means: out[t] = (1/(t+1)) * sum of in[0..t]
std::vector<std::vector<double>> running_average(const std::vector<std::vector<double>>& in);
std::vector<double> running_average(const std::vector<double>& in);

struct SolverConfig {
  double step_size = 0.01;
  int64_t horizon = 1000;
  uint64_t seed = 0;
  DualVector initial_dual;
  bool check_bound = true;  // verify |f_t| <= G on every slot
  size_t trace_memory_cap = (size_t)1 << 21;
  std::string spill_path;   // backing file once the cap is hit; empty keeps
                            // everything in memory regardless of cap
};

/* Everything one slot produced. The allocation summary fields are filled by
 * problems that have them (the D2D ones) and left at their defaults by
 * synthetic problems. */
struct SlotRecord {
  int64_t t = 0;
  std::vector<double> lambda;
  SubgradientSample subgrad;
  double slot_dual = std::numeric_limits<double>::quiet_NaN();    // g(lambda_t) when cheap
  double slot_primal = std::numeric_limits<double>::quiet_NaN();  // objective of this slot's allocation
  int winner = -1;
  double power = 0, cost = 0, rate_target = 0, realized_rate = 0;
};

class TraceSink {
 public:
  virtual ~TraceSink() = default;
  virtual void append(const SlotRecord& rec) = 0;
};

/* In-memory trace with optional disk spill. Records stay in memory up to the
 * cap; further appends go to a binary backing file so replication sweeps at
 * long horizons do not exhaust memory. for_each replays in slot order. */
class Trace final : public TraceSink {
 public:
  Trace() = default;
  explicit Trace(size_t memory_cap, std::string spill_path = "");
  ~Trace();
  Trace(Trace&&) noexcept;
  Trace& operator=(Trace&&) noexcept;
  Trace(const Trace&) = delete;
  Trace& operator=(const Trace&) = delete;

  void append(const SlotRecord& rec) override;
  size_t size() const { return count_; }
  bool spilled() const { return spilled_count_ > 0; }
  // valid for i < memory_cap only
  const SlotRecord& in_memory(size_t i) const { return mem_.at(i); }
  void for_each(const std::function<void(const SlotRecord&)>& fn) const;

 private:
  std::vector<SlotRecord> mem_;
  size_t memory_cap_ = (size_t)1 << 21;
  std::string spill_path_;
  void* spill_file_ = nullptr;  // FILE*, kept opaque here
  size_t count_ = 0;
  size_t spilled_count_ = 0;
};

/* Contract a problem implements to be driven by the solver: sample one slot's
 * exogenous state at the current dual and return the realized subgradient plus
 * whatever else the slot produced. */
class StochasticProblem {
 public:
  virtual ~StochasticProblem() = default;
  virtual int dual_dim() const = 0;
  virtual double subgradient_bound() const = 0;
  virtual bool has_exact_mean() const = 0;
  virtual SlotRecord sample_slot(std::span<const double> lambda, int64_t t, Rng& rng) = 0;
  // exact dual value when the problem can supply one in closed form
  virtual std::optional<double> exact_dual(std::span<const double> lambda) const {
    (void)lambda;
    return std::nullopt;
  }
};

/* The recursion itself: lambda_{t+1} = project(lambda_t - eps f_t(lambda_t)),
 * one record per slot pushed into the sink. Strictly sequential; identical
 * inputs give bit-identical traces. */
void run_solver(StochasticProblem& problem, const SolverConfig& config, TraceSink& sink);
Trace run_solver(StochasticProblem& problem, const SolverConfig& config);

}  // namespace sdsd
