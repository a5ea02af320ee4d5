#include "sdsd/solver.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace sdsd {

DualVector project_box(std::span<const double> raw, double lambda_max) {
  if (!(lambda_max > 0)) throw std::invalid_argument("project_box: lambda_max must be positive");
  DualVector out;
  out.lambda_max = lambda_max;
  out.v.resize(raw.size());
  for (size_t k = 0; k < raw.size(); k++) {
    if (!std::isfinite(raw[k]))
      throw std::invalid_argument("project_box: non-finite coordinate " + std::to_string(k));
    double x = raw[k];
    if (x <= 0.0) x = 0.0;           // also normalizes -0
    if (x > lambda_max) x = lambda_max;
    out.v[k] = x;
  }
  return out;
}

DualVector ssd_step(const DualVector& lambda, std::span<const double> subgrad, double eps) {
  if (subgrad.size() != lambda.v.size())
    throw std::invalid_argument("ssd_step: dimension mismatch");
  if (!(eps > 0)) throw std::invalid_argument("ssd_step: eps must be positive");
  std::vector<double> raw(lambda.v.size());
  for (size_t k = 0; k < raw.size(); k++) raw[k] = lambda.v[k] - eps * subgrad[k];
  return project_box(raw, lambda.lambda_max);
}

DualVector ssd_step(const DualVector& lambda, const SubgradientSample& subgrad, double eps) {
  return ssd_step(lambda, std::span<const double>(subgrad.value), eps);
}

int64_t epoch_index(int64_t t, double eps) {
  if (t < 0) throw std::invalid_argument("epoch_index: negative slot");
  if (!(eps > 0)) throw std::invalid_argument("epoch_index: eps must be positive");
  return (int64_t)std::floor(eps * (double)t);
}

std::vector<std::vector<double>> running_average(const std::vector<std::vector<double>>& in) {
  if (in.empty()) throw std::invalid_argument("running_average: empty input");
  std::vector<std::vector<double>> out(in.size());
  std::vector<double> acc(in[0].size(), 0.0);
  for (size_t t = 0; t < in.size(); t++) {
    if (in[t].size() != acc.size())
      throw std::invalid_argument("running_average: ragged input");
    for (size_t k = 0; k < acc.size(); k++) acc[k] += in[t][k];
    out[t].resize(acc.size());
    for (size_t k = 0; k < acc.size(); k++) out[t][k] = acc[k] / (double)(t + 1);
  }
  return out;
}

std::vector<double> running_average(const std::vector<double>& in) {
  if (in.empty()) throw std::invalid_argument("running_average: empty input");
  std::vector<double> out(in.size());
  double acc = 0;
  for (size_t t = 0; t < in.size(); t++) {
    acc += in[t];
    out[t] = acc / (double)(t + 1);
  }
  return out;
}

Trace::Trace(size_t memory_cap, std::string spill_path)
    : memory_cap_(memory_cap), spill_path_(std::move(spill_path)) {}

Trace::~Trace() {
  if (spill_file_) std::fclose((FILE*)spill_file_);
}

Trace::Trace(Trace&& o) noexcept { *this = std::move(o); }

Trace& Trace::operator=(Trace&& o) noexcept {
  if (this != &o) {
    if (spill_file_) std::fclose((FILE*)spill_file_);
    mem_ = std::move(o.mem_);
    memory_cap_ = o.memory_cap_;
    spill_path_ = std::move(o.spill_path_);
    spill_file_ = o.spill_file_;
    count_ = o.count_;
    spilled_count_ = o.spilled_count_;
    o.spill_file_ = nullptr;
    o.count_ = o.spilled_count_ = 0;
  }
  return *this;
}

namespace {

void put_u8(FILE* f, uint8_t x) { std::fwrite(&x, 1, 1, f); }
void put_i32(FILE* f, int32_t x) { std::fwrite(&x, sizeof x, 1, f); }
void put_i64(FILE* f, int64_t x) { std::fwrite(&x, sizeof x, 1, f); }
void put_f64(FILE* f, double x) { std::fwrite(&x, sizeof x, 1, f); }
void put_vec(FILE* f, const std::vector<double>& v) {
  std::fwrite(v.data(), sizeof(double), v.size(), f);
}

void write_record(FILE* f, const SlotRecord& r) {
  put_i64(f, r.t);
  put_i32(f, (int32_t)r.lambda.size());
  put_vec(f, r.lambda);
  put_vec(f, r.subgrad.value);
  put_u8(f, r.subgrad.mean_value ? 1 : 0);
  if (r.subgrad.mean_value) put_vec(f, *r.subgrad.mean_value);
  put_f64(f, r.slot_dual);
  put_f64(f, r.slot_primal);
  put_i32(f, r.winner);
  put_f64(f, r.power);
  put_f64(f, r.cost);
  put_f64(f, r.rate_target);
  put_f64(f, r.realized_rate);
}

bool read_record(FILE* f, SlotRecord& r) {
  if (std::fread(&r.t, sizeof r.t, 1, f) != 1) return false;
  int32_t k = 0;
  if (std::fread(&k, sizeof k, 1, f) != 1) return false;
  auto read_vec = [&](std::vector<double>& v) {
    v.resize((size_t)k);
    return std::fread(v.data(), sizeof(double), v.size(), f) == v.size();
  };
  if (!read_vec(r.lambda)) return false;
  r.subgrad.slot = r.t;
  if (!read_vec(r.subgrad.value)) return false;
  uint8_t has_mean = 0;
  if (std::fread(&has_mean, 1, 1, f) != 1) return false;
  if (has_mean) {
    r.subgrad.mean_value.emplace();
    if (!read_vec(*r.subgrad.mean_value)) return false;
  } else {
    r.subgrad.mean_value.reset();
  }
  bool ok = std::fread(&r.slot_dual, sizeof(double), 1, f) == 1 &&
            std::fread(&r.slot_primal, sizeof(double), 1, f) == 1 &&
            std::fread(&r.winner, sizeof r.winner, 1, f) == 1 &&
            std::fread(&r.power, sizeof(double), 1, f) == 1 &&
            std::fread(&r.cost, sizeof(double), 1, f) == 1 &&
            std::fread(&r.rate_target, sizeof(double), 1, f) == 1 &&
            std::fread(&r.realized_rate, sizeof(double), 1, f) == 1;
  return ok;
}

}  // namespace

void Trace::append(const SlotRecord& rec) {
  if (mem_.size() < memory_cap_ || spill_path_.empty()) {
    mem_.push_back(rec);
  } else {
    if (!spill_file_) {
      spill_file_ = std::fopen(spill_path_.c_str(), "wb+");
      if (!spill_file_) throw std::runtime_error("Trace: cannot open spill file " + spill_path_);
    }
    std::fseek((FILE*)spill_file_, 0, SEEK_END);
    write_record((FILE*)spill_file_, rec);
    spilled_count_++;
  }
  count_++;
}

void Trace::for_each(const std::function<void(const SlotRecord&)>& fn) const {
  for (const auto& r : mem_) fn(r);
  if (spilled_count_ > 0) {
    FILE* f = (FILE*)spill_file_;
    std::fflush(f);
    std::fseek(f, 0, SEEK_SET);
    SlotRecord r;
    size_t n = 0;
    while (n < spilled_count_ && read_record(f, r)) {
      fn(r);
      n++;
    }
    if (n != spilled_count_)
      throw std::runtime_error("Trace: spill file truncated (" + spill_path_ + ")");
  }
}

void run_solver(StochasticProblem& problem, const SolverConfig& config, TraceSink& sink) {
  if (!(config.step_size > 0)) throw std::invalid_argument("run_solver: step_size must be positive");
  if (config.horizon < 1) throw std::invalid_argument("run_solver: horizon must be at least 1");
  DualVector lam = config.initial_dual;
  if (lam.dim() != problem.dual_dim())
    throw std::invalid_argument("run_solver: initial dual dimension does not match problem");
  if (!(lam.lambda_max > 0))
    throw std::invalid_argument("run_solver: initial dual needs a positive lambda_max");
  lam = project_box(lam.v, lam.lambda_max);  // tolerate an out-of-box start

  Rng rng(config.seed);
  const double G = problem.subgradient_bound();
  for (int64_t t = 0; t < config.horizon; t++) {
    SlotRecord rec;
    try {
      rec = problem.sample_slot(lam.v, t, rng);
    } catch (const std::exception& e) {
      throw std::runtime_error("slot " + std::to_string(t) + ": " + e.what());
    }
    rec.t = t;
    rec.subgrad.slot = t;
    rec.lambda = lam.v;
    if (config.check_bound) {
      double norm2 = 0;
      for (double x : rec.subgrad.value) norm2 += x * x;
      if (std::sqrt(norm2) > G * (1 + 1e-12))
        throw std::runtime_error("slot " + std::to_string(t) +
                                 ": subgradient exceeds the declared bound G");
    }
    sink.append(rec);
    lam = ssd_step(lam, rec.subgrad, config.step_size);
  }
}

Trace run_solver(StochasticProblem& problem, const SolverConfig& config) {
  Trace trace(config.trace_memory_cap, config.spill_path);
  run_solver(problem, config, trace);
  return trace;
}

}  // namespace sdsd
