#include "sdsd/discrete.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sdsd/rate_lab.hpp"

namespace sdsd {

void DiscreteDistribution::validate(const D2DParams& params) const {
  if (atoms.empty()) throw std::invalid_argument("DiscreteDistribution: no atoms");
  if (atoms.size() != probs.size())
    throw std::invalid_argument("DiscreteDistribution: atom/prob size mismatch");
  double sum = 0;
  for (double p : probs) {
    if (!(p >= 0)) throw std::invalid_argument("DiscreteDistribution: negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument("DiscreteDistribution: probabilities sum to " + fmt_double(sum));
  for (const auto& a : atoms) a.check(params);
}

std::string DiscreteDistribution::serialize() const {
  std::ostringstream out;
  for (size_t a = 0; a < atoms.size(); a++) {
    out << "atom = " << fmt_double(probs[a]) << ' ' << atoms[a].size();
    for (int j = 0; j < atoms[a].size(); j++) {
      out << ' ' << atoms[a].active[(size_t)j] << ':' << fmt_double(atoms[a].costs[(size_t)j])
          << ':' << fmt_double(atoms[a].gains[(size_t)j]);
    }
    out << '\n';
  }
  return out.str();
}

DiscreteDistribution DiscreteDistribution::deserialize_lines(
    const std::vector<std::string>& atom_lines) {
  DiscreteDistribution d;
  for (const auto& line : atom_lines) {
    std::istringstream in(line);
    double prob;
    int m;
    if (!(in >> prob >> m) || m < 1)
      throw std::runtime_error("DiscreteDistribution: bad atom line: " + line);
    NetworkState s;
    for (int j = 0; j < m; j++) {
      std::string tuple;
      if (!(in >> tuple)) throw std::runtime_error("DiscreteDistribution: short atom line");
      int id;
      double cost, gain;
      if (std::sscanf(tuple.c_str(), "%d:%lf:%lf", &id, &cost, &gain) != 3)
        throw std::runtime_error("DiscreteDistribution: bad tuple '" + tuple + "'");
      s.active.push_back(id);
      s.costs.push_back(cost);
      s.gains.push_back(gain);
    }
    d.atoms.push_back(std::move(s));
    d.probs.push_back(prob);
  }
  return d;
}

void DiscreteDistribution::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << serialize();
}

DiscreteDistribution DiscreteDistribution::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("atom = ", 0) == 0) lines.push_back(line.substr(7));
  }
  return deserialize_lines(lines);
}

DiscreteDistribution build_surrogate(const D2DParams& params, int64_t atoms_target,
                                     uint64_t seed) {
  params.validate();
  if (atoms_target < 1) throw std::invalid_argument("build_surrogate: need at least one atom");
  int n_sizes = params.active_max - params.active_min + 1;
  DiscreteDistribution d;
  Rng rng(seed);
  for (int s = 0; s < n_sizes; s++) {
    int m = params.active_min + s;
    int64_t n_atoms = atoms_target / n_sizes + (s < atoms_target % n_sizes ? 1 : 0);
    if (n_atoms == 0) n_atoms = 1;
    double p = 1.0 / ((double)n_sizes * (double)n_atoms);
    for (int64_t a = 0; a < n_atoms; a++) {
      d.atoms.push_back(sample_state_sized(params, m, rng));
      d.probs.push_back(p);
    }
  }
  d.validate(params);
  return d;
}

SurrogateProblem::SurrogateProblem(DiscreteDistribution dist, D2DParams params)
    : dist_(std::move(dist)), params_(std::move(params)) {
  params_.validate();
  dist_.validate(params_);
  size_t n = dist_.size();
  cum_.resize(n);
  offset_.resize(n);
  winner_.resize(n);
  double acc = 0, mean = 0;
  for (size_t a = 0; a < n; a++) {
    acc += dist_.probs[a];
    cum_[a] = acc;
    winner_[a] = select_user(dist_.atoms[a], params_);
    offset_[a] = winner_offset(dist_.atoms[a], params_);
    mean += dist_.probs[a] * offset_[a];
  }
  cum_[n - 1] = 1.0;  // guard the top edge against rounding
  mean_offset_ = mean;
}

double SurrogateProblem::exact_mean_subgradient(double lambda) const {
  return surrogate_mean_subgradient(lambda, params_, mean_offset_);
}

std::optional<double> SurrogateProblem::exact_dual(std::span<const double> lambda) const {
  return surrogate_dual_value(lambda[0], params_, mean_offset_);
}

double SurrogateProblem::exact_slater_rate() const {
  double sum = 0;
  for (size_t a = 0; a < dist_.size(); a++)
    sum += dist_.probs[a] * slater_rate_at(dist_.atoms[a], params_);
  return sum;
}

SlotRecord SurrogateProblem::sample_slot(std::span<const double> lambda, int64_t t, Rng& rng) {
  (void)t;
  double u = rng.uniform01();
  size_t a = (size_t)(std::upper_bound(cum_.begin(), cum_.end(), u) - cum_.begin());
  if (a >= dist_.size()) a = dist_.size() - 1;

  double lam = lambda[0];
  double q = params_.q_of(lam);
  double dlog = params_.bandwidth * params_.log_of(q / params_.alpha);
  double r = rate_choice(lam, params_);

  SlotRecord rec;
  rec.subgrad.value = {dlog + offset_[a] - r};
  rec.subgrad.mean_value = std::vector<double>{dlog + mean_offset_ - r};
  rec.slot_dual = surrogate_dual_value(lam, params_, mean_offset_);
  rec.slot_primal = std::log(r) - q;
  rec.winner = winner_[a];
  rec.cost = q;
  size_t j = (size_t)(std::lower_bound(dist_.atoms[a].active.begin(),
                                       dist_.atoms[a].active.end(), winner_[a]) -
                      dist_.atoms[a].active.begin());
  rec.power = q / dist_.atoms[a].costs[j];
  rec.rate_target = r;
  rec.realized_rate = dlog + offset_[a];
  return rec;
}

}  // namespace sdsd
