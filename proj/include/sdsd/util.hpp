#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdsd {

/* Seeded RNG with hand-rolled transforms. mt19937_64 output is pinned by the
 * standard; the distribution adapters are not, and bit-reproducible traces are
 * part of the solver contract, so we do the transforms ourselves. */
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // uniform on [0, 1), 53-bit resolution
  double uniform01() { return (eng_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  // uniform on {0, 1, ..., n-1} without modulo bias
  uint64_t below(uint64_t n);

  // uniform on {lo, ..., hi} inclusive
  int64_t uniform_int(int64_t lo, int64_t hi);

  // Rayleigh via inverse cdf
  double rayleigh(double sigma);

 private:
  std::mt19937_64 eng_;
};

// hex SHA-1 of a byte string
std::string sha1_hex(std::string_view data);

// git-style blob hash: sha1("blob <len>\0<content>")
std::string git_blob_hash(std::string_view content);

// RFC-4180 quoting: wraps the field in quotes when it contains comma, quote,
// CR or LF, doubling embedded quotes
std::string csv_field(const std::string& raw);
std::string csv_row(const std::vector<std::string>& fields);

// round-trip-safe double formatting (17 significant digits)
std::string fmt_double(double x);

double mean_of(std::span<const double> v);
double median_of(std::vector<double> v);   // by value, sorts its copy
double quantile_of(std::vector<double> v, double q);  // linear interpolation
double stddev_of(std::span<const double> v);

/* Key-value config files: one "key = value" per line, '#' starts a comment,
 * blank lines ignored. Duplicate keys are an error. */
class KvFile {
 public:
  static KvFile parse_file(const std::string& path);
  static KvFile parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // keys present in the file but never read through a getter; used to reject typos
  std::vector<std::string> unread_keys() const;

  const std::map<std::string, std::string>& entries() const { return kv_; }
  const std::string& origin() const { return origin_; }

 private:
  std::map<std::string, std::string> kv_;
  mutable std::map<std::string, bool> read_;
  std::string origin_;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace sdsd
