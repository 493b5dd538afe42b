#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace deid {

// Empirical distribution function over a sample.
class Ecdf {
 public:
  explicit Ecdf(std::vector<double> sample);

  // right-continuous: fraction of the sample <= x
  double operator()(double x) const;
  const std::vector<double>& sorted() const { return sorted_; }
  size_t size() const { return sorted_.size(); }

 private:
  std::vector<double> sorted_;
};

struct KsResult {
  double d = 0.0;  // sup |F1 - F2|
  double p_asymptotic = 1.0;
  std::optional<double> p_exact;  // filled when n1 + n2 <= 16
  size_t n1 = 0;
  size_t n2 = 0;
};

// Kolmogorov survival function Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2).
double kolmogorov_q(double lambda);

// Two-sample KS test. Throws on an empty sample.
KsResult ks_two_sample(const std::vector<double>& a, const std::vector<double>& b);

// Exact two-sided p-value by enumerating all C(m+n, m) assignments of the
// pooled sample. Feasible only for m+n <= 16; throws beyond that.
double ks_exact_p(const std::vector<double>& a, const std::vector<double>& b);

struct SummaryStats {
  size_t n = 0;
  double mean = 0.0;
  double median = 0.0;
  double stddev = 0.0;  // sample (n-1); 0 when n < 2
  double min = 0.0;
  double max = 0.0;
};

SummaryStats summarize(const std::vector<double>& sample);

// Plot-ready curves derived from one sample.
struct CurveTable {
  std::vector<double> x;
  std::vector<double> y;
};

// Histogram with `bins` equal-width bins over [min, max]; y is density
// (count / (n * width)). A constant sample collapses to one unit-width bin.
CurveTable histogram_curve(const std::vector<double>& sample, size_t bins);

// Gaussian KDE on a 512-point grid spanning [min - 4h, max + 4h] with
// Silverman bandwidth h = 1.06 * sd * n^(-1/5) (sd falls back to 1 when 0).
CurveTable kde_curve(const std::vector<double>& sample);

// ECDF sampled on the same grid convention as the KDE.
CurveTable ecdf_curve(const std::vector<double>& sample);

// Two columns: "x,<name>".
void write_curve_csv(std::ostream& out, const CurveTable& curve,
                     const std::string& name);

}  // namespace deid
