#include "deid/stats.hpp"

#include "deid/textio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>

namespace deid {

Ecdf::Ecdf(std::vector<double> sample) : sorted_(std::move(sample)) {
  if (sorted_.empty()) throw std::invalid_argument("empty sample");
  std::sort(sorted_.begin(), sorted_.end());
}

double Ecdf::operator()(double x) const {
  const auto it = std::upper_bound(sorted_.begin(), sorted_.end(), x);
  return static_cast<double>(it - sorted_.begin()) /
         static_cast<double>(sorted_.size());
}

double kolmogorov_q(double lambda) {
  if (lambda <= 1e-9) return 1.0;
  double q;
  if (lambda < 0.5) {
    // Jacobi theta form of the same series; the direct series needs
    // thousands of terms here while this one converges immediately.
    const double pi = 3.14159265358979323846;
    double sum = 0.0;
    for (int k = 1; k <= 64; ++k) {
      const double odd = 2.0 * k - 1.0;
      const double term = std::exp(-odd * odd * pi * pi / (8.0 * lambda * lambda));
      sum += term;
      if (term < 1e-16) break;
    }
    q = 1.0 - std::sqrt(2.0 * pi) / lambda * sum;
  } else {
    double sum = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 1000; ++k) {
      const double term = std::exp(-2.0 * k * k * lambda * lambda);
      sum += sign * term;
      sign = -sign;
      if (term < 1e-16) break;
    }
    q = 2.0 * sum;
  }
  return std::clamp(q, 0.0, 1.0);
}

namespace {

// sup over x of |F_a(x) - F_b(x)| for two sorted samples
double ks_d_sorted(const std::vector<double>& a, const std::vector<double>& b) {
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na -
                             static_cast<double>(j) / nb));
  }
  return d;
}

}  // namespace

KsResult ks_two_sample(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("empty sample");
  std::vector<double> sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  KsResult r;
  r.n1 = a.size();
  r.n2 = b.size();
  r.d = ks_d_sorted(sa, sb);
  const double m = static_cast<double>(r.n1);
  const double n = static_cast<double>(r.n2);
  const double lambda = r.d * std::sqrt(m * n / (m + n));
  r.p_asymptotic = kolmogorov_q(lambda);
  if (r.n1 + r.n2 <= 16) r.p_exact = ks_exact_p(a, b);
  return r;
}

double ks_exact_p(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("empty sample");
  const size_t m = a.size(), n = b.size();
  if (m + n > 16) throw std::invalid_argument("exact KS p limited to m+n <= 16");
  std::vector<double> pool = a;
  pool.insert(pool.end(), b.begin(), b.end());
  std::sort(pool.begin(), pool.end());
  double d_obs;
  {
    std::vector<double> sa = a, sb = b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    d_obs = ks_d_sorted(sa, sb);
  }

  const uint32_t total = 1u << (m + n);
  uint64_t splits = 0, extreme = 0;
  std::vector<double> left, right;
  left.reserve(m);
  right.reserve(n);
  for (uint32_t mask = 0; mask < total; ++mask) {
    if (static_cast<size_t>(std::popcount(mask)) != m) continue;
    ++splits;
    left.clear();
    right.clear();
    // subsequences of a sorted pool are already sorted
    for (size_t k = 0; k < m + n; ++k)
      ((mask >> k) & 1u ? left : right).push_back(pool[k]);
    if (ks_d_sorted(left, right) >= d_obs - 1e-12) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(splits);
}

SummaryStats summarize(const std::vector<double>& sample) {
  if (sample.empty()) throw std::invalid_argument("empty sample");
  SummaryStats s;
  s.n = sample.size();
  s.mean = std::accumulate(sample.begin(), sample.end(), 0.0) /
           static_cast<double>(s.n);
  std::vector<double> sorted = sample;
  std::sort(sorted.begin(), sorted.end());
  s.min = sorted.front();
  s.max = sorted.back();
  s.median = s.n % 2 == 1 ? sorted[s.n / 2]
                          : 0.5 * (sorted[s.n / 2 - 1] + sorted[s.n / 2]);
  if (s.n >= 2) {
    double acc = 0.0;
    for (double x : sample) acc += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(acc / static_cast<double>(s.n - 1));
  }
  return s;
}

CurveTable histogram_curve(const std::vector<double>& sample, size_t bins) {
  if (sample.empty()) throw std::invalid_argument("empty sample");
  if (bins == 0) throw std::invalid_argument("zero histogram bins");
  const auto [mn_it, mx_it] = std::minmax_element(sample.begin(), sample.end());
  const double mn = *mn_it, mx = *mx_it;
  CurveTable c;
  const double n = static_cast<double>(sample.size());
  if (mn == mx) {
    c.x = {mn};
    c.y = {1.0};  // all mass in one unit-width bin
    return c;
  }
  const double width = (mx - mn) / static_cast<double>(bins);
  std::vector<size_t> counts(bins, 0);
  for (double v : sample) {
    size_t b = static_cast<size_t>((v - mn) / width);
    if (b >= bins) b = bins - 1;  // v == mx
    ++counts[b];
  }
  for (size_t b = 0; b < bins; ++b) {
    c.x.push_back(mn + (b + 0.5) * width);
    c.y.push_back(static_cast<double>(counts[b]) / (n * width));
  }
  return c;
}

namespace {

constexpr size_t kGridPoints = 512;

double silverman_bandwidth(const SummaryStats& s) {
  const double sd = s.stddev > 0 ? s.stddev : 1.0;
  return 1.06 * sd * std::pow(static_cast<double>(s.n), -0.2);
}

std::vector<double> curve_grid(const SummaryStats& s, double h) {
  const double lo = s.min - 4.0 * h;
  const double hi = s.max + 4.0 * h;
  std::vector<double> grid(kGridPoints);
  const double step = (hi - lo) / static_cast<double>(kGridPoints - 1);
  for (size_t i = 0; i < kGridPoints; ++i) grid[i] = lo + step * static_cast<double>(i);
  return grid;
}

}  // namespace

CurveTable kde_curve(const std::vector<double>& sample) {
  const SummaryStats s = summarize(sample);
  const double h = silverman_bandwidth(s);
  CurveTable c;
  c.x = curve_grid(s, h);
  const double norm = 1.0 / (static_cast<double>(s.n) * h * std::sqrt(2.0 * 3.14159265358979323846));
  c.y.resize(c.x.size());
  for (size_t i = 0; i < c.x.size(); ++i) {
    double acc = 0.0;
    for (double v : sample) {
      const double z = (c.x[i] - v) / h;
      acc += std::exp(-0.5 * z * z);
    }
    c.y[i] = norm * acc;
  }
  return c;
}

CurveTable ecdf_curve(const std::vector<double>& sample) {
  const SummaryStats s = summarize(sample);
  const Ecdf f(sample);
  CurveTable c;
  c.x = curve_grid(s, silverman_bandwidth(s));
  c.y.reserve(c.x.size());
  for (double x : c.x) c.y.push_back(f(x));
  return c;
}

void write_curve_csv(std::ostream& out, const CurveTable& curve,
                     const std::string& name) {
  out << "x," << name << '\n';
  for (size_t i = 0; i < curve.x.size(); ++i)
    out << format_double(curve.x[i]) << ',' << format_double(curve.y[i]) << '\n';
}

}  // namespace deid
