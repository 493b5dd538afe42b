#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "deid/rng.hpp"
#include "deid/stats.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace deid;

namespace {

// independent D: evaluate both ECDFs at every pooled point
double oracle_d(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pool = a;
  pool.insert(pool.end(), b.begin(), b.end());
  double best = 0;
  for (double x : pool) {
    double fa = 0, fb = 0;
    for (double v : a) fa += v <= x;
    for (double v : b) fb += v <= x;
    best = std::max(best, std::abs(fa / a.size() - fb / b.size()));
  }
  return best;
}

// independent exact p: enumerate assignments with next_permutation
double oracle_exact_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pool = a;
  pool.insert(pool.end(), b.begin(), b.end());
  std::sort(pool.begin(), pool.end());
  const double d_obs = oracle_d(a, b);
  std::vector<char> pick(pool.size(), 0);
  std::fill(pick.begin(), pick.begin() + a.size(), 1);
  std::sort(pick.begin(), pick.end());  // start at the lowest permutation
  size_t total = 0, extreme = 0;
  do {
    std::vector<double> xa, xb;
    for (size_t i = 0; i < pool.size(); ++i)
      (pick[i] ? xa : xb).push_back(pool[i]);
    ++total;
    extreme += oracle_d(xa, xb) >= d_obs - 1e-12;
  } while (std::next_permutation(pick.begin(), pick.end()));
  return static_cast<double>(extreme) / total;
}

// the defining series, straight from the formula
double oracle_q(double lambda) {
  double s = 0;
  for (int k = 1; k <= 400; ++k)
    s += (k % 2 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return 2 * s;
}

std::vector<double> random_sample(Rng& rng, size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.next_double();
  return v;
}

}  // namespace

TEST_CASE("ecdf is right-continuous on the sorted sample") {
  const Ecdf f({3.0, 1.0, 2.0, 2.0});
  CHECK(f(0.5) == 0.0);
  CHECK(f(1.0) == 0.25);
  CHECK(f(1.5) == 0.25);
  CHECK(f(2.0) == 0.75);
  CHECK(f(3.0) == 1.0);
  CHECK(f(99.0) == 1.0);
  CHECK_THROWS(Ecdf({}));
}

TEST_CASE("ks d matches the pooled-point oracle on random pairs") {
  Rng rng(1);
  for (int rep = 0; rep < 200; ++rep) {
    const size_t m = 1 + rng.below(40), n = 1 + rng.below(40);
    const auto a = random_sample(rng, m);
    const auto b = random_sample(rng, n);
    const KsResult r = ks_two_sample(a, b);
    CHECK(r.d == doctest::Approx(oracle_d(a, b)).epsilon(1e-12));
    CHECK(r.n1 == m);
    CHECK(r.n2 == n);
  }
}

TEST_CASE("disjoint supports give d = 1 and identical samples d = 0") {
  Rng rng(2);
  const auto a = random_sample(rng, 20);
  std::vector<double> shifted = a;
  for (double& x : shifted) x += 2.0;  // beyond the range of a
  CHECK(ks_two_sample(a, shifted).d == 1.0);

  const KsResult same = ks_two_sample(a, a);
  CHECK(same.d == 0.0);
  CHECK(same.p_asymptotic == 1.0);

  CHECK_THROWS(ks_two_sample({}, a));
  CHECK_THROWS(ks_two_sample(a, {}));
}

TEST_CASE("kolmogorov q follows the series on both branches") {
  for (double lambda : {0.25, 0.4, 0.49, 0.5, 0.51, 0.7, 1.0, 1.36, 2.0, 3.0}) {
    CHECK(kolmogorov_q(lambda) ==
          doctest::Approx(oracle_q(lambda)).epsilon(1e-12));
  }
  CHECK(kolmogorov_q(0.0) == 1.0);
  CHECK(kolmogorov_q(1e-12) == 1.0);
  CHECK(kolmogorov_q(8.0) >= 0.0);
  // monotone decreasing
  double prev = 1.0;
  for (double lambda = 0.05; lambda < 3.0; lambda += 0.05) {
    const double q = kolmogorov_q(lambda);
    CHECK(q <= prev + 1e-15);
    prev = q;
  }
}

TEST_CASE("the audited effect size lands in the published p range") {
  // D = 0.16 with m = n = 770
  const double lambda = 0.16 * std::sqrt(770.0 * 770.0 / 1540.0);
  const double p = kolmogorov_q(lambda);
  CHECK(p >= 3e-9);
  CHECK(p <= 2e-8);
}

TEST_CASE("exact p matches full enumeration and fills only small cases") {
  Rng rng(3);
  for (int rep = 0; rep < 15; ++rep) {
    const size_t m = 2 + rng.below(4), n = 2 + rng.below(4);
    const auto a = random_sample(rng, m);
    const auto b = random_sample(rng, n);
    const double pe = ks_exact_p(a, b);
    CHECK(pe == doctest::Approx(oracle_exact_p(a, b)).epsilon(1e-12));
    const KsResult r = ks_two_sample(a, b);
    REQUIRE(r.p_exact.has_value());
    CHECK(*r.p_exact == pe);
  }
  const auto big = random_sample(rng, 17);
  CHECK_THROWS(ks_exact_p(big, big));
  CHECK_FALSE(ks_two_sample(big, big).p_exact.has_value());
}

TEST_CASE("exact p handles ties in the pool") {
  const std::vector<double> a = {1.0, 1.0, 2.0};
  const std::vector<double> b = {1.0, 2.0, 2.0};
  CHECK(ks_exact_p(a, b) == doctest::Approx(oracle_exact_p(a, b)).epsilon(1e-12));
}

TEST_CASE("asymptotic p approximates exact p at m = n = 8") {
  Rng rng(4);
  double worst = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const auto a = random_sample(rng, 8);
    const auto b = random_sample(rng, 8);
    const KsResult r = ks_two_sample(a, b);
    REQUIRE(r.p_exact.has_value());
    worst = std::max(worst, std::abs(*r.p_exact - r.p_asymptotic));
  }
  CHECK(worst < 0.05);
}

TEST_CASE("summary statistics on hand-checked samples") {
  const SummaryStats s = summarize({1.0, 2.0, 3.0, 4.0});
  CHECK(s.n == 4);
  CHECK(s.mean == 2.5);
  CHECK(s.median == 2.5);
  CHECK(s.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-14));
  CHECK(s.min == 1.0);
  CHECK(s.max == 4.0);

  const SummaryStats odd = summarize({2.0, 1.0, 3.0});
  CHECK(odd.median == 2.0);

  const SummaryStats one = summarize({5.0});
  CHECK(one.stddev == 0.0);
  CHECK(one.median == 5.0);

  CHECK_THROWS(summarize({}));
}

TEST_CASE("histogram densities integrate to one") {
  Rng rng(5);
  const auto sample = random_sample(rng, 500);
  const CurveTable h = histogram_curve(sample, 20);
  REQUIRE(h.x.size() == 20);
  const double width = (*std::max_element(sample.begin(), sample.end()) -
                        *std::min_element(sample.begin(), sample.end())) /
                       20.0;
  double mass = 0;
  for (double y : h.y) mass += y * width;
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));

  const CurveTable flat = histogram_curve({3.0, 3.0, 3.0}, 10);
  REQUIRE(flat.y.size() == 1);
  CHECK(flat.y[0] == 1.0);
}

TEST_CASE("kde integrates to one and covers the sample") {
  Rng rng(6);
  const auto sample = random_sample(rng, 200);
  const CurveTable k = kde_curve(sample);
  REQUIRE(k.x.size() == 512);
  double integral = 0;
  for (size_t i = 1; i < k.x.size(); ++i)
    integral += 0.5 * (k.y[i] + k.y[i - 1]) * (k.x[i] - k.x[i - 1]);
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-3));
  for (double y : k.y) CHECK(y >= 0.0);

  // degenerate sample still yields a curve (unit bandwidth fallback)
  const CurveTable flat = kde_curve({2.0, 2.0});
  CHECK(flat.x.size() == 512);
}

TEST_CASE("ecdf curve runs from zero to one on the kde grid") {
  Rng rng(7);
  const auto sample = random_sample(rng, 50);
  const CurveTable e = ecdf_curve(sample);
  REQUIRE(e.x.size() == 512);
  CHECK(e.y.front() == 0.0);
  CHECK(e.y.back() == 1.0);
  for (size_t i = 1; i < e.y.size(); ++i) CHECK(e.y[i] >= e.y[i - 1]);
}

TEST_CASE("curve csv has the x column plus the named column") {
  CurveTable c;
  c.x = {0.0, 1.0};
  c.y = {0.25, 0.75};
  std::ostringstream out;
  write_curve_csv(out, c, "density");
  CHECK(out.str() == "x,density\n0,0.25\n1,0.75\n");
}
