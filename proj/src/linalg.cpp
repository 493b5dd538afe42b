#include "deid/linalg.hpp"

#include <cassert>

namespace deid {

void matvec(const Mat& w, const Vec& x, Vec& y) {
  assert(w.cols() == x.size());
  y.assign(w.rows(), 0.0);
  matvec_add(w, x, y);
}

void matvec_add(const Mat& w, const Vec& x, Vec& y) {
  assert(w.cols() == x.size() && w.rows() == y.size());
  for (size_t r = 0; r < w.rows(); ++r) {
    const double* wr = w.row(r);
    double acc = 0.0;
    for (size_t c = 0; c < w.cols(); ++c) acc += wr[c] * x[c];
    y[r] += acc;
  }
}

void matvec_t_add(const Mat& w, const Vec& x, Vec& y) {
  assert(w.rows() == x.size() && w.cols() == y.size());
  for (size_t r = 0; r < w.rows(); ++r) {
    const double* wr = w.row(r);
    const double xr = x[r];
    if (xr == 0.0) continue;
    for (size_t c = 0; c < w.cols(); ++c) y[c] += wr[c] * xr;
  }
}

void outer_add(const Vec& a, const Vec& b, Mat& m) {
  assert(m.rows() == a.size() && m.cols() == b.size());
  for (size_t r = 0; r < a.size(); ++r) {
    double* mr = m.row(r);
    const double ar = a[r];
    if (ar == 0.0) continue;
    for (size_t c = 0; c < b.size(); ++c) mr[c] += ar * b[c];
  }
}

void add_scaled(Vec& y, const Vec& x, double s) {
  assert(y.size() == x.size());
  for (size_t i = 0; i < y.size(); ++i) y[i] += s * x[i];
}

double dot(const Vec& a, const Vec& b) {
  assert(a.size() == b.size());
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace deid
