#pragma once

#include <cstddef>
#include <vector>

namespace deid {

using Vec = std::vector<double>;

// Dense row-major matrix of doubles.
class Mat {
 public:
  Mat() = default;
  Mat(size_t rows, size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  double& operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
  double operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  size_t size() const { return data_.size(); }

  double* row(size_t r) { return data_.data() + r * cols_; }
  const double* row(size_t r) const { return data_.data() + r * cols_; }

  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool operator==(const Mat&) const = default;

 private:
  size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

// y = w x
void matvec(const Mat& w, const Vec& x, Vec& y);
// y += w x
void matvec_add(const Mat& w, const Vec& x, Vec& y);
// y += w^T x
void matvec_t_add(const Mat& w, const Vec& x, Vec& y);
// m += a b^T
void outer_add(const Vec& a, const Vec& b, Mat& m);
// y += s x
void add_scaled(Vec& y, const Vec& x, double s);

double dot(const Vec& a, const Vec& b);

}  // namespace deid
