#pragma once

#include <cmath>
#include <vector>

#include "mint/errors.hpp"

namespace mint {

// Dense row-major matrix of doubles. The only tensor type in the repo;
// batches are handled by looping, higher ranks by flattening.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

  size_t size() const { return data.size(); }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  Mat& operator+=(const Mat& o) {
    for (size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }
  Mat& operator-=(const Mat& o) {
    for (size_t i = 0; i < data.size(); ++i) data[i] -= o.data[i];
    return *this;
  }
  Mat& operator*=(double s) {
    for (double& v : data) v *= s;
    return *this;
  }
};

inline bool all_finite(const Mat& m) {
  for (double v : m.data)
    if (!std::isfinite(v)) return false;
  return true;
}

inline double frobenius_norm(const Mat& m) {
  double s = 0.0;
  for (double v : m.data) s += v * v;
  return std::sqrt(s);
}

inline double frobenius_sq(const Mat& m) {
  double s = 0.0;
  for (double v : m.data) s += v * v;
  return s;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  if (!a.same_shape(b)) throw ValidationError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

inline Mat transpose(const Mat& a) {
  Mat t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

}  // namespace mint
