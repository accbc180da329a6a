#include "mint/kernels.hpp"

#include <limits>

namespace mint::kernels {

namespace {

void check_mm(const Mat& a, const Mat& b, int ak, int bk) {
  if (ak != bk) throw ValidationError("matmul: inner dimensions disagree");
  (void)a;
  (void)b;
}

// Rough element-count threshold below which forking threads costs more
// than the loop.
constexpr long kParallelCutoff = 16 * 1024;

}  // namespace

void matmul_serial(const Mat& a, const Mat& b, Mat& out) {
  check_mm(a, b, a.cols, b.rows);
  out = Mat(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    double* orow = out.row(i);
    const double* arow = a.row(i);
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      const double* brow = b.row(k);
      for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
}

void matmul(const Mat& a, const Mat& b, Mat& out) {
  check_mm(a, b, a.cols, b.rows);
  out = Mat(a.rows, b.cols);
  const long work = static_cast<long>(a.rows) * a.cols * b.cols;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
  for (int i = 0; i < a.rows; ++i) {
    double* orow = out.row(i);
    const double* arow = a.row(i);
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      const double* brow = b.row(k);
      for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
}

void matmul_tn_serial(const Mat& a, const Mat& b, Mat& out) {
  check_mm(a, b, a.rows, b.rows);
  out = Mat(a.cols, b.cols);
  for (int i = 0; i < a.cols; ++i) {
    double* orow = out.row(i);
    for (int r = 0; r < a.rows; ++r) {
      const double ari = a(r, i);
      const double* brow = b.row(r);
      for (int j = 0; j < b.cols; ++j) orow[j] += ari * brow[j];
    }
  }
}

void matmul_tn(const Mat& a, const Mat& b, Mat& out) {
  check_mm(a, b, a.rows, b.rows);
  out = Mat(a.cols, b.cols);
  const long work = static_cast<long>(a.rows) * a.cols * b.cols;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
  for (int i = 0; i < a.cols; ++i) {
    double* orow = out.row(i);
    for (int r = 0; r < a.rows; ++r) {
      const double ari = a(r, i);
      const double* brow = b.row(r);
      for (int j = 0; j < b.cols; ++j) orow[j] += ari * brow[j];
    }
  }
}

void matmul_nt_serial(const Mat& a, const Mat& b, Mat& out) {
  check_mm(a, b, a.cols, b.cols);
  out = Mat(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* brow = b.row(j);
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
      orow[j] = s;
    }
  }
}

void matmul_nt(const Mat& a, const Mat& b, Mat& out) {
  check_mm(a, b, a.cols, b.cols);
  out = Mat(a.rows, b.rows);
  const long work = static_cast<long>(a.rows) * a.cols * b.rows;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* brow = b.row(j);
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
      orow[j] = s;
    }
  }
}

namespace {

int nearest_one(const double* x, const Mat& codebook) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int v = 0; v < codebook.rows; ++v) {
    const double* c = codebook.row(v);
    double d = 0.0;
    for (int j = 0; j < codebook.cols; ++j) {
      const double t = x[j] - c[j];
      d += t * t;
    }
    if (d < best_d) {
      best_d = d;
      best = v;
    }
  }
  return best;
}

}  // namespace

void nearest_codes_serial(const Mat& x, const Mat& codebook, std::vector<int>& idx) {
  if (x.cols != codebook.cols) throw ValidationError("nearest_codes: code dimension mismatch");
  if (codebook.rows == 0) throw ValidationError("nearest_codes: empty codebook");
  idx.assign(x.rows, 0);
  for (int r = 0; r < x.rows; ++r) idx[r] = nearest_one(x.row(r), codebook);
}

void nearest_codes(const Mat& x, const Mat& codebook, std::vector<int>& idx) {
  if (x.cols != codebook.cols) throw ValidationError("nearest_codes: code dimension mismatch");
  if (codebook.rows == 0) throw ValidationError("nearest_codes: empty codebook");
  idx.assign(x.rows, 0);
  const long work = static_cast<long>(x.rows) * codebook.rows * codebook.cols;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
  for (int r = 0; r < x.rows; ++r) idx[r] = nearest_one(x.row(r), codebook);
}

}  // namespace mint::kernels
