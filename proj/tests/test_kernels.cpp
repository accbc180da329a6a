#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mint/kernels.hpp"
#include "mint/rng.hpp"

using namespace mint;

namespace {

Mat random_mat(int r, int c, Rng& rng) {
  Mat m(r, c);
  for (double& v : m.data) v = rng.uniform(-1.0, 1.0);
  return m;
}

bool bitwise_equal(const Mat& a, const Mat& b) {
  if (!a.same_shape(b)) return false;
  for (size_t i = 0; i < a.data.size(); ++i)
    if (a.data[i] != b.data[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("matmul matches serial reference bit for bit") {
  Rng rng(11);
  for (auto [m, k, n] : {std::tuple{3, 4, 5}, {64, 128, 96}, {1, 1, 1}, {200, 33, 17}}) {
    Mat a = random_mat(m, k, rng);
    Mat b = random_mat(k, n, rng);
    Mat c1, c2;
    kernels::matmul(a, b, c1);
    kernels::matmul_serial(a, b, c2);
    CHECK(bitwise_equal(c1, c2));
  }
}

TEST_CASE("matmul_tn and matmul_nt match serial and explicit transpose") {
  Rng rng(12);
  Mat a = random_mat(37, 19, rng);
  Mat b = random_mat(37, 23, rng);
  Mat c1, c2, c3;
  kernels::matmul_tn(a, b, c1);
  kernels::matmul_tn_serial(a, b, c2);
  CHECK(bitwise_equal(c1, c2));
  kernels::matmul_serial(transpose(a), b, c3);
  CHECK(max_abs_diff(c1, c3) < 1e-12);

  Mat d = random_mat(19, 23, rng);
  Mat e = random_mat(31, 23, rng);
  Mat f1, f2, f3;
  kernels::matmul_nt(d, e, f1);
  kernels::matmul_nt_serial(d, e, f2);
  CHECK(bitwise_equal(f1, f2));
  kernels::matmul_serial(d, transpose(e), f3);
  CHECK(max_abs_diff(f1, f3) < 1e-12);
}

TEST_CASE("matmul identity and shape errors") {
  Rng rng(13);
  Mat a = random_mat(6, 6, rng);
  Mat eye(6, 6);
  for (int i = 0; i < 6; ++i) eye(i, i) = 1.0;
  Mat out;
  kernels::matmul(a, eye, out);
  CHECK(bitwise_equal(a, out));

  Mat bad(5, 7);
  CHECK_THROWS_AS(kernels::matmul(a, bad, out), ValidationError);
}

TEST_CASE("nearest_codes picks minimum distance, ties to lowest index") {
  Mat codebook(3, 2);
  codebook(0, 0) = 1.0;
  codebook(0, 1) = 0.0;
  codebook(1, 0) = 0.0;
  codebook(1, 1) = 1.0;
  codebook(2, 0) = 1.0;  // duplicate of code 0
  codebook(2, 1) = 0.0;

  Mat x(2, 2);
  x(0, 0) = 0.9;
  x(0, 1) = 0.1;
  x(1, 0) = 1.0;  // exactly code 0 == code 2; tie must resolve to 0
  x(1, 1) = 0.0;
  std::vector<int> idx;
  kernels::nearest_codes(x, codebook, idx);
  CHECK(idx == std::vector<int>{0, 0});

  std::vector<int> idx2;
  kernels::nearest_codes_serial(x, codebook, idx2);
  CHECK(idx == idx2);
}

TEST_CASE("nearest_codes parallel equals serial on random data") {
  Rng rng(14);
  Mat x = random_mat(300, 8, rng);
  Mat cb = random_mat(64, 8, rng);
  std::vector<int> a, b;
  kernels::nearest_codes(x, cb, a);
  kernels::nearest_codes_serial(x, cb, b);
  CHECK(a == b);
}

TEST_CASE("nearest_codes rejects an empty codebook") {
  Mat x(1, 2), cb(0, 2);
  std::vector<int> idx;
  CHECK_THROWS_AS(kernels::nearest_codes(x, cb, idx), ValidationError);
}
