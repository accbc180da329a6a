#include "mint/spectral.hpp"

#include <algorithm>
#include <cmath>

namespace mint {

namespace {

constexpr double kPi = 3.14159265358979323846;

double scale_factor(DctMode mode, int k, int horizon) {
  if (mode == DctMode::PaperUnnormalized) return 1.0;
  return k == 0 ? std::sqrt(1.0 / horizon) : std::sqrt(2.0 / horizon);
}

}  // namespace

bool ActionChunk::is_gripper(int col) const {
  return std::find(gripper_dims.begin(), gripper_dims.end(), col) != gripper_dims.end();
}

std::vector<int> ActionChunk::motion_dims() const {
  std::vector<int> out;
  for (int d = 0; d < dim(); ++d)
    if (!is_gripper(d)) out.push_back(d);
  return out;
}

void ActionChunk::validate() const {
  if (values.rows <= 0 || values.cols <= 0)
    throw ValidationError("ActionChunk: empty value matrix");
  if (!all_finite(values)) throw ValidationError("ActionChunk: non-finite entries");
  for (size_t i = 0; i < gripper_dims.size(); ++i) {
    const int d = gripper_dims[i];
    if (d < 0 || d >= dim()) throw ValidationError("ActionChunk: gripper dim out of range");
    if (i > 0 && gripper_dims[i - 1] >= d)
      throw ValidationError("ActionChunk: gripper dims must be sorted and unique");
  }
}

Mat dct_forward_mat(const Mat& x, DctMode mode) {
  const int h = x.rows;
  Mat out(h, x.cols);
  // Direct O(H^2) evaluation of the cosine sum; H <= 64 here.
  for (int k = 0; k < h; ++k) {
    const double ck = scale_factor(mode, k, h);
    for (int d = 0; d < x.cols; ++d) {
      double s = 0.0;
      for (int t = 0; t < h; ++t) s += x(t, d) * std::cos(kPi / h * (t + 0.5) * k);
      out(k, d) = ck * s;
    }
  }
  return out;
}

Mat dct_inverse_mat(const Mat& coeffs, DctMode mode) {
  const int h = coeffs.rows;
  Mat out(h, coeffs.cols);
  for (int t = 0; t < h; ++t) {
    for (int d = 0; d < coeffs.cols; ++d) {
      double s = 0.0;
      if (mode == DctMode::Orthonormal) {
        for (int k = 0; k < h; ++k)
          s += scale_factor(mode, k, h) * coeffs(k, d) * std::cos(kPi / h * (t + 0.5) * k);
      } else {
        // DCT-III scaling matching the unnormalized forward sum.
        s = coeffs(0, d) / h;
        for (int k = 1; k < h; ++k)
          s += 2.0 / h * coeffs(k, d) * std::cos(kPi / h * (t + 0.5) * k);
      }
      out(t, d) = s;
    }
  }
  return out;
}

Mat dct_transpose_mat(const Mat& dcoeffs, DctMode mode) {
  const int h = dcoeffs.rows;
  Mat out(h, dcoeffs.cols);
  for (int t = 0; t < h; ++t) {
    for (int d = 0; d < dcoeffs.cols; ++d) {
      double s = 0.0;
      for (int k = 0; k < h; ++k)
        s += scale_factor(mode, k, h) * dcoeffs(k, d) * std::cos(kPi / h * (t + 0.5) * k);
      out(t, d) = s;
    }
  }
  return out;
}

Spectrum dct_forward(const ActionChunk& chunk, DctMode mode) {
  chunk.validate();
  const auto dims = chunk.motion_dims();
  Mat x(chunk.horizon(), static_cast<int>(dims.size()));
  for (int t = 0; t < chunk.horizon(); ++t)
    for (size_t j = 0; j < dims.size(); ++j) x(t, static_cast<int>(j)) = chunk.values(t, dims[j]);
  return Spectrum{dct_forward_mat(x, mode), mode};
}

ActionChunk dct_inverse(const Spectrum& spec, DctMode mode) {
  if (spec.mode != mode)
    throw ValidationError("dct_inverse: coefficient mode does not match requested inverse");
  if (!all_finite(spec.coeffs)) throw ValidationError("dct_inverse: non-finite coefficients");
  ActionChunk chunk;
  chunk.values = dct_inverse_mat(spec.coeffs, mode);
  return chunk;
}

ActionChunk dct_inverse(const Spectrum& spec) { return dct_inverse(spec, spec.mode); }

double lowband_energy_fraction(const Spectrum& spec, double cutoff_fraction) {
  if (!(cutoff_fraction > 0.0) || cutoff_fraction > 1.0)
    throw ValidationError("lowband_energy_fraction: cutoff must be in (0,1]");
  const int h = spec.coeffs.rows;
  const int cut = static_cast<int>(std::ceil(cutoff_fraction * h));
  double low = 0.0, total = 0.0;
  for (int k = 0; k < h; ++k) {
    for (int d = 0; d < spec.coeffs.cols; ++d) {
      const double e = spec.coeffs(k, d) * spec.coeffs(k, d);
      total += e;
      if (k < cut) low += e;
    }
  }
  return total == 0.0 ? 1.0 : low / total;
}

Mat lowpass_filter_mat(const Mat& x, DctMode mode, double cutoff_fraction) {
  Mat coeffs = dct_forward_mat(x, mode);
  const int cut = static_cast<int>(std::ceil(cutoff_fraction * x.rows));
  for (int k = cut; k < coeffs.rows; ++k)
    for (int d = 0; d < coeffs.cols; ++d) coeffs(k, d) = 0.0;
  return dct_inverse_mat(coeffs, mode);
}

}  // namespace mint
