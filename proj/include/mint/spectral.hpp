#pragma once

#include <vector>

#include "mint/mat.hpp"

namespace mint {

// DCT-II scaling. Orthonormal is the default everywhere: Parseval holds
// and spectral losses are comparable across horizons. PaperUnnormalized
// drops the c_k factors (plain cosine-sum transform).
enum class DctMode { Orthonormal, PaperUnnormalized };

// Fixed-horizon window of continuous actions, normalized to [-1,1] per
// dimension. Columns listed in gripper_dims are binary channels and are
// excluded from all spectral processing.
struct ActionChunk {
  Mat values;                     // H x D
  std::vector<int> gripper_dims;  // sorted, unique, in [0, D)

  int horizon() const { return values.rows; }
  int dim() const { return values.cols; }
  bool is_gripper(int col) const;
  std::vector<int> motion_dims() const;  // columns not in gripper_dims
  void validate() const;
};

// Per-dimension DCT coefficients of a chunk's non-gripper columns.
struct Spectrum {
  Mat coeffs;  // H x D'
  DctMode mode = DctMode::Orthonormal;
};

Spectrum dct_forward(const ActionChunk& chunk, DctMode mode = DctMode::Orthonormal);

// Inverse transform; rejects a mode mismatch with the coefficients.
// Returns a chunk holding only the non-gripper columns.
ActionChunk dct_inverse(const Spectrum& spec, DctMode mode);
ActionChunk dct_inverse(const Spectrum& spec);

// Column-wise transforms on a raw matrix (every column included).
Mat dct_forward_mat(const Mat& x, DctMode mode);
Mat dct_inverse_mat(const Mat& coeffs, DctMode mode);

// Adjoint of dct_forward_mat (equals the inverse in orthonormal mode);
// needed to backpropagate spectral losses.
Mat dct_transpose_mat(const Mat& dcoeffs, DctMode mode);

// Fraction of squared spectral energy in bins k < ceil(cutoff_fraction * H);
// 1 when the spectrum carries no energy.
double lowband_energy_fraction(const Spectrum& spec, double cutoff_fraction);

// Zero all bins k >= ceil(cutoff_fraction * H) and transform back.
Mat lowpass_filter_mat(const Mat& x, DctMode mode, double cutoff_fraction);

}  // namespace mint
