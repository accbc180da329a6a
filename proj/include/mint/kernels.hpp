#pragma once

#include <vector>

#include "mint/mat.hpp"

// Hot inner loops, each with an OpenMP path and a serial reference.
// Parallelism is always over output elements with the per-element
// accumulation order unchanged, so both paths produce identical bits;
// tests and the benchmark target compare them.
namespace mint::kernels {

// out = a * b
void matmul(const Mat& a, const Mat& b, Mat& out);
void matmul_serial(const Mat& a, const Mat& b, Mat& out);

// out = a^T * b
void matmul_tn(const Mat& a, const Mat& b, Mat& out);
void matmul_tn_serial(const Mat& a, const Mat& b, Mat& out);

// out = a * b^T
void matmul_nt(const Mat& a, const Mat& b, Mat& out);
void matmul_nt_serial(const Mat& a, const Mat& b, Mat& out);

// Per-row nearest codebook entry under squared Euclidean distance,
// ties broken toward the lowest index.
void nearest_codes(const Mat& x, const Mat& codebook, std::vector<int>& idx);
void nearest_codes_serial(const Mat& x, const Mat& codebook, std::vector<int>& idx);

}  // namespace mint::kernels
