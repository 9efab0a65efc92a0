#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "fedsilo/error.hpp"

namespace fedsilo::numkit {

using Vector = std::vector<double>;

/// Dense row-major matrix of 64-bit floats. Entries are finite after every
/// public operation; constructors and producing operations enforce this.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);  // zero-filled
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

void ensure_finite(std::span<const double> values, std::string_view context);
void ensure_finite(double value, std::string_view context);

Vector matvec(const Matrix& m, const Vector& v);
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

/// Gauss-Jordan inverse with partial pivoting. Throws kNumeric on a singular
/// or near-singular pivot.
Matrix inverse(const Matrix& m);
double determinant(const Matrix& m);
double frobenius_norm(const Matrix& m);
double norm2(const Vector& v);

/// Central-difference gradient oracle: (f(x+h e_i) - f(x-h e_i)) / 2h.
Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& x, double h);

/// Splittable counter-based RNG. A stream is identified by an immutable key;
/// `fork` derives an independent child stream from (key, label, ids) so draws
/// in one context never shift draws in another. Identical seed, identical
/// stream, on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(seed), state_(seed) {}

  Rng fork(std::string_view label, std::uint64_t a = 0, std::uint64_t b = 0,
           std::uint64_t c = 0) const;

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller; two uniforms per draw, no cached state.
  double normal();

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t key_;
  std::uint64_t state_;
};

}  // namespace fedsilo::numkit
