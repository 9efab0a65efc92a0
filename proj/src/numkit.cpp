#include "fedsilo/numkit.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace fedsilo::numkit {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace

void ensure_finite(std::span<const double> values, std::string_view context) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw Error(ErrorCode::kNumeric, std::string(context) + ": non-finite value at index " +
                                           std::to_string(i));
    }
  }
}

void ensure_finite(double value, std::string_view context) {
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::kNumeric, std::string(context) + ": non-finite value");
  }
}

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows_ * cols_, ErrorCode::kInvalidArgument,
          "matrix data length " + std::to_string(data_.size()) + " != " + std::to_string(rows_) +
              "x" + std::to_string(cols_));
  ensure_finite(data_, "Matrix");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Vector matvec(const Matrix& m, const Vector& v) {
  require(m.cols() == v.size(), ErrorCode::kInvalidArgument,
          "matvec: " + std::to_string(m.cols()) + " cols vs vector length " +
              std::to_string(v.size()));
  Vector out(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double acc = 0.0;  // left-to-right accumulation, fixed order
    const auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) acc += row[c] * v[c];
    out[r] = acc;
  }
  ensure_finite(out, "matvec");
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), ErrorCode::kInvalidArgument, "matmul: inner dims differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  }
  ensure_finite(out.data(), "matmul");
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out.at(c, r) = m.at(r, c);
  return out;
}

Matrix inverse(const Matrix& m) {
  require(m.rows() == m.cols(), ErrorCode::kInvalidArgument, "inverse: matrix not square");
  const std::size_t n = m.rows();
  Matrix a = m;
  Matrix inv = Matrix::identity(n);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a.at(r, col)) > std::abs(a.at(pivot, col))) pivot = r;
    if (std::abs(a.at(pivot, col)) < 1e-12) {
      throw Error(ErrorCode::kNumeric, "inverse: singular matrix");
    }
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) {
        std::swap(a.at(pivot, c), a.at(col, c));
        std::swap(inv.at(pivot, c), inv.at(col, c));
      }
    }
    const double d = a.at(col, col);
    for (std::size_t c = 0; c < n; ++c) {
      a.at(col, c) /= d;
      inv.at(col, c) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a.at(r, col);
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) {
        a.at(r, c) -= f * a.at(col, c);
        inv.at(r, c) -= f * inv.at(col, c);
      }
    }
  }
  ensure_finite(inv.data(), "inverse");
  return inv;
}

double determinant(const Matrix& m) {
  require(m.rows() == m.cols(), ErrorCode::kInvalidArgument, "determinant: matrix not square");
  const std::size_t n = m.rows();
  Matrix a = m;
  double det = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a.at(r, col)) > std::abs(a.at(pivot, col))) pivot = r;
    if (a.at(pivot, col) == 0.0) return 0.0;
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a.at(pivot, c), a.at(col, c));
      det = -det;
    }
    det *= a.at(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a.at(r, col) / a.at(col, col);
      for (std::size_t c = col; c < n; ++c) a.at(r, c) -= f * a.at(col, c);
    }
  }
  return det;
}

double frobenius_norm(const Matrix& m) {
  double acc = 0.0;
  for (double v : m.data()) acc += v * v;
  return std::sqrt(acc);
}

double norm2(const Vector& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  require(h > 0.0, ErrorCode::kInvalidArgument, "finite_diff_grad: step must be positive");
  Vector grad(x.size(), 0.0);
  Vector probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    probe[i] = xi + h;
    const double fp = f(probe);
    probe[i] = xi - h;
    const double fm = f(probe);
    probe[i] = xi;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw Error(ErrorCode::kNumeric,
                  "finite_diff_grad: non-finite f at coordinate " + std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

Rng Rng::fork(std::string_view label, std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
  std::uint64_t h = mix64(key_ ^ fnv1a(label));
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  h = mix64(h ^ c);
  return Rng(h);
}

std::uint64_t Rng::next_u64() {
  state_ += kGolden;
  return mix64(state_);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::below(std::uint64_t n) {
  require(n > 0, ErrorCode::kInvalidArgument, "Rng::below: n must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(below(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

}  // namespace fedsilo::numkit

namespace fedsilo {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kNumeric: return "numeric error";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kValidation: return "validation error";
    case ErrorCode::kIo: return "io error";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kBadVersion: return "unsupported version";
    case ErrorCode::kBadCrc: return "crc mismatch";
    case ErrorCode::kTruncated: return "truncated input";
    case ErrorCode::kMalformedMessage: return "malformed message";
    case ErrorCode::kProtocol: return "protocol error";
    case ErrorCode::kTimeout: return "synchronization timeout";
    case ErrorCode::kClientFailure: return "client failure";
  }
  return "unknown error";
}

}  // namespace fedsilo
