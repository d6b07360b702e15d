#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace fdrl {

// Row-major dense matrix. Everything in this project is small (a handful of
// actions by a handful of state dimensions), so plain loops beat a heavyweight
// linear-algebra dependency.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // row-major, rows*cols entries

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  std::span<const double> row(int r) const {
    return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
  }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<double> matvec(const Matrix& m, std::span<const double> x) {
  if (static_cast<int>(x.size()) != m.cols) throw std::invalid_argument("matvec: size mismatch");
  std::vector<double> out(static_cast<size_t>(m.rows));
  for (int r = 0; r < m.rows; ++r) out[static_cast<size_t>(r)] = dot(m.row(r), x);
  return out;
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("l2_distance: size mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline void add_in_place(std::vector<double>& a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("add_in_place: size mismatch");
  for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

inline void axpy(double alpha, std::span<const double> x, std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: size mismatch");
  for (size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

inline void scale_in_place(std::vector<double>& v, double alpha) {
  for (double& x : v) x *= alpha;
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace fdrl
