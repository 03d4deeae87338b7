#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "msrnn/common.hpp"

namespace msrnn {

// Everything runs in 64-bit floats; the gradient checks need the precision
// and the model is small enough that speed does not hinge on it.
using Vec = std::vector<double>;

// Dense row-major matrix.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
  double* row(std::size_t r) { return a.data() + r * cols; }
  const double* row(std::size_t r) const { return a.data() + r * cols; }
  std::size_t size() const { return a.size(); }
};

// Dense slice-major 3-axis tensor: `slices` matrices of rows x cols.
struct Tensor3 {
  std::size_t slices = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Tensor3() = default;
  Tensor3(std::size_t s, std::size_t r, std::size_t c)
      : slices(s), rows(r), cols(c), a(s * r * c, 0.0) {}

  double& at(std::size_t s, std::size_t r, std::size_t c) {
    return a[(s * rows + r) * cols + c];
  }
  double at(std::size_t s, std::size_t r, std::size_t c) const {
    return a[(s * rows + r) * cols + c];
  }
  double* slice(std::size_t s) { return a.data() + s * rows * cols; }
  const double* slice(std::size_t s) const { return a.data() + s * rows * cols; }
  std::size_t size() const { return a.size(); }
};

inline Vec matvec(const Mat& m, const Vec& v) {
  if (m.cols != v.size()) {
    throw ShapeError("matvec: " + std::to_string(m.rows) + "x" + std::to_string(m.cols) +
                     " times vector of length " + std::to_string(v.size()));
  }
  Vec out(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = m.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * v[c];
    out[r] = acc;
  }
  return out;
}

// m^T v; the workhorse of the backward pass.
inline void matvec_t_add(const Mat& m, const Vec& v, Vec& out) {
  if (m.rows != v.size() || m.cols != out.size()) {
    throw ShapeError("matvec_t_add: " + std::to_string(m.rows) + "x" +
                     std::to_string(m.cols) + " vs " + std::to_string(v.size()) + "/" +
                     std::to_string(out.size()));
  }
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = m.row(r);
    const double s = v[r];
    if (s == 0.0) continue;
    for (std::size_t c = 0; c < m.cols; ++c) out[c] += s * row[c];
  }
}

// m += u v^T
inline void add_outer(Mat& m, const Vec& u, const Vec& v) {
  if (m.rows != u.size() || m.cols != v.size()) {
    throw ShapeError("add_outer: " + std::to_string(m.rows) + "x" + std::to_string(m.cols) +
                     " vs " + std::to_string(u.size()) + "x" + std::to_string(v.size()));
  }
  for (std::size_t r = 0; r < m.rows; ++r) {
    double* row = m.row(r);
    const double s = u[r];
    if (s == 0.0) continue;
    for (std::size_t c = 0; c < m.cols; ++c) row[c] += s * v[c];
  }
}

// Component k of the result is u^T T^k v.
inline Vec bilinear(const Tensor3& t, const Vec& u, const Vec& v) {
  if (t.rows != u.size() || t.cols != v.size()) {
    throw ShapeError("bilinear: tensor " + std::to_string(t.rows) + "x" +
                     std::to_string(t.cols) + " vs vectors " + std::to_string(u.size()) +
                     "/" + std::to_string(v.size()));
  }
  Vec out(t.slices, 0.0);
  for (std::size_t k = 0; k < t.slices; ++k) {
    const double* s = t.slice(k);
    double acc = 0.0;
    for (std::size_t r = 0; r < t.rows; ++r) {
      const double ur = u[r];
      if (ur == 0.0) continue;
      const double* row = s + r * t.cols;
      double inner = 0.0;
      for (std::size_t c = 0; c < t.cols; ++c) inner += row[c] * v[c];
      acc += ur * inner;
    }
    out[k] = acc;
  }
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec sigmoid(const Vec& v) {
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = sigmoid(v[i]);
  return out;
}

inline Vec tanh(const Vec& v) {
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::tanh(v[i]);
  return out;
}

inline Vec relu(const Vec& v) {
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  return out;
}

// Per-dimension softmax coupling the four update gates: at each dimension j
// the four outputs form a convex combination. Inputs and outputs are ordered
// (i, l, t, d). Max-subtraction keeps exp() in range for unbounded
// pre-activations.
inline std::array<Vec, 4> softmax_by_row(const Vec& zi, const Vec& zl, const Vec& zt,
                                         const Vec& zd) {
  const std::size_t d = zi.size();
  if (zl.size() != d || zt.size() != d || zd.size() != d) {
    throw ShapeError("softmax_by_row: gate lengths differ");
  }
  std::array<Vec, 4> out{Vec(d), Vec(d), Vec(d), Vec(d)};
  const Vec* in[4] = {&zi, &zl, &zt, &zd};
  for (std::size_t j = 0; j < d; ++j) {
    double mx = (*in[0])[j];
    for (int p = 1; p < 4; ++p) mx = std::max(mx, (*in[p])[j]);
    double sum = 0.0;
    double e[4];
    for (int p = 0; p < 4; ++p) {
      e[p] = std::exp((*in[p])[j] - mx);
      sum += e[p];
    }
    for (int p = 0; p < 4; ++p) out[p][j] = e[p] / sum;
  }
  return out;
}

// Small elementwise helpers used throughout the forward/backward passes.

inline void add_inplace(Vec& x, const Vec& y) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

inline Vec add(Vec x, const Vec& y) {
  add_inplace(x, y);
  return x;
}

inline Vec hadamard(const Vec& x, const Vec& y) {
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return out;
}

inline double dot(const Vec& x, const Vec& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

inline Vec concat(const Vec& a, const Vec& b, const Vec& c) {
  Vec out;
  out.reserve(a.size() + b.size() + c.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  out.insert(out.end(), c.begin(), c.end());
  return out;
}

inline Vec concat(const Vec& a, const Vec& b, const Vec& c, const Vec& d) {
  Vec out;
  out.reserve(a.size() + b.size() + c.size() + d.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  out.insert(out.end(), c.begin(), c.end());
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

}  // namespace msrnn
