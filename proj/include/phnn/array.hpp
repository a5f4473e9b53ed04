#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "phnn/parallel.hpp"

namespace phnn {

// Dense array shapes of rank 0 (scalar), 1 (vector) or 2 (row-major matrix).
struct Shape {
  int rank = 0;
  std::size_t d0 = 1, d1 = 1;

  static Shape scalar() { return {0, 1, 1}; }
  static Shape vec(std::size_t n) { return {1, n, 1}; }
  static Shape mat(std::size_t r, std::size_t c) { return {2, r, c}; }

  std::size_t size() const { return d0 * d1; }
  bool operator==(const Shape& o) const { return rank == o.rank && d0 == o.d0 && d1 == o.d1; }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    if (rank == 0) return "()";
    if (rank == 1) return "(" + std::to_string(d0) + ",)";
    return "(" + std::to_string(d0) + "," + std::to_string(d1) + ")";
  }
};

struct Array {
  Shape shape;
  std::vector<double> data;
};

namespace lin {

// c(m,n) = a(m,k) * b(k,n); c must be zero-initialized
inline void mm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double f = ai[l];
      const double* bl = b + l * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += f * bl[j];
    }
  }
}

inline double dot(const double* x, const double* y, std::size_t k) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
  std::size_t l = 0;
  for (; l + 8 <= k; l += 8) {
    s0 += x[l] * y[l];
    s1 += x[l + 1] * y[l + 1];
    s2 += x[l + 2] * y[l + 2];
    s3 += x[l + 3] * y[l + 3];
    s4 += x[l + 4] * y[l + 4];
    s5 += x[l + 5] * y[l + 5];
    s6 += x[l + 6] * y[l + 6];
    s7 += x[l + 7] * y[l + 7];
  }
  double s = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
  for (; l < k; ++l) s += x[l] * y[l];
  return s;
}

// c(m,n) = a(m,k) * b(n,k)^T
inline void mm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] = dot(ai, b + j * k, k);
  }
}

// c(m,n) = a(k,m)^T * b(k,n); c must be zero-initialized
inline void mm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n) {
  for (std::size_t l = 0; l < k; ++l) {
    const double* al = a + l * m;
    const double* bl = b + l * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double f = al[i];
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += f * bl[j];
    }
  }
}

// c(m,n) = a(k,m)^T * b(n,k)^T; rare, only small operands hit this path
inline void mm_tt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0;
      for (std::size_t l = 0; l < k; ++l) s += a[l * m + i] * bj[l];
      ci[j] = s;
    }
  }
}

// Row-parallel dispatch; the row partition does not change any result bit.
inline void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n, bool ta, bool tb) {
  const double flops = 2.0 * static_cast<double>(m) * static_cast<double>(k) * static_cast<double>(n);
  const bool parallel = flops > 4.0e6 && !ta;
  if (ta) {
    // transposed-A forms update whole column blocks of c; run serial
    std::fill(c, c + m * n, 0.0);
    if (tb)
      mm_tt(a, b, c, m, k, n);
    else
      mm_tn(a, b, c, m, k, n);
    return;
  }
  auto rows = [&](std::size_t r0, std::size_t r1) {
    const std::size_t mm = r1 - r0;
    const double* ar = a + r0 * k;
    double* cr = c + r0 * n;
    if (tb) {
      mm_nt(ar, b, cr, mm, k, n);
    } else {
      std::fill(cr, cr + mm * n, 0.0);
      mm_nn(ar, b, cr, mm, k, n);
    }
  };
  if (parallel)
    parallel_chunks(m, rows);
  else
    rows(0, m);
}

}  // namespace lin
}  // namespace phnn
