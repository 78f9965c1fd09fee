#include "abmem/kernels.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace abmem::kernels {
namespace {

int g_max_threads = 0;  // 0: OpenMP default

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1u << 15;

inline double at_a(const GemmShape& s, std::span<const double> a, std::size_t i, std::size_t p) {
  return s.trans_a ? a[p * s.m + i] : a[i * s.k + p];
}

inline double at_b(const GemmShape& s, std::span<const double> b, std::size_t p, std::size_t j) {
  return s.trans_b ? b[j * s.k + p] : b[p * s.n + j];
}

void check_extents(const GemmShape& s, std::span<const double> a, std::span<const double> b,
                   std::span<double> c) {
  if (a.size() != s.m * s.k || b.size() != s.k * s.n || c.size() != s.m * s.n) {
    throw std::invalid_argument("gemm: buffer extents do not match shape");
  }
}

void store(double* c, const double* sums, std::size_t n, bool accumulate) {
  if (accumulate) {
    for (std::size_t j = 0; j < n; ++j) c[j] += sums[j];
  } else {
    std::copy(sums, sums + n, c);
  }
}

// Four independent ascending-order dot products over length k.
inline void dot4(const double* x, const double* y0, const double* y1, const double* y2,
                 const double* y3, std::size_t k, double* out) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double xv = x[p];
    s0 += xv * y0[p];
    s1 += xv * y1[p];
    s2 += xv * y2[p];
    s3 += xv * y3[p];
  }
  out[0] = s0;
  out[1] = s1;
  out[2] = s2;
  out[3] = s3;
}

inline double dot1(const double* x, const double* y, std::size_t k) {
  double s = 0.0;
  for (std::size_t p = 0; p < k; ++p) s += x[p] * y[p];
  return s;
}

// Output rows [i0, i1). Every kernel below forms each element as
// 0.0 + a_0 b_0 + a_1 b_1 + ... in ascending order of the shared index,
// matching the reference loop bit for bit; they only differ in which
// elements are in flight at once.
void gemm_rows(const GemmShape& s, std::span<const double> a, std::span<const double> b,
               std::span<double> c, bool accumulate, std::size_t i0, std::size_t i1) {
  const std::size_t m = s.m, n = s.n, k = s.k;
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();

  if (n == 1) {
    // op(B) is a k-vector whichever way it is stored.
    if (!s.trans_a) {
      std::size_t i = i0;
      double sums[4];
      for (; i + 4 <= i1; i += 4) {
        dot4(B, A + i * k, A + (i + 1) * k, A + (i + 2) * k, A + (i + 3) * k, k, sums);
        store(C + i, sums, 4, accumulate);
      }
      for (; i < i1; ++i) {
        const double v = dot1(A + i * k, B, k);
        C[i] = accumulate ? C[i] + v : v;
      }
    } else {
      // C[i] = sum_p A[p, i] B[p]: sweep rows of A, vectorised over i.
      std::vector<double> sums(i1 - i0, 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const double bp = B[p];
        const double* row = A + p * m + i0;
        for (std::size_t i = 0; i < sums.size(); ++i) sums[i] += row[i] * bp;
      }
      store(C + i0, sums.data(), sums.size(), accumulate);
    }
    return;
  }

  std::vector<double> scratch(n);
  std::vector<double> column(s.trans_a ? k : 0);
  for (std::size_t i = i0; i < i1; ++i) {
    const double* a_row = A + i * k;
    if (s.trans_a) {
      for (std::size_t p = 0; p < k; ++p) column[p] = A[p * m + i];
      a_row = column.data();
    }
    if (!s.trans_b) {
      std::fill(scratch.begin(), scratch.end(), 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a_row[p];
        const double* b_row = B + p * n;
        for (std::size_t j = 0; j < n; ++j) scratch[j] += av * b_row[j];
      }
    } else {
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        dot4(a_row, B + j * k, B + (j + 1) * k, B + (j + 2) * k, B + (j + 3) * k, k,
             scratch.data() + j);
      }
      for (; j < n; ++j) scratch[j] = dot1(a_row, B + j * k, k);
    }
    store(C + i * n, scratch.data(), n, accumulate);
  }
}

}  // namespace

void set_max_threads(int threads) { g_max_threads = std::max(threads, 0); }

int max_threads() {
#ifdef _OPENMP
  return g_max_threads > 0 ? g_max_threads : omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate) {
  check_extents(s, a, b, c);
  if (s.m == 0 || s.n == 0) return;
  const std::size_t work = s.m * s.n * std::max<std::size_t>(s.k, 1);
  const int threads = max_threads();
  if (threads <= 1 || s.m < 2 || work < kParallelWork) {
    gemm_rows(s, a, b, c, accumulate, 0, s.m);
    return;
  }
#pragma omp parallel num_threads(threads)
  {
#ifdef _OPENMP
    const auto t = static_cast<std::size_t>(omp_get_thread_num());
    const auto nt = static_cast<std::size_t>(omp_get_num_threads());
#else
    const std::size_t t = 0, nt = 1;
#endif
    const std::size_t chunk = (s.m + nt - 1) / nt;
    const std::size_t i0 = std::min(s.m, t * chunk), i1 = std::min(s.m, i0 + chunk);
    if (i0 < i1) gemm_rows(s, a, b, c, accumulate, i0, i1);
  }
}

namespace reference {

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate) {
  check_extents(s, a, b, c);
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < s.k; ++p) sum += at_a(s, a, i, p) * at_b(s, b, p, j);
      c[i * s.n + j] = accumulate ? c[i * s.n + j] + sum : sum;
    }
  }
}

}  // namespace reference
}  // namespace abmem::kernels
