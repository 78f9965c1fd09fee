#pragma once

#include <cstddef>
#include <span>

// Dense row-major GEMM used by every matrix product on the tape.
//
// Both variants compute C = op(A) * op(B) (or C += when `accumulate` is set)
// with op(X) = X or X^T. For every output element the inner sum runs over
// the shared extent in ascending order, so the parallel and the reference
// kernels produce bit-identical results for any thread count.

namespace abmem::kernels {

struct GemmShape {
  std::size_t m = 0;  // rows of op(A) and C
  std::size_t n = 0;  // cols of op(B) and C
  std::size_t k = 0;  // shared extent
  bool trans_a = false;
  bool trans_b = false;
};

// OpenMP-parallel over output rows once the problem is large enough.
void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate);

// Number of threads gemm may use; 1 disables the parallel region.
void set_max_threads(int threads);
int max_threads();

namespace reference {
// Serial triple loop. Kept as the oracle for the parallel kernel.
void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate);
}  // namespace reference

}  // namespace abmem::kernels
