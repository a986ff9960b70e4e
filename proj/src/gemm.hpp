#pragma once

#include <cstddef>

namespace t2i::detail {

// Row-major C[m,n] (+)= op(A) * op(B), where op(A) is [m,k] and op(B) is [k,n].
// A is stored [k,m] when trans_a, B is stored [n,k] when trans_b.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate);

}  // namespace t2i::detail
