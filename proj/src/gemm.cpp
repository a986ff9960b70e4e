#include "gemm.hpp"

#include <Eigen/Core>

namespace t2i::detail {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

template <class A, class B>
void assign(MutMap& c, const A& a, const B& b, bool accumulate) {
  if (accumulate) {
    c.noalias() += a * b;
  } else {
    c.noalias() = a * b;
  }
}
}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  MutMap cm(c, M, N);
  ConstMap am(a, trans_a ? K : M, trans_a ? M : K);
  ConstMap bm(b, trans_b ? N : K, trans_b ? K : N);
  if (!trans_a && !trans_b) {
    assign(cm, am, bm, accumulate);
  } else if (!trans_a && trans_b) {
    assign(cm, am, bm.transpose(), accumulate);
  } else if (trans_a && !trans_b) {
    assign(cm, am.transpose(), bm, accumulate);
  } else {
    assign(cm, am.transpose(), bm.transpose(), accumulate);
  }
}

}  // namespace t2i::detail
