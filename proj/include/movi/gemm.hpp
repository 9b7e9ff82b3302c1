#pragma once

#include <cstdint>

#include <Eigen/Core>

namespace movi {

// C = op(A) * op(B), all row-major contiguous. Shapes after op: A is m x k,
// B is k x n, C is m x n. Eigen's single-threaded kernels outrun the system
// BLAS on this class of shapes, and being header-only keeps dispatch
// deterministic for the bit-exact encode/decode requirement.
template <typename T>
void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n,
          bool accumulate = false, bool trans_a = false, bool trans_b = false) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using CMap = Eigen::Map<Mat>;
    using Map = Eigen::Map<const Mat>;
    CMap mc(c, m, n);
    Map ma(a, trans_a ? k : m, trans_a ? m : k);
    Map mb(b, trans_b ? n : k, trans_b ? k : n);
    if (!trans_a && !trans_b) {
        if (accumulate) mc.noalias() += ma * mb; else mc.noalias() = ma * mb;
    } else if (trans_a && !trans_b) {
        if (accumulate) mc.noalias() += ma.transpose() * mb; else mc.noalias() = ma.transpose() * mb;
    } else if (!trans_a && trans_b) {
        if (accumulate) mc.noalias() += ma * mb.transpose(); else mc.noalias() = ma * mb.transpose();
    } else {
        if (accumulate) mc.noalias() += ma.transpose() * mb.transpose(); else mc.noalias() = ma.transpose() * mb.transpose();
    }
}

}  // namespace movi
