#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "srnn/error.hpp"

namespace srnn {

// Row-major dense matrix. Instances are immutable by convention once built;
// sharing across threads is safe as long as nobody writes.
template <typename T>
struct DenseMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<T> values;  // rows * cols, row-major

  DenseMatrix() = default;
  DenseMatrix(int r, int c) : rows(r), cols(c), values(size_t(r) * c, T(0)) {}
  DenseMatrix(int r, int c, std::vector<T> v)
      : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != size_t(rows) * cols)
      throw numeric_error("dense matrix: value count does not match shape");
  }

  T at(int r, int c) const { return values[size_t(r) * cols + c]; }
  T& at(int r, int c) { return values[size_t(r) * cols + c]; }
  size_t size() const { return values.size(); }
};

using DenseMatrixF = DenseMatrix<float>;

// Compressed sparse row. col_indices strictly increasing within each row.
template <typename T>
struct SparseMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<std::int32_t> row_offsets;  // rows + 1, non-decreasing
  std::vector<std::int32_t> col_indices;  // nnz
  std::vector<T> values;                  // nnz

  std::int64_t nnz() const { return std::int64_t(values.size()); }
  double density() const {
    return rows && cols ? double(nnz()) / (double(rows) * cols) : 0.0;
  }
};

using SparseMatrixF = SparseMatrix<float>;

// Packed boolean matrix used as a pruning mask.
struct Mask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint64_t> bits;

  Mask() = default;
  Mask(int r, int c)
      : rows(r), cols(c), bits((size_t(r) * c + 63) / 64, 0) {}

  bool get(int r, int c) const {
    size_t i = size_t(r) * cols + c;
    return (bits[i >> 6] >> (i & 63)) & 1u;
  }
  void set(int r, int c, bool v) {
    size_t i = size_t(r) * cols + c;
    if (v)
      bits[i >> 6] |= std::uint64_t(1) << (i & 63);
    else
      bits[i >> 6] &= ~(std::uint64_t(1) << (i & 63));
  }
  std::int64_t popcount() const;
  double density() const {
    return rows && cols ? double(popcount()) / (double(rows) * cols) : 0.0;
  }
};

// Split-plane complex vector (re/im of equal length).
struct ComplexVector {
  std::vector<float> re;
  std::vector<float> im;

  ComplexVector() = default;
  explicit ComplexVector(size_t n) : re(n, 0.0f), im(n, 0.0f) {}
  size_t size() const { return re.size(); }
  void fill_zero() {
    std::fill(re.begin(), re.end(), 0.0f);
    std::fill(im.begin(), im.end(), 0.0f);
  }
};

// Throws on any violated CSR invariant (offsets, ordering, bounds).
template <typename T>
void validate_csr(const SparseMatrix<T>& m);

// out[i,j] = w[i,j] where mask is set, else 0. Shapes must match.
DenseMatrixF mask_apply(const DenseMatrixF& w, const Mask& m);

template <typename T>
SparseMatrix<T> to_csr(const DenseMatrix<T>& w);

template <typename T>
DenseMatrix<T> to_dense(const SparseMatrix<T>& m);

// Event-driven sparse matrix-vector product: stored entries whose input
// element is zero are skipped and not counted. The executed-MAC count
// (sum over nonzero x_j of the number of stored entries in column j) is
// added to *macs when provided. Accumulation is double-precision in
// ascending column order within each row.
std::vector<float> spmv_event_driven(const SparseMatrixF& w,
                                     std::span<const float> x,
                                     std::uint64_t* macs = nullptr);

// Dense counterpart with the same event-driven skip and MAC accounting;
// stored zeros count as entries (weight density 1).
std::vector<float> matvec_event_driven(const DenseMatrixF& w,
                                       std::span<const float> x,
                                       std::uint64_t* macs = nullptr);

// Plain dense product, no skipping (reference oracle path).
std::vector<double> matvec_dense(const DenseMatrixF& w,
                                 std::span<const float> x);

// Integer variants. Row sums are returned exact in 64 bits; narrowing to
// the engine's 32-bit accumulator (and below) is the caller's policy.
std::vector<std::int64_t> spmv_event_driven_i(const SparseMatrix<std::int8_t>& w,
                                              std::span<const std::int32_t> x,
                                              std::uint64_t* macs = nullptr);
std::vector<std::int64_t> matvec_event_driven_i(const DenseMatrix<std::int8_t>& w,
                                                std::span<const std::int32_t> x,
                                                std::uint64_t* macs = nullptr);

}  // namespace srnn
