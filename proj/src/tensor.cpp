#include "srnn/tensor.hpp"

#include <bit>
#include <cmath>

namespace srnn {

std::int64_t Mask::popcount() const {
  std::int64_t n = 0;
  for (std::uint64_t word : bits) n += std::popcount(word);
  return n;
}

template <typename T>
void validate_csr(const SparseMatrix<T>& m) {
  if (m.rows < 0 || m.cols < 0) throw numeric_error("csr: negative shape");
  if (m.row_offsets.size() != size_t(m.rows) + 1)
    throw numeric_error("csr: row_offsets length must be rows+1");
  if (m.row_offsets.front() != 0) throw numeric_error("csr: row_offsets[0] != 0");
  if (m.row_offsets.back() != std::int32_t(m.values.size()))
    throw numeric_error("csr: last offset does not equal nnz");
  if (m.col_indices.size() != m.values.size())
    throw numeric_error("csr: col_indices/values length mismatch");
  for (int r = 0; r < m.rows; ++r) {
    if (m.row_offsets[r] > m.row_offsets[r + 1])
      throw numeric_error("csr: row_offsets not non-decreasing");
    for (std::int32_t k = m.row_offsets[r]; k < m.row_offsets[r + 1]; ++k) {
      if (m.col_indices[k] < 0 || m.col_indices[k] >= m.cols)
        throw numeric_error("csr: column index out of range");
      if (k > m.row_offsets[r] && m.col_indices[k] <= m.col_indices[k - 1])
        throw numeric_error("csr: column indices not strictly increasing in row");
    }
  }
}

template void validate_csr(const SparseMatrix<float>&);
template void validate_csr(const SparseMatrix<std::int8_t>&);
template void validate_csr(const SparseMatrix<std::int16_t>&);

DenseMatrixF mask_apply(const DenseMatrixF& w, const Mask& m) {
  if (w.rows != m.rows || w.cols != m.cols)
    throw numeric_error("mask_apply: shape mismatch");
  DenseMatrixF out(w.rows, w.cols);
  for (int r = 0; r < w.rows; ++r)
    for (int c = 0; c < w.cols; ++c)
      out.at(r, c) = m.get(r, c) ? w.at(r, c) : 0.0f;
  return out;
}

template <typename T>
SparseMatrix<T> to_csr(const DenseMatrix<T>& w) {
  SparseMatrix<T> out;
  out.rows = w.rows;
  out.cols = w.cols;
  out.row_offsets.reserve(w.rows + 1);
  out.row_offsets.push_back(0);
  for (int r = 0; r < w.rows; ++r) {
    for (int c = 0; c < w.cols; ++c) {
      T v = w.at(r, c);
      if (v != T(0)) {
        out.col_indices.push_back(c);
        out.values.push_back(v);
      }
    }
    out.row_offsets.push_back(std::int32_t(out.values.size()));
  }
  return out;
}

template SparseMatrix<float> to_csr(const DenseMatrix<float>&);
template SparseMatrix<std::int8_t> to_csr(const DenseMatrix<std::int8_t>&);
template SparseMatrix<std::int16_t> to_csr(const DenseMatrix<std::int16_t>&);

template <typename T>
DenseMatrix<T> to_dense(const SparseMatrix<T>& m) {
  DenseMatrix<T> out(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r)
    for (std::int32_t k = m.row_offsets[r]; k < m.row_offsets[r + 1]; ++k)
      out.at(r, m.col_indices[k]) = m.values[k];
  return out;
}

template DenseMatrix<float> to_dense(const SparseMatrix<float>&);
template DenseMatrix<std::int8_t> to_dense(const SparseMatrix<std::int8_t>&);
template DenseMatrix<std::int16_t> to_dense(const SparseMatrix<std::int16_t>&);

std::vector<float> spmv_event_driven(const SparseMatrixF& w,
                                     std::span<const float> x,
                                     std::uint64_t* macs) {
  if (int(x.size()) != w.cols) throw numeric_error("spmv: dimension mismatch");
  std::vector<float> y(w.rows, 0.0f);
  std::uint64_t count = 0;
  for (int r = 0; r < w.rows; ++r) {
    double acc = 0.0;
    for (std::int32_t k = w.row_offsets[r]; k < w.row_offsets[r + 1]; ++k) {
      float xv = x[w.col_indices[k]];
      if (xv == 0.0f) continue;
      acc += double(w.values[k]) * double(xv);
      ++count;
    }
    y[r] = float(acc);
  }
  if (macs) *macs += count;
  return y;
}

std::vector<float> matvec_event_driven(const DenseMatrixF& w,
                                       std::span<const float> x,
                                       std::uint64_t* macs) {
  if (int(x.size()) != w.cols) throw numeric_error("matvec: dimension mismatch");
  std::vector<float> y(w.rows, 0.0f);
  std::uint64_t active = 0;
  for (float xv : x)
    if (xv != 0.0f) ++active;
  for (int r = 0; r < w.rows; ++r) {
    const float* row = w.values.data() + size_t(r) * w.cols;
    double acc = 0.0;
    for (int c = 0; c < w.cols; ++c) {
      float xv = x[c];
      if (xv == 0.0f) continue;
      acc += double(row[c]) * double(xv);
    }
    y[r] = float(acc);
  }
  if (macs) *macs += active * std::uint64_t(w.rows);
  return y;
}

std::vector<double> matvec_dense(const DenseMatrixF& w,
                                 std::span<const float> x) {
  if (int(x.size()) != w.cols) throw numeric_error("matvec: dimension mismatch");
  std::vector<double> y(w.rows, 0.0);
  for (int r = 0; r < w.rows; ++r) {
    const float* row = w.values.data() + size_t(r) * w.cols;
    double acc = 0.0;
    for (int c = 0; c < w.cols; ++c) acc += double(row[c]) * double(x[c]);
    y[r] = acc;
  }
  return y;
}

std::vector<std::int64_t> spmv_event_driven_i(const SparseMatrix<std::int8_t>& w,
                                              std::span<const std::int32_t> x,
                                              std::uint64_t* macs) {
  if (int(x.size()) != w.cols) throw numeric_error("spmv_i: dimension mismatch");
  std::vector<std::int64_t> y(w.rows, 0);
  std::uint64_t count = 0;
  for (int r = 0; r < w.rows; ++r) {
    std::int64_t acc = 0;
    for (std::int32_t k = w.row_offsets[r]; k < w.row_offsets[r + 1]; ++k) {
      std::int32_t xv = x[w.col_indices[k]];
      if (xv == 0) continue;
      acc += std::int64_t(w.values[k]) * xv;
      ++count;
    }
    y[r] = acc;
  }
  if (macs) *macs += count;
  return y;
}

std::vector<std::int64_t> matvec_event_driven_i(const DenseMatrix<std::int8_t>& w,
                                                std::span<const std::int32_t> x,
                                                std::uint64_t* macs) {
  if (int(x.size()) != w.cols) throw numeric_error("matvec_i: dimension mismatch");
  std::vector<std::int64_t> y(w.rows, 0);
  std::uint64_t active = 0;
  for (std::int32_t xv : x)
    if (xv != 0) ++active;
  for (int r = 0; r < w.rows; ++r) {
    const std::int8_t* row = w.values.data() + size_t(r) * w.cols;
    std::int64_t acc = 0;
    for (int c = 0; c < w.cols; ++c) {
      if (x[c] == 0) continue;
      acc += std::int64_t(row[c]) * x[c];
    }
    y[r] = acc;
  }
  if (macs) *macs += active * std::uint64_t(w.rows);
  return y;
}

}  // namespace srnn
