#pragma once

#include <cstddef>
#include <vector>

#include "heihnn/errors.hpp"
#include "heihnn/matrix.hpp"

namespace heihnn {

// General sparse real matrix in coordinate form. Entries keep insertion
// order; products traverse them in that fixed order, so results are
// deterministic.
struct SparseMatrix {
  struct Entry {
    std::size_t row;
    std::size_t col;
    double value;
  };

  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Entry> entries;

  SparseMatrix() = default;
  SparseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c) {}

  static SparseMatrix identity(std::size_t n) {
    SparseMatrix s(n, n);
    s.entries.reserve(n);
    for (std::size_t i = 0; i < n; ++i) s.entries.push_back({i, i, 1.0});
    return s;
  }

  void add(std::size_t r, std::size_t c, double v) {
    if (r >= rows || c >= cols)
      throw ShapeError("sparse add: entry (" + std::to_string(r) + "," +
                       std::to_string(c) + ") outside " + std::to_string(rows) +
                       "x" + std::to_string(cols));
    entries.push_back({r, c, v});
  }

  Matrix to_dense() const {
    Matrix d(rows, cols);
    for (const auto& e : entries) d(e.row, e.col) += e.value;
    return d;
  }

  // this * v
  Matrix multiply(const Matrix& v) const {
    if (cols != v.rows())
      throw ShapeError("sparse matmul: " + std::to_string(rows) + "x" +
                       std::to_string(cols) + " times " + v.shape_str());
    Matrix out(rows, v.cols());
    for (const auto& e : entries) {
      const double* src = v.row(e.col);
      double* dst = out.row(e.row);
      for (std::size_t j = 0; j < v.cols(); ++j) dst[j] += e.value * src[j];
    }
    return out;
  }

  // this^T * v
  Matrix multiply_transposed(const Matrix& v) const {
    if (rows != v.rows())
      throw ShapeError("sparse matmul(T): " + std::to_string(cols) + "x" +
                       std::to_string(rows) + " times " + v.shape_str());
    Matrix out(cols, v.cols());
    for (const auto& e : entries) {
      const double* src = v.row(e.row);
      double* dst = out.row(e.col);
      for (std::size_t j = 0; j < v.cols(); ++j) dst[j] += e.value * src[j];
    }
    return out;
  }
};

}  // namespace heihnn
