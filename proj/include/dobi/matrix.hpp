#ifndef DOBI_MATRIX_HPP
#define DOBI_MATRIX_HPP

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "dobi/error.hpp"

namespace dobi {

using index = std::ptrdiff_t;

// Byte accounting for every DenseMatrix buffer. Used by the IPCA memory
// harness to verify that the incremental path never materializes the
// full projector stack.
namespace alloc_stats {
std::int64_t current_bytes();
std::int64_t peak_bytes();
void reset_peak();
namespace detail {
void track_alloc(std::int64_t bytes);
void track_free(std::int64_t bytes);
}  // namespace detail
}  // namespace alloc_stats

// Row-major dense real matrix, f64. Fixed shape after construction.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(index rows, index cols, double fill = 0.0);
  DenseMatrix(index rows, index cols, std::vector<double> data);
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

  DenseMatrix(const DenseMatrix& other);
  DenseMatrix(DenseMatrix&& other) noexcept;
  DenseMatrix& operator=(const DenseMatrix& other);
  DenseMatrix& operator=(DenseMatrix&& other) noexcept;
  ~DenseMatrix();

  static DenseMatrix identity(index n);

  index rows() const { return rows_; }
  index cols() const { return cols_; }
  index size() const { return rows_ * cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(index r, index c) { return data_[static_cast<std::size_t>(r * cols_ + c)]; }
  double operator()(index r, index c) const { return data_[static_cast<std::size_t>(r * cols_ + c)]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  bool all_finite() const;

 private:
  void release_tracking() noexcept;

  index rows_ = 0;
  index cols_ = 0;
  std::vector<double> data_;
};

// Throws numeric_error when any entry is NaN/Inf; ctx names the offender.
void require_finite(const DenseMatrix& a, const std::string& ctx);

DenseMatrix transpose(const DenseMatrix& a);
DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix sub(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix scale(const DenseMatrix& a, double factor);
DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b);

double frob_norm(const DenseMatrix& a);
double frob_dist(const DenseMatrix& a, const DenseMatrix& b);
double dot(const DenseMatrix& a, const DenseMatrix& b);
double max_abs(const DenseMatrix& a);

// Scale column j by d[j] (a * diag(d)) / row i by d[i] (diag(d) * a).
DenseMatrix scale_cols(const DenseMatrix& a, std::span<const double> d);
DenseMatrix scale_rows(const DenseMatrix& a, std::span<const double> d);

}  // namespace dobi

#endif
