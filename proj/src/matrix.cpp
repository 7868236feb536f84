#include "dobi/matrix.hpp"

#include <atomic>
#include <cmath>
#include <utility>

namespace dobi {

namespace alloc_stats {
namespace {
std::atomic<std::int64_t> g_current{0};
std::atomic<std::int64_t> g_peak{0};
}  // namespace

std::int64_t current_bytes() { return g_current.load(std::memory_order_relaxed); }
std::int64_t peak_bytes() { return g_peak.load(std::memory_order_relaxed); }

void reset_peak() { g_peak.store(g_current.load(std::memory_order_relaxed), std::memory_order_relaxed); }

namespace detail {
void track_alloc(std::int64_t bytes) {
  const std::int64_t now = g_current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  std::int64_t peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

void track_free(std::int64_t bytes) { g_current.fetch_sub(bytes, std::memory_order_relaxed); }
}  // namespace detail
}  // namespace alloc_stats

namespace {
std::int64_t buffer_bytes(const std::vector<double>& v) {
  return static_cast<std::int64_t>(v.capacity() * sizeof(double));
}
}  // namespace

DenseMatrix::DenseMatrix(index rows, index cols, double fill) : rows_(rows), cols_(cols) {
  if (rows < 0 || cols < 0) throw shape_error("DenseMatrix: negative dimension");
  data_.assign(static_cast<std::size_t>(rows * cols), fill);
  alloc_stats::detail::track_alloc(buffer_bytes(data_));
}

DenseMatrix::DenseMatrix(index rows, index cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (static_cast<index>(data_.size()) != rows * cols)
    throw shape_error("DenseMatrix: data length does not match rows*cols");
  alloc_stats::detail::track_alloc(buffer_bytes(data_));
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = static_cast<index>(rows.size());
  cols_ = rows_ > 0 ? static_cast<index>(rows.begin()->size()) : 0;
  data_.reserve(static_cast<std::size_t>(rows_ * cols_));
  for (const auto& r : rows) {
    if (static_cast<index>(r.size()) != cols_) throw shape_error("DenseMatrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
  alloc_stats::detail::track_alloc(buffer_bytes(data_));
}

DenseMatrix::DenseMatrix(const DenseMatrix& other)
    : rows_(other.rows_), cols_(other.cols_), data_(other.data_) {
  alloc_stats::detail::track_alloc(buffer_bytes(data_));
}

DenseMatrix::DenseMatrix(DenseMatrix&& other) noexcept
    : rows_(other.rows_), cols_(other.cols_), data_(std::move(other.data_)) {
  other.rows_ = 0;
  other.cols_ = 0;
  other.data_.clear();
  other.data_.shrink_to_fit();
}

DenseMatrix& DenseMatrix::operator=(const DenseMatrix& other) {
  if (this == &other) return *this;
  release_tracking();
  rows_ = other.rows_;
  cols_ = other.cols_;
  data_ = other.data_;
  alloc_stats::detail::track_alloc(buffer_bytes(data_));
  return *this;
}

DenseMatrix& DenseMatrix::operator=(DenseMatrix&& other) noexcept {
  if (this == &other) return *this;
  release_tracking();
  rows_ = other.rows_;
  cols_ = other.cols_;
  data_ = std::move(other.data_);
  other.rows_ = 0;
  other.cols_ = 0;
  other.data_.clear();
  other.data_.shrink_to_fit();
  return *this;
}

DenseMatrix::~DenseMatrix() { release_tracking(); }

void DenseMatrix::release_tracking() noexcept {
  alloc_stats::detail::track_free(buffer_bytes(data_));
}

DenseMatrix DenseMatrix::identity(index n) {
  DenseMatrix m(n, n);
  for (index i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool DenseMatrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void require_finite(const DenseMatrix& a, const std::string& ctx) {
  if (!a.all_finite()) throw numeric_error(ctx + ": matrix contains NaN/Inf");
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (index i = 0; i < a.rows(); ++i)
    for (index j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

namespace {
void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw shape_error(std::string(op) + ": shape mismatch");
}
}  // namespace

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "add");
  DenseMatrix r = a;
  for (index i = 0; i < r.size(); ++i) r.data()[static_cast<std::size_t>(i)] += b.data()[static_cast<std::size_t>(i)];
  return r;
}

DenseMatrix sub(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "sub");
  DenseMatrix r = a;
  for (index i = 0; i < r.size(); ++i) r.data()[static_cast<std::size_t>(i)] -= b.data()[static_cast<std::size_t>(i)];
  return r;
}

DenseMatrix scale(const DenseMatrix& a, double factor) {
  DenseMatrix r = a;
  for (double& v : r.data()) v *= factor;
  return r;
}

DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "hadamard");
  DenseMatrix r = a;
  for (index i = 0; i < r.size(); ++i) r.data()[static_cast<std::size_t>(i)] *= b.data()[static_cast<std::size_t>(i)];
  return r;
}

double frob_norm(const DenseMatrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

double frob_dist(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "frob_dist");
  double s = 0.0;
  for (index i = 0; i < a.size(); ++i) {
    const double d = a.data()[static_cast<std::size_t>(i)] - b.data()[static_cast<std::size_t>(i)];
    s += d * d;
  }
  return std::sqrt(s);
}

double dot(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (index i = 0; i < a.size(); ++i)
    s += a.data()[static_cast<std::size_t>(i)] * b.data()[static_cast<std::size_t>(i)];
  return s;
}

double max_abs(const DenseMatrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

DenseMatrix scale_cols(const DenseMatrix& a, std::span<const double> d) {
  if (static_cast<index>(d.size()) != a.cols()) throw shape_error("scale_cols: diagonal length mismatch");
  DenseMatrix r = a;
  for (index i = 0; i < a.rows(); ++i)
    for (index j = 0; j < a.cols(); ++j) r(i, j) *= d[static_cast<std::size_t>(j)];
  return r;
}

DenseMatrix scale_rows(const DenseMatrix& a, std::span<const double> d) {
  if (static_cast<index>(d.size()) != a.rows()) throw shape_error("scale_rows: diagonal length mismatch");
  DenseMatrix r = a;
  for (index i = 0; i < a.rows(); ++i)
    for (index j = 0; j < a.cols(); ++j) r(i, j) *= d[static_cast<std::size_t>(i)];
  return r;
}

}  // namespace dobi
