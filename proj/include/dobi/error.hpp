#ifndef DOBI_ERROR_HPP
#define DOBI_ERROR_HPP

#include <stdexcept>
#include <string>

namespace dobi {

// Base class for all library errors.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dimension or layout mismatch between operands.
class shape_error : public error {
 public:
  using error::error;
};

// Invalid parameter value (out-of-range rank, nonpositive epsilon, ...).
class value_error : public error {
 public:
  using error::error;
};

// Numerical failure: non-finite data, non-converging iteration.
class numeric_error : public error {
 public:
  using error::error;
};

// Container / file format failure with a machine-readable kind.
class io_error : public error {
 public:
  enum class kind {
    open_failed,
    bad_magic,
    bad_version,
    truncated,
    checksum_mismatch,
    corrupt,
  };

  io_error(kind k, const std::string& msg) : error(msg), kind_(k) {}
  kind what_kind() const noexcept { return kind_; }

 private:
  kind kind_;
};

}  // namespace dobi

#endif
