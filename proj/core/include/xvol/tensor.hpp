#pragma once

#include <atomic>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xvol {

/// Raised when an operation receives arguments outside its domain
/// (shape mismatch, out-of-range index, invalid hyper-parameter).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Allocation accounting
// ---------------------------------------------------------------------------

namespace alloc {

struct Stats {
  std::uint64_t allocations = 0;
  std::uint64_t bytes_total = 0;  // cumulative
  std::int64_t live_bytes = 0;
  std::int64_t peak_bytes = 0;
};

Stats stats();
/// Resets the cumulative counters and sets the peak to the current live size.
void reset();

void note_alloc(std::size_t bytes);
void note_free(std::size_t bytes);

}  // namespace alloc

/// Allocator that reports every buffer it hands out to alloc::stats().
template <class T>
struct TrackedAllocator {
  using value_type = T;

  TrackedAllocator() noexcept = default;
  template <class U>
  TrackedAllocator(const TrackedAllocator<U>&) noexcept {}

  T* allocate(std::size_t count) {
    if (count > std::numeric_limits<std::size_t>::max() / sizeof(T)) throw std::bad_alloc();
    alloc::note_alloc(count * sizeof(T));
    return static_cast<T*>(::operator new(count * sizeof(T)));
  }
  void deallocate(T* p, std::size_t count) noexcept {
    alloc::note_free(count * sizeof(T));
    ::operator delete(p);
  }

  template <class U>
  bool operator==(const TrackedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using TrackedVector = std::vector<T, TrackedAllocator<T>>;

// ---------------------------------------------------------------------------
// Tensor4
// ---------------------------------------------------------------------------

struct Dims {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool valid() const { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }

  friend bool operator==(const Dims&, const Dims&) = default;
  std::string str() const;
};

/// Dense (n, c, h, w) feature map with float storage in row-major order.
class Tensor4 {
 public:
  Tensor4() : Tensor4(Dims{}) {}
  explicit Tensor4(Dims dims, float fill = 0.0f);
  Tensor4(Dims dims, std::span<const float> values);

  static Tensor4 zeros(Dims dims) { return Tensor4(dims, 0.0f); }
  static Tensor4 ones(Dims dims) { return Tensor4(dims, 1.0f); }

  const Dims& dims() const { return dims_; }
  int n() const { return dims_.n; }
  int c() const { return dims_.c; }
  int h() const { return dims_.h; }
  int w() const { return dims_.w; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * dims_.c + c) * dims_.h + y) * dims_.w + x;
  }
  float& operator()(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  float operator()(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  /// Contiguous h*w plane for one (n, c) pair.
  float* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const float* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

  bool all_finite() const;

  friend bool operator==(const Tensor4& a, const Tensor4& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  Dims dims_;
  TrackedVector<float> data_;
};

/// Spatial displacement. shift2d moves content by (dy, dx): the value that
/// lands on (i, j) comes from (i - dy, j - dx).
struct ShiftOffset {
  int dy = 0;
  int dx = 0;

  ShiftOffset operator-() const { return {-dy, -dx}; }
  int chebyshev() const;
  friend auto operator<=>(const ShiftOffset&, const ShiftOffset&) = default;
};

/// Row-major 2-D matrix used for the reshaped (C, H*W) view of a feature map.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(int r, int c, float fill = 0.0f) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  float& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  float operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  friend bool operator==(const Matrix&, const Matrix&) = default;
};

// ---------------------------------------------------------------------------
// Primitive operations. Every operation returns a fresh tensor.
// ---------------------------------------------------------------------------

/// Zero-padded translation. Requires |dy| < h and |dx| < w.
Tensor4 shift2d(const Tensor4& x, ShiftOffset off);
Tensor4 hadamard(const Tensor4& a, const Tensor4& b);
Tensor4 add(const Tensor4& a, const Tensor4& b);
Tensor4 sub(const Tensor4& a, const Tensor4& b);
Tensor4 scale(const Tensor4& a, double s);

/// Column k of the result is spatial position (k / w, k % w) of batch item n_index.
Matrix to_matrix(const Tensor4& x, int n_index);
/// Inverse of to_matrix for a single batch item.
Tensor4 from_matrix(const Matrix& m, int h, int w);

Tensor4 concat_channels(std::span<const Tensor4> parts);
Tensor4 slice_channels(const Tensor4& x, int begin, int count);
/// Stack batch items along n (all parts must share c, h, w).
Tensor4 concat_batch(std::span<const Tensor4> parts);
Tensor4 slice_batch(const Tensor4& x, int begin, int count);

double sum(const Tensor4& x);
double dot(const Tensor4& a, const Tensor4& b);
double l2_norm(const Tensor4& x);
double max_abs(const Tensor4& x);
double max_abs_diff(const Tensor4& a, const Tensor4& b);
/// ||a - b|| / ||b||; returns 0 when both are zero and +inf when only b is.
double relative_l2(const Tensor4& a, const Tensor4& b);

void require_same_dims(const Tensor4& a, const Tensor4& b, const char* what);

}  // namespace xvol
