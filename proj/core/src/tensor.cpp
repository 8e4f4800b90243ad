#include "xvol/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace xvol {

namespace alloc {
namespace {
std::atomic<std::uint64_t> g_allocations{0};
std::atomic<std::uint64_t> g_bytes_total{0};
std::atomic<std::int64_t> g_live{0};
std::atomic<std::int64_t> g_peak{0};
}  // namespace

Stats stats() {
  return Stats{g_allocations.load(), g_bytes_total.load(), g_live.load(), g_peak.load()};
}

void reset() {
  g_allocations = 0;
  g_bytes_total = 0;
  g_peak = g_live.load();
}

void note_alloc(std::size_t bytes) {
  g_allocations.fetch_add(1, std::memory_order_relaxed);
  g_bytes_total.fetch_add(bytes, std::memory_order_relaxed);
  const auto live = g_live.fetch_add(static_cast<std::int64_t>(bytes)) + static_cast<std::int64_t>(bytes);
  auto peak = g_peak.load(std::memory_order_relaxed);
  while (live > peak && !g_peak.compare_exchange_weak(peak, live)) {
  }
}

void note_free(std::size_t bytes) { g_live.fetch_sub(static_cast<std::int64_t>(bytes)); }

}  // namespace alloc

std::string Dims::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

Tensor4::Tensor4(Dims dims, float fill) : dims_(dims) {
  if (!dims.valid()) throw DomainError("Tensor4: all dims must be >= 1, got " + dims.str());
  data_.assign(dims.size(), fill);
}

Tensor4::Tensor4(Dims dims, std::span<const float> values) : dims_(dims) {
  if (!dims.valid()) throw DomainError("Tensor4: all dims must be >= 1, got " + dims.str());
  if (values.size() != dims.size())
    throw DomainError("Tensor4: data length " + std::to_string(values.size()) + " does not match dims " +
                      dims.str());
  data_.assign(values.begin(), values.end());
}

bool Tensor4::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

int ShiftOffset::chebyshev() const { return std::max(std::abs(dy), std::abs(dx)); }

void require_same_dims(const Tensor4& a, const Tensor4& b, const char* what) {
  if (a.dims() != b.dims())
    throw DomainError(std::string(what) + ": dims mismatch " + a.dims().str() + " vs " + b.dims().str());
}

Tensor4 shift2d(const Tensor4& x, ShiftOffset off) {
  if (std::abs(off.dy) >= x.h() || std::abs(off.dx) >= x.w())
    throw DomainError("shift2d: offset (" + std::to_string(off.dy) + "," + std::to_string(off.dx) +
                      ") exceeds spatial extent " + std::to_string(x.h()) + "x" + std::to_string(x.w()));
  Tensor4 out(x.dims());
  const int h = x.h();
  const int w = x.w();
  const int y0 = std::max(0, off.dy), y1 = std::min(h, h + off.dy);
  const int x0 = std::max(0, off.dx), x1 = std::min(w, w + off.dx);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const float* src = x.plane(n, c);
      float* dst = out.plane(n, c);
      for (int i = y0; i < y1; ++i) {
        const float* s = src + static_cast<std::size_t>(i - off.dy) * w - off.dx;
        std::copy(s + x0, s + x1, dst + static_cast<std::size_t>(i) * w + x0);
      }
    }
  }
  return out;
}

Tensor4 hadamard(const Tensor4& a, const Tensor4& b) {
  require_same_dims(a, b, "hadamard");
  Tensor4 out(a.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

Tensor4 add(const Tensor4& a, const Tensor4& b) {
  require_same_dims(a, b, "add");
  Tensor4 out(a.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor4 sub(const Tensor4& a, const Tensor4& b) {
  require_same_dims(a, b, "sub");
  Tensor4 out(a.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Tensor4 scale(const Tensor4& a, double s) {
  Tensor4 out(a.dims());
  const auto f = static_cast<float>(s);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * f;
  return out;
}

Matrix to_matrix(const Tensor4& x, int n_index) {
  if (n_index < 0 || n_index >= x.n())
    throw DomainError("to_matrix: batch index " + std::to_string(n_index) + " out of range");
  const int cols = x.h() * x.w();
  Matrix m(x.c(), cols);
  for (int c = 0; c < x.c(); ++c) std::copy_n(x.plane(n_index, c), cols, m.data.begin() + c * cols);
  return m;
}

Tensor4 from_matrix(const Matrix& m, int h, int w) {
  if (h < 1 || w < 1 || m.cols != h * w)
    throw DomainError("from_matrix: " + std::to_string(m.cols) + " columns cannot form " + std::to_string(h) +
                      "x" + std::to_string(w));
  return Tensor4(Dims{1, m.rows, h, w}, m.data);
}

Tensor4 concat_channels(std::span<const Tensor4> parts) {
  if (parts.empty()) throw DomainError("concat_channels: no inputs");
  Dims d = parts.front().dims();
  d.c = 0;
  for (const auto& p : parts) {
    if (p.n() != d.n || p.h() != d.h || p.w() != d.w)
      throw DomainError("concat_channels: incompatible part " + p.dims().str());
    d.c += p.c();
  }
  Tensor4 out(d);
  const std::size_t plane = d.plane();
  for (int n = 0; n < d.n; ++n) {
    int c0 = 0;
    for (const auto& p : parts) {
      std::copy_n(p.plane(n, 0), plane * p.c(), out.plane(n, c0));
      c0 += p.c();
    }
  }
  return out;
}

Tensor4 slice_channels(const Tensor4& x, int begin, int count) {
  if (begin < 0 || count < 1 || begin + count > x.c())
    throw DomainError("slice_channels: range out of bounds");
  Tensor4 out(Dims{x.n(), count, x.h(), x.w()});
  for (int n = 0; n < x.n(); ++n)
    std::copy_n(x.plane(n, begin), x.dims().plane() * count, out.plane(n, 0));
  return out;
}

Tensor4 concat_batch(std::span<const Tensor4> parts) {
  if (parts.empty()) throw DomainError("concat_batch: no inputs");
  Dims d = parts.front().dims();
  d.n = 0;
  for (const auto& p : parts) {
    if (p.c() != d.c || p.h() != d.h || p.w() != d.w)
      throw DomainError("concat_batch: incompatible part " + p.dims().str());
    d.n += p.n();
  }
  Tensor4 out(d);
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(at));
    at += p.size();
  }
  return out;
}

Tensor4 slice_batch(const Tensor4& x, int begin, int count) {
  if (begin < 0 || count < 1 || begin + count > x.n()) throw DomainError("slice_batch: range out of bounds");
  Dims d = x.dims();
  d.n = count;
  return Tensor4(d, x.data().subspan(x.index(begin, 0, 0, 0), d.size()));
}

double sum(const Tensor4& x) {
  double s = 0.0;
  for (float v : x.data()) s += v;
  return s;
}

double dot(const Tensor4& a, const Tensor4& b) {
  require_same_dims(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

double l2_norm(const Tensor4& x) { return std::sqrt(dot(x, x)); }

double max_abs(const Tensor4& x) {
  double m = 0.0;
  for (float v : x.data()) m = std::max(m, static_cast<double>(std::abs(v)));
  return m;
}

double max_abs_diff(const Tensor4& a, const Tensor4& b) {
  require_same_dims(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

double relative_l2(const Tensor4& a, const Tensor4& b) {
  require_same_dims(a, b, "relative_l2");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    num += d * d;
    den += static_cast<double>(b[i]) * b[i];
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num / den);
}

}  // namespace xvol
