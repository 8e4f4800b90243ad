#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <cstring>

#include "xvol/tensor.hpp"

namespace testutil {

inline ::testing::AssertionResult near(const xvol::Tensor4& got, const xvol::Tensor4& want, double tol) {
  if (!(got.dims() == want.dims()))
    return ::testing::AssertionFailure() << "dims " << got.dims().str() << " vs " << want.dims().str();
  const double d = xvol::max_abs_diff(got, want);
  if (d <= tol) return ::testing::AssertionSuccess();
  return ::testing::AssertionFailure() << "max abs diff " << d << " > " << tol;
}

/// Distance in units in the last place between two floats.
inline std::int64_t ulp_distance(float a, float b) {
  std::int32_t ia, ib;
  std::memcpy(&ia, &a, 4);
  std::memcpy(&ib, &b, 4);
  if (ia < 0) ia = static_cast<std::int32_t>(0x80000000u - static_cast<std::uint32_t>(ia));
  if (ib < 0) ib = static_cast<std::int32_t>(0x80000000u - static_cast<std::uint32_t>(ib));
  return std::llabs(static_cast<std::int64_t>(ia) - ib);
}

inline ::testing::AssertionResult within_ulps(const xvol::Tensor4& got, const xvol::Tensor4& want, int ulps) {
  if (!(got.dims() == want.dims())) return ::testing::AssertionFailure() << "dims differ";
  for (std::size_t i = 0; i < got.size(); ++i)
    if (ulp_distance(got[i], want[i]) > ulps)
      return ::testing::AssertionFailure() << "index " << i << ": " << got[i] << " vs " << want[i];
  return ::testing::AssertionSuccess();
}

}  // namespace testutil
