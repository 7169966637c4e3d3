#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace convexpr {

// Multiplication counts at ResNet scale exceed 2^50; all cost arithmetic
// runs in 128 bits with overflow checks.
using u128 = unsigned __int128;

struct OverflowError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline u128 checked_add(u128 a, u128 b) {
  u128 r = a + b;
  if (r < a) throw OverflowError("cost addition overflow");
  return r;
}

inline u128 checked_mul(u128 a, u128 b) {
  if (a == 0 || b == 0) return 0;
  u128 r = a * b;
  if (r / a != b) throw OverflowError("cost multiplication overflow");
  return r;
}

inline std::string to_decimal_string(u128 v) {
  if (v == 0) return "0";
  std::string s;
  while (v > 0) {
    s.push_back(static_cast<char>('0' + static_cast<int>(v % 10)));
    v /= 10;
  }
  return {s.rbegin(), s.rend()};
}

inline double to_double(u128 v) {
  return static_cast<double>(v);
}

}  // namespace convexpr
