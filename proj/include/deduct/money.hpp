#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>

namespace deduct {

/// Fixed-point currency amount stored as integer minor units (1/100 of a unit).
/// All success/fail comparisons in the simulator are made on this type, so the
/// `balance >= amount` boundary is exact.
class Money {
 public:
  static constexpr std::int64_t kMinorPerUnit = 100;

  constexpr Money() = default;
  static constexpr Money from_minor(std::int64_t minor) { return Money(minor); }

  /// Rounds half away from zero to the nearest minor unit.
  static Money from_units(double units) {
    return Money(static_cast<std::int64_t>(std::llround(units * kMinorPerUnit)));
  }

  constexpr std::int64_t minor() const { return minor_; }
  constexpr double units() const {
    return static_cast<double>(minor_) / static_cast<double>(kMinorPerUnit);
  }
  constexpr bool is_zero() const { return minor_ == 0; }
  constexpr bool positive() const { return minor_ > 0; }

  constexpr Money& operator+=(Money o) {
    minor_ += o.minor_;
    return *this;
  }
  constexpr Money& operator-=(Money o) {
    minor_ -= o.minor_;
    return *this;
  }
  friend constexpr Money operator+(Money a, Money b) { return Money(a.minor_ + b.minor_); }
  friend constexpr Money operator-(Money a, Money b) { return Money(a.minor_ - b.minor_); }
  friend constexpr Money operator*(Money a, std::int64_t k) { return Money(a.minor_ * k); }
  friend constexpr auto operator<=>(Money, Money) = default;

  friend constexpr Money min(Money a, Money b) { return a < b ? a : b; }
  friend constexpr Money max(Money a, Money b) { return a < b ? b : a; }

  /// "12.34" style rendering, exact.
  std::string to_string() const {
    const std::int64_t mag = minor_ < 0 ? -minor_ : minor_;
    std::string frac = std::to_string(mag % kMinorPerUnit);
    if (frac.size() < 2) frac.insert(0, "0");
    return (minor_ < 0 ? "-" : "") + std::to_string(mag / kMinorPerUnit) + "." + frac;
  }

 private:
  constexpr explicit Money(std::int64_t minor) : minor_(minor) {}
  std::int64_t minor_ = 0;
};

inline std::ostream& operator<<(std::ostream& os, Money m) { return os << m.to_string(); }

/// Integer division of a non-negative numerator, rounding half up.
constexpr std::int64_t div_round_half_up(std::int64_t num, std::int64_t den) {
  return (2 * num + den) / (2 * den);
}

/// Integer division of a non-negative numerator, rounding up.
constexpr std::int64_t div_ceil(std::int64_t num, std::int64_t den) {
  return (num + den - 1) / den;
}

}  // namespace deduct
