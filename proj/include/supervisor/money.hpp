#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace supervisor {

/// USD amount held as integer micro-dollars (10^-6 USD resolution).
class Money {
 public:
  constexpr Money() = default;
  static constexpr Money from_micros(std::int64_t micros) { return Money(micros); }
  // Parses "2.5", "0.000001", "-1.25". More than six fractional digits is
  // rejected rather than rounded. Throws std::invalid_argument.
  static Money parse(std::string_view usd);
  // Nearest micro-dollar; intended for config values, not accounting.
  static Money from_usd(double usd);

  constexpr std::int64_t micros() const { return micros_; }
  double usd() const { return static_cast<double>(micros_) / 1e6; }
  // Always six fractional digits, e.g. "0.061000".
  std::string to_string() const;

  constexpr Money& operator+=(Money o) {
    micros_ += o.micros_;
    return *this;
  }
  friend constexpr Money operator+(Money a, Money b) { return Money(a.micros_ + b.micros_); }
  friend constexpr Money operator-(Money a, Money b) { return Money(a.micros_ - b.micros_); }
  friend constexpr auto operator<=>(Money, Money) = default;

 private:
  constexpr explicit Money(std::int64_t micros) : micros_(micros) {}
  std::int64_t micros_ = 0;
};

/// price_per_mtok * tokens / 10^6, rounded half-up to the micro-dollar.
Money token_cost(Money price_per_mtok, std::uint64_t tokens);

}  // namespace supervisor
