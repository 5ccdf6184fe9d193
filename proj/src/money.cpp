#include "supervisor/money.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace supervisor {

Money Money::parse(std::string_view usd) {
  if (usd.empty()) throw std::invalid_argument("empty money value");
  bool negative = false;
  std::size_t i = 0;
  if (usd[0] == '-' || usd[0] == '+') {
    negative = usd[0] == '-';
    i = 1;
  }
  std::int64_t whole = 0;
  std::int64_t frac = 0;
  int frac_digits = 0;
  bool seen_dot = false;
  bool any_digit = false;
  for (; i < usd.size(); ++i) {
    char c = usd[i];
    if (c == '.') {
      if (seen_dot) throw std::invalid_argument("malformed money value: " + std::string(usd));
      seen_dot = true;
      continue;
    }
    if (c < '0' || c > '9') throw std::invalid_argument("malformed money value: " + std::string(usd));
    any_digit = true;
    if (seen_dot) {
      if (++frac_digits > 6)
        throw std::invalid_argument("money value finer than 1e-6 USD: " + std::string(usd));
      frac = frac * 10 + (c - '0');
    } else {
      if (whole > (INT64_MAX / 1'000'000 - 9) / 10)
        throw std::invalid_argument("money value out of range: " + std::string(usd));
      whole = whole * 10 + (c - '0');
    }
  }
  if (!any_digit) throw std::invalid_argument("malformed money value: " + std::string(usd));
  for (int d = frac_digits; d < 6; ++d) frac *= 10;
  std::int64_t micros = whole * 1'000'000 + frac;
  return Money(negative ? -micros : micros);
}

Money Money::from_usd(double usd) { return Money(static_cast<std::int64_t>(std::llround(usd * 1e6))); }

std::string Money::to_string() const {
  std::int64_t abs = micros_ < 0 ? -micros_ : micros_;
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%lld.%06lld", micros_ < 0 ? "-" : "",
                static_cast<long long>(abs / 1'000'000), static_cast<long long>(abs % 1'000'000));
  return buf;
}

Money token_cost(Money price_per_mtok, std::uint64_t tokens) {
  __int128 product = static_cast<__int128>(price_per_mtok.micros()) * static_cast<__int128>(tokens);
  __int128 q = product / 1'000'000;
  __int128 r = product % 1'000'000;
  if (r < 0) r = -r;
  if (r * 2 >= 1'000'000) q += product < 0 ? -1 : 1;
  return Money::from_micros(static_cast<std::int64_t>(q));
}

}  // namespace supervisor
