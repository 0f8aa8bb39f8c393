#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace chc {

// Extended-range floating point: value = frac * 2^exp2 with |frac| in [0.5, 1).
//
// The Carleman weight theta = exp(lambda*gamma*alpha) spans far more orders of
// magnitude than an IEEE double exponent can hold (|alpha| ~ mu*e^{mu(10m+10)}),
// so every weighted functional and every adjoint-side field is carried on this
// type. A 128-bit binary exponent covers exp(+-1e26) with room to spare, while
// the mantissa keeps full double precision for same-scale arithmetic. Addition
// of terms more than ~2^128 apart truncates the smaller one, which is below
// double round-off relative to the result.
class XReal {
 public:
  using exp_t = __int128;

  constexpr XReal() : frac_(0.0), exp_(0) {}

  static XReal of(double x) {
    XReal r;
    if (x == 0.0) return r;
    int e = 0;
    r.frac_ = std::frexp(x, &e);
    r.exp_ = e;
    return r;
  }

  // exp(natural_log). Once |log| exceeds the double-integer range the mantissa
  // phase cannot be tracked; a fixed phase is used instead. The result is a
  // pure function of the stored log double, so identically built weights stay
  // identical, and such values only ever meet astronomically separated
  // partners, where the phase is below the precision of any result.
  static XReal exp_log(double natural_log) {
    XReal r;
    if (natural_log == -std::numeric_limits<double>::infinity()) return r;
    if (!(std::fabs(natural_log) < 5.8e37))
      throw std::overflow_error("XReal::exp_log: log magnitude exceeds the exponent range");
    const double kLog2e = 1.4426950408889634074;
    const double kLn2 = 0.6931471805599453094;
    double e2d = std::floor(natural_log * kLog2e);
    exp_t e2 = d_to_i128(e2d);
    double rem = std::fma(-e2d, kLn2, natural_log);
    double f = (rem >= -1.0 && rem <= 1.5) ? std::exp(rem) : 1.0;
    int fe = 0;
    r.frac_ = std::frexp(f, &fe);
    r.exp_ = e2 + fe;
    if (r.frac_ == 0.0) r.exp_ = 0;
    return r;
  }

  bool is_zero() const { return frac_ == 0.0; }
  int sign() const { return frac_ == 0.0 ? 0 : (frac_ > 0.0 ? 1 : -1); }
  double frac() const { return frac_; }
  exp_t exp2() const { return exp_; }

  // Natural log of |value|; -inf for zero. Absolute precision of the result is
  // ~|log|*eps, fine for reporting and for dominated comparisons.
  double log_abs() const {
    if (is_zero()) return -std::numeric_limits<double>::infinity();
    const double kLn2 = 0.6931471805599453094;
    return static_cast<double>(exp_) * kLn2 + std::log(std::fabs(frac_));
  }

  double to_double() const {
    if (is_zero()) return 0.0;
    if (exp_ > 1024) return frac_ > 0 ? std::numeric_limits<double>::infinity()
                                      : -std::numeric_limits<double>::infinity();
    if (exp_ < -1070) return 0.0;
    return std::ldexp(frac_, static_cast<int>(exp_));
  }

  bool finite_double() const { return is_zero() || (exp_ <= 1024 && exp_ >= -1070); }

  XReal operator-() const {
    XReal r = *this;
    r.frac_ = -r.frac_;
    return r;
  }

  friend XReal operator*(const XReal& a, const XReal& b) {
    XReal r;
    if (a.is_zero() || b.is_zero()) return r;
    double f = a.frac_ * b.frac_;  // in +-[0.25, 1)
    int fe = 0;
    r.frac_ = std::frexp(f, &fe);
    r.exp_ = a.exp_ + b.exp_ + fe;
    return r;
  }

  friend XReal operator/(const XReal& a, const XReal& b) {
    XReal r;
    if (a.is_zero()) return r;
    double f = a.frac_ / b.frac_;  // in +-(0.5, 2)
    int fe = 0;
    r.frac_ = std::frexp(f, &fe);
    r.exp_ = a.exp_ - b.exp_ + fe;
    return r;
  }

  friend XReal operator+(const XReal& a, const XReal& b) {
    if (a.is_zero()) return b;
    if (b.is_zero()) return a;
    const XReal* hi = &a;
    const XReal* lo = &b;
    if (b.exp_ > a.exp_) { hi = &b; lo = &a; }
    exp_t shift = hi->exp_ - lo->exp_;
    if (shift > 128) return *hi;
    double f = hi->frac_ + std::ldexp(lo->frac_, -static_cast<int>(shift));
    XReal r;
    if (f == 0.0) return r;
    int fe = 0;
    r.frac_ = std::frexp(f, &fe);
    r.exp_ = hi->exp_ + fe;
    return r;
  }

  friend XReal operator-(const XReal& a, const XReal& b) { return a + (-b); }

  XReal& operator+=(const XReal& o) { return *this = *this + o; }
  XReal& operator-=(const XReal& o) { return *this = *this - o; }
  XReal& operator*=(const XReal& o) { return *this = *this * o; }
  XReal& operator/=(const XReal& o) { return *this = *this / o; }

  friend XReal operator*(const XReal& a, double b) { return a * XReal::of(b); }
  friend XReal operator*(double a, const XReal& b) { return XReal::of(a) * b; }
  XReal& operator*=(double b) { return *this = *this * XReal::of(b); }

  friend XReal abs(const XReal& a) {
    XReal r = a;
    r.frac_ = std::fabs(r.frac_);
    return r;
  }

  friend XReal sqrt(const XReal& a) {
    XReal r;
    if (a.is_zero()) return r;
    double f = a.frac_;
    exp_t e = a.exp_;
    if (e % 2 != 0) { f *= 2.0; e -= 1; }
    double s = std::sqrt(f);  // f in [0.5, 2), s in [0.707, 1.415)
    int fe = 0;
    r.frac_ = std::frexp(s, &fe);
    r.exp_ = e / 2 + fe;
    return r;
  }

  // -1, 0, +1 ordering of values.
  friend int compare(const XReal& a, const XReal& b) {
    int sa = a.sign(), sb = b.sign();
    if (sa != sb) return sa < sb ? -1 : 1;
    if (sa == 0) return 0;
    if (a.exp_ != b.exp_) {
      bool bigger = a.exp_ > b.exp_;
      return (bigger == (sa > 0)) ? 1 : -1;
    }
    if (a.frac_ < b.frac_) return -1;
    if (a.frac_ > b.frac_) return 1;
    return 0;
  }
  friend bool operator<(const XReal& a, const XReal& b) { return compare(a, b) < 0; }
  friend bool operator>(const XReal& a, const XReal& b) { return compare(a, b) > 0; }
  friend bool operator<=(const XReal& a, const XReal& b) { return compare(a, b) <= 0; }
  friend bool operator>=(const XReal& a, const XReal& b) { return compare(a, b) >= 0; }
  friend bool operator==(const XReal& a, const XReal& b) { return compare(a, b) == 0; }
  friend bool operator!=(const XReal& a, const XReal& b) { return compare(a, b) != 0; }

  // |a - b| / max(|a|, |b|), as a double; 0 when both are zero.
  friend double rel_diff(const XReal& a, const XReal& b) {
    XReal d = abs(a - b);
    XReal m = abs(a) > abs(b) ? abs(a) : abs(b);
    if (m.is_zero()) return 0.0;
    return (d / m).to_double();
  }

  // "f*2^e" debug form; to_double() would over/underflow for most values.
  std::string str() const {
    return std::to_string(frac_) + "*2^" + std::to_string(static_cast<double>(exp_));
  }

 private:
  static exp_t d_to_i128(double x) {
    if (x == 0.0) return 0;
    bool neg = x < 0;
    if (neg) x = -x;
    int e = 0;
    double m = std::frexp(x, &e);  // x = m * 2^e, m in [0.5, 1)
    auto top = static_cast<long long>(std::llround(std::ldexp(m, 53)));
    int sh = e - 53;
    exp_t r = top;
    if (sh > 0) {
      if (sh > 120) sh = 120;  // saturate; callers validate ranges
      r <<= sh;
    } else if (sh < 0) {
      r = (-sh >= 127) ? 0 : (r >> (-sh));
    }
    return neg ? -r : r;
  }

  double frac_;
  exp_t exp_;
};

inline XReal pow_int(XReal base, long long k) {
  XReal r = XReal::of(1.0);
  bool inv = k < 0;
  unsigned long long n = inv ? static_cast<unsigned long long>(-k) : static_cast<unsigned long long>(k);
  while (n) {
    if (n & 1ULL) r *= base;
    base *= base;
    n >>= 1;
  }
  if (inv) return XReal::of(1.0) / r;
  return r;
}

}  // namespace chc
