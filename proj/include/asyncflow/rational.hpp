#pragma once

#include <compare>
#include <cstdint>
#include <numeric>
#include <string>

#include "asyncflow/error.hpp"

namespace asyncflow {

/// Exact fraction with a positive, reduced denominator. Used for schedule
/// windows and breakpoints so grids land on them exactly.
class Rational {
public:
    constexpr Rational() = default;
    constexpr Rational(std::int64_t num, std::int64_t den = 1) : num_(num), den_(den) {
        if (den_ == 0) throw ContractViolation("rational with zero denominator");
        normalize();
    }

    constexpr std::int64_t num() const { return num_; }
    constexpr std::int64_t den() const { return den_; }
    constexpr double to_double() const {
        return static_cast<double>(num_) / static_cast<double>(den_);
    }

    friend constexpr Rational operator+(Rational a, Rational b) {
        return {a.num_ * b.den_ + b.num_ * a.den_, a.den_ * b.den_};
    }
    friend constexpr Rational operator-(Rational a, Rational b) {
        return {a.num_ * b.den_ - b.num_ * a.den_, a.den_ * b.den_};
    }
    friend constexpr Rational operator*(Rational a, Rational b) {
        return {a.num_ * b.num_, a.den_ * b.den_};
    }
    friend constexpr Rational operator/(Rational a, Rational b) {
        return {a.num_ * b.den_, a.den_ * b.num_};
    }
    friend constexpr bool operator==(Rational a, Rational b) {
        return a.num_ == b.num_ && a.den_ == b.den_;
    }
    friend constexpr std::strong_ordering operator<=>(Rational a, Rational b) {
        return a.num_ * b.den_ <=> b.num_ * a.den_;
    }

    std::string str() const { return std::to_string(num_) + "/" + std::to_string(den_); }

private:
    constexpr void normalize() {
        if (den_ < 0) {
            num_ = -num_;
            den_ = -den_;
        }
        const std::int64_t g = std::gcd(num_ < 0 ? -num_ : num_, den_);
        if (g > 1) {
            num_ /= g;
            den_ /= g;
        }
    }

    std::int64_t num_ = 0;
    std::int64_t den_ = 1;
};

}  // namespace asyncflow
