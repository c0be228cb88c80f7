#pragma once

#include <array>
#include <cmath>

namespace moments_nerf {

/// Forward-mode dual number with N tangent directions.
template <class T, int N>
struct Dual {
  T v{};
  std::array<T, N> d{};

  Dual() = default;
  Dual(T value) : v(value) {}  // NOLINT: implicit lift of constants
  static Dual variable(T value, int slot) {
    Dual x(value);
    x.d[slot] = T(1);
    return x;
  }

  friend Dual operator+(const Dual& a, const Dual& b) {
    Dual r(a.v + b.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] + b.d[i];
    return r;
  }
  friend Dual operator-(const Dual& a, const Dual& b) {
    Dual r(a.v - b.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] - b.d[i];
    return r;
  }
  friend Dual operator-(const Dual& a) {
    Dual r(-a.v);
    for (int i = 0; i < N; ++i) r.d[i] = -a.d[i];
    return r;
  }
  friend Dual operator*(const Dual& a, const Dual& b) {
    Dual r(a.v * b.v);
    for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    return r;
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    Dual r(a.v / b.v);
    const T inv2 = T(1) / (b.v * b.v);
    for (int i = 0; i < N; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) * inv2;
    return r;
  }

  /// f(x) with derivative f'(x) applied through the chain rule.
  static Dual apply(const Dual& x, T fx, T dfx) {
    Dual r(fx);
    for (int i = 0; i < N; ++i) r.d[i] = dfx * x.d[i];
    return r;
  }
  /// f(a, b) with partials fa, fb.
  static Dual apply2(const Dual& a, const Dual& b, T f, T fa, T fb) {
    Dual r(f);
    for (int i = 0; i < N; ++i) r.d[i] = fa * a.d[i] + fb * b.d[i];
    return r;
  }
};

template <class T, int N>
Dual<T, N> exp(const Dual<T, N>& x) {
  const T e = std::exp(x.v);
  return Dual<T, N>::apply(x, e, e);
}
template <class T, int N>
Dual<T, N> cos(const Dual<T, N>& x) {
  return Dual<T, N>::apply(x, std::cos(x.v), -std::sin(x.v));
}
template <class T, int N>
Dual<T, N> sin(const Dual<T, N>& x) {
  return Dual<T, N>::apply(x, std::sin(x.v), std::cos(x.v));
}

template <class T>
T value_of(const T& x) {
  return x;
}
template <class T, int N>
T value_of(const Dual<T, N>& x) {
  return x.v;
}

}  // namespace moments_nerf
