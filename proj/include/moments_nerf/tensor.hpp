#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace moments_nerf {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

/// Cache-line aligned storage. Eigen peels reductions up to the first
/// aligned element, so a fixed base alignment keeps summation order, and
/// therefore results, identical from run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major tensor. Images are stored H x W x C.
template <class T>
struct Tensor {
  Shape shape;
  Buffer<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, Buffer<T> values) : shape(std::move(s)), data(std::move(values)) {
    require(data.size() == shape_numel(shape), "tensor data does not match shape " + shape_str(shape));
  }
  template <class Alloc>
  Tensor(Shape s, const std::vector<T, Alloc>& values) : shape(std::move(s)), data(values.begin(), values.end()) {
    require(data.size() == shape_numel(shape), "tensor data does not match shape " + shape_str(shape));
  }

  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  // 2-D and 3-D accessors; no bounds checks.
  T& at(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  const T& at(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  T& at(int i, int j, int k) {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  const T& at(int i, int j, int k) const {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  std::span<T> span() { return data; }
  std::span<const T> span() const { return data; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// View a tensor as a rows x cols row-major matrix (last dim is cols).
template <class T>
MatMap<T> as_matrix(Tensor<T>& t) {
  const int cols = t.shape.back();
  return MatMap<T>(t.data.data(), static_cast<Eigen::Index>(t.size() / cols), cols);
}
template <class T>
ConstMatMap<T> as_matrix(const Tensor<T>& t) {
  const int cols = t.shape.back();
  return ConstMatMap<T>(t.data.data(), static_cast<Eigen::Index>(t.size() / cols), cols);
}

/// rows x cols tensor with i.i.d. N(0, stddev^2) entries.
template <class T>
Tensor<T> random_normal(std::mt19937_64& rng, int rows, int cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t({rows, cols});
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

/// Reflect-101 index (edge pixel not repeated), valid for any n >= 1.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace moments_nerf
