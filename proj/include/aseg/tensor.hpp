#pragma once
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace aseg {

/// Dense row-major tensor over a flat buffer. Network activations use the
/// axis order (batch, channel, row, col); the last axis is contiguous.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), T{});
  }

  Tensor(std::vector<int> s, T fill) : shape(std::move(s)) {
    data.assign(numel_of(shape), fill);
  }

  static std::size_t numel_of(const std::vector<int>& s) {
    if (s.empty()) throw std::invalid_argument("tensor: empty shape");
    std::size_t n = 1;
    for (int d : s) {
      if (d < 1) throw std::invalid_argument("tensor: axis length must be >= 1");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  /// Reshape in place without preserving contents. Keeps the existing
  /// allocation whenever it is large enough, so buffers reused across
  /// training iterations stop costing an allocation + page-in per use.
  void resize(const std::vector<int>& s) {
    const std::size_t n = numel_of(s);
    shape = s;
    data.resize(n);
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  // 4-d accessors for (n, c, y, x) tensors. No bounds checking in release
  // builds; hot loops index the flat buffer directly instead.
  T& at4(int n, int c, int y, int x) {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  const T& at4(int n, int c, int y, int x) const {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }

  /// Cast element type (used to run reference paths in double precision).
  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

inline std::string shape_string(const std::vector<int>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

}  // namespace aseg
