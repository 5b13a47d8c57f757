#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "smokeseg/errors.hpp"

namespace smokeseg {

/// 4-D extent. Feature maps use (batch, channels, height, width); convolution
/// weights reuse the same container as (k, k, cin, cout).
struct Shape {
  std::array<int, 4> d{1, 1, 1, 1};

  Shape() = default;
  Shape(int d0, int d1, int d2, int d3) : d{d0, d1, d2, d3} {}

  int n() const { return d[0]; }
  int c() const { return d[1]; }
  int h() const { return d[2]; }
  int w() const { return d[3]; }

  std::size_t numel() const {
    return static_cast<std::size_t>(d[0]) * static_cast<std::size_t>(d[1]) *
           static_cast<std::size_t>(d[2]) * static_cast<std::size_t>(d[3]);
  }

  bool operator==(const Shape& o) const { return d == o.d; }
  bool operator!=(const Shape& o) const { return d != o.d; }

  std::string str() const {
    std::ostringstream os;
    os << "(" << d[0] << "," << d[1] << "," << d[2] << "," << d[3] << ")";
    return os.str();
  }
};

/// Dense row-major 4-D array. F is float in training mode, double in
/// gradient-check mode.
template <typename F>
struct Tensor {
  Shape shape;
  std::vector<F> data;

  Tensor() : data(1, F(0)) {}

  explicit Tensor(Shape s) : shape(s) {
    validate(s);
    data.assign(s.numel(), F(0));
  }

  Tensor(Shape s, std::vector<F> values) : shape(s), data(std::move(values)) {
    validate(s);
    if (data.size() != s.numel()) {
      throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                       " does not match shape " + s.str());
    }
  }

  static Tensor zeros(Shape s) { return Tensor(s); }

  static Tensor full(Shape s, F value) {
    Tensor t(s);
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
  }

  std::size_t numel() const { return data.size(); }

  std::size_t index(int i0, int i1, int i2, int i3) const {
    return ((static_cast<std::size_t>(i0) * shape.d[1] + i1) * shape.d[2] + i2) * shape.d[3] + i3;
  }

  F& at(int i0, int i1, int i2, int i3) { return data[index(i0, i1, i2, i3)]; }
  F at(int i0, int i1, int i2, int i3) const { return data[index(i0, i1, i2, i3)]; }

  F* row(int i0, int i1, int i2) { return data.data() + index(i0, i1, i2, 0); }
  const F* row(int i0, int i1, int i2) const { return data.data() + index(i0, i1, i2, 0); }

  void fill(F value) { std::fill(data.begin(), data.end(), value); }

  /// Elementwise cast, used to mirror one network between precisions.
  template <typename G>
  Tensor<G> cast() const {
    Tensor<G> out{shape, std::vector<G>(data.size())};
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<G>(data[i]);
    return out;
  }

 private:
  static void validate(const Shape& s) {
    for (int v : s.d) {
      if (v < 1) throw ShapeError("tensor: all shape components must be >= 1, got " + s.str());
    }
  }
};

}  // namespace smokeseg
