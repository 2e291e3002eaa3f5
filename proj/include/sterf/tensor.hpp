#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "sterf/errors.hpp"

namespace sterf {

// Logical layout of every value tensor in the library: timesteps, batch,
// channels, height, width, stored row-major in that order.
struct Shape5 {
  std::size_t t = 1, b = 1, c = 1, h = 1, w = 1;

  std::size_t numel() const { return t * b * c * h * w; }

  bool operator==(const Shape5& o) const {
    return t == o.t && b == o.b && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape5& o) const { return !(*this == o); }

  std::string str() const {
    return "(" + std::to_string(t) + "," + std::to_string(b) + "," +
           std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

// Dense double-precision 5-D array. The universal carrier for inputs,
// spikes, membranes and adjoints.
class Tensor5 {
 public:
  Tensor5() = default;

  explicit Tensor5(Shape5 s) : shape_(s) {
    if (s.t == 0 || s.b == 0 || s.c == 0 || s.h == 0 || s.w == 0)
      throw ShapeError("Tensor5: zero dimension in shape " + s.str());
    data_.assign(s.numel(), 0.0);
  }

  Tensor5(Shape5 s, std::vector<double> data) : shape_(s), data_(std::move(data)) {
    if (data_.size() != s.numel())
      throw ShapeError("Tensor5: data length " + std::to_string(data_.size()) +
                       " does not match shape " + s.str());
  }

  const Shape5& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(std::size_t t, std::size_t b, std::size_t c,
                    std::size_t h, std::size_t w) const {
    return ((((t * shape_.b) + b) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  double& at(std::size_t t, std::size_t b, std::size_t c, std::size_t h,
             std::size_t w) {
    return data_[index(t, b, c, h, w)];
  }
  double at(std::size_t t, std::size_t b, std::size_t c, std::size_t h,
            std::size_t w) const {
    return data_[index(t, b, c, h, w)];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::array<std::size_t, 5> unravel(std::size_t i) const {
    std::array<std::size_t, 5> idx{};
    idx[4] = i % shape_.w; i /= shape_.w;
    idx[3] = i % shape_.h; i /= shape_.h;
    idx[2] = i % shape_.c; i /= shape_.c;
    idx[1] = i % shape_.b; i /= shape_.b;
    idx[0] = i;
    return idx;
  }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor5& operator+=(const Tensor5& o) {
    if (shape_ != o.shape_)
      throw ShapeError("Tensor5 +=: shape mismatch " + shape_.str() + " vs " +
                       o.shape_.str());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Tensor5& operator*=(double k) {
    for (double& v : data_) v *= k;
    return *this;
  }

 private:
  Shape5 shape_;
  std::vector<double> data_;
};

inline Tensor5 zeros_like(const Tensor5& x) { return Tensor5(x.shape()); }

}  // namespace sterf
