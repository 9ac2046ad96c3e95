#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crossenc/errors.hpp"
#include "crossenc/rng.hpp"

namespace crossenc {

// Dense row-major float32 matrix. Everything in the model is 2-D: scalars are
// 1x1, row vectors 1xN. The shape vector is kept general per the storage
// contract but operations require rank 2.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int rows, int cols) : shape{rows, cols}, data(static_cast<size_t>(rows) * cols, 0.0f) {
    if (rows <= 0 || cols <= 0) throw NumericsError("Tensor: dimensions must be positive");
  }

  static Tensor zeros(int rows, int cols) { return Tensor(rows, cols); }

  static Tensor full(int rows, int cols, float v) {
    Tensor t(rows, cols);
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(float v) { return full(1, 1, v); }

  static Tensor from(int rows, int cols, std::vector<float> values) {
    Tensor t(rows, cols);
    if (values.size() != t.data.size())
      throw NumericsError("Tensor::from: value count does not match shape");
    t.data = std::move(values);
    return t;
  }

  static Tensor randn(int rows, int cols, float stddev, Rng& rng) {
    Tensor t(rows, cols);
    for (auto& x : t.data) x = rng.normal(0.0f, stddev);
    return t;
  }

  bool empty() const { return data.empty(); }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? (shape.empty() ? 0 : 1) : shape[1]; }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  float& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  float at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

}  // namespace crossenc
