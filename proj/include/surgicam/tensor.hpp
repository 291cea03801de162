#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace surgicam {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense row-major float32 tensor. Every dimension is >= 1 and
// data().size() == product(shape()).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor from_rows(std::initializer_list<std::initializer_list<float>> rows);
  static Tensor vector(std::initializer_list<float> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t flat) { return data_[flat]; }
  float operator[](std::size_t flat) const { return data_[flat]; }

  float& at(std::size_t i, std::size_t j);
  float at(std::size_t i, std::size_t j) const;
  float& at(std::size_t i, std::size_t j, std::size_t k);
  float at(std::size_t i, std::size_t j, std::size_t k) const;

  // Row i of a rank-2 tensor.
  std::span<float> row(std::size_t i);
  std::span<const float> row(std::size_t i) const;

  Tensor reshaped(Shape shape) const;
  // Rows [begin, end) of a rank-2 tensor.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

namespace ops {

// Accumulates in double; a is [m x k], b is [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
// a [m x k] times b^T where b is [n x k].
Tensor matmul_transposed(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// x [n x in] times w [in x out] plus optional bias [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);

Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);

Tensor softmax(const Tensor& x, std::size_t axis, float scale = 1.0f);

inline constexpr float kDefaultNormEpsilon = 1e-12f;
Tensor l2_normalize(const Tensor& x, std::size_t axis,
                    float epsilon = kDefaultNormEpsilon);

inline constexpr float kDefaultLayerNormEpsilon = 1e-5f;
// Normalizes over the last dimension.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps = kDefaultLayerNormEpsilon);

// x * sigmoid(1.702 x)
Tensor quick_gelu(const Tensor& x);

// Corner-aligned bilinear resampling of a rank-2 map.
Tensor bilinear_resize(const Tensor& map, std::size_t out_h, std::size_t out_w);

// (x - min) / (max - min); a map without contrast becomes all zeros.
Tensor minmax_normalize(const Tensor& map);

Tensor broadcast_expand(const Tensor& x, const Shape& target);

}  // namespace ops
}  // namespace surgicam
