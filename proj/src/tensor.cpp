#include "surgicam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace surgicam {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimension of size 0 in " + shape_to_string(shape));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                     ", got " + shape_to_string(t.shape()));
  }
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisView {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis, const char* what) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(what) + ": axis " + std::to_string(axis) +
                     " out of range for " + shape_to_string(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  if (rows.size() == 0) throw ShapeError("from_rows: no rows");
  const std::size_t cols = rows.begin()->size();
  std::vector<float> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError("from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<float> values) {
  return Tensor({values.size()}, std::vector<float>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(shape_));
  }
  return shape_[axis];
}

float& Tensor::at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
float Tensor::at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

float& Tensor::at(std::size_t i, std::size_t j, std::size_t k) {
  return data_[(i * shape_[1] + j) * shape_[2] + k];
}
float Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
  return data_[(i * shape_[1] + j) * shape_[2] + k];
}

std::span<float> Tensor::row(std::size_t i) {
  require_rank(*this, 2, "row");
  return std::span<float>(data_).subspan(i * shape_[1], shape_[1]);
}

std::span<const float> Tensor::row(std::size_t i) const {
  require_rank(*this, 2, "row");
  return std::span<const float>(data_).subspan(i * shape_[1], shape_[1]);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " +
                     shape_to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  require_rank(*this, 2, "slice_rows");
  if (begin >= end || end > shape_[0]) {
    throw ShapeError("slice_rows: invalid range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") for " + shape_to_string(shape_));
  }
  const std::size_t cols = shape_[1];
  std::vector<float> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                         data_.begin() + static_cast<std::ptrdiff_t>(end * cols));
  return Tensor({end - begin, cols}, std::move(out));
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_to_string(a.shape()) +
                     " and " + shape_to_string(b.shape()));
  }
  Tensor out({m, n});
  std::vector<double> acc(n);
  const float* bp = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* ar = a.data().data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      const float* br = bp + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * br[j];
    }
    float* orow = out.data().data() + i * n;
    for (std::size_t j = 0; j < n; ++j) orow[j] = static_cast<float>(acc[j]);
  }
  return out;
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_transposed");
  require_rank(b, 2, "matmul_transposed");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_transposed: inner dimensions disagree for " +
                     shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const auto ar = a.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      const auto br = b.row(j);
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += static_cast<double>(ar[p]) * br[p];
      out.at(i, j) = static_cast<float>(acc);
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
  Tensor out = matmul(x, w);
  if (bias) {
    const std::size_t n = out.dim(1);
    if (bias->numel() != n) {
      throw ShapeError("linear: bias " + shape_to_string(bias->shape()) +
                       " does not match output width " + std::to_string(n));
    }
    for (std::size_t i = 0; i < out.dim(0); ++i) {
      auto r = out.row(i);
      for (std::size_t j = 0; j < n; ++j) r[j] += (*bias)[j];
    }
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

Tensor subtract(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("subtract: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
  return out;
}

Tensor scale(const Tensor& a, float factor) {
  Tensor out = a;
  for (auto& v : out.data()) v *= factor;
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis, float scale) {
  const AxisView v = axis_view(x.shape(), axis, "softmax");
  Tensor out(x.shape());
  std::vector<double> buf(v.extent);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.extent * v.inner + in;
      double hi = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < v.extent; ++e) {
        buf[e] = static_cast<double>(scale) * x[base + e * v.inner];
        hi = std::max(hi, buf[e]);
      }
      double sum = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) {
        buf[e] = std::exp(buf[e] - hi);
        sum += buf[e];
      }
      for (std::size_t e = 0; e < v.extent; ++e) {
        out[base + e * v.inner] = static_cast<float>(buf[e] / sum);
      }
    }
  }
  return out;
}

Tensor l2_normalize(const Tensor& x, std::size_t axis, float epsilon) {
  const AxisView v = axis_view(x.shape(), axis, "l2_normalize");
  Tensor out(x.shape());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.extent * v.inner + in;
      double ss = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) {
        const double val = x[base + e * v.inner];
        ss += val * val;
      }
      const double div = std::max(std::sqrt(ss), static_cast<double>(epsilon));
      for (std::size_t e = 0; e < v.extent; ++e) {
        out[base + e * v.inner] = static_cast<float>(x[base + e * v.inner] / div);
      }
    }
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  const std::size_t c = x.shape().back();
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("layer_norm: gamma " + shape_to_string(gamma.shape()) + " / beta " +
                     shape_to_string(beta.shape()) + " do not match last dimension of " +
                     shape_to_string(x.shape()));
  }
  Tensor out(x.shape());
  const std::size_t rows = x.numel() / c;
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x.data().data() + r * c;
    float* orow = out.data().data() + r * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xr[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xr[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      orow[j] = static_cast<float>((xr[j] - mean) * inv * gamma[j] + beta[j]);
    }
  }
  return out;
}

Tensor quick_gelu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x[i];
    out[i] = static_cast<float>(v / (1.0 + std::exp(-1.702 * v)));
  }
  return out;
}

Tensor bilinear_resize(const Tensor& map, std::size_t out_h, std::size_t out_w) {
  require_rank(map, 2, "bilinear_resize");
  if (out_h == 0 || out_w == 0) {
    throw ShapeError("bilinear_resize: output size must be positive");
  }
  const std::size_t h = map.dim(0), w = map.dim(1);
  if (h == out_h && w == out_w) return map;

  // Source coordinate for output index i along an axis of length n -> out_n.
  auto source = [](std::size_t i, std::size_t n, std::size_t out_n) {
    if (out_n == 1 || n == 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(n - 1) /
           static_cast<double>(out_n - 1);
  };

  Tensor out({out_h, out_w});
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = source(y, h, out_h);
    const auto y0 = std::min(static_cast<std::size_t>(sy), h - 1);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = source(x, w, out_w);
      const auto x0 = std::min(static_cast<std::size_t>(sx), w - 1);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      // Lerp form keeps constant regions exactly constant.
      const double a = map.at(y0, x0), b = map.at(y0, x1);
      const double c = map.at(y1, x0), d = map.at(y1, x1);
      const double top = a + fx * (b - a);
      const double bottom = c + fx * (d - c);
      out.at(y, x) = static_cast<float>(top + fy * (bottom - top));
    }
  }
  return out;
}

Tensor minmax_normalize(const Tensor& map) {
  const auto [lo_it, hi_it] = std::minmax_element(map.data().begin(), map.data().end());
  const double lo = *lo_it, hi = *hi_it;
  Tensor out(map.shape(), 0.0f);
  if (!(hi > lo)) return out;
  const double range = hi - lo;
  for (std::size_t i = 0; i < map.numel(); ++i) {
    const double v = (map[i] - lo) / range;
    out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

Tensor broadcast_expand(const Tensor& x, const Shape& target) {
  if (x.rank() != target.size()) {
    throw ShapeError("broadcast_expand: rank mismatch " + shape_to_string(x.shape()) +
                     " -> " + shape_to_string(target));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (x.dim(i) != 1 && x.dim(i) != target[i]) {
      throw ShapeError("broadcast_expand: cannot expand " + shape_to_string(x.shape()) +
                       " to " + shape_to_string(target));
    }
  }
  if (x.shape() == target) return x;

  Tensor out(target);
  const std::size_t rank = target.size();
  std::vector<std::size_t> src_stride(rank), idx(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > 0;) {
    src_stride[i] = x.dim(i) == 1 ? 0 : s;
    s *= x.dim(i);
  }
  for (std::size_t flat = 0; flat < out.numel(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += idx[i] * src_stride[i];
    out[flat] = x[src];
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < target[i]) break;
      idx[i] = 0;
    }
  }
  return out;
}

}  // namespace ops
}  // namespace surgicam
