#include "negfu/tensor.h"

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>

#include "negfu/errors.h"

namespace negfu {

std::size_t ShapeSize(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string ShapeToString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(ShapeSize(shape_), fill) {
  for (std::size_t d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive");
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive");
  }
  if (data_.size() != ShapeSize(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + ShapeToString(shape_));
  }
}

Tensor Tensor::Reshaped(Shape shape) const {
  if (ShapeSize(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + ShapeToString(shape_) + " to " +
                     ShapeToString(shape));
  }
  return Tensor(std::move(shape), data_);
}

std::size_t Tensor::RowSize() const {
  if (shape_.empty()) throw ShapeError("rank-0 tensor has no rows");
  return data_.size() / shape_[0];
}

Tensor Tensor::Slice(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin >= end || end > shape_[0]) {
    throw ShapeError("bad slice of " + ShapeToString(shape_));
  }
  const std::size_t row = RowSize();
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s),
                std::vector<double>(data_.begin() + begin * row,
                                    data_.begin() + end * row));
}

Tensor Tensor::Gather(std::span<const std::size_t> rows) const {
  if (rows.empty()) throw ShapeError("gather of zero rows");
  const std::size_t row = RowSize();
  Shape s = shape_;
  s[0] = rows.size();
  std::vector<double> out(rows.size() * row);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= shape_[0]) throw ShapeError("gather index out of range");
    std::memcpy(out.data() + i * row, data_.data() + rows[i] * row,
                row * sizeof(double));
  }
  return Tensor(std::move(s), std::move(out));
}

void Tensor::Fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::Scale(double factor) {
  for (double& v : data_) v *= factor;
}

void Tensor::Axpy(double factor, const Tensor& other) {
  if (other.shape_ != shape_) {
    throw ShapeError("axpy shape mismatch " + ShapeToString(shape_) + " vs " +
                     ShapeToString(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    data_[i] += factor * other.data_[i];
  }
}

double Tensor::SquaredNorm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return s;
}

bool Tensor::AllFinite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::BitEqual(const Tensor& other) const {
  return shape_ == other.shape_ &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(),
                                       data_.size() * sizeof(double)) == 0);
}

void CheckFinite(const Tensor& t, const std::string& what) {
  if (!t.AllFinite()) throw NonFiniteError("non-finite values in " + what);
}

}  // namespace negfu
