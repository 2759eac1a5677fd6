#ifndef NEGFU_TENSOR_H_
#define NEGFU_TENSOR_H_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace negfu {

using Shape = std::vector<std::size_t>;

std::size_t ShapeSize(const Shape& shape);
std::string ShapeToString(const Shape& shape);

// Dense row-major array of doubles. Plain value type: copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Same shape, different element count per leading index is not allowed.
  Tensor Reshaped(Shape shape) const;

  // Rows [begin, end) along the leading axis.
  Tensor Slice(std::size_t begin, std::size_t end) const;
  // Gathers rows along the leading axis.
  Tensor Gather(std::span<const std::size_t> rows) const;
  std::size_t RowSize() const;

  void Fill(double value);
  void Scale(double factor);
  // this += factor * other (shapes must match).
  void Axpy(double factor, const Tensor& other);

  double SquaredNorm() const;
  bool AllFinite() const;

  // Bit-level equality of shape and every element.
  bool BitEqual(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Throws NonFiniteError mentioning `what` if any element is NaN/Inf.
void CheckFinite(const Tensor& t, const std::string& what);

}  // namespace negfu

#endif  // NEGFU_TENSOR_H_
