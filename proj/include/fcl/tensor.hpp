#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fcl/error.hpp"

namespace fcl {

using Shape = std::vector<std::size_t>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::RowVectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::RowVectorXd>;

inline std::size_t shape_size(const Shape &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major array of doubles. The last extent varies fastest.
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    check_extents();
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (shape_size(shape_) != data_.size())
      throw InvalidInput("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }

  const Shape &shape() const { return shape_; }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double> &values() { return data_; }
  const std::vector<double> &values() const { return data_; }

  double &operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double &at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  // Views the tensor as a rows x (size/rows) matrix.
  MatrixMap matrix() { return {data_.data(), rows(), cols()}; }
  ConstMatrixMap matrix() const { return {data_.data(), rows(), cols()}; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v))
        return false;
    return true;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor &, const Tensor &) = default;

private:
  Eigen::Index rows() const { return shape_.empty() ? 1 : static_cast<Eigen::Index>(shape_[0]); }
  Eigen::Index cols() const {
    return shape_.empty() || shape_[0] == 0 ? 0
                                            : static_cast<Eigen::Index>(data_.size() / shape_[0]);
  }

  void check_extents() const {
    for (std::size_t e : shape_)
      if (e == 0)
        throw InvalidInput("tensor extents must be positive, got " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

inline void require_shape(const Tensor &t, const Shape &expected, const char *what) {
  if (t.shape() != expected)
    throw InvalidInput(std::string(what) + ": expected shape " + shape_string(expected) + ", got " +
                       shape_string(t.shape()));
}

} // namespace fcl
