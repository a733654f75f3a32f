#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace sarc {

// Row-major throughout: Tensor stores row-major flat data, and the 2-d views
// below must alias it without copying.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense n-dimensional array of doubles. Math is done through Eigen views;
/// the shape vector is the source of truth for dimensionality.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<Eigen::Index> shape);
  Tensor(std::vector<Eigen::Index> shape, std::vector<double> data);

  static Tensor zeros(std::vector<Eigen::Index> shape) { return Tensor(std::move(shape)); }
  static Tensor from_matrix(const Mat& m);
  static Tensor from_vector(const Vec& v);
  // 2-d tensor from nested initializer lists; rows must have equal length.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<Eigen::Index>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  Eigen::Index dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  Eigen::Index size() const { return static_cast<Eigen::Index>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  Eigen::Map<Eigen::ArrayXd> flat() { return {data_.data(), size()}; }
  Eigen::Map<const Eigen::ArrayXd> flat() const { return {data_.data(), size()}; }

  // 2-d view; requires ndim() == 2.
  Eigen::Map<Mat> mat();
  Eigen::Map<const Mat> mat() const;
  // 1-d view; requires ndim() == 1.
  Eigen::Map<Vec> vec();
  Eigen::Map<const Vec> vec() const;

  double& at(Eigen::Index i) { return data_.at(static_cast<size_t>(i)); }
  double at(Eigen::Index i) const { return data_.at(static_cast<size_t>(i)); }
  double& at(Eigen::Index r, Eigen::Index c);
  double at(Eigen::Index r, Eigen::Index c) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  // Reinterprets the flat data under a new shape with equal element count.
  Tensor reshaped(std::vector<Eigen::Index> shape) const;

 private:
  std::vector<Eigen::Index> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<Eigen::Index>& shape);

// ---- core ops (each with an analytic backward) ----

Tensor matmul(const Tensor& a, const Tensor& b);
// grad_a += g * b^T, grad_b += a^T * g
void matmul_backward(const Tensor& grad_out, const Tensor& a, const Tensor& b,
                     Tensor& grad_a, Tensor& grad_b);

// Softmax along `axis` (0 or 1). Max-subtracted for overflow safety.
// 1-d tensors use axis 0; 2-d tensors normalize each row when axis == 1,
// each column when axis == 0.
Tensor softmax(const Tensor& x, int axis);
// Given y = softmax(x, axis) and upstream grad, returns grad wrt x.
Tensor softmax_backward(const Tensor& grad_out, const Tensor& y, int axis);

enum class Activation { Sigmoid, Tanh, Relu };

Tensor elementwise(const Tensor& x, Activation kind);
// Derivatives expressed through x and y = elementwise(x, kind).
Tensor elementwise_backward(const Tensor& grad_out, const Tensor& x, const Tensor& y,
                            Activation kind);

// L2-normalizes each slice along `axis`; slices with norm < eps pass through
// unchanged (0-vectors stay 0-vectors).
Tensor l2_normalize(const Tensor& x, int axis, double eps);
Tensor l2_normalize_backward(const Tensor& grad_out, const Tensor& x, int axis, double eps);

// Named parameter collection; ordered so that serialization and iteration are
// deterministic.
using ParamMap = std::map<std::string, Tensor>;

}  // namespace sarc
