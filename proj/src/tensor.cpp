#include "sarc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace sarc {

namespace {

Eigen::Index product(const std::vector<Eigen::Index>& shape) {
  Eigen::Index n = 1;
  for (Eigen::Index d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<Eigen::Index> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(product(shape_)), 0.0);
}

Tensor::Tensor(std::vector<Eigen::Index> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != static_cast<Eigen::Index>(data_.size())) {
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::from_matrix(const Mat& m) {
  Tensor t({m.rows(), m.cols()});
  t.mat() = m;
  return t;
}

Tensor Tensor::from_vector(const Vec& v) {
  Tensor t({v.size()});
  t.vec() = v;
  return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const Eigen::Index r = static_cast<Eigen::Index>(rows.size());
  if (r == 0) throw ShapeError("from_rows: no rows");
  const Eigen::Index c = static_cast<Eigen::Index>(rows.begin()->size());
  Tensor t({r, c});
  Eigen::Index i = 0;
  for (const auto& row : rows) {
    if (static_cast<Eigen::Index>(row.size()) != c) throw ShapeError("from_rows: ragged rows");
    for (double v : row) t.data_[static_cast<size_t>(i++)] = v;
  }
  return t;
}

Eigen::Map<Mat> Tensor::mat() {
  if (ndim() != 2) throw ShapeError("mat() requires a 2-d tensor, shape is " + shape_string(shape_));
  return {data_.data(), shape_[0], shape_[1]};
}

Eigen::Map<const Mat> Tensor::mat() const {
  if (ndim() != 2) throw ShapeError("mat() requires a 2-d tensor, shape is " + shape_string(shape_));
  return {data_.data(), shape_[0], shape_[1]};
}

Eigen::Map<Vec> Tensor::vec() {
  if (ndim() != 1) throw ShapeError("vec() requires a 1-d tensor, shape is " + shape_string(shape_));
  return {data_.data(), size()};
}

Eigen::Map<const Vec> Tensor::vec() const {
  if (ndim() != 1) throw ShapeError("vec() requires a 1-d tensor, shape is " + shape_string(shape_));
  return {data_.data(), size()};
}

double& Tensor::at(Eigen::Index r, Eigen::Index c) {
  if (ndim() != 2) throw ShapeError("at(r,c) requires a 2-d tensor");
  return data_.at(static_cast<size_t>(r * shape_[1] + c));
}

double Tensor::at(Eigen::Index r, Eigen::Index c) const {
  if (ndim() != 2) throw ShapeError("at(r,c) requires a 2-d tensor");
  return data_.at(static_cast<size_t>(r * shape_[1] + c));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(std::vector<Eigen::Index> shape) const {
  if (product(shape) != size()) {
    throw ShapeError("reshape from " + shape_string(shape_) + " to " + shape_string(shape) +
                     " changes element count");
  }
  return Tensor(std::move(shape), data_);
}

std::string shape_string(const std::vector<Eigen::Index>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul shape mismatch: " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  Tensor out({a.dim(0), b.dim(1)});
  out.mat().noalias() = a.mat() * b.mat();
  return out;
}

void matmul_backward(const Tensor& grad_out, const Tensor& a, const Tensor& b,
                     Tensor& grad_a, Tensor& grad_b) {
  if (grad_out.ndim() != 2 || grad_out.dim(0) != a.dim(0) || grad_out.dim(1) != b.dim(1)) {
    throw ShapeError("matmul_backward grad shape " + shape_string(grad_out.shape()) +
                     " does not match product of " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  grad_a = Tensor(a.shape());
  grad_b = Tensor(b.shape());
  grad_a.mat().noalias() = grad_out.mat() * b.mat().transpose();
  grad_b.mat().noalias() = a.mat().transpose() * grad_out.mat();
}

namespace {

void check_axis(const Tensor& x, int axis) {
  if (x.ndim() == 1) {
    if (axis != 0) throw ShapeError("axis " + std::to_string(axis) + " invalid for 1-d tensor");
  } else if (x.ndim() == 2) {
    if (axis != 0 && axis != 1) {
      throw ShapeError("axis " + std::to_string(axis) + " invalid for 2-d tensor");
    }
  } else {
    throw ShapeError("softmax/l2_normalize support 1-d and 2-d tensors, shape is " +
                     shape_string(x.shape()));
  }
}

// Applies fn to every slice along `axis`, 1-d tensors being a single slice.
template <typename Fn>
void for_each_slice(const Tensor& x, int axis, Fn&& fn) {
  if (x.ndim() == 1) {
    fn(0, x.size(), 1);  // offset, length, stride
    return;
  }
  const Eigen::Index rows = x.dim(0), cols = x.dim(1);
  if (axis == 1) {
    for (Eigen::Index r = 0; r < rows; ++r) fn(r * cols, cols, 1);
  } else {
    for (Eigen::Index c = 0; c < cols; ++c) fn(c, rows, cols);
  }
}

using StridedVec = Eigen::Map<Vec, 0, Eigen::InnerStride<Eigen::Dynamic>>;
using ConstStridedVec = Eigen::Map<const Vec, 0, Eigen::InnerStride<Eigen::Dynamic>>;

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  check_axis(x, axis);
  Tensor out(x.shape());
  for_each_slice(x, axis, [&](Eigen::Index off, Eigen::Index len, Eigen::Index stride) {
    ConstStridedVec in(x.data() + off, len, Eigen::InnerStride<Eigen::Dynamic>(stride));
    StridedVec o(out.data() + off, len, Eigen::InnerStride<Eigen::Dynamic>(stride));
    const double m = in.maxCoeff();
    o = (in.array() - m).exp();
    o /= o.sum();
  });
  return out;
}

Tensor softmax_backward(const Tensor& grad_out, const Tensor& y, int axis) {
  if (!grad_out.same_shape(y)) {
    throw ShapeError("softmax_backward shape mismatch: " + shape_string(grad_out.shape()) +
                     " vs " + shape_string(y.shape()));
  }
  Tensor out(y.shape());
  for_each_slice(y, axis, [&](Eigen::Index off, Eigen::Index len, Eigen::Index stride) {
    ConstStridedVec g(grad_out.data() + off, len, Eigen::InnerStride<Eigen::Dynamic>(stride));
    ConstStridedVec yy(y.data() + off, len, Eigen::InnerStride<Eigen::Dynamic>(stride));
    StridedVec o(out.data() + off, len, Eigen::InnerStride<Eigen::Dynamic>(stride));
    const double dot = g.dot(yy);
    o = (g.array() - dot) * yy.array();
  });
  return out;
}

Tensor elementwise(const Tensor& x, Activation kind) {
  Tensor out(x.shape());
  auto in = x.flat();
  auto o = out.flat();
  switch (kind) {
    case Activation::Sigmoid:
      // Branch on sign so exp never overflows.
      for (Eigen::Index i = 0; i < in.size(); ++i) {
        const double v = in[i];
        o[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      }
      break;
    case Activation::Tanh:
      o = in.tanh();
      break;
    case Activation::Relu:
      o = in.max(0.0);
      break;
  }
  return out;
}

Tensor elementwise_backward(const Tensor& grad_out, const Tensor& x, const Tensor& y,
                            Activation kind) {
  if (!grad_out.same_shape(x) || !y.same_shape(x)) {
    throw ShapeError("elementwise_backward shape mismatch");
  }
  Tensor out(x.shape());
  auto g = grad_out.flat();
  auto xf = x.flat();
  auto yf = y.flat();
  auto o = out.flat();
  switch (kind) {
    case Activation::Sigmoid:
      o = g * yf * (1.0 - yf);
      break;
    case Activation::Tanh:
      o = g * (1.0 - yf.square());
      break;
    case Activation::Relu:
      o = g * (xf > 0.0).cast<double>();
      break;
  }
  return out;
}

Tensor l2_normalize(const Tensor& x, int axis, double eps) {
  if (eps <= 0) throw std::invalid_argument("l2_normalize: eps must be positive");
  check_axis(x, axis);
  Tensor out(x.shape());
  for_each_slice(x, axis, [&](Eigen::Index off, Eigen::Index len, Eigen::Index stride) {
    ConstStridedVec in(x.data() + off, len, Eigen::InnerStride<Eigen::Dynamic>(stride));
    StridedVec o(out.data() + off, len, Eigen::InnerStride<Eigen::Dynamic>(stride));
    const double n = in.norm();
    if (n < eps) {
      o = in;
    } else {
      o = in / n;
    }
  });
  return out;
}

Tensor l2_normalize_backward(const Tensor& grad_out, const Tensor& x, int axis, double eps) {
  if (!grad_out.same_shape(x)) throw ShapeError("l2_normalize_backward shape mismatch");
  Tensor out(x.shape());
  for_each_slice(x, axis, [&](Eigen::Index off, Eigen::Index len, Eigen::Index stride) {
    ConstStridedVec in(x.data() + off, len, Eigen::InnerStride<Eigen::Dynamic>(stride));
    ConstStridedVec g(grad_out.data() + off, len, Eigen::InnerStride<Eigen::Dynamic>(stride));
    StridedVec o(out.data() + off, len, Eigen::InnerStride<Eigen::Dynamic>(stride));
    const double n = in.norm();
    if (n < eps) {
      o = g;
    } else {
      const Vec y = in / n;
      o = (g - y * y.dot(g)) / n;
    }
  });
  return out;
}

}  // namespace sarc
