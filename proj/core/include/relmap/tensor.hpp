#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "relmap/errors.hpp"

namespace relmap {

// Dense row-major tensor of doubles, rank <= 2. The single numeric
// carrier for activations, weights, gradients and maps.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor vector(std::size_t n, double fill = 0.0) {
    return Tensor({n}, fill);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix views; a rank-1 tensor reads as a 1xN row.
  std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const {
    return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0);
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_str() const;

  bool all_finite() const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Throws DimensionError naming both shapes unless a and b match.
void check_same_shape(const Tensor& a, const Tensor& b, const char* where);

// C = A(m x k) * B(k x n)
Tensor matmul(const Tensor& a, const Tensor& b);
// C = A(m x k) * B(n x k)^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// C = A(k x m)^T * B(k x n)
Tensor matmul_tn(const Tensor& a, const Tensor& b);

struct LossGrad {
  double loss = 0.0;
  Tensor grad;
};

// Row-wise softmax, log-sum-exp stabilized.
Tensor softmax(const Tensor& logits);

// Mean cross-entropy over the batch; grad_logits = (softmax - onehot)/b.
LossGrad softmax_xent(const Tensor& logits, std::span<const int> labels);

// loss = sum y_k^2, grad = 2y.
LossGrad l2_to_zero(const Tensor& y);

}  // namespace relmap
