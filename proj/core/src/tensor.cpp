#include "relmap/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace relmap {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {
  if (shape_.size() > 2) {
    throw DimensionError("tensor rank > 2 unsupported: " + shape_str());
  }
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > 2) {
    throw DimensionError("tensor rank > 2 unsupported: " + shape_str());
  }
  if (shape_product(shape_) != data_.size()) {
    std::ostringstream os;
    os << "tensor data length " << data_.size() << " does not match shape "
       << shape_str();
    throw DimensionError(os.str());
  }
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << 'x';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(where) + ": shape mismatch " +
                         a.shape_str() + " vs " + b.shape_str());
  }
}

namespace {

void check_inner(const Tensor& a, const Tensor& b, std::size_t ak,
                 std::size_t bk, const char* where) {
  if (ak != bk) {
    throw DimensionError(std::string(where) + ": inner dimensions disagree, " +
                         a.shape_str() + " vs " + b.shape_str());
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  check_inner(a, b, k, b.rows(), "matmul");
  Tensor c = Tensor::matrix(m, n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    double* row_c = pc + i * n;
    const double* row_a = pa + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = row_a[p];
      const double* row_b = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row_c[j] += av * row_b[j];
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  check_inner(a, b, k, b.cols(), "matmul_nt");
  Tensor c = Tensor::matrix(m, n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    const double* row_a = pa + i * k;
    double* row_c = pc + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* row_b = pb + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += row_a[p] * row_b[p];
      row_c[j] = acc;
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  check_inner(a, b, k, b.rows(), "matmul_tn");
  Tensor c = Tensor::matrix(m, n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    double* row_c = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[p * m + i];
      const double* row_b = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row_c[j] += av * row_b[j];
    }
  }
  return c;
}

Tensor softmax(const Tensor& logits) {
  const std::size_t b = logits.rows(), c = logits.cols();
  Tensor out = Tensor::matrix(b, c);
  for (std::size_t i = 0; i < b; ++i) {
    double mx = logits.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(logits.at(i, j) - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= sum;
  }
  return out;
}

LossGrad softmax_xent(const Tensor& logits, std::span<const int> labels) {
  const std::size_t b = logits.rows(), c = logits.cols();
  if (labels.size() != b) {
    std::ostringstream os;
    os << "softmax_xent: " << labels.size() << " labels for batch of " << b;
    throw InputError(os.str());
  }
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      std::ostringstream os;
      os << "softmax_xent: label " << labels[i] << " outside [0, " << c
         << ") at row " << i;
      throw InputError(os.str());
    }
  }
  LossGrad out;
  out.grad = Tensor::matrix(b, c);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double mx = logits.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(logits.at(i, j) - mx);
    const double log_z = mx + std::log(sum);
    total += log_z - logits.at(i, static_cast<std::size_t>(labels[i]));
    for (std::size_t j = 0; j < c; ++j) {
      const double p = std::exp(logits.at(i, j) - log_z);
      out.grad.at(i, j) = p / static_cast<double>(b);
    }
    out.grad.at(i, static_cast<std::size_t>(labels[i])) -=
        1.0 / static_cast<double>(b);
  }
  out.loss = total / static_cast<double>(b);
  return out;
}

LossGrad l2_to_zero(const Tensor& y) {
  LossGrad out;
  out.grad = y;
  double loss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    loss += y[i] * y[i];
    out.grad[i] = 2.0 * y[i];
  }
  out.loss = loss;
  return out;
}

}  // namespace relmap
