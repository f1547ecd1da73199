#include "compcap/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Core>

namespace compcap {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMatrix>;
using View = Eigen::Map<RowMatrix>;

ConstView view(const Tensor& t) {
  return ConstView(t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols()));
}

View view(Tensor& t) { return View(t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }

void require_out(Tensor& c, std::size_t rows, std::size_t cols, bool accumulate) {
  if (accumulate) {
    if (c.rows() != rows || c.cols() != cols) {
      throw std::invalid_argument("gemm: accumulator has shape " + c.shape_string());
    }
  } else if (c.rows() != rows || c.cols() != cols) {
    c = Tensor(rows, cols);
  }
}

}  // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw std::invalid_argument("Tensor: " + std::to_string(data_.size()) +
                                " values do not fill shape (" + std::to_string(rows) + ", " +
                                std::to_string(cols) + ")");
  }
}

Tensor::Tensor(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols_) {
      throw std::invalid_argument("Tensor: ragged initializer");
    }
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

std::string Tensor::shape_string() const {
  return "(" + std::to_string(rows_) + ", " + std::to_string(cols_) + ")";
}

bool Tensor::all_finite() const {
  // x * 0 is NaN exactly when x is NaN or infinite; four lanes let the
  // compiler keep the loop branch-free.
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t n = data_.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    for (std::size_t k = 0; k < 4; ++k) acc[k] += data_[i + k] * 0.0;
  }
  for (; i < n; ++i) acc[0] += data_[i] * 0.0;
  return acc[0] + acc[1] + acc[2] + acc[3] == 0.0;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void gemm(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: shapes " + a.shape_string() + " and " + b.shape_string() +
                                " are incompatible");
  }
  require_out(c, a.rows(), b.cols(), accumulate);
  if (accumulate) {
    view(c).noalias() += view(a) * view(b);
  } else {
    view(c).noalias() = view(a) * view(b);
  }
}

void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("matmul_nt: shapes " + a.shape_string() + " and " +
                                b.shape_string() + " are incompatible");
  }
  require_out(c, a.rows(), b.rows(), accumulate);
  if (accumulate) {
    view(c).noalias() += view(a) * view(b).transpose();
  } else {
    view(c).noalias() = view(a) * view(b).transpose();
  }
}

void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("matmul_tn: shapes " + a.shape_string() + " and " +
                                b.shape_string() + " are incompatible");
  }
  require_out(c, a.cols(), b.cols(), accumulate);
  if (accumulate) {
    view(c).noalias() += view(a).transpose() * view(b);
  } else {
    view(c).noalias() = view(a).transpose() * view(b);
  }
}

}  // namespace compcap
