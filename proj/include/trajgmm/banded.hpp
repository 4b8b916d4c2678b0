#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "trajgmm/error.hpp"

namespace trajgmm {

/// Symmetric positive-definite band matrix with lower half-bandwidth p,
/// stored by diagonals, with an in-place Cholesky factorization.
/// Factor and solve cost O(n p^2) and O(n p) respectively.
class BandedSpdMatrix {
 public:
  BandedSpdMatrix(std::size_t n, std::size_t half_bandwidth)
      : n_(n), p_(half_bandwidth), band_((half_bandwidth + 1) * n, 0.0) {}

  [[nodiscard]] std::size_t size() const { return n_; }
  [[nodiscard]] std::size_t half_bandwidth() const { return p_; }

  /// Element (row, col) of the lower triangle; requires col <= row <= col + p.
  double& at(std::size_t row, std::size_t col) { return band_[(row - col) * n_ + col]; }
  [[nodiscard]] double at(std::size_t row, std::size_t col) const { return band_[(row - col) * n_ + col]; }

  [[nodiscard]] double get(std::size_t row, std::size_t col) const {
    if (row < col) std::swap(row, col);
    return row - col > p_ ? 0.0 : at(row, col);
  }

  [[nodiscard]] Eigen::MatrixXd dense() const {
    Eigen::MatrixXd m(n_, n_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) m(i, j) = get(i, j);
    return m;
  }

  [[nodiscard]] Eigen::MatrixXd multiply(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n_, x.cols());
    for (std::size_t j = 0; j < n_; ++j) {
      y.row(j) += at(j, j) * x.row(j);
      for (std::size_t i = j + 1; i < std::min(n_, j + p_ + 1); ++i) {
        y.row(i) += at(i, j) * x.row(j);
        y.row(j) += at(i, j) * x.row(i);
      }
    }
    return y;
  }

  /// Overwrites the band with its Cholesky factor L (M = L L^T).
  void factorize() {
    for (std::size_t j = 0; j < n_; ++j) {
      const std::size_t k0 = j > p_ ? j - p_ : 0;
      double d = at(j, j);
      for (std::size_t k = k0; k < j; ++k) d -= at(j, k) * at(j, k);
      if (!(d > 0.0) || !std::isfinite(d)) {
        throw NumericalError("banded Cholesky: matrix is not positive definite (pivot " + std::to_string(j) + ")");
      }
      const double l = std::sqrt(d);
      at(j, j) = l;
      for (std::size_t i = j + 1; i < std::min(n_, j + p_ + 1); ++i) {
        const std::size_t ki = i > p_ ? i - p_ : 0;
        double s = at(i, j);
        for (std::size_t k = std::max(k0, ki); k < j; ++k) s -= at(i, k) * at(j, k);
        at(i, j) = s / l;
      }
    }
    factored_ = true;
  }

  /// Solves M X = B column-wise using the stored factor.
  [[nodiscard]] Eigen::MatrixXd solve(Eigen::MatrixXd b) const {
    if (!factored_) throw NumericalError("banded solve before factorize");
    for (Eigen::Index c = 0; c < b.cols(); ++c) {
      for (std::size_t i = 0; i < n_; ++i) {
        double s = b(i, c);
        for (std::size_t k = i > p_ ? i - p_ : 0; k < i; ++k) s -= at(i, k) * b(k, c);
        b(i, c) = s / at(i, i);
      }
      for (std::size_t i = n_; i-- > 0;) {
        double s = b(i, c);
        for (std::size_t k = i + 1; k < std::min(n_, i + p_ + 1); ++k) s -= at(k, i) * b(k, c);
        b(i, c) = s / at(i, i);
      }
    }
    return b;
  }

 private:
  std::size_t n_;
  std::size_t p_;
  std::vector<double> band_;
  bool factored_ = false;
};

}  // namespace trajgmm
