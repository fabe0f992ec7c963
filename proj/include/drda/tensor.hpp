#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

namespace drda {

// Dense row-major tensor of doubles. Rank 0 (empty shape) is a scalar,
// rank 1 a vector, rank 2 a matrix. Value semantics throughout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);
  static Tensor identity(std::size_t d);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  double item() const;  // scalar value; contract_error if numel != 1
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);

// Throws numeric_error mentioning `where` if any entry is non-finite.
void require_finite(const Tensor& t, const std::string& where);

// Uniform values in [lo, hi), filled in row-major order from `rng`.
Tensor random_uniform(std::vector<std::size_t> shape, double lo, double hi,
                      std::mt19937_64& rng);

}  // namespace drda
