#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <random>
#include <vector>

#include <Eigen/Core>

namespace cts {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrixXd>;
using ConstMatrixMap = Eigen::Map<const RowMatrixXd>;

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Storage is an Eigen vector; rank-2 tensors can be viewed as row-major
/// matrices through matrix(). The gradient buffer is allocated on demand and
/// always has the same length as the data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, Eigen::VectorXd data);

  static Tensor scalar(double v);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor from_matrix(const Eigen::Ref<const RowMatrixXd>& m);
  /// Entries drawn uniformly from [lo, hi].
  static Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng);
  static Tensor normal(Shape shape, double stddev, std::mt19937_64& rng);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return static_cast<std::size_t>(data_.size()); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rows() const;
  std::size_t cols() const;

  Eigen::VectorXd& data() { return data_; }
  const Eigen::VectorXd& data() const { return data_; }
  double& operator[](std::size_t i) { return data_[static_cast<Eigen::Index>(i)]; }
  double operator[](std::size_t i) const { return data_[static_cast<Eigen::Index>(i)]; }
  double item() const;

  /// Row-major matrix view; requires rank 1 (viewed as 1×n) or rank 2.
  MatrixMap matrix();
  ConstMatrixMap matrix() const;

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return grad_.size() == data_.size() && requires_grad_; }
  Eigen::VectorXd& grad();
  const Eigen::VectorXd& grad() const { return grad_; }
  void zero_grad();

  Tensor reshaped(Shape shape) const;
  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Eigen::VectorXd data_;
  bool requires_grad_ = false;
  Eigen::VectorXd grad_;
};

/// Little-endian checkpoint encoding: u32 rank, u32 dims..., f64 data...
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);

}  // namespace cts
