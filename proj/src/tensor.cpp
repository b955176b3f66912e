#include "cts/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "cts/errors.hpp"

namespace cts {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

namespace {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void check_shape(const Shape& shape) {
  for (std::size_t d : shape)
    if (d == 0) throw ShapeMismatch("zero-sized dimension in " + shape_str(shape));
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_ = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, Eigen::VectorXd data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (numel(shape_) != static_cast<std::size_t>(data_.size()))
    throw ShapeMismatch("data length " + std::to_string(data_.size()) + " does not match shape " +
                        shape_str(shape_));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, v); }

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  Tensor t({m, n});
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != n) throw ShapeMismatch("ragged rows");
    for (double v : row) t[i++] = v;
  }
  return t;
}

Tensor Tensor::from_matrix(const Eigen::Ref<const RowMatrixXd>& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  t.matrix() = m;
  return t;
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

Tensor Tensor::normal(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

std::size_t Tensor::rows() const {
  if (rank() == 1) return 1;
  if (rank() == 2) return shape_[0];
  throw ShapeMismatch("matrix view of rank-" + std::to_string(rank()) + " tensor");
}

std::size_t Tensor::cols() const {
  if (rank() == 1) return shape_[0];
  if (rank() == 2) return shape_[1];
  throw ShapeMismatch("matrix view of rank-" + std::to_string(rank()) + " tensor");
}

double Tensor::item() const {
  if (size() != 1) throw NotScalar("tensor of shape " + shape_str(shape_));
  return data_[0];
}

MatrixMap Tensor::matrix() {
  return MatrixMap(data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
}

ConstMatrixMap Tensor::matrix() const {
  return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(rows()),
                        static_cast<Eigen::Index>(cols()));
}

Tensor& Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (!on) grad_.resize(0);
  return *this;
}

Eigen::VectorXd& Tensor::grad() {
  if (grad_.size() != data_.size()) grad_ = Eigen::VectorXd::Zero(data_.size());
  return grad_;
}

void Tensor::zero_grad() {
  if (requires_grad_) grad_ = Eigen::VectorXd::Zero(data_.size());
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != size())
    throw ShapeMismatch("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

// ---------------------------------------------------------------------------
// Binary encoding

namespace {

template <class T>
void write_le(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), sizeof(T));
}

template <class T>
T read_le(std::istream& in) {
  std::array<char, sizeof(T)> bytes{};
  if (!in.read(bytes.data(), sizeof(T))) throw CorruptCheckpoint("unexpected end of data");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
void write_f64(std::ostream& out, double v) { write_le(out, v); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return read_le<std::uint64_t>(in); }
double read_f64(std::istream& in) { return read_le<double>(in); }

void write_tensor(std::ostream& out, const Tensor& t) {
  write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < t.size(); ++i) write_f64(out, t[i]);
}

Tensor read_tensor(std::istream& in) {
  const std::uint32_t rank = read_u32(in);
  if (rank == 0 || rank > 8) throw CorruptCheckpoint("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = read_u32(in);
    if (d == 0 || d > (1u << 24)) throw CorruptCheckpoint("implausible dimension " + std::to_string(d));
    n *= d;
    if (n > (std::size_t{1} << 28)) throw CorruptCheckpoint("tensor too large");
  }
  Eigen::VectorXd data(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) data[static_cast<Eigen::Index>(i)] = read_f64(in);
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace cts
