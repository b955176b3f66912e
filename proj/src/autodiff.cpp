#include "cts/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "cts/errors.hpp"

namespace cts {

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor& t) {
  Node node{Tensor(t.shape(), t.data()), {}, {}, {}, nullptr, t.requires_grad()};
  if (t.requires_grad()) node.leaf = &t;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  bool needs = false;
  for (std::size_t i : inputs) needs = needs || nodes_.at(i).needs_grad;
  nodes_.push_back(Node{std::move(value), {}, std::move(inputs), needs ? std::move(fn) : BackwardFn{},
                        nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

Eigen::VectorXd& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.data().size()) n.grad = Eigen::VectorXd::Zero(n.value.data().size());
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw Error("backward: loss was recorded on a different tape");
  if (loss.size() != 1) throw NotScalar("backward requires a one-element loss");
  for (auto& n : nodes_) n.grad.resize(0);
  grad(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
    if (n.leaf) n.leaf->grad() += n.grad;
  }
}

// ---------------------------------------------------------------------------

namespace {

Tape& common_tape(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape())
    throw Error("operands recorded on different tapes");
  return a.tape();
}

std::string dims(const Tensor& t) {
  std::string s;
  for (std::size_t i = 0; i < t.rank(); ++i) s += (i ? "x" : "") + std::to_string(t.dim(i));
  return s;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeMismatch(std::string(op) + ": " + dims(a.value()) + " vs " + dims(b.value()));
}

Shape matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

MatrixMap as_matrix(Eigen::VectorXd& v, std::size_t r, std::size_t c) {
  return MatrixMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& tape = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows())
    throw ShapeMismatch("matmul: " + dims(av) + " by " + dims(bv));
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out(matrix_shape(m, n));
  out.matrix().noalias() = av.matrix() * bv.matrix();
  return tape.record(std::move(out), {a.id(), b.id()}, [m, k, n](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    auto g = as_matrix(t.grad(self), m, n);
    if (t.needs_grad(in[0]))
      as_matrix(t.grad(in[0]), m, k).noalias() += g * t.value(in[1]).matrix().transpose();
    if (t.needs_grad(in[1]))
      as_matrix(t.grad(in[1]), k, n).noalias() += t.value(in[0]).matrix().transpose() * g;
  });
}

Var add(const Var& a, const Var& b) {
  Tape& tape = common_tape(a, b);
  require_same_shape(a, b, "add");
  Tensor out(a.shape(), a.value().data() + b.value().data());
  return tape.record(std::move(out), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
    for (std::size_t i : t.inputs(self))
      if (t.needs_grad(i)) t.grad(i) += t.grad(self);
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& tape = common_tape(a, b);
  require_same_shape(a, b, "sub");
  Tensor out(a.shape(), a.value().data() - b.value().data());
  return tape.record(std::move(out), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    if (t.needs_grad(in[0])) t.grad(in[0]) += t.grad(self);
    if (t.needs_grad(in[1])) t.grad(in[1]) -= t.grad(self);
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = common_tape(a, b);
  require_same_shape(a, b, "mul");
  Tensor out(a.shape(), a.value().data().cwiseProduct(b.value().data()));
  return tape.record(std::move(out), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const Eigen::VectorXd& g = t.grad(self);
    if (t.needs_grad(in[0])) t.grad(in[0]) += g.cwiseProduct(t.value(in[1]).data());
    if (t.needs_grad(in[1])) t.grad(in[1]) += g.cwiseProduct(t.value(in[0]).data());
  });
}

Var scale(const Var& x, double s) {
  Tensor out(x.shape(), s * x.value().data());
  return x.tape().record(std::move(out), {x.id()}, [s](Tape& t, std::size_t self) {
    t.grad(t.inputs(self)[0]) += s * t.grad(self);
  });
}

Var shift(const Var& x, double s) {
  Tensor out(x.shape(), x.value().data().array() + s);
  return x.tape().record(std::move(out), {x.id()}, [](Tape& t, std::size_t self) {
    t.grad(t.inputs(self)[0]) += t.grad(self);
  });
}

Var scale_by(const Var& s, const Var& x) {
  Tape& tape = common_tape(s, x);
  if (s.size() != 1) throw NotScalar("scale_by: factor must have one element");
  Tensor out(x.shape(), s.value()[0] * x.value().data());
  return tape.record(std::move(out), {s.id(), x.id()}, [](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const Eigen::VectorXd& g = t.grad(self);
    if (t.needs_grad(in[0])) t.grad(in[0])[0] += g.dot(t.value(in[1]).data());
    if (t.needs_grad(in[1])) t.grad(in[1]) += t.value(in[0])[0] * g;
  });
}

Var transpose(const Var& x) {
  const std::size_t m = x.value().rows(), n = x.value().cols();
  Tensor out(matrix_shape(n, m));
  out.matrix() = x.value().matrix().transpose();
  return x.tape().record(std::move(out), {x.id()}, [m, n](Tape& t, std::size_t self) {
    as_matrix(t.grad(t.inputs(self)[0]), m, n) += as_matrix(t.grad(self), n, m).transpose();
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeMismatch("concat of zero operands");
  if (axis > 1) throw ShapeMismatch("concat axis must be 0 or 1");
  Tape& tape = parts[0].tape();
  std::vector<std::size_t> ids;
  std::vector<std::size_t> extent;
  const std::size_t fixed = axis == 0 ? parts[0].value().cols() : parts[0].value().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    common_tape(parts[0], p);
    const std::size_t other = axis == 0 ? p.value().cols() : p.value().rows();
    if (other != fixed) throw ShapeMismatch("concat: mismatched extent " + dims(p.value()));
    extent.push_back(axis == 0 ? p.value().rows() : p.value().cols());
    total += extent.back();
    ids.push_back(p.id());
  }
  const std::size_t rows = axis == 0 ? total : fixed;
  const std::size_t cols = axis == 0 ? fixed : total;
  Tensor out(matrix_shape(rows, cols));
  auto om = out.matrix();
  std::size_t off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto pm = parts[i].value().matrix();
    const auto e = static_cast<Eigen::Index>(extent[i]);
    if (axis == 0)
      om.middleRows(static_cast<Eigen::Index>(off), e) = pm;
    else
      om.middleCols(static_cast<Eigen::Index>(off), e) = pm;
    off += extent[i];
  }
  return tape.record(std::move(out), std::move(ids),
                     [axis, rows, cols, extent](Tape& t, std::size_t self) {
                       const auto g = as_matrix(t.grad(self), rows, cols);
                       const auto& in = t.inputs(self);
                       std::size_t off = 0;
                       for (std::size_t i = 0; i < in.size(); ++i) {
                         const auto e = static_cast<Eigen::Index>(extent[i]);
                         const auto o = static_cast<Eigen::Index>(off);
                         off += extent[i];
                         if (!t.needs_grad(in[i])) continue;
                         const Tensor& v = t.value(in[i]);
                         auto gi = as_matrix(t.grad(in[i]), v.rows(), v.cols());
                         if (axis == 0)
                           gi += g.middleRows(o, e);
                         else
                           gi += g.middleCols(o, e);
                       }
                     });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x.id()}, [](Tape& t, std::size_t self) {
    t.grad(t.inputs(self)[0]) += t.grad(self);
  });
}

Var gather(const Var& x, std::vector<std::size_t> index, Shape shape) {
  if (numel(shape) != index.size()) throw ShapeMismatch("gather: index count does not match shape");
  const std::size_t n = x.size();
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= n) throw ShapeMismatch("gather: index out of range");
    out[i] = x.value()[index[i]];
  }
  return x.tape().record(std::move(out), {x.id()},
                         [index = std::move(index)](Tape& t, std::size_t self) {
                           const Eigen::VectorXd& g = t.grad(self);
                           Eigen::VectorXd& gx = t.grad(t.inputs(self)[0]);
                           for (std::size_t i = 0; i < index.size(); ++i)
                             gx[static_cast<Eigen::Index>(index[i])] += g[static_cast<Eigen::Index>(i)];
                         });
}

Var embedding(const Var& table, std::span<const int> ids) {
  const std::size_t rows = table.value().rows(), d = table.value().cols();
  std::vector<std::size_t> index;
  index.reserve(ids.size() * d);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows)
      throw ShapeMismatch("embedding: id " + std::to_string(id) + " outside table");
    for (std::size_t j = 0; j < d; ++j) index.push_back(static_cast<std::size_t>(id) * d + j);
  }
  return gather(table, std::move(index), matrix_shape(ids.size(), d));
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (begin >= end || end > m) throw ShapeMismatch("slice_rows: bad range");
  Tensor out(matrix_shape(end - begin, n));
  out.matrix() = x.value().matrix().middleRows(static_cast<Eigen::Index>(begin),
                                               static_cast<Eigen::Index>(end - begin));
  return x.tape().record(std::move(out), {x.id()}, [begin, n](Tape& t, std::size_t self) {
    const Eigen::VectorXd& g = t.grad(self);
    t.grad(t.inputs(self)[0]).segment(static_cast<Eigen::Index>(begin * n), g.size()) += g;
  });
}

Var add_row(const Var& x, const Var& bias) {
  Tape& tape = common_tape(x, bias);
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (bias.size() != n) throw ShapeMismatch("add_row: bias length differs from column count");
  Tensor out(x.shape());
  out.matrix() = x.value().matrix().rowwise() + bias.value().data().transpose();
  return tape.record(std::move(out), {x.id(), bias.id()}, [m, n](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const auto g = as_matrix(t.grad(self), m, n);
    if (t.needs_grad(in[0])) as_matrix(t.grad(in[0]), m, n) += g;
    if (t.needs_grad(in[1])) t.grad(in[1]) += g.colwise().sum().transpose();
  });
}

Var mul_rows(const Var& x, const Var& w) {
  Tape& tape = common_tape(x, w);
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (w.size() != m) throw ShapeMismatch("mul_rows: weight length differs from row count");
  Tensor out(x.shape());
  out.matrix() = w.value().data().asDiagonal() * x.value().matrix();
  return tape.record(std::move(out), {x.id(), w.id()}, [m, n](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const auto g = as_matrix(t.grad(self), m, n);
    if (t.needs_grad(in[0]))
      as_matrix(t.grad(in[0]), m, n) += t.value(in[1]).data().asDiagonal() * g;
    if (t.needs_grad(in[1]))
      t.grad(in[1]) += g.cwiseProduct(t.value(in[0]).matrix()).rowwise().sum();
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  Tape& tape = common_tape(x, gain);
  common_tape(x, bias);
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (gain.size() != n || bias.size() != n) throw ShapeMismatch("layer_norm: gain/bias length");
  RowMatrixXd xhat(m, n);
  Eigen::VectorXd inv_std(m);
  const auto xm = x.value().matrix();
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(m); ++i) {
    const double mu = xm.row(i).mean();
    const double var = (xm.row(i).array() - mu).square().mean();
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xm.row(i).array() - mu) * inv_std[i];
  }
  Tensor out(x.shape());
  out.matrix() = (xhat.array().rowwise() * gain.value().data().transpose().array()).rowwise() +
                 bias.value().data().transpose().array();
  return tape.record(
      std::move(out), {x.id(), gain.id(), bias.id()},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const auto& in = t.inputs(self);
        const auto g = as_matrix(t.grad(self), m, n);
        if (t.needs_grad(in[1])) t.grad(in[1]) += g.cwiseProduct(xhat).colwise().sum().transpose();
        if (t.needs_grad(in[2])) t.grad(in[2]) += g.colwise().sum().transpose();
        if (t.needs_grad(in[0])) {
          const Eigen::RowVectorXd gamma = t.value(in[1]).data().transpose();
          auto gx = as_matrix(t.grad(in[0]), m, n);
          for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(m); ++i) {
            const Eigen::RowVectorXd dxhat = g.row(i).cwiseProduct(gamma);
            const double mean_d = dxhat.mean();
            const double mean_dx = dxhat.cwiseProduct(xhat.row(i)).mean();
            gx.row(i) += inv_std[i] * (dxhat.array() - mean_d - xhat.row(i).array() * mean_dx).matrix();
          }
        }
      });
}

Var gelu(const Var& x) {
  const Eigen::VectorXd& xv = x.value().data();
  Eigen::VectorXd y(xv.size());
  for (Eigen::Index i = 0; i < xv.size(); ++i)
    y[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
  return x.tape().record(Tensor(x.shape(), std::move(y)), {x.id()}, [](Tape& t, std::size_t self) {
    const std::size_t in = t.inputs(self)[0];
    const Eigen::VectorXd& xv = t.value(in).data();
    const Eigen::VectorXd& g = t.grad(self);
    Eigen::VectorXd& gx = t.grad(in);
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (Eigen::Index i = 0; i < xv.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv[i] * xv[i]);
      gx[i] += g[i] * (cdf + xv[i] * pdf);
    }
  });
}

Var softmax_rows(const Var& x) {
  const std::size_t m = x.value().rows(), n = x.value().cols();
  Tensor out = softmax_rows(x.value());
  return x.tape().record(std::move(out), {x.id()}, [m, n](Tape& t, std::size_t self) {
    const auto y = t.value(self).matrix();
    const auto g = as_matrix(t.grad(self), m, n);
    const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    as_matrix(t.grad(t.inputs(self)[0]), m, n) +=
        y.cwiseProduct((g.colwise() - dots));
  });
}

Var sum(const Var& x) {
  Tensor out = Tensor::scalar(x.value().data().sum());
  return x.tape().record(std::move(out), {x.id()}, [](Tape& t, std::size_t self) {
    t.grad(t.inputs(self)[0]).array() += t.grad(self)[0];
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var mse(const Var& a, const Var& b) {
  const Var d = sub(a, b);
  return mean(mul(d, d));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ShapeMismatch("matmul: " + dims(a) + " by " + dims(b));
  Tensor out(matrix_shape(a.rows(), b.cols()));
  out.matrix().noalias() = a.matrix() * b.matrix();
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  Tensor out(x.shape());
  auto y = out.matrix();
  const auto xm = x.matrix();
  for (Eigen::Index i = 0; i < xm.rows(); ++i) {
    y.row(i) = (xm.row(i).array() - xm.row(i).maxCoeff()).exp();
    y.row(i) /= y.row(i).sum();
  }
  return out;
}

double finite_diff_check(const std::function<Var(const Var&)>& f, const Tensor& x, double h) {
  Tensor probe = x;
  probe.set_requires_grad(true);
  probe.zero_grad();
  {
    Tape tape;
    const Var out = f(tape.leaf(probe));
    tape.backward(out);
  }
  auto eval = [&](const Tensor& at) {
    Tape tape;
    return f(tape.constant(at)).value().item();
  };
  double worst = 0.0;
  Tensor shifted = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = shifted[i];
    shifted[i] = orig + h;
    const double up = eval(shifted);
    shifted[i] = orig - h;
    const double down = eval(shifted);
    shifted[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = probe.grad()[static_cast<Eigen::Index>(i)];
    worst = std::max(worst, std::abs(analytic - numeric) / (std::abs(analytic) + 1e-8));
  }
  return worst;
}

}  // namespace cts
