#include "kiwiqe/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "kiwiqe/errors.hpp"
#include "kiwiqe/simplex.hpp"

namespace kiwiqe::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_mat(const Tensor& t) { return {t.values().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }
MutMap as_mat(Tensor& t) { return {t.values().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }

ConstMap rows_of(const Tensor& t, std::size_t begin, std::size_t count) {
  return {t.values().data() + begin * t.cols(), Eigen::Index(count), Eigen::Index(t.cols())};
}
MutMap rows_of(Tensor& t, std::size_t begin, std::size_t count) {
  return {t.values().data() + begin * t.cols(), Eigen::Index(count), Eigen::Index(t.cols())};
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("vars belong to different tapes");
}

// Adds `delta` into the gradient slot of `input` if it is tracked.
template <typename F>
void push(Tape& t, Var input, F&& fn) {
  if (t.requires_grad(input)) fn(t.grad_slot(input.id()));
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw ContractError("input var belongs to another tape");
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor Tape::grad(Var v) const {
  const Node& node = nodes_[v.id()];
  if (node.has_grad) return node.grad;
  return Tensor::zeros_like(node.value);
}

Tensor& Tape::grad_slot(std::uint32_t id) {
  Node& node = nodes_[id];
  if (!node.has_grad) {
    node.grad = Tensor::zeros_like(node.value);
    node.has_grad = true;
  }
  return node.grad;
}

void Tape::zero_grad() {
  for (Node& node : nodes_) {
    node.has_grad = false;
    node.grad = Tensor();
  }
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("loss belongs to another tape");
  if (value(loss).size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_string(value(loss).shape()));
  }
  if (!nodes_[loss.id()].requires_grad) return;
  grad_slot(loss.id()).fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.has_grad && node.backward) node.backward(*this, static_cast<std::uint32_t>(i));
  }
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(av.shape()) +
                         " x " + shape_string(bv.shape()));
  }
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  as_mat(out).noalias() = as_mat(av) * as_mat(bv);
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const auto g = as_mat(t.out_grad(self));
    push(t, a, [&](Tensor& ga) { as_mat(ga).noalias() += g * as_mat(t.value(b)).transpose(); });
    push(t, b, [&](Tensor& gb) { as_mat(gb).noalias() += as_mat(t.value(a)).transpose() * g; });
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul_nt");
  require_matrix(bv, "matmul_nt");
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ " + shape_string(av.shape()) +
                         " x " + shape_string(bv.shape()) + "^T");
  }
  Tensor out = Tensor::matrix(av.rows(), bv.rows());
  as_mat(out).noalias() = as_mat(av) * as_mat(bv).transpose();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const auto g = as_mat(t.out_grad(self));
    push(t, a, [&](Tensor& ga) { as_mat(ga).noalias() += g * as_mat(t.value(b)); });
    push(t, b, [&](Tensor& gb) { as_mat(gb).noalias() += g.transpose() * as_mat(t.value(a)); });
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  require_matrix(av, "transpose");
  Tensor out = Tensor::matrix(av.cols(), av.rows());
  as_mat(out) = as_mat(av).transpose();
  return a.tape().record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) {
    push(t, a, [&](Tensor& ga) { as_mat(ga) += as_mat(t.out_grad(self)).transpose(); });
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    for (Var in : {a, b}) {
      push(t, in, [&](Tensor& gi) {
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      });
    }
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    push(t, a, [&](Tensor& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    push(t, b, [&](Tensor& gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    push(t, a, [&](Tensor& ga) {
      const Tensor& bv = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    });
    push(t, b, [&](Tensor& gb) {
      const Tensor& av = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    });
  });
}

Var add_row(Var x, Var bias) {
  require_same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.size() != xv.cols() || bv.rank() == 0) {
    throw DimensionError("add_row: bias of shape " + shape_string(bv.shape()) +
                         " does not fit rows of " + shape_string(xv.shape()));
  }
  Tensor out = xv;
  const std::size_t m = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] += bv[c];
  }
  return x.tape().record(std::move(out), {x, bias}, [x, bias](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    push(t, x, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    push(t, bias, [&](Tensor& gb) {
      const std::size_t m = gb.size();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % m] += g[i];
    });
  });
}

Var scale(Var x, double c) {
  Tensor out = x.value();
  for (double& v : out.values()) v *= c;
  return x.tape().record(std::move(out), {x}, [x, c](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    push(t, x, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
    });
  });
}

Var scale_by(Var x, Var s) {
  require_same_tape(x, s);
  if (s.value().size() != 1) throw DimensionError("scale_by: factor must be a scalar");
  const double c = s.value()[0];
  Tensor out = x.value();
  for (double& v : out.values()) v *= c;
  return x.tape().record(std::move(out), {x, s}, [x, s](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& xv = t.value(x);
    const double c = t.value(s)[0];
    push(t, x, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
    });
    push(t, s, [&](Tensor& gs) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      gs[0] += acc;
    });
  });
}

Var weighted_sum(std::span<const Var> xs, Var w) {
  if (xs.empty()) throw ContractError("weighted_sum: no inputs");
  if (w.value().size() != xs.size()) {
    throw DimensionError("weighted_sum: " + std::to_string(xs.size()) + " inputs but " +
                         std::to_string(w.value().size()) + " weights");
  }
  Tensor out = Tensor::zeros_like(xs[0].value());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    require_same_shape(out, xs[k].value(), "weighted_sum");
    const double wk = w.value()[k];
    const Tensor& xk = xs[k].value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += wk * xk[i];
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  inputs.push_back(w);
  std::vector<Var> captured(xs.begin(), xs.end());
  return w.tape().record(
      std::move(out), inputs, [captured = std::move(captured), w](Tape& t, std::uint32_t self) {
        const Tensor& g = t.out_grad(self);
        const Tensor& wv = t.value(w);
        for (std::size_t k = 0; k < captured.size(); ++k) {
          push(t, captured[k], [&](Tensor& gx) {
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += wv[k] * g[i];
          });
        }
        push(t, w, [&](Tensor& gw) {
          for (std::size_t k = 0; k < captured.size(); ++k) {
            const Tensor& xk = t.value(captured[k]);
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xk[i];
            gw[k] += acc;
          }
        });
      });
}

Var softmax_rows(Var x) {
  const Tensor& xv = x.value();
  Tensor out = Tensor::zeros_like(xv);
  for (std::size_t r = 0; r < xv.rows(); ++r) softmax(xv.row(r), out.row(r));
  return x.tape().record(std::move(out), {x}, [x](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& y = t.value(self);
    push(t, x, [&](Tensor& gx) {
      for (std::size_t r = 0; r < y.rows(); ++r) {
        auto yr = y.row(r);
        auto gr = g.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < yr.size(); ++c) dot += gr[c] * yr[c];
        auto out = gx.row(r);
        for (std::size_t c = 0; c < yr.size(); ++c) out[c] += yr[c] * (gr[c] - dot);
      }
    });
  });
}

Var sparsemax_rows(Var x) {
  const Tensor& xv = x.value();
  Tensor out = Tensor::zeros_like(xv);
  for (std::size_t r = 0; r < xv.rows(); ++r) sparsemax(xv.row(r), out.row(r));
  return x.tape().record(std::move(out), {x}, [x](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& y = t.value(self);
    // Jacobian restricted to the support S is I - 1 1^T / |S|.
    push(t, x, [&](Tensor& gx) {
      for (std::size_t r = 0; r < y.rows(); ++r) {
        auto yr = y.row(r);
        auto gr = g.row(r);
        double support_sum = 0.0;
        std::size_t support = 0;
        for (std::size_t c = 0; c < yr.size(); ++c) {
          if (yr[c] > 0.0) {
            support_sum += gr[c];
            ++support;
          }
        }
        if (support == 0) continue;
        const double mean = support_sum / static_cast<double>(support);
        auto out = gx.row(r);
        for (std::size_t c = 0; c < yr.size(); ++c) {
          if (yr[c] > 0.0) out[c] += gr[c] - mean;
        }
      }
    });
  });
}

Var log_softmax_rows(Var x) {
  const Tensor& xv = x.value();
  Tensor out = Tensor::zeros_like(xv);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto row = xv.row(r);
    auto dst = out.row(r);
    if (row.empty()) continue;
    const double max = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) total += std::exp(v - max);
    const double log_z = max + std::log(total);
    for (std::size_t c = 0; c < row.size(); ++c) dst[c] = row[c] - log_z;
  }
  return x.tape().record(std::move(out), {x}, [x](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& y = t.value(self);
    push(t, x, [&](Tensor& gx) {
      for (std::size_t r = 0; r < y.rows(); ++r) {
        auto yr = y.row(r);
        auto gr = g.row(r);
        double gsum = 0.0;
        for (double v : gr) gsum += v;
        auto out = gx.row(r);
        for (std::size_t c = 0; c < yr.size(); ++c) out[c] += gr[c] - std::exp(yr[c]) * gsum;
      }
    });
  });
}

Var tanh(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = std::tanh(v);
  return x.tape().record(std::move(out), {x}, [x](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& y = t.value(self);
    push(t, x, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
    });
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) {
    const double u = kGeluC * (v + kGeluA * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(u));
  }
  return x.tape().record(std::move(out), {x}, [x](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& xv = t.value(x);
    push(t, x, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xv[i];
        const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        gx[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
      }
    });
  });
}

Var square(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v *= v;
  return x.tape().record(std::move(out), {x}, [x](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& xv = t.value(x);
    push(t, x, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2.0 * xv[i] * g[i];
    });
  });
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows();
  const std::size_t m = xv.cols();
  if (gain.value().size() != m || bias.value().size() != m) {
    throw DimensionError("layer_norm_rows: gain/bias do not match row width " +
                         std::to_string(m));
  }
  auto normed = std::make_shared<Tensor>(Tensor::zeros_like(xv));
  auto inv_std = std::make_shared<std::vector<double>>(n);
  Tensor out = Tensor::zeros_like(xv);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < n; ++r) {
    auto row = xv.row(r);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(m);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    auto nr = normed->row(r);
    auto orow = out.row(r);
    for (std::size_t c = 0; c < m; ++c) {
      nr[c] = (row[c] - mu) * is;
      orow[c] = nr[c] * gv[c] + bv[c];
    }
  }
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, normed, inv_std](Tape& t, std::uint32_t self) {
        const Tensor& g = t.out_grad(self);
        const std::size_t n = g.rows();
        const std::size_t m = g.cols();
        push(t, gain, [&](Tensor& gg) {
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % m] += g[i] * (*normed)[i];
        });
        push(t, bias, [&](Tensor& gb) {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % m] += g[i];
        });
        push(t, x, [&](Tensor& gx) {
          const Tensor& gv = t.value(gain);
          std::vector<double> dn(m);
          for (std::size_t r = 0; r < n; ++r) {
            auto gr = g.row(r);
            auto nr = normed->row(r);
            double mean_dn = 0.0;
            double mean_dn_n = 0.0;
            for (std::size_t c = 0; c < m; ++c) {
              dn[c] = gr[c] * gv[c];
              mean_dn += dn[c];
              mean_dn_n += dn[c] * nr[c];
            }
            mean_dn /= static_cast<double>(m);
            mean_dn_n /= static_cast<double>(m);
            auto out = gx.row(r);
            for (std::size_t c = 0; c < m; ++c) {
              out[c] += (*inv_std)[r] * (dn[c] - mean_dn - nr[c] * mean_dn_n);
            }
          }
        });
      });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& xv = x.value();
  require_matrix(xv, "gather_rows");
  const std::size_t m = xv.cols();
  Tensor out = Tensor::matrix(rows.size(), m);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) +
                           " out of range for " + shape_string(xv.shape()));
    }
    std::copy_n(xv.row(rows[i]).begin(), m, out.row(i).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return x.tape().record(std::move(out), {x}, [x, idx = std::move(idx)](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    push(t, x, [&](Tensor& gx) {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        auto src = g.row(i);
        auto dst = gx.row(idx[i]);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
    });
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  require_matrix(xv, "slice_cols");
  if (begin > end || end > xv.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + shape_string(xv.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out = Tensor::matrix(xv.rows(), w);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    std::copy_n(xv.row(r).begin() + static_cast<std::ptrdiff_t>(begin), w, out.row(r).begin());
  }
  return x.tape().record(std::move(out), {x}, [x, begin](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    push(t, x, [&](Tensor& gx) {
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto src = g.row(r);
        auto dst = gx.row(r);
        for (std::size_t c = 0; c < src.size(); ++c) dst[begin + c] += src[c];
      }
    });
  });
}

Var l2_norm_rows(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rank() == 2 ? xv.rows() : 1;
  Tensor out({n});
  for (std::size_t r = 0; r < n; ++r) {
    double acc = 0.0;
    for (double v : xv.row(r)) acc += v * v;
    out[r] = std::sqrt(acc);
  }
  return x.tape().record(std::move(out), {x}, [x](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& y = t.value(self);
    const Tensor& xv = t.value(x);
    push(t, x, [&](Tensor& gx) {
      for (std::size_t r = 0; r < y.size(); ++r) {
        // Subgradient 0 at the origin.
        if (y[r] == 0.0) continue;
        auto src = xv.row(r);
        auto dst = gx.row(r);
        const double f = g[r] / y[r];
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += f * src[c];
      }
    });
  });
}

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().values()) acc += v;
  return x.tape().record(Tensor::scalar(acc), {x}, [x](Tape& t, std::uint32_t self) {
    const double g = t.out_grad(self)[0];
    push(t, x, [&](Tensor& gx) {
      for (double& v : gx.values()) v += g;
    });
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), n > 0 ? 1.0 / n : 0.0);
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [x](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    push(t, x, [&](Tensor& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  });
}

Var watch(Var x) {
  Tape& tape = x.tape();
  Var tracked = tape.leaf(x.value(), true);
  // The watched copy is a fresh leaf; chain its gradient back into x.
  return tape.record(tape.value(tracked), {x, tracked}, [x, tracked](Tape& t, std::uint32_t self) {
    const Tensor& g = t.out_grad(self);
    for (Var in : {x, tracked}) {
      push(t, in, [&](Tensor& gi) {
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      });
    }
  });
}

Var segment_attention(Var q, Var k, Var v, std::span<const Segment> segments, double scale,
                      std::vector<Tensor>* weights_out) {
  require_same_tape(q, k);
  require_same_tape(q, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require_matrix(qv, "segment_attention");
  require_matrix(kv, "segment_attention");
  require_matrix(vv, "segment_attention");
  if (qv.cols() != kv.cols() || qv.rows() != kv.rows() || kv.rows() != vv.rows() ||
      qv.cols() == 0) {
    throw DimensionError("segment_attention: q " + shape_string(qv.shape()) + ", k " +
                         shape_string(kv.shape()) + ", v " + shape_string(vv.shape()));
  }
  auto weights = std::make_shared<std::vector<Tensor>>();
  weights->reserve(segments.size());
  Tensor out = Tensor::matrix(qv.rows(), vv.cols());
  for (const Segment& s : segments) {
    if (s.begin + s.length > qv.rows()) throw DimensionError("segment_attention: segment out of range");
    Tensor a = Tensor::matrix(s.length, s.length);
    as_mat(a).noalias() = rows_of(qv, s.begin, s.length) * rows_of(kv, s.begin, s.length).transpose();
    for (double& z : a.values()) z *= scale;
    for (std::size_t r = 0; r < s.length; ++r) softmax(a.row(r), a.row(r));
    rows_of(out, s.begin, s.length).noalias() = as_mat(a) * rows_of(vv, s.begin, s.length);
    weights->push_back(std::move(a));
  }
  if (weights_out != nullptr) *weights_out = *weights;
  std::vector<Segment> segs(segments.begin(), segments.end());
  return q.tape().record(
      std::move(out), {q, k, v},
      [q, k, v, scale, weights, segs = std::move(segs)](Tape& t, std::uint32_t self) {
        const Tensor& g = t.out_grad(self);
        const bool need_q = t.requires_grad(q);
        const bool need_k = t.requires_grad(k);
        const bool need_v = t.requires_grad(v);
        Tensor* gq = need_q ? &t.grad_slot(q.id()) : nullptr;
        Tensor* gk = need_k ? &t.grad_slot(k.id()) : nullptr;
        Tensor* gv = need_v ? &t.grad_slot(v.id()) : nullptr;
        const Tensor& qv = t.value(q);
        const Tensor& kv = t.value(k);
        const Tensor& vv = t.value(v);
        for (std::size_t si = 0; si < segs.size(); ++si) {
          const Segment& s = segs[si];
          const Tensor& a = (*weights)[si];
          const auto gs = rows_of(g, s.begin, s.length);
          if (gv != nullptr) {
            rows_of(*gv, s.begin, s.length).noalias() += as_mat(a).transpose() * gs;
          }
          if (gq == nullptr && gk == nullptr) continue;
          Tensor gz = Tensor::matrix(s.length, s.length);
          as_mat(gz).noalias() = gs * rows_of(vv, s.begin, s.length).transpose();
          for (std::size_t r = 0; r < s.length; ++r) {
            auto ar = a.row(r);
            auto gr = gz.row(r);
            double dot = 0.0;
            for (std::size_t c = 0; c < s.length; ++c) dot += ar[c] * gr[c];
            for (std::size_t c = 0; c < s.length; ++c) gr[c] = scale * ar[c] * (gr[c] - dot);
          }
          if (gq != nullptr) {
            rows_of(*gq, s.begin, s.length).noalias() += as_mat(gz) * rows_of(kv, s.begin, s.length);
          }
          if (gk != nullptr) {
            rows_of(*gk, s.begin, s.length).noalias() +=
                as_mat(gz).transpose() * rows_of(qv, s.begin, s.length);
          }
        }
      });
}

Var weighted_nll(Var log_probs, std::span<const int> targets,
                 std::span<const double> class_weights, std::span<const double> row_scale) {
  const Tensor& lp = log_probs.value();
  const std::size_t n = lp.rank() == 2 ? lp.rows() : (lp.size() == 0 ? 0 : 1);
  if (targets.size() != n || row_scale.size() != n) {
    throw DimensionError("weighted_nll: " + std::to_string(n) + " rows but " +
                         std::to_string(targets.size()) + " targets and " +
                         std::to_string(row_scale.size()) + " row scales");
  }
  std::vector<double> coef(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = targets[i];
    if (y < 0 || static_cast<std::size_t>(y) >= lp.cols() ||
        static_cast<std::size_t>(y) >= class_weights.size()) {
      throw DimensionError("weighted_nll: target class " + std::to_string(y) + " out of range");
    }
    coef[i] = row_scale[i] * class_weights[static_cast<std::size_t>(y)];
    total -= coef[i] * lp(i, static_cast<std::size_t>(y));
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return log_probs.tape().record(
      Tensor::scalar(total), {log_probs},
      [log_probs, tgt = std::move(tgt), coef = std::move(coef)](Tape& t, std::uint32_t self) {
        const double g = t.out_grad(self)[0];
        push(t, log_probs, [&](Tensor& gl) {
          for (std::size_t i = 0; i < tgt.size(); ++i) {
            gl(i, static_cast<std::size_t>(tgt[i])) -= g * coef[i];
          }
        });
      });
}

}  // namespace kiwiqe::ad
