#include "compcap/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "compcap/rng.hpp"

namespace compcap {

Parameter& ParameterStore::add(std::string name, Tensor init) {
  if (index_.contains(name)) {
    throw std::invalid_argument("ParameterStore: duplicate parameter '" + name + "'");
  }
  index_.emplace(name, params_.size());
  Tensor grad(init.rows(), init.cols());
  params_.push_back(std::make_unique<Parameter>(Parameter{std::move(name), std::move(init), std::move(grad)}));
  return *params_.back();
}

Parameter& ParameterStore::get(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw std::out_of_range("ParameterStore: no parameter '" + std::string(name) + "'");
  }
  return *params_[it->second];
}

const Parameter& ParameterStore::get(std::string_view name) const {
  return const_cast<ParameterStore*>(this)->get(name);
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) {
    if (!p->grad.same_shape(p->value)) {
      p->grad = Tensor(p->value.rows(), p->value.cols());
    } else {
      p->grad.fill(0.0);
    }
  }
}

Var Graph::push(Tensor value, const char* op, Backward backward) {
  if (!value.all_finite()) {
    throw NonFiniteError(std::string(op) + " produced a non-finite value in a tensor of shape " +
                         value.shape_string());
  }
  nodes_.push_back(Node{std::move(value), Tensor(), false, nullptr, std::move(backward)});
  return Var{nodes_.size() - 1};
}

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) {
    throw std::out_of_range("Graph: invalid variable handle");
  }
  return nodes_[v.id];
}

Tensor& Graph::grad_ref(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

Var Graph::constant(Tensor value) { return push(std::move(value), "constant", nullptr); }

Var Graph::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) {
    return Var{it->second};
  }
  Var v = push(p.value, p.name.c_str(), nullptr);
  nodes_[v.id].param = &p;
  param_nodes_.emplace(&p, v.id);
  return v;
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

Tensor Graph::grad(Var v) const {
  const Node& n = node(v);
  return n.has_grad ? n.grad : Tensor(n.value.rows(), n.value.cols());
}

Var Graph::matmul(Var a, Var b) {
  Tensor out;
  gemm(value(a), value(b), out);
  return push(std::move(out), "matmul", [a, b](Graph& g, std::size_t self) {
    const Tensor& dc = g.nodes_[self].grad;
    gemm_nt(dc, g.nodes_[b.id].value, g.grad_ref(a.id), true);
    gemm_tn(g.nodes_[a.id].value, dc, g.grad_ref(b.id), true);
  });
}

Var Graph::matmul_nt(Var a, Var b) {
  Tensor out;
  gemm_nt(value(a), value(b), out);
  return push(std::move(out), "matmul_nt", [a, b](Graph& g, std::size_t self) {
    const Tensor& dc = g.nodes_[self].grad;
    gemm(dc, g.nodes_[b.id].value, g.grad_ref(a.id), true);
    gemm_tn(dc, g.nodes_[a.id].value, g.grad_ref(b.id), true);
  });
}

Var Graph::broadcast_binary(Var a, Var b, const char* op) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  bool broadcast = !x.same_shape(y);
  if (broadcast && !(y.rows() == 1 && y.cols() == x.cols())) {
    throw std::invalid_argument(std::string(op) + ": shapes " + x.shape_string() + " and " +
                                y.shape_string() + " are incompatible");
  }
  const std::string_view kind(op);
  const int code = kind == "add" ? 0 : kind == "sub" ? 1 : 2;
  Tensor out(x.rows(), x.cols());
  const std::size_t rows = broadcast ? x.rows() : 1;
  const std::size_t cols = broadcast ? x.cols() : x.size();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * cols;
    const double* yr = y.data().data() + (broadcast ? 0 : r * cols);
    double* o = out.data().data() + r * cols;
    if (code == 0) {
      for (std::size_t c = 0; c < cols; ++c) o[c] = xr[c] + yr[c];
    } else if (code == 1) {
      for (std::size_t c = 0; c < cols; ++c) o[c] = xr[c] - yr[c];
    } else {
      for (std::size_t c = 0; c < cols; ++c) o[c] = xr[c] * yr[c];
    }
  }
  return push(std::move(out), op, [a, b, broadcast, code, rows, cols](Graph& g, std::size_t self) {
    const double* dc = g.nodes_[self].grad.data().data();
    double* da = g.grad_ref(a.id).data().data();
    double* db = g.grad_ref(b.id).data().data();
    const double* x = g.nodes_[a.id].value.data().data();
    const double* y = g.nodes_[b.id].value.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = r * cols;
      const std::size_t yoff = broadcast ? 0 : off;
      if (code == 2) {
        for (std::size_t c = 0; c < cols; ++c) {
          da[off + c] += dc[off + c] * y[yoff + c];
          db[yoff + c] += dc[off + c] * x[off + c];
        }
      } else {
        const double sign = code == 0 ? 1.0 : -1.0;
        for (std::size_t c = 0; c < cols; ++c) {
          da[off + c] += dc[off + c];
          db[yoff + c] += sign * dc[off + c];
        }
      }
    }
  });
}

Var Graph::add(Var a, Var b) { return broadcast_binary(a, b, "add"); }
Var Graph::sub(Var a, Var b) { return broadcast_binary(a, b, "sub"); }
Var Graph::mul(Var a, Var b) { return broadcast_binary(a, b, "mul"); }

Var Graph::maximum(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (!x.same_shape(y)) {
    throw std::invalid_argument("maximum: shapes " + x.shape_string() + " and " + y.shape_string() +
                                " differ");
  }
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] >= y[i] ? x[i] : y[i];
  return push(std::move(out), "maximum", [a, b](Graph& g, std::size_t self) {
    const Tensor& dc = g.nodes_[self].grad;
    const Tensor& x = g.nodes_[a.id].value;
    const Tensor& y = g.nodes_[b.id].value;
    Tensor& da = g.grad_ref(a.id);
    Tensor& db = g.grad_ref(b.id);
    for (std::size_t i = 0; i < dc.size(); ++i) {
      if (x[i] >= y[i]) {
        da[i] += dc[i];
      } else {
        db[i] += dc[i];
      }
    }
  });
}

Var Graph::concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) {
    throw std::invalid_argument("concat: no inputs");
  }
  if (axis != 0 && axis != 1) {
    throw std::invalid_argument("concat: axis must be 0 or 1");
  }
  const Tensor& first = value(parts[0]);
  std::size_t rows = 0;
  std::size_t cols = 0;
  for (Var p : parts) {
    const Tensor& t = value(p);
    if (axis == 0) {
      if (t.cols() != first.cols()) {
        throw std::invalid_argument("concat(axis 0): shapes " + first.shape_string() + " and " +
                                    t.shape_string() + " differ in columns");
      }
      rows += t.rows();
      cols = t.cols();
    } else {
      if (t.rows() != first.rows()) {
        throw std::invalid_argument("concat(axis 1): shapes " + first.shape_string() + " and " +
                                    t.shape_string() + " differ in rows");
      }
      cols += t.cols();
      rows = t.rows();
    }
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& t = value(p);
    for (std::size_t r = 0; r < t.rows(); ++r) {
      for (std::size_t c = 0; c < t.cols(); ++c) {
        if (axis == 0) {
          out(offset + r, c) = t(r, c);
        } else {
          out(r, offset + c) = t(r, c);
        }
      }
    }
    offset += axis == 0 ? t.rows() : t.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return push(std::move(out), "concat", [inputs, axis](Graph& g, std::size_t self) {
    std::size_t offset = 0;
    for (Var p : inputs) {
      // Copy the upstream gradient reference per part: grad_ref may touch p
      // but never self.
      const Tensor& dc = g.nodes_[self].grad;
      Tensor& dp = g.grad_ref(p.id);
      for (std::size_t r = 0; r < dp.rows(); ++r) {
        for (std::size_t c = 0; c < dp.cols(); ++c) {
          dp(r, c) += axis == 0 ? dc(offset + r, c) : dc(r, offset + c);
        }
      }
      offset += axis == 0 ? dp.rows() : dp.cols();
    }
  });
}

Var Graph::transpose(Var a) {
  const Tensor& x = value(a);
  Tensor out(x.cols(), x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(c, r) = x(r, c);
  return push(std::move(out), "transpose", [a](Graph& g, std::size_t self) {
    const Tensor& dc = g.nodes_[self].grad;
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t r = 0; r < da.rows(); ++r)
      for (std::size_t c = 0; c < da.cols(); ++c) da(r, c) += dc(c, r);
  });
}

Var Graph::scale(Var a, double s) {
  Tensor out = value(a);
  for (double& v : out.data()) v *= s;
  return push(std::move(out), "scale", [a, s](Graph& g, std::size_t self) {
    const Tensor& dc = g.nodes_[self].grad;
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t i = 0; i < dc.size(); ++i) da[i] += s * dc[i];
  });
}

Var Graph::relu(Var a) {
  Tensor out = value(a);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), "relu", [a](Graph& g, std::size_t self) {
    const Tensor& dc = g.nodes_[self].grad;
    const Tensor& x = g.nodes_[a.id].value;
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t i = 0; i < dc.size(); ++i) {
      if (x[i] > 0.0) da[i] += dc[i];
    }
  });
}

Var Graph::softmax(Var a, int axis) {
  if (axis != 0 && axis != 1) {
    throw std::invalid_argument("softmax: axis must be 0 or 1");
  }
  const Tensor& x = value(a);
  Tensor out(x.rows(), x.cols());
  const std::size_t lines = axis == 1 ? x.rows() : x.cols();
  const std::size_t len = axis == 1 ? x.cols() : x.rows();
  auto at = [axis](std::size_t line, std::size_t k, std::size_t cols) {
    return axis == 1 ? line * cols + k : k * cols + line;
  };
  for (std::size_t l = 0; l < lines; ++l) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, x[at(l, k, x.cols())]);
    double total = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      double e = std::exp(x[at(l, k, x.cols())] - mx);
      out[at(l, k, x.cols())] = e;
      total += e;
    }
    for (std::size_t k = 0; k < len; ++k) out[at(l, k, x.cols())] /= total;
  }
  return push(std::move(out), "softmax", [a, axis, lines, len, at](Graph& g, std::size_t self) {
    const Tensor& dy = g.nodes_[self].grad;
    const Tensor& y = g.nodes_[self].value;
    Tensor& da = g.grad_ref(a.id);
    const std::size_t cols = y.cols();
    for (std::size_t l = 0; l < lines; ++l) {
      double dot = 0.0;
      for (std::size_t k = 0; k < len; ++k) dot += dy[at(l, k, cols)] * y[at(l, k, cols)];
      for (std::size_t k = 0; k < len; ++k) {
        std::size_t i = at(l, k, cols);
        da[i] += y[i] * (dy[i] - dot);
      }
    }
  });
}

Var Graph::layer_norm(Var x, Var gain, Var bias, double epsilon) {
  const Tensor& in = value(x);
  const Tensor& gv = value(gain);
  const Tensor& bv = value(bias);
  const std::size_t m = in.rows();
  const std::size_t n = in.cols();
  if (n == 0 || gv.rows() != 1 || gv.cols() != n || !bv.same_shape(gv)) {
    throw std::invalid_argument("layer_norm: input " + in.shape_string() + " with gain " +
                                gv.shape_string() + " and bias " + bv.shape_string());
  }
  if (epsilon < 0.0) {
    throw std::invalid_argument("layer_norm: epsilon must be nonnegative");
  }
  Tensor normalized(m, n);
  std::vector<double> inv_std(m);
  Tensor out(m, n);
  for (std::size_t r = 0; r < m; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += in(r, c);
    mean /= double(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      double d = in(r, c) - mean;
      var += d * d;
    }
    var /= double(n);
    inv_std[r] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t c = 0; c < n; ++c) {
      normalized(r, c) = (in(r, c) - mean) * inv_std[r];
      out(r, c) = gv[c] * normalized(r, c) + bv[c];
    }
  }
  return push(std::move(out), "layer_norm",
              [x, gain, bias, normalized = std::move(normalized), inv_std = std::move(inv_std)](
                  Graph& g, std::size_t self) {
                const Tensor& dy = g.nodes_[self].grad;
                const Tensor& gv = g.nodes_[gain.id].value;
                Tensor& dx = g.grad_ref(x.id);
                Tensor& dg = g.grad_ref(gain.id);
                Tensor& db = g.grad_ref(bias.id);
                const std::size_t m = dy.rows();
                const std::size_t n = dy.cols();
                std::vector<double> dxhat(n);
                for (std::size_t r = 0; r < m; ++r) {
                  double mean_d = 0.0;
                  double mean_dx = 0.0;
                  for (std::size_t c = 0; c < n; ++c) {
                    db[c] += dy(r, c);
                    dg[c] += dy(r, c) * normalized(r, c);
                    dxhat[c] = dy(r, c) * gv[c];
                    mean_d += dxhat[c];
                    mean_dx += dxhat[c] * normalized(r, c);
                  }
                  mean_d /= double(n);
                  mean_dx /= double(n);
                  for (std::size_t c = 0; c < n; ++c) {
                    dx(r, c) += inv_std[r] * (dxhat[c] - mean_d - normalized(r, c) * mean_dx);
                  }
                }
              });
}

Var Graph::cross_entropy(Var logits, std::span<const int> targets, std::span<const bool> mask) {
  const Tensor& z = value(logits);
  if (targets.size() != z.rows()) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for logits of shape " + z.shape_string());
  }
  if (!mask.empty() && mask.size() != z.rows()) {
    throw std::invalid_argument("cross_entropy: mask length does not match logits");
  }
  std::vector<bool> counted(z.rows());
  std::size_t count = 0;
  for (std::size_t t = 0; t < z.rows(); ++t) {
    counted[t] = mask.empty() || mask[t];
    if (!counted[t]) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= z.cols()) {
      throw std::invalid_argument("cross_entropy: target id " + std::to_string(targets[t]) +
                                  " outside vocabulary of size " + std::to_string(z.cols()));
    }
    ++count;
  }
  if (count == 0) {
    throw std::invalid_argument("cross_entropy: mask selects no positions");
  }
  Tensor probs(z.rows(), z.cols());
  double total = 0.0;
  for (std::size_t t = 0; t < z.rows(); ++t) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < z.cols(); ++v) mx = std::max(mx, z(t, v));
    double sum = 0.0;
    for (std::size_t v = 0; v < z.cols(); ++v) {
      probs(t, v) = std::exp(z(t, v) - mx);
      sum += probs(t, v);
    }
    for (std::size_t v = 0; v < z.cols(); ++v) probs(t, v) /= sum;
    if (counted[t]) {
      total += -(z(t, static_cast<std::size_t>(targets[t])) - mx - std::log(sum));
    }
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return push(Tensor::scalar(total / double(count)), "cross_entropy",
              [logits, probs = std::move(probs), tgt = std::move(tgt), counted = std::move(counted),
               count](Graph& g, std::size_t self) {
                const double upstream = g.nodes_[self].grad[0] / double(count);
                Tensor& dz = g.grad_ref(logits.id);
                for (std::size_t t = 0; t < probs.rows(); ++t) {
                  if (!counted[t]) continue;
                  for (std::size_t v = 0; v < probs.cols(); ++v) {
                    dz(t, v) += upstream * probs(t, v);
                  }
                  dz(t, static_cast<std::size_t>(tgt[t])) -= upstream;
                }
              });
}

Var Graph::slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& x = value(a);
  if (begin + count > x.cols()) {
    throw std::out_of_range("slice_cols: [" + std::to_string(begin) + ", " +
                            std::to_string(begin + count) + ") outside " + x.shape_string());
  }
  Tensor out(x.rows(), count);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = x(r, begin + c);
  return push(std::move(out), "slice_cols", [a, begin](Graph& g, std::size_t self) {
    const Tensor& dc = g.nodes_[self].grad;
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t r = 0; r < dc.rows(); ++r)
      for (std::size_t c = 0; c < dc.cols(); ++c) da(r, begin + c) += dc(r, c);
  });
}

Var Graph::slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& x = value(a);
  if (begin + count > x.rows()) {
    throw std::out_of_range("slice_rows: [" + std::to_string(begin) + ", " +
                            std::to_string(begin + count) + ") outside " + x.shape_string());
  }
  std::vector<double> data(x.data().begin() + static_cast<std::ptrdiff_t>(begin * x.cols()),
                           x.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * x.cols()));
  return push(Tensor(count, x.cols(), std::move(data)), "slice_rows",
              [a, begin](Graph& g, std::size_t self) {
                const Tensor& dc = g.nodes_[self].grad;
                Tensor& da = g.grad_ref(a.id);
                const std::size_t offset = begin * da.cols();
                for (std::size_t i = 0; i < dc.size(); ++i) da[offset + i] += dc[i];
              });
}

Var Graph::gather_rows(Var table, std::span<const int> ids) {
  const Tensor& t = value(table);
  Tensor out(ids.size(), t.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= t.rows()) {
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[r]) + " outside table of " +
                              std::to_string(t.rows()) + " rows");
    }
    auto src = t.row(static_cast<std::size_t>(ids[r]));
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * t.cols()));
  }
  std::vector<int> rows(ids.begin(), ids.end());
  return push(std::move(out), "gather_rows", [table, rows = std::move(rows)](Graph& g, std::size_t self) {
    const Tensor& dc = g.nodes_[self].grad;
    Tensor& dt = g.grad_ref(table.id);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < dc.cols(); ++c) dt(static_cast<std::size_t>(rows[r]), c) += dc(r, c);
  });
}

Var Graph::sum(Var a) {
  double total = 0.0;
  for (double v : value(a).data()) total += v;
  return push(Tensor::scalar(total), "sum", [a](Graph& g, std::size_t self) {
    const double dc = g.nodes_[self].grad[0];
    for (double& v : g.grad_ref(a.id).data()) v += dc;
  });
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Block = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstBlock = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

ConstBlock head_block(const Tensor& t, std::size_t row, std::size_t rows, std::size_t col,
                      std::size_t cols) {
  return ConstBlock(t.data().data() + row * t.cols() + col, Eigen::Index(rows), Eigen::Index(cols),
                    Eigen::OuterStride<>(Eigen::Index(t.cols())));
}

Block head_block(Tensor& t, std::size_t row, std::size_t rows, std::size_t col, std::size_t cols) {
  return Block(t.data().data() + row * t.cols() + col, Eigen::Index(rows), Eigen::Index(cols),
               Eigen::OuterStride<>(Eigen::Index(t.cols())));
}

}  // namespace

Var Graph::attention(Var q, Var k, Var v, std::size_t heads, std::span<const std::size_t> q_lengths,
                     std::span<const std::size_t> kv_lengths, bool causal) {
  const Tensor& qv = value(q);
  const Tensor& kv = value(k);
  const Tensor& vv = value(v);
  const std::size_t width = qv.cols();
  if (heads == 0 || width % heads != 0 || kv.cols() != width || vv.cols() != width ||
      !kv.same_shape(vv)) {
    throw std::invalid_argument("attention: q " + qv.shape_string() + ", k " + kv.shape_string() +
                                ", v " + vv.shape_string() + " with " + std::to_string(heads) +
                                " heads");
  }
  if (q_lengths.size() != kv_lengths.size()) {
    throw std::invalid_argument("attention: query and key segment counts differ");
  }
  std::size_t q_total = 0;
  std::size_t kv_total = 0;
  for (std::size_t s = 0; s < q_lengths.size(); ++s) {
    if (causal && q_lengths[s] != kv_lengths[s]) {
      throw std::invalid_argument("attention: causal segments need equal query and key lengths");
    }
    if (kv_lengths[s] == 0 && q_lengths[s] > 0) {
      throw std::invalid_argument("attention: queries with no keys");
    }
    q_total += q_lengths[s];
    kv_total += kv_lengths[s];
  }
  if (q_total != qv.rows() || kv_total != kv.rows()) {
    throw std::invalid_argument("attention: segment lengths cover " + std::to_string(q_total) +
                                " query and " + std::to_string(kv_total) + " key rows, got " +
                                qv.shape_string() + " and " + kv.shape_string());
  }
  const std::size_t dk = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(double(dk));

  Tensor out(qv.rows(), width);
  std::vector<RowMatrix> probs;
  probs.reserve(q_lengths.size() * heads);
  std::size_t qo = 0;
  std::size_t ko = 0;
  for (std::size_t s = 0; s < q_lengths.size(); ++s) {
    const std::size_t n = q_lengths[s];
    const std::size_t m = kv_lengths[s];
    for (std::size_t h = 0; h < heads; ++h) {
      RowMatrix p = (head_block(qv, qo, n, h * dk, dk) * head_block(kv, ko, m, h * dk, dk).transpose()) * inv_sqrt;
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const Eigen::Index visible = causal ? i + 1 : p.cols();
        auto row = p.row(i).head(visible);
        row = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
        p.row(i).tail(p.cols() - visible).setZero();
      }
      head_block(out, qo, n, h * dk, dk).noalias() = p * head_block(vv, ko, m, h * dk, dk);
      probs.push_back(std::move(p));
    }
    qo += n;
    ko += m;
  }
  std::vector<std::size_t> ql(q_lengths.begin(), q_lengths.end());
  std::vector<std::size_t> kl(kv_lengths.begin(), kv_lengths.end());
  return push(std::move(out), "attention",
              [q, k, v, heads, dk, inv_sqrt, ql = std::move(ql), kl = std::move(kl),
               probs = std::move(probs)](Graph& g, std::size_t self) {
                Tensor& dq = g.grad_ref(q.id);
                Tensor& dkey = g.grad_ref(k.id);
                Tensor& dval = g.grad_ref(v.id);
                const Tensor& dout = g.nodes_[self].grad;
                const Tensor& qv = g.nodes_[q.id].value;
                const Tensor& kv = g.nodes_[k.id].value;
                const Tensor& vv = g.nodes_[v.id].value;
                std::size_t qo = 0;
                std::size_t ko = 0;
                std::size_t idx = 0;
                for (std::size_t s = 0; s < ql.size(); ++s) {
                  const std::size_t n = ql[s];
                  const std::size_t m = kl[s];
                  for (std::size_t h = 0; h < heads; ++h, ++idx) {
                    const RowMatrix& p = probs[idx];
                    const auto dO = head_block(dout, qo, n, h * dk, dk);
                    head_block(dval, ko, m, h * dk, dk).noalias() += p.transpose() * dO;
                    RowMatrix dp = dO * head_block(vv, ko, m, h * dk, dk).transpose();
                    // Softmax backward; masked entries have p = 0 and stay 0.
                    const Eigen::VectorXd dot = (dp.array() * p.array()).rowwise().sum();
                    dp = (p.array() * (dp.colwise() - dot).array()) * inv_sqrt;
                    head_block(dq, qo, n, h * dk, dk).noalias() += dp * head_block(kv, ko, m, h * dk, dk);
                    head_block(dkey, ko, m, h * dk, dk).noalias() += dp.transpose() * head_block(qv, qo, n, h * dk, dk);
                  }
                  qo += n;
                  ko += m;
                }
              });
}

Var Graph::map(Var a, std::function<double(double)> f, std::function<double(double)> df) {
  Tensor out = value(a);
  for (double& v : out.data()) v = f(v);
  return push(std::move(out), "map", [a, df = std::move(df)](Graph& g, std::size_t self) {
    const Tensor& dc = g.nodes_[self].grad;
    const Tensor& x = g.nodes_[a.id].value;
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] * df(x[i]);
  });
}

void Graph::backward(Var root, double seed) {
  const Tensor& r = value(root);
  if (r.size() != 1) {
    throw std::invalid_argument("backward: root must be a scalar, got shape " + r.shape_string());
  }
  grad_ref(root.id)[0] += seed;
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.has_grad && n.backward) {
      n.backward(*this, id);
    }
  }
  for (std::size_t id = 0; id <= root.id; ++id) {
    Node& n = nodes_[id];
    if (n.param && n.has_grad) {
      Parameter& p = *n.param;
      if (!p.grad.same_shape(p.value)) p.grad = Tensor(p.value.rows(), p.value.cols());
      for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    }
  }
}

double grad_check(const ScalarFunction& fn, const std::vector<Tensor>& inputs, double step) {
  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Graph g;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(g.constant(x));
    return g.value(fn(g, vars))[0];
  };

  Graph g;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(g.constant(x));
  g.backward(fn(g, vars));

  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor analytic = g.grad(vars[i]);
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double x0 = inputs[i][j];
      probe[i][j] = x0 + step;
      const double up = evaluate(probe);
      probe[i][j] = x0 - step;
      const double down = evaluate(probe);
      probe[i][j] = x0;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

ParameterCheckReport grad_check_parameters(ParameterStore& params,
                                           const std::function<Var(Graph&)>& loss,
                                           const ParameterCheckOptions& options) {
  auto evaluate = [&] {
    Graph g;
    return g.value(loss(g))[0];
  };

  params.zero_grad();
  {
    Graph g;
    g.backward(loss(g));
  }

  ParameterCheckReport report;
  Rng rng(options.seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Parameter& param = params[p];
    const Tensor analytic = param.grad;
    std::size_t argmax = 0;
    for (std::size_t i = 1; i < analytic.size(); ++i) {
      if (std::abs(analytic[i]) > std::abs(analytic[argmax])) argmax = i;
    }
    const double cutoff = options.significance * std::abs(analytic[argmax]);
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      if (i != argmax && std::abs(analytic[i]) >= cutoff) candidates.push_back(i);
    }
    rng.shuffle(std::span(candidates));
    candidates.insert(candidates.begin(), argmax);

    auto central = [&](std::size_t idx, double h) {
      const double x0 = param.value[idx];
      param.value[idx] = x0 + h;
      const double up = evaluate();
      param.value[idx] = x0 - h;
      const double down = evaluate();
      param.value[idx] = x0;
      return (up - down) / (2.0 * h);
    };
    std::size_t used = 0;
    for (std::size_t idx : candidates) {
      if (used == options.entries_per_tensor) break;
      const double a = analytic[idx];
      const double numeric = central(idx, options.step);
      const double scale = std::max({std::abs(a), std::abs(numeric), options.floor});
      // A ReLU or max kink inside the stencil makes the estimate depend on
      // the step; smooth points agree to O(h^2).
      const double halved = central(idx, options.step / 2);
      if (std::abs(numeric - halved) > 1e-6 * scale + 1e-9) {
        ++report.kinks;
        continue;
      }
      const double err = std::abs(a - numeric) / scale;
      ++report.checked;
      ++used;
      if (err >= report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_parameter = param.name;
        report.worst_index = idx;
      }
    }
    ++report.tensors;
  }
  return report;
}

}  // namespace compcap
