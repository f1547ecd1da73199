#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "compcap/tensor.hpp"

namespace compcap {

/// A named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Parameters in registration order; names are unique.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(std::string name, Tensor init);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Raised when an operation produces NaN or infinity.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Handle to a node of a Graph.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

/// Tape of operations for reverse-mode differentiation. Nodes are appended in
/// creation order, so the tape is topologically sorted and backward() visits
/// each node once in reverse. Parameter leaves are cached per graph; their
/// gradients are added into Parameter::grad when backward() finishes.
///
/// Broadcasting is limited to a (1, n) right operand spread over the rows of
/// an (m, n) left operand in add/sub/mul.
class Graph {
 public:
  Var constant(Tensor value);
  Var param(Parameter& p);

  const Tensor& value(Var v) const;
  /// Zero tensor of the node's shape when no gradient reached it.
  Tensor grad(Var v) const;
  std::size_t node_count() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  /// Elementwise max; the subgradient goes to a where a >= b.
  Var maximum(Var a, Var b);
  Var concat(std::span<const Var> parts, int axis);
  Var transpose(Var a);
  Var scale(Var a, double s);
  Var relu(Var a);
  Var softmax(Var a, int axis = 1);
  /// Per-row normalisation with population variance, then gain * x + bias.
  Var layer_norm(Var x, Var gain, Var bias, double epsilon = 1e-5);
  /// Mean of -log softmax(logits)[t] over rows whose mask entry is true
  /// (all rows when mask is empty). Throws std::invalid_argument when no row
  /// is counted or a target is out of range.
  Var cross_entropy(Var logits, std::span<const int> targets, std::span<const bool> mask = {});
  Var slice_cols(Var a, std::size_t begin, std::size_t count);
  Var slice_rows(Var a, std::size_t begin, std::size_t count);
  Var gather_rows(Var table, std::span<const int> ids);
  Var sum(Var a);
  /// Scaled dot-product attention with `heads` heads over stacked sequences:
  /// rows of q are split into segments of q_lengths, rows of k and v into
  /// kv_lengths, and segment s of q attends only to segment s of k/v. Heads
  /// take consecutive column blocks. With `causal`, query i of a segment sees
  /// keys 0..i (segments must then have equal lengths). Returns the
  /// concatenated head outputs, shaped like q.
  Var attention(Var q, Var k, Var v, std::size_t heads, std::span<const std::size_t> q_lengths,
                std::span<const std::size_t> kv_lengths, bool causal);
  /// Elementwise f with derivative df; used for activations and for
  /// negative controls in gradient tests.
  Var map(Var a, std::function<double(double)> f, std::function<double(double)> df);

  /// Seeds d(root) = seed for a (1, 1) root and propagates to every node.
  void backward(Var root, double seed = 1.0);

 private:
  using Backward = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };

  Var push(Tensor value, const char* op, Backward backward);
  const Node& node(Var v) const;
  Tensor& grad_ref(std::size_t id);
  Var broadcast_binary(Var a, Var b, const char* op);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

using ScalarFunction = std::function<Var(Graph&, std::span<const Var>)>;

/// Largest componentwise relative error between the reverse-mode gradient of
/// fn at `inputs` and central differences with the given step. The
/// denominator is max(|analytic|, |numeric|, 1e-8).
double grad_check(const ScalarFunction& fn, const std::vector<Tensor>& inputs, double step = 1e-5);

struct ParameterCheckOptions {
  std::size_t entries_per_tensor = 3;
  double step = 1e-5;
  std::uint64_t seed = 0;
  /// Entries are sampled among those with |grad| >= this fraction of the
  /// tensor's largest |grad|; the largest entry is tried first.
  double significance = 0.01;
  /// Denominator floor of the relative error. Some parameters (e.g. attention
  /// key biases) have exactly zero gradient, where central differences only
  /// see rounding noise of order 1e-10.
  double floor = 1e-5;
};

struct ParameterCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t kinks = 0;  // entries skipped because the stencil crossed a kink
  std::size_t tensors = 0;
};

/// Central-difference check of d(loss)/d(parameter) for sampled entries of
/// every parameter tensor. `loss` builds the scalar on a fresh graph.
ParameterCheckReport grad_check_parameters(ParameterStore& params,
                                           const std::function<Var(Graph&)>& loss,
                                           const ParameterCheckOptions& options = {});

}  // namespace compcap
