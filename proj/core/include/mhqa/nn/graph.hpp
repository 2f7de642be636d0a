#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mhqa::nn {

using Matrix = Eigen::MatrixXd;

/// A trainable tensor. Gradients accumulate across Graph::backward calls until
/// zeroed by the optimizer.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Define-by-run computation tape over dense matrices. Build the forward pass
/// with the member ops, then call backward() on a 1x1 loss node.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  Var param(Parameter& parameter);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  double scalar(Var v) const { return nodes_[v.id].value(0, 0); }
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  /// a * b^T
  Var matmul_transposed(Var a, Var b);
  Var add(Var a, Var b);
  /// Adds a 1 x n row to every row of a.
  Var add_row(Var a, Var row);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var transpose(Var a);

  Var gelu(Var a);
  Var tanh(Var a);

  /// Row-wise softmax of (a + mask). Mask entries are additive constants, use
  /// a large negative value to exclude a position.
  Var softmax_rows(Var a, const Matrix* additive_mask = nullptr);
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

  /// Gathers rows of an embedding table.
  Var embedding(Parameter& table, std::span<const int> ids);

  Var rows(Var a, int start, int count);
  Var cols(Var a, int start, int count);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  /// Mean of rows [start, start + count) as a 1 x n row.
  Var mean_rows(Var a, int start, int count);

  /// Mean over rows of -log softmax(logits)[target]. Rows with target < 0 are
  /// ignored; returns 0 when every row is ignored. An optional additive mask
  /// (same shape as logits) restricts the candidate set per row.
  Var cross_entropy(Var logits, std::span<const int> targets, const Matrix* additive_mask = nullptr);

  /// Mean binary cross-entropy of sigmoid(logits) against targets (N x 1).
  Var bce_with_logits(Var logits, std::span<const double> targets);

  /// Weighted sum of 1x1 nodes.
  Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights);

  /// Seeds d(loss)/d(loss) = 1 and propagates into parameter gradients.
  void backward(Var loss);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Parameter* parameter = nullptr;
    std::function<void(Graph&, int)> backprop;
  };

  Var push(Matrix value, std::function<void(Graph&, int)> backprop = {});
  Matrix& grad_of(int id);

  std::vector<Node> nodes_;
};

/// Large negative additive mask value.
inline constexpr double kMaskedOut = -1e9;

}  // namespace mhqa::nn
