#include "mhqa/nn/graph.hpp"

#include <cmath>
#include <stdexcept>

namespace mhqa::nn {

namespace {

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCubic = 0.044715;

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double max = logits.row(r).maxCoeff();
    const double log_norm = max + std::log((logits.row(r).array() - max).exp().sum());
    out.row(r) = logits.row(r).array() - log_norm;
  }
  return out;
}

}  // namespace

Var Graph::push(Matrix value, std::function<void(Graph&, int)> backprop) {
  Node node;
  node.value = std::move(value);
  node.backprop = std::move(backprop);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Matrix& Graph::grad_of(int id) {
  Node& node = nodes_[id];
  if (node.grad.rows() != node.value.rows() || node.grad.cols() != node.value.cols()) {
    node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
  }
  return node.grad;
}

Var Graph::constant(Matrix value) { return push(std::move(value)); }

Var Graph::param(Parameter& parameter) {
  Var v = push(parameter.value);
  nodes_[v.id].parameter = &parameter;
  return v;
}

Var Graph::matmul(Var a, Var b) {
  return push(value(a) * value(b), [a, b](Graph& g, int self) {
    const Matrix& up = g.nodes_[self].grad;
    g.grad_of(a.id).noalias() += up * g.value(b).transpose();
    g.grad_of(b.id).noalias() += g.value(a).transpose() * up;
  });
}

Var Graph::matmul_transposed(Var a, Var b) {
  return push(value(a) * value(b).transpose(), [a, b](Graph& g, int self) {
    const Matrix& up = g.nodes_[self].grad;
    g.grad_of(a.id).noalias() += up * g.value(b);
    g.grad_of(b.id).noalias() += up.transpose() * g.value(a);
  });
}

Var Graph::add(Var a, Var b) {
  return push(value(a) + value(b), [a, b](Graph& g, int self) {
    const Matrix& up = g.nodes_[self].grad;
    g.grad_of(a.id) += up;
    g.grad_of(b.id) += up;
  });
}

Var Graph::add_row(Var a, Var row) {
  Matrix out = value(a);
  out.rowwise() += value(row).row(0);
  return push(std::move(out), [a, row](Graph& g, int self) {
    const Matrix& up = g.nodes_[self].grad;
    g.grad_of(a.id) += up;
    g.grad_of(row.id) += up.colwise().sum();
  });
}

Var Graph::mul(Var a, Var b) {
  return push(value(a).cwiseProduct(value(b)), [a, b](Graph& g, int self) {
    const Matrix& up = g.nodes_[self].grad;
    g.grad_of(a.id) += up.cwiseProduct(g.value(b));
    g.grad_of(b.id) += up.cwiseProduct(g.value(a));
  });
}

Var Graph::scale(Var a, double factor) {
  return push(value(a) * factor,
              [a, factor](Graph& g, int self) { g.grad_of(a.id) += g.nodes_[self].grad * factor; });
}

Var Graph::transpose(Var a) {
  return push(value(a).transpose(),
              [a](Graph& g, int self) { g.grad_of(a.id) += g.nodes_[self].grad.transpose(); });
}

Var Graph::gelu(Var a) {
  const Matrix& x = value(a);
  Matrix out = x.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::tanh(kSqrt2OverPi * (v + kGeluCubic * v * v * v)));
  });
  return push(std::move(out), [a](Graph& g, int self) {
    const Matrix& x = g.value(a);
    const Matrix local = x.unaryExpr([](double v) {
      const double inner = kSqrt2OverPi * (v + kGeluCubic * v * v * v);
      const double t = std::tanh(inner);
      const double d_inner = kSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * v * v);
      return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * d_inner;
    });
    g.grad_of(a.id) += g.nodes_[self].grad.cwiseProduct(local);
  });
}

Var Graph::tanh(Var a) {
  Matrix out = value(a).array().tanh().matrix();
  return push(std::move(out), [a](Graph& g, int self) {
    const Matrix& y = g.value(Var{self});
    g.grad_of(a.id) += g.nodes_[self].grad.cwiseProduct((1.0 - y.array().square()).matrix());
  });
}

Var Graph::softmax_rows(Var a, const Matrix* additive_mask) {
  Matrix logits = value(a);
  if (additive_mask != nullptr) logits += *additive_mask;
  Matrix probs = log_softmax_rows(logits).array().exp().matrix();
  return push(std::move(probs), [a](Graph& g, int self) {
    const Matrix& p = g.value(Var{self});
    const Matrix& up = g.nodes_[self].grad;
    const Eigen::VectorXd dot = up.cwiseProduct(p).rowwise().sum();
    Matrix local = up;
    local.colwise() -= dot;
    g.grad_of(a.id) += p.cwiseProduct(local);
  });
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Matrix& in = value(x);
  const auto cols = static_cast<double>(in.cols());
  Matrix normalized(in.rows(), in.cols());
  Eigen::VectorXd inv_std(in.rows());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const double mean = in.row(r).mean();
    const double var = (in.row(r).array() - mean).square().sum() / cols;
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    normalized.row(r) = (in.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = normalized;
  out.array().rowwise() *= value(gamma).row(0).array();
  out.rowwise() += value(beta).row(0);
  return push(std::move(out), [x, gamma, beta, normalized, inv_std, cols](Graph& g, int self) {
    const Matrix& up = g.nodes_[self].grad;
    g.grad_of(beta.id) += up.colwise().sum();
    g.grad_of(gamma.id) += up.cwiseProduct(normalized).colwise().sum();
    Matrix dnorm = up;
    dnorm.array().rowwise() *= g.value(gamma).row(0).array();
    Matrix& dx = g.grad_of(x.id);
    for (Eigen::Index r = 0; r < up.rows(); ++r) {
      const double mean_d = dnorm.row(r).sum() / cols;
      const double mean_dn = dnorm.row(r).dot(normalized.row(r)) / cols;
      dx.row(r).array() += inv_std(r) * (dnorm.row(r).array() - mean_d - normalized.row(r).array() * mean_dn);
    }
  });
}

Var Graph::embedding(Parameter& table, std::span<const int> ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.value.rows()) {
      throw std::out_of_range("embedding id " + std::to_string(ids[i]) + " outside table '" + table.name + "'");
    }
    out.row(static_cast<Eigen::Index>(i)) = table.value.row(ids[i]);
  }
  std::vector<int> captured(ids.begin(), ids.end());
  Parameter* target = &table;
  return push(std::move(out), [captured = std::move(captured), target](Graph& g, int self) {
    if (target->grad.rows() != target->value.rows() || target->grad.cols() != target->value.cols()) {
      target->grad = Matrix::Zero(target->value.rows(), target->value.cols());
    }
    const Matrix& up = g.nodes_[self].grad;
    for (std::size_t i = 0; i < captured.size(); ++i) {
      target->grad.row(captured[i]) += up.row(static_cast<Eigen::Index>(i));
    }
  });
}

Var Graph::rows(Var a, int start, int count) {
  return push(value(a).middleRows(start, count), [a, start, count](Graph& g, int self) {
    g.grad_of(a.id).middleRows(start, count) += g.nodes_[self].grad;
  });
}

Var Graph::cols(Var a, int start, int count) {
  return push(value(a).middleCols(start, count), [a, start, count](Graph& g, int self) {
    g.grad_of(a.id).middleCols(start, count) += g.nodes_[self].grad;
  });
}

Var Graph::concat_rows(const std::vector<Var>& parts) {
  Eigen::Index total = 0;
  for (Var p : parts) total += value(p).rows();
  Matrix out(total, value(parts.front()).cols());
  Eigen::Index offset = 0;
  for (Var p : parts) {
    out.middleRows(offset, value(p).rows()) = value(p);
    offset += value(p).rows();
  }
  return push(std::move(out), [parts](Graph& g, int self) {
    Eigen::Index offset = 0;
    for (Var p : parts) {
      const Eigen::Index n = g.value(p).rows();
      g.grad_of(p.id) += g.nodes_[self].grad.middleRows(offset, n);
      offset += n;
    }
  });
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
  Eigen::Index total = 0;
  for (Var p : parts) total += value(p).cols();
  Matrix out(value(parts.front()).rows(), total);
  Eigen::Index offset = 0;
  for (Var p : parts) {
    out.middleCols(offset, value(p).cols()) = value(p);
    offset += value(p).cols();
  }
  return push(std::move(out), [parts](Graph& g, int self) {
    Eigen::Index offset = 0;
    for (Var p : parts) {
      const Eigen::Index n = g.value(p).cols();
      g.grad_of(p.id) += g.nodes_[self].grad.middleCols(offset, n);
      offset += n;
    }
  });
}

Var Graph::mean_rows(Var a, int start, int count) {
  Matrix out = value(a).middleRows(start, count).colwise().mean();
  return push(std::move(out), [a, start, count](Graph& g, int self) {
    const Matrix& up = g.nodes_[self].grad;
    g.grad_of(a.id).middleRows(start, count).rowwise() += up.row(0) / static_cast<double>(count);
  });
}

Var Graph::cross_entropy(Var logits, std::span<const int> targets, const Matrix* additive_mask) {
  Matrix masked = value(logits);
  if (additive_mask != nullptr) masked += *additive_mask;
  const Matrix log_probs = log_softmax_rows(masked);
  std::vector<int> captured(targets.begin(), targets.end());
  double loss = 0.0;
  int valid = 0;
  for (Eigen::Index r = 0; r < log_probs.rows(); ++r) {
    const int t = captured[static_cast<std::size_t>(r)];
    if (t < 0) continue;
    loss -= log_probs(r, t);
    ++valid;
  }
  if (valid > 0) loss /= valid;
  return push(Matrix::Constant(1, 1, loss), [logits, log_probs, captured = std::move(captured), valid](Graph& g, int self) {
    if (valid == 0) return;
    const double up = g.nodes_[self].grad(0, 0) / valid;
    Matrix& dl = g.grad_of(logits.id);
    for (Eigen::Index r = 0; r < log_probs.rows(); ++r) {
      const int t = captured[static_cast<std::size_t>(r)];
      if (t < 0) continue;
      Eigen::RowVectorXd delta = log_probs.row(r).array().exp();
      delta(t) -= 1.0;
      dl.row(r) += up * delta;
    }
  });
}

Var Graph::bce_with_logits(Var logits, std::span<const double> targets) {
  const Matrix& z = value(logits);
  std::vector<double> captured(targets.begin(), targets.end());
  const auto n = static_cast<double>(captured.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < captured.size(); ++i) {
    const double v = z(static_cast<Eigen::Index>(i), 0);
    loss += std::max(v, 0.0) - v * captured[i] + std::log1p(std::exp(-std::abs(v)));
  }
  loss /= n;
  return push(Matrix::Constant(1, 1, loss), [logits, captured = std::move(captured), n](Graph& g, int self) {
    const double up = g.nodes_[self].grad(0, 0) / n;
    Matrix& dz = g.grad_of(logits.id);
    const Matrix& z = g.value(logits);
    for (std::size_t i = 0; i < captured.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const double s = 1.0 / (1.0 + std::exp(-z(r, 0)));
      dz(r, 0) += up * (s - captured[i]);
    }
  });
}

Var Graph::weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights) {
  double total = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) total += weights[i] * scalar(terms[i]);
  return push(Matrix::Constant(1, 1, total), [terms, weights](Graph& g, int self) {
    const double up = g.nodes_[self].grad(0, 0);
    for (std::size_t i = 0; i < terms.size(); ++i) g.grad_of(terms[i].id)(0, 0) += weights[i] * up;
  });
}

void Graph::backward(Var loss) {
  if (value(loss).size() != 1) throw std::invalid_argument("backward() needs a scalar loss node");
  grad_of(loss.id)(0, 0) = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& node = nodes_[id];
    if (node.grad.size() == 0) continue;
    if (node.backprop) node.backprop(*this, id);
    if (node.parameter != nullptr) {
      Parameter& p = *node.parameter;
      if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
        p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
      }
      p.grad += node.grad;
    }
  }
}

}  // namespace mhqa::nn
