#include "mhqa/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace mhqa::nn {

Parameter& ParameterStore::add(const std::string& name, Matrix value) {
  if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Matrix::Zero(value.rows(), value.cols());
  p->value = std::move(value);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::zeros(const std::string& name, int rows, int cols) {
  return add(name, Matrix::Zero(rows, cols));
}

Parameter& ParameterStore::constant(const std::string& name, int rows, int cols, double value) {
  return add(name, Matrix::Constant(rows, cols, value));
}

Parameter& ParameterStore::normal(const std::string& name, int rows, int cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng_);
  }
  return add(name, std::move(m));
}

Parameter& ParameterStore::xavier(const std::string& name, int rows, int cols) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng_);
  }
  return add(name, std::move(m));
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->grad.setZero(p->value.rows(), p->value.cols());
}

Linear::Linear(ParameterStore& store, const std::string& name, int in, int out, bool zero_init)
    : weight_(zero_init ? &store.zeros(name + ".weight", in, out) : &store.xavier(name + ".weight", in, out)),
      bias_(&store.zeros(name + ".bias", 1, out)) {}

Var Linear::operator()(Graph& g, Var x) const {
  return g.add_row(g.matmul(x, g.param(*weight_)), g.param(*bias_));
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, int dim)
    : gamma_(&store.constant(name + ".gamma", 1, dim, 1.0)), beta_(&store.zeros(name + ".beta", 1, dim)) {}

Var LayerNorm::operator()(Graph& g, Var x) const { return g.layer_norm(x, g.param(*gamma_), g.param(*beta_)); }

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& name, int dim, int heads)
    : dim_(dim),
      heads_(heads),
      query_(store, name + ".query", dim, dim),
      key_(store, name + ".key", dim, dim),
      value_(store, name + ".value", dim, dim),
      output_(store, name + ".output", dim, dim) {
  if (heads <= 0 || dim % heads != 0) throw std::invalid_argument("attention dim must be divisible by heads");
}

Var MultiHeadAttention::operator()(Graph& g, Var queries, Var memory, const Matrix* mask) const {
  const Var q = query_(g, queries);
  const Var k = key_(g, memory);
  const Var v = value_(g, memory);
  const int head_dim = dim_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Var> outputs;
  outputs.reserve(static_cast<std::size_t>(heads_));
  for (int h = 0; h < heads_; ++h) {
    const Var qh = g.cols(q, h * head_dim, head_dim);
    const Var kh = g.cols(k, h * head_dim, head_dim);
    const Var vh = g.cols(v, h * head_dim, head_dim);
    const Var weights = g.softmax_rows(g.scale(g.matmul_transposed(qh, kh), scale), mask);
    outputs.push_back(g.matmul(weights, vh));
  }
  return output_(g, heads_ == 1 ? outputs.front() : g.concat_cols(outputs));
}

FeedForward::FeedForward(ParameterStore& store, const std::string& name, int dim, int hidden)
    : in_(store, name + ".in", dim, hidden), out_(store, name + ".out", hidden, dim) {}

Var FeedForward::operator()(Graph& g, Var x) const { return out_(g, g.gelu(in_(g, x))); }

EncoderLayer::EncoderLayer(ParameterStore& store, const std::string& name, int dim, int heads, int hidden)
    : norm_attn_(store, name + ".norm_attn", dim),
      norm_ff_(store, name + ".norm_ff", dim),
      attention_(store, name + ".attn", dim, heads),
      ff_(store, name + ".ff", dim, hidden) {}

Var EncoderLayer::operator()(Graph& g, Var x, const Matrix* mask) const {
  const Var normed = norm_attn_(g, x);
  x = g.add(x, attention_(g, normed, normed, mask));
  return g.add(x, ff_(g, norm_ff_(g, x)));
}

DecoderLayer::DecoderLayer(ParameterStore& store, const std::string& name, int dim, int heads, int hidden)
    : norm_self_(store, name + ".norm_self", dim),
      norm_cross_(store, name + ".norm_cross", dim),
      norm_ff_(store, name + ".norm_ff", dim),
      self_attention_(store, name + ".self_attn", dim, heads),
      cross_attention_(store, name + ".cross_attn", dim, heads),
      ff_(store, name + ".ff", dim, hidden) {}

Var DecoderLayer::operator()(Graph& g, Var x, Var memory, const Matrix* self_mask, const Matrix* cross_mask) const {
  const Var normed = norm_self_(g, x);
  x = g.add(x, self_attention_(g, normed, normed, self_mask));
  x = g.add(x, cross_attention_(g, norm_cross_(g, x), memory, cross_mask));
  return g.add(x, ff_(g, norm_ff_(g, x)));
}

TransformerEncoder::TransformerEncoder(ParameterStore& store, const std::string& name, const EncoderShape& shape)
    : shape_(shape),
      tokens_(&store.normal(name + ".tokens", shape.vocab_size, shape.dim, 0.1)),
      positions_(&store.normal(name + ".positions", shape.max_positions, shape.dim, 0.02)),
      segments_(&store.normal(name + ".segments", shape.segments, shape.dim, 0.02)) {
  for (int i = 0; i < shape.layers; ++i) {
    layers_.emplace_back(store, name + ".layer" + std::to_string(i), shape.dim, shape.heads, shape.hidden);
  }
  final_norm_ = LayerNorm(store, name + ".final_norm", shape.dim);
}

Var TransformerEncoder::operator()(Graph& g, std::span<const int> token_ids, std::span<const int> segment_ids) const {
  const auto length = static_cast<int>(token_ids.size());
  if (length == 0) throw std::invalid_argument("encoder input is empty");
  if (length > shape_.max_positions) {
    throw std::invalid_argument("sequence of " + std::to_string(length) + " tokens exceeds " +
                                std::to_string(shape_.max_positions) + " positions");
  }
  std::vector<int> positions(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i) positions[static_cast<std::size_t>(i)] = i;
  std::vector<int> segments(static_cast<std::size_t>(length), 0);
  if (!segment_ids.empty()) segments.assign(segment_ids.begin(), segment_ids.end());

  Var x = g.add(g.embedding(*tokens_, token_ids), g.embedding(*positions_, positions));
  x = g.add(x, g.embedding(*segments_, segments));
  for (const auto& layer : layers_) x = layer(g, x, nullptr);
  return final_norm_(g, x);
}

Matrix causal_mask(int length) {
  Matrix mask = Matrix::Zero(length, length);
  for (int r = 0; r < length; ++r) {
    for (int c = r + 1; c < length; ++c) mask(r, c) = kMaskedOut;
  }
  return mask;
}

}  // namespace mhqa::nn
