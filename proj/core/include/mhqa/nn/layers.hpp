#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mhqa/nn/graph.hpp"

namespace mhqa::nn {

/// Owns every Parameter of a model. Addresses stay stable for the lifetime of
/// the store, so layers hold raw pointers into it.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 13) : rng_(seed) {}

  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter& zeros(const std::string& name, int rows, int cols);
  Parameter& constant(const std::string& name, int rows, int cols, double value);
  Parameter& normal(const std::string& name, int rows, int cols, double stddev);
  /// Glorot-uniform.
  Parameter& xavier(const std::string& name, int rows, int cols);

  Parameter* find(const std::string& name);
  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
  std::size_t scalar_count() const;

  void zero_grad();

 private:
  Parameter& add(const std::string& name, Matrix value);

  std::mt19937_64 rng_;
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, int in, int out, bool zero_init = false);

  Var operator()(Graph& g, Var x) const;

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, int dim);

  Var operator()(Graph& g, Var x) const;

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& name, int dim, int heads);

  /// queries: T x d, memory: S x d, mask: T x S additive (nullable).
  Var operator()(Graph& g, Var queries, Var memory, const Matrix* mask) const;

 private:
  int dim_ = 0;
  int heads_ = 1;
  Linear query_, key_, value_, output_;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterStore& store, const std::string& name, int dim, int hidden);

  Var operator()(Graph& g, Var x) const;

 private:
  Linear in_, out_;
};

/// Pre-norm encoder block.
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(ParameterStore& store, const std::string& name, int dim, int heads, int hidden);

  Var operator()(Graph& g, Var x, const Matrix* mask) const;

 private:
  LayerNorm norm_attn_, norm_ff_;
  MultiHeadAttention attention_;
  FeedForward ff_;
};

/// Pre-norm decoder block: causal self-attention, cross-attention, feed-forward.
class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(ParameterStore& store, const std::string& name, int dim, int heads, int hidden);

  Var operator()(Graph& g, Var x, Var memory, const Matrix* self_mask, const Matrix* cross_mask) const;

 private:
  LayerNorm norm_self_, norm_cross_, norm_ff_;
  MultiHeadAttention self_attention_, cross_attention_;
  FeedForward ff_;
};

struct EncoderShape {
  int vocab_size = 0;
  int dim = 32;
  int heads = 2;
  int hidden = 64;
  int layers = 1;
  int max_positions = 512;
  int segments = 2;
};

/// Token + position + segment embeddings followed by encoder blocks.
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(ParameterStore& store, const std::string& name, const EncoderShape& shape);

  /// Returns T x dim hidden states. segment_ids may be empty (all zeros).
  Var operator()(Graph& g, std::span<const int> token_ids, std::span<const int> segment_ids) const;

  Parameter& token_embedding() const { return *tokens_; }
  const EncoderShape& shape() const { return shape_; }

 private:
  EncoderShape shape_;
  Parameter* tokens_ = nullptr;
  Parameter* positions_ = nullptr;
  Parameter* segments_ = nullptr;
  std::vector<EncoderLayer> layers_;
  LayerNorm final_norm_;
};

/// Lower-triangular additive mask (T x T).
Matrix causal_mask(int length);

}  // namespace mhqa::nn
