#pragma once

#include <unordered_map>

#include "mhqa/nn/layers.hpp"

namespace mhqa::nn {

struct AdamOptions {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global gradient-norm clip; <= 0 disables clipping.
  double clip_norm = 1.0;
};

class Adam {
 public:
  Adam(ParameterStore& store, AdamOptions options);

  /// Applies one update from the accumulated gradients, then zeroes them.
  void step();

  long steps() const { return steps_; }

 private:
  struct Moments {
    Matrix first;
    Matrix second;
  };

  ParameterStore& store_;
  AdamOptions options_;
  std::unordered_map<const Parameter*, Moments> moments_;
  long steps_ = 0;
};

}  // namespace mhqa::nn
