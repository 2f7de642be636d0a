#include "mhqa/nn/optim.hpp"

#include <cmath>

namespace mhqa::nn {

Adam::Adam(ParameterStore& store, AdamOptions options) : store_(store), options_(options) {
  for (const auto& p : store_.all()) {
    moments_[p.get()] = {Matrix::Zero(p->value.rows(), p->value.cols()),
                         Matrix::Zero(p->value.rows(), p->value.cols())};
  }
}

void Adam::step() {
  ++steps_;
  double scale = 1.0;
  if (options_.clip_norm > 0.0) {
    double squared = 0.0;
    for (const auto& p : store_.all()) squared += p->grad.squaredNorm();
    const double norm = std::sqrt(squared);
    if (norm > options_.clip_norm) scale = options_.clip_norm / norm;
  }
  const double correction1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  for (const auto& p : store_.all()) {
    Moments& m = moments_[p.get()];
    const Matrix g = p->grad * scale;
    m.first = options_.beta1 * m.first + (1.0 - options_.beta1) * g;
    m.second = options_.beta2 * m.second + (1.0 - options_.beta2) * g.cwiseProduct(g);
    p->value.array() -= options_.learning_rate * (m.first.array() / correction1) /
                        ((m.second.array() / correction2).sqrt() + options_.epsilon);
  }
  store_.zero_grad();
}

}  // namespace mhqa::nn
