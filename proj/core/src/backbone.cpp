#include "mhqa/backbone.hpp"

#include <algorithm>
#include <numeric>

#include "mhqa/error.hpp"

namespace mhqa {

BackboneSpec backbone_preset(std::string_view name) {
  if (name == "tiny") return {"tiny", 32, 2, 64, 1};
  if (name == "small") return {"small", 64, 4, 128, 2};
  if (name == "base") return {"base", 128, 4, 256, 4};
  throw ConfigError("unknown model identifier '" + std::string(name) +
                    "' (expected tiny, small, base or a checkpoint directory)");
}

bool is_checkpoint_dir(const std::filesystem::path& path) {
  std::error_code ec;
  return std::filesystem::is_directory(path, ec) && std::filesystem::exists(path / "config.json", ec) &&
         std::filesystem::exists(path / "weights.bin", ec);
}

nlohmann::json to_json(const BackboneSpec& spec) {
  return {{"model_identifier", spec.model_identifier},
          {"dim", spec.dim},
          {"heads", spec.heads},
          {"hidden", spec.hidden},
          {"layers", spec.layers}};
}

BackboneSpec backbone_from_json(const nlohmann::json& doc) {
  if (doc.is_string()) {
    const auto id = doc.get<std::string>();
    return is_checkpoint_dir(id) ? BackboneSpec{id} : backbone_preset(id);
  }
  if (!doc.is_object()) throw ConfigError("backbone must be a preset name, a checkpoint directory or an object");
  BackboneSpec spec;
  spec.model_identifier = doc.value("model_identifier", spec.model_identifier);
  spec.dim = doc.value("dim", spec.dim);
  spec.heads = doc.value("heads", spec.heads);
  spec.hidden = doc.value("hidden", spec.hidden);
  spec.layers = doc.value("layers", spec.layers);
  if (spec.dim <= 0 || spec.heads <= 0 || spec.hidden <= 0 || spec.layers <= 0 || spec.dim % spec.heads != 0) {
    throw ConfigError("invalid backbone shape");
  }
  return spec;
}

nlohmann::json to_json(const TrainingOptions& options) {
  return {{"epochs", options.epochs},   {"batch_size", options.batch_size}, {"learning_rate", options.learning_rate},
          {"max_steps", options.max_steps}, {"seed", options.seed},     {"clip_norm", options.clip_norm}};
}

TrainingOptions training_options_from_json(const nlohmann::json& doc, TrainingOptions defaults) {
  TrainingOptions options = defaults;
  options.epochs = doc.value("epochs", options.epochs);
  options.batch_size = doc.value("batch_size", options.batch_size);
  options.learning_rate = doc.value("learning_rate", options.learning_rate);
  options.max_steps = doc.value("max_steps", options.max_steps);
  options.seed = doc.value("seed", options.seed);
  options.clip_norm = doc.value("clip_norm", options.clip_norm);
  if (options.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (options.batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (!(options.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (options.max_steps < 0) throw ConfigError("max_steps must be >= 0");
  return options;
}

double TrainingLog::head_mean(std::size_t window) const {
  const std::size_t n = std::min(window, losses.size());
  if (n == 0) return 0.0;
  return std::accumulate(losses.begin(), losses.begin() + static_cast<std::ptrdiff_t>(n), 0.0) /
         static_cast<double>(n);
}

double TrainingLog::tail_mean(std::size_t window) const {
  const std::size_t n = std::min(window, losses.size());
  if (n == 0) return 0.0;
  return std::accumulate(losses.end() - static_cast<std::ptrdiff_t>(n), losses.end(), 0.0) / static_cast<double>(n);
}

}  // namespace mhqa

#include <random>

#include <spdlog/spdlog.h>

#include "mhqa/nn/optim.hpp"

namespace mhqa {

TrainingLog run_training(nn::ParameterStore& store, std::size_t example_count, const TrainingOptions& options,
                         const BatchStep& step) {
  TrainingLog log;
  if (example_count == 0) throw ConfigError("training set is empty");
  nn::Adam optimizer(store, {options.learning_rate, 0.9, 0.999, 1e-8, options.clip_norm});
  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(example_count);
  const auto batch = static_cast<std::size_t>(options.batch_size);
  store.zero_grad();
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t count = std::min(batch, order.size() - start);
      const auto loss = step(std::span<const std::size_t>(order.data() + start, count));
      if (!loss) {
        ++log.skipped_batches;
        spdlog::warn("epoch {}: batch at offset {} skipped", epoch, start);
        store.zero_grad();
        continue;
      }
      log.losses.push_back(*loss);
      optimizer.step();
      spdlog::debug("step {} loss {:.6f}", log.losses.size(), *loss);
      if (options.max_steps > 0 && static_cast<int>(log.losses.size()) >= options.max_steps) return log;
    }
  }
  return log;
}

}  // namespace mhqa
