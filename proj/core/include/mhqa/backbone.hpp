#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "mhqa/nn/layers.hpp"

namespace mhqa {

/// Transformer size shared by the three trainable models. The identifier is
/// either a size preset ("tiny", "small", "base") or a checkpoint directory
/// whose weights seed the model.
struct BackboneSpec {
  std::string model_identifier = "tiny";
  int dim = 32;
  int heads = 2;
  int hidden = 64;
  int layers = 1;

  bool operator==(const BackboneSpec&) const = default;
};

/// Resolves a preset name. Throws ConfigError for unknown names.
BackboneSpec backbone_preset(std::string_view name);

/// True when the identifier names an existing checkpoint directory.
bool is_checkpoint_dir(const std::filesystem::path& path);

nlohmann::json to_json(const BackboneSpec& spec);
BackboneSpec backbone_from_json(const nlohmann::json& doc);

/// Settings common to every training loop.
struct TrainingOptions {
  int epochs = 1;
  int batch_size = 8;
  double learning_rate = 5e-5;
  /// Stop after this many optimizer steps; 0 means no cap.
  int max_steps = 0;
  std::uint64_t seed = 13;
  double clip_norm = 1.0;

  bool operator==(const TrainingOptions&) const = default;
};

nlohmann::json to_json(const TrainingOptions& options);
TrainingOptions training_options_from_json(const nlohmann::json& doc, TrainingOptions defaults = {});

/// Per-step training loss record.
struct TrainingLog {
  std::vector<double> losses;
  int skipped_batches = 0;

  /// Mean over the first / last `window` steps.
  double head_mean(std::size_t window) const;
  double tail_mean(std::size_t window) const;
};

}  // namespace mhqa

#include <functional>
#include <optional>
#include <span>

namespace mhqa {

/// Computes forward and backward for the examples at the given indices,
/// accumulating parameter gradients. Returns the loss to log, or nullopt to
/// skip the batch without an optimizer step.
using BatchStep = std::function<std::optional<double>(std::span<const std::size_t> indices)>;

/// Seeded shuffle per epoch, fixed-size batches, one Adam step per batch.
TrainingLog run_training(nn::ParameterStore& store, std::size_t example_count, const TrainingOptions& options,
                         const BatchStep& step);

}  // namespace mhqa
