// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace styleloop {

enum class TrainingMode { kJoint, kTwoStage, kNoLora };

const char* to_string(TrainingMode m);
std::optional<TrainingMode> parse_training_mode(const std::string& s);

struct DomainPrompts {
  std::string source_prompt = "a natural photograph";
  std::string target_prompt = "a painting in the style of Van Gogh";
  // Extra phrasings of each domain; used together with the main prompt by the
  // separation term and the separation report.
  std::vector<std::string> source_paraphrases = {"a photo of a real scene", "a realistic photograph",
                                                 "an ordinary snapshot"};
  std::vector<std::string> target_paraphrases = {"Van Gogh style artwork", "an oil painting by Van Gogh",
                                                 "a Van Gogh painting with swirling strokes"};

  std::vector<std::string> source_family() const;
  std::vector<std::string> target_family() const;
};

struct LossWeights {
  double l1 = 1.0;
  double perceptual = 1.0;
  double separation = 0.1;
};

struct LoraSettings {
  int rank = 4;
  double alpha = 4.0;
};

struct ModelSettings {
  int max_tokens = 77;
  int d_model = 64;
  int text_layers = 2;
  int text_heads = 4;
  std::array<int, 3> vae_channels = {32, 64, 128};
  int latent_channels = 4;
  int unet_channels = 64;
  int unet_heads = 4;
  bool vae_skip_connections = false;
  uint64_t perceptual_seed = 1234;
};

struct EvalSettings {
  int max_samples = 300;
  uint64_t feature_seed = 2024;
  uint64_t aesthetic_seed = 7;
};

struct DistillSettings {
  std::string generator_id = "procedural-stub";
  int max_in_flight = 4;
  int max_attempts = 3;
  int backoff_ms = 100;
  int timeout_ms = 30000;
};

struct PathSettings {
  std::filesystem::path source_dir = "data/fixtures/source";
  std::filesystem::path style_dir = "data/style";
  std::filesystem::path manifest = "runs/distilled/manifest.jsonl";
  std::filesystem::path checkpoints = "runs/checkpoints";
  std::filesystem::path outputs = "runs/outputs";
};

/// Everything one experiment needs. Immutable once loaded.
struct ExperimentConfig {
  DomainPrompts prompts;
  int image_size = 256;
  int train_steps = 400;  // 40000 in the reference run
  int batch_size = 2;
  int grad_accum_steps = 1;
  double lr = 1e-5;
  double weight_decay = 1e-2;
  std::array<double, 2> adam_betas = {0.9, 0.999};
  double adam_eps = 1e-8;
  double grad_clip_norm = 1.0;
  int64_t seed = 42;
  LossWeights loss_weights;
  double separation_temperature = 0.1;
  TrainingMode training_mode = TrainingMode::kJoint;
  double two_stage_split = 0.5;
  LoraSettings lora;
  ModelSettings model;
  bool mixed_precision = false;
  int checkpoint_every = 100;
  int validation_samples = 4;
  EvalSettings eval;
  DistillSettings distill;
  PathSettings paths;
};

constexpr int kVaeDownsample = 8;

struct Violation {
  std::string field;
  std::string message;
};

/// Every violated invariant, empty when valid.
std::vector<Violation> validate_config(const ExperimentConfig& cfg);

struct LoadedConfig {
  ExperimentConfig config;
  std::vector<std::string> warnings;  // unknown keys
};

/// Reads a JSON config; absent fields keep their defaults, unknown keys are
/// reported as warnings. Throws IoError / ConfigError (parse error or any
/// invariant violation).
LoadedConfig load_config(const std::filesystem::path& path);
LoadedConfig parse_config(const std::string& text);

std::string config_to_json(const ExperimentConfig& cfg);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

/// Hash of the fields that determine model structure (architecture, LoRA
/// shape, image size, perceptual seed). Checkpoints must match it.
uint64_t structure_hash(const ExperimentConfig& cfg);

}  // namespace styleloop
