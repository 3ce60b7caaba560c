// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "styleloop/autograd.hpp"
#include "styleloop/config.hpp"
#include "styleloop/dataset.hpp"
#include "styleloop/generator.hpp"
#include "styleloop/image.hpp"
#include "styleloop/perceptual.hpp"
#include "styleloop/text_encoder.hpp"

namespace styleloop {

struct Model {
  TextEncoderWeights text;
  GeneratorWeights generator;
};

/// Base weights seeded from cfg.seed. Adapters are attached for joint and
/// two_stage; no_lora models carry none, so both domain encoders reduce to
/// the base encoder.
Model init_model(const ExperimentConfig& cfg, TrainingMode mode);
Model clone_model(const Model& m);

struct NamedTensor {
  std::string name;
  ag::Tensor tensor;
};

/// Parameters updated at `step` (0-based) for `mode`:
///   joint      generator + source + target adapters
///   two_stage  generator adapters before the split, encoder adapters after
///   no_lora    every generator base weight
std::vector<NamedTensor> trainable_tensors(const Model& m, TrainingMode mode, int step,
                                           const ExperimentConfig& cfg);
int two_stage_boundary(const ExperimentConfig& cfg);

struct LossBreakdown {
  double cycle_l1 = 0.0;
  double perceptual = 0.0;
  double separation = 0.0;
  double total = 0.0;
};

/// w_l1 * cycle_l1 + w_perceptual * perceptual + w_separation * separation.
double weighted_total(const LossWeights& w, double cycle_l1, double perceptual, double separation);

/// Mean absolute error. Throws ShapeError on shape mismatch.
double cycle_loss(const ImageTensor& reconstructed, const ImageTensor& original);
double perceptual_loss(const ImageTensor& a, const ImageTensor& b, const PerceptualNet& net);

struct SamplePair {
  ImageTensor source;
  ImageTensor pseudo;
};

struct LossGraph {
  ag::Tensor total;
  LossBreakdown terms;
};

/// Both cycle loops for every sample plus the separation term:
///   (i)  x_s -> G(x_s, c_t) -> G(., c_s) vs x_s
///   (ii) x_p -> G(x_p, c_s) -> G(., c_t) vs x_p
/// cycle_l1 and perceptual are means over samples of the two loop terms
/// summed; separation is the contrastive term over both prompt families.
LossGraph forward_loss(const Model& m, std::span<const SamplePair> samples,
                       const ExperimentConfig& cfg, const PerceptualNet& net);

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
  int64_t t = 0;
};

struct AdamWOptions {
  double lr = 1e-5;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamWOptions from(const ExperimentConfig& cfg);
};

/// Decoupled weight decay (p *= 1 - lr*wd) then the bias-corrected Adam step.
void adamw_update(std::span<double> param, std::span<const double> grad, AdamMoments& state,
                  const AdamWOptions& opt);

double global_grad_norm(const std::vector<NamedTensor>& params);
/// Scales every gradient by clip / norm when norm > clip. Returns the norm
/// measured before clipping.
double clip_grad_norm(const std::vector<NamedTensor>& params, double clip);

struct TrainState {
  int step = 0;
  int64_t epoch = 0;
  size_t cursor = 0;  // batch index within the epoch
  int accumulation = 0;
  TrainingMode mode = TrainingMode::kJoint;
  std::map<std::string, AdamMoments> moments;
  double validation_cycle_l1 = std::numeric_limits<double>::quiet_NaN();
};

struct LossRow {
  int step = 0;
  LossBreakdown loss;
  double grad_norm = 0.0;
};

/// Pair images are read through resolve_pair_path at cfg.image_size.
std::vector<SamplePair> load_samples(const std::vector<PseudoPair>& pairs,
                                     const std::filesystem::path& manifest_path, int image_size);

class DataSource {
 public:
  DataSource(const DatasetManifest& manifest, std::filesystem::path manifest_path,
             const ExperimentConfig& cfg);
  /// Next micro-batch; advances state.epoch / state.cursor.
  std::vector<SamplePair> next(TrainState& state);
  const DatasetManifest& manifest() const { return manifest_; }
  const std::filesystem::path& manifest_path() const { return manifest_path_; }

 private:
  DatasetManifest manifest_;
  std::filesystem::path manifest_path_;
  int batch_size_;
  int64_t seed_;
  int image_size_;
};

/// One optimiser step: grad_accum_steps micro-batches (gradients averaged),
/// global-norm clipping, AdamW. Throws NonFiniteLoss when any term is not
/// finite.
LossRow training_step(Model& m, TrainState& state, DataSource& data, const ExperimentConfig& cfg,
                      const PerceptualNet& net);

/// Mean loop-(i) cycle L1 over the first cfg.validation_samples pairs.
double validation_cycle_l1(const Model& m, const DataSource& data, const ExperimentConfig& cfg);

struct TrainOptions {
  std::filesystem::path checkpoint_root;
  std::filesystem::path resume_from;  // empty = fresh run
  std::function<void(const LossRow&)> on_step;
  std::function<void(const std::string&)> log;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::vector<LossRow> history;
  double validation_cycle_l1 = 0.0;
  int steps_run = 0;
};

/// Runs until cfg.train_steps, checkpointing every cfg.checkpoint_every steps
/// and at the end; loss_history.csv is kept next to the checkpoints.
TrainResult train(const ExperimentConfig& cfg, const DatasetManifest& manifest,
                  const std::filesystem::path& manifest_path, const TrainOptions& options);

std::string loss_history_csv(const std::vector<LossRow>& rows);
std::vector<LossRow> parse_loss_history_csv(const std::string& text);

}  // namespace styleloop
