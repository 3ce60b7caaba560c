// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "styleloop/config.hpp"
#include "styleloop/training.hpp"

namespace styleloop {

struct Checkpoint {
  ExperimentConfig config;  // snapshot taken at save time
  Model model;
  TrainState state;
  std::vector<LossRow> history;
  uint64_t structure_hash = 0;
};

/// Writes the checkpoint directory (index.json, config.json, state.json,
/// weight blobs, adapters.json, optimizer blobs, loss_history.csv) into a
/// temporary sibling and renames it over `dir`.
void save_checkpoint(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                     const Model& model, const TrainState& state,
                     const std::vector<LossRow>& history);

/// Loads and verifies blob hashes. When `expected` is given its structure
/// hash must equal the stored one, otherwise CheckpointMismatch names both.
/// Throws CheckpointError on missing or corrupt files.
Checkpoint load_checkpoint(const std::filesystem::path& dir,
                           const ExperimentConfig* expected = nullptr);

/// Resolves a checkpoint root (containing LATEST) or a checkpoint directory.
std::filesystem::path resolve_checkpoint_dir(const std::filesystem::path& path);

// Named tensor blob: "SLBLOB01", u64 count, then per tensor u32 name length,
// name bytes, i32 rows, i32 cols, rows*cols little-endian doubles.
void write_blob(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_blob(const std::filesystem::path& path);

}  // namespace styleloop
