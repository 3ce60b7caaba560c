// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdlib.h>

#include <filesystem>
#include <string>

#include "styleloop/config.hpp"
#include "styleloop/dataset.hpp"
#include "styleloop/distill.hpp"
#include "styleloop/image.hpp"
#include "styleloop/rng.hpp"

namespace styleloop::testing {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "styleloop-XXXXXX").string();
    if (mkdtemp(tmpl.data()) == nullptr) {
      throw std::runtime_error("mkdtemp failed");
    }
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

/// Small but complete model: every layer class present, 16x16 images.
inline ExperimentConfig tiny_config(int image_size = 16) {
  ExperimentConfig cfg;
  cfg.image_size = image_size;
  cfg.model.max_tokens = 48;
  cfg.model.d_model = 16;
  cfg.model.text_heads = 2;
  cfg.model.vae_channels = {4, 8, 8};
  cfg.model.unet_channels = 8;
  cfg.model.unet_heads = 2;
  cfg.lora.rank = 2;
  cfg.lora.alpha = 2.0;
  cfg.train_steps = 4;
  cfg.checkpoint_every = 2;
  cfg.lr = 1e-3;
  return cfg;
}

inline ImageTensor random_image(int h, int w, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  ImageTensor img(h, w);
  for (double& v : img.data) {
    v = lo + (hi - lo) * rng.uniform();
  }
  return img;
}

inline std::filesystem::path source_dir() { return STYLELOOP_SOURCE_DIR; }

/// Procedural fixtures plus stub pseudo-targets under `dir`; returns the manifest path.
inline std::filesystem::path make_paired_dataset(const std::filesystem::path& dir, int count, int size,
                                                 const ExperimentConfig& cfg) {
  write_fixtures(dir / "source", count, size, 7);
  return distill(make_distillation_job(cfg, dir / "source", dir / "distilled")).manifest_path;
}

}  // namespace styleloop::testing
