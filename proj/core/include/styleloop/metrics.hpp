// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "styleloop/config.hpp"
#include "styleloop/image.hpp"
#include "styleloop/perceptual.hpp"

namespace styleloop {

/// One row per image.
using FeatureMatrix = Eigen::MatrixXd;
using FeatureExtractor = std::function<std::vector<double>(const ImageTensor&)>;
using AestheticScorer = std::function<double(const ImageTensor&)>;

FeatureMatrix extract_features(const std::vector<ImageTensor>& images,
                               const FeatureExtractor& extractor);

struct GaussianMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased
};
GaussianMoments moments(const FeatureMatrix& f);

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 sqrt(S1^1/2 S2 S1^1/2)), eigenvalues of
/// both square roots clamped at zero, result clamped at zero.
double fid_from_moments(const GaussianMoments& a, const GaussianMoments& b);
/// Throws ShapeError on column mismatch or fewer than two rows.
double fid(const FeatureMatrix& a, const FeatureMatrix& b);

struct SsimOptions {
  double data_range = 2.0;
  int window = 11;
  double sigma = 1.5;
};
/// Gaussian-window SSIM over valid windows, averaged over windows and
/// channels. Throws ShapeError on shape mismatch or images smaller than the
/// window.
double ssim(const ImageTensor& a, const ImageTensor& b, const SsimOptions& opt = {});

double lpips(const ImageTensor& a, const ImageTensor& b, const PerceptualNet& net);

/// w . features(img) + bias.
struct LinearAestheticHead {
  FeatureExtractor features;
  std::vector<double> weights;
  double bias = 0.0;

  double operator()(const ImageTensor& img) const;
};
/// Seeded head over the toy extractor.
LinearAestheticHead default_aesthetic_head(const EvalSettings& eval);

double aesthetic_score(const ImageTensor& img, const AestheticScorer& scorer);

struct MetricsReport {
  double fid = 0.0;
  double ssim_mean = 0.0;
  double lpips_mean = 0.0;
  double clip_ae_mean = 0.0;
  size_t n_generated = 0;
  size_t n_reference = 0;
  size_t n_source = 0;
};

struct EvaluationTools {
  FeatureExtractor extractor;
  AestheticScorer aesthetic;
  const PerceptualNet* perceptual = nullptr;
};

/// FID(generated, reference); SSIM and LPIPS over generated/source pairs
/// matched by file stem; aesthetic mean over generated. Directories are
/// subsampled to eval.max_samples with eval.feature_seed. Throws Error when a
/// directory is empty or stems do not pair up (all offenders listed).
MetricsReport evaluate(const std::filesystem::path& generated_dir,
                       const std::filesystem::path& reference_dir,
                       const std::filesystem::path& source_dir, const ExperimentConfig& cfg);
MetricsReport evaluate(const std::filesystem::path& generated_dir,
                       const std::filesystem::path& reference_dir,
                       const std::filesystem::path& source_dir, const ExperimentConfig& cfg,
                       const EvaluationTools& tools);

/// Header: FID,SSIM,LPIPS,CLIP-ae,n_generated,n_reference,n_source
void write_report_csv(const MetricsReport& r, const std::filesystem::path& path);
/// Same fields; "CLIP-ac" is emitted as an alias of "CLIP-ae".
void write_report_json(const MetricsReport& r, const std::filesystem::path& path);
std::string report_json(const MetricsReport& r);

}  // namespace styleloop
