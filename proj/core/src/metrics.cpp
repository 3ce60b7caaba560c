// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "styleloop/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <sstream>

#include "styleloop/error.hpp"
#include "styleloop/fsutil.hpp"
#include "styleloop/rng.hpp"

namespace styleloop {

namespace fs = std::filesystem;

FeatureMatrix extract_features(const std::vector<ImageTensor>& images,
                               const FeatureExtractor& extractor) {
  if (images.empty()) {
    throw Error("extract_features: no images");
  }
  FeatureMatrix out;
  for (size_t i = 0; i < images.size(); ++i) {
    const auto f = extractor(images[i]);
    if (i == 0) {
      out.resize(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(f.size()));
    } else if (static_cast<Eigen::Index>(f.size()) != out.cols()) {
      throw ShapeError("extractor returned features of varying length");
    }
    for (size_t j = 0; j < f.size(); ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f[j];
    }
  }
  return out;
}

GaussianMoments moments(const FeatureMatrix& f) {
  if (f.rows() < 2) {
    throw ShapeError("covariance needs at least 2 rows, got " + std::to_string(f.rows()));
  }
  GaussianMoments m;
  m.mean = f.colwise().mean().transpose();
  const Eigen::MatrixXd centered = f.rowwise() - m.mean.transpose();
  m.cov = (centered.transpose() * centered) / static_cast<double>(f.rows() - 1);
  return m;
}

namespace {

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& s) {
  const Eigen::MatrixXd sym = 0.5 * (s + s.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

double trace_sqrt_psd(const Eigen::MatrixXd& s) {
  const Eigen::MatrixXd sym = 0.5 * (s + s.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

}  // namespace

double fid_from_moments(const GaussianMoments& a, const GaussianMoments& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows()) {
    throw ShapeError("fid: feature dimensions differ");
  }
  const Eigen::MatrixXd root_a = sqrt_psd(a.cov);
  const double cross = trace_sqrt_psd(root_a * b.cov * root_a);
  const double v = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
  return std::max(v, 0.0);
}

double fid(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("fid: feature dimensions differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.cols()) + ")");
  }
  return fid_from_moments(moments(a), moments(b));
}

double ssim(const ImageTensor& a, const ImageTensor& b, const SsimOptions& opt) {
  if (!a.same_shape(b)) {
    throw ShapeError("ssim: image shapes differ");
  }
  const int k = opt.window;
  if (a.height < k || a.width < k) {
    throw ShapeError("ssim: image smaller than the " + std::to_string(k) + "x" + std::to_string(k) +
                     " window");
  }
  std::vector<double> g(static_cast<size_t>(k));
  double gsum = 0.0;
  for (int i = 0; i < k; ++i) {
    const double d = i - (k - 1) / 2.0;
    g[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * opt.sigma * opt.sigma));
    gsum += g[static_cast<size_t>(i)];
  }
  for (auto& v : g) {
    v /= gsum;
  }
  const double c1 = (0.01 * opt.data_range) * (0.01 * opt.data_range);
  const double c2 = (0.03 * opt.data_range) * (0.03 * opt.data_range);
  const int h = a.height;
  const int w = a.width;
  const int oh = h - k + 1;
  const int ow = w - k + 1;

  // Separable filtering: rows first into [h x ow], then columns into [oh x ow].
  auto filter = [&](const std::vector<double>& src) {
    std::vector<double> tmp(static_cast<size_t>(h) * ow, 0.0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int i = 0; i < k; ++i) {
          s += g[static_cast<size_t>(i)] * src[static_cast<size_t>(y) * w + x + i];
        }
        tmp[static_cast<size_t>(y) * ow + x] = s;
      }
    }
    std::vector<double> out(static_cast<size_t>(oh) * ow, 0.0);
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int i = 0; i < k; ++i) {
          s += g[static_cast<size_t>(i)] * tmp[static_cast<size_t>(y + i) * ow + x];
        }
        out[static_cast<size_t>(y) * ow + x] = s;
      }
    }
    return out;
  };

  const size_t n = a.pixels();
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> x(a.data.begin() + static_cast<std::ptrdiff_t>(c * n),
                          a.data.begin() + static_cast<std::ptrdiff_t>((c + 1) * n));
    std::vector<double> y(b.data.begin() + static_cast<std::ptrdiff_t>(c * n),
                          b.data.begin() + static_cast<std::ptrdiff_t>((c + 1) * n));
    std::vector<double> xx(n);
    std::vector<double> yy(n);
    std::vector<double> xy(n);
    for (size_t i = 0; i < n; ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter(x);
    const auto my = filter(y);
    const auto sxx = filter(xx);
    const auto syy = filter(yy);
    const auto sxy = filter(xy);
    for (size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
  }
  return total / (3.0 * oh * ow);
}

double lpips(const ImageTensor& a, const ImageTensor& b, const PerceptualNet& net) {
  return net.distance(a, b);
}

double LinearAestheticHead::operator()(const ImageTensor& img) const {
  const auto f = features(img);
  if (f.size() != weights.size()) {
    throw ShapeError("aesthetic head expects " + std::to_string(weights.size()) + " features");
  }
  double s = bias;
  for (size_t i = 0; i < f.size(); ++i) {
    s += weights[i] * f[i];
  }
  return s;
}

LinearAestheticHead default_aesthetic_head(const EvalSettings& eval) {
  LinearAestheticHead head;
  head.features = ToyFeatureExtractor(eval.feature_seed);
  Rng rng(derive_seed(eval.aesthetic_seed, "aesthetic.head"));
  head.weights.resize(ToyFeatureExtractor::kDim);
  for (auto& v : head.weights) {
    v = rng.normal() / std::sqrt(static_cast<double>(ToyFeatureExtractor::kDim));
  }
  return head;
}

double aesthetic_score(const ImageTensor& img, const AestheticScorer& scorer) { return scorer(img); }

namespace {

std::map<std::string, fs::path> images_by_stem(const fs::path& dir, const char* what) {
  if (!fs::is_directory(dir)) {
    throw IoError(std::string(what) + " directory '" + dir.string() + "' does not exist");
  }
  std::map<std::string, fs::path> out;
  for (const auto& p : list_images(dir)) {
    const std::string stem = p.stem().string();
    if (!out.emplace(stem, p).second) {
      throw Error(std::string(what) + " directory has two images with stem '" + stem + "'");
    }
  }
  if (out.empty()) {
    throw Error(std::string(what) + " directory '" + dir.string() + "' has no images");
  }
  return out;
}

std::vector<std::string> subsample(std::vector<std::string> keys, size_t max, uint64_t seed,
                                   const char* label) {
  if (keys.size() <= max) {
    return keys;
  }
  Rng rng(derive_seed(seed, label));
  for (size_t i = keys.size(); i > 1; --i) {
    std::swap(keys[i - 1], keys[rng.below(i)]);
  }
  keys.resize(max);
  std::sort(keys.begin(), keys.end());
  return keys;
}

}  // namespace

MetricsReport evaluate(const fs::path& generated_dir, const fs::path& reference_dir,
                       const fs::path& source_dir, const ExperimentConfig& cfg) {
  const PerceptualNet net(cfg.model.perceptual_seed);
  EvaluationTools tools;
  tools.extractor = ToyFeatureExtractor(cfg.eval.feature_seed);
  tools.aesthetic = default_aesthetic_head(cfg.eval);
  tools.perceptual = &net;
  return evaluate(generated_dir, reference_dir, source_dir, cfg, tools);
}

MetricsReport evaluate(const fs::path& generated_dir, const fs::path& reference_dir,
                       const fs::path& source_dir, const ExperimentConfig& cfg,
                       const EvaluationTools& tools) {
  if (!tools.extractor || !tools.aesthetic || tools.perceptual == nullptr) {
    throw Error("evaluate: incomplete evaluation tools");
  }
  const auto gen = images_by_stem(generated_dir, "generated");
  const auto ref = images_by_stem(reference_dir, "reference");
  const auto src = images_by_stem(source_dir, "source");

  std::vector<std::string> unpaired;
  for (const auto& [stem, p] : gen) {
    if (src.count(stem) == 0) {
      unpaired.push_back(p.string());
    }
  }
  for (const auto& [stem, p] : src) {
    if (gen.count(stem) == 0) {
      unpaired.push_back(p.string());
    }
  }
  if (!unpaired.empty()) {
    std::string msg = "unpairable files:";
    for (const auto& u : unpaired) {
      msg += " " + u;
    }
    throw Error(msg);
  }

  const auto max = static_cast<size_t>(cfg.eval.max_samples);
  std::vector<std::string> pair_keys;
  for (const auto& kv : gen) {
    pair_keys.push_back(kv.first);
  }
  std::vector<std::string> ref_keys;
  for (const auto& kv : ref) {
    ref_keys.push_back(kv.first);
  }
  pair_keys = subsample(std::move(pair_keys), max, cfg.eval.feature_seed, "eval/pairs");
  ref_keys = subsample(std::move(ref_keys), max, cfg.eval.feature_seed, "eval/reference");

  const int size = cfg.image_size;
  std::vector<ImageTensor> generated;
  std::vector<ImageTensor> sources;
  std::vector<ImageTensor> references;
  for (const auto& k : pair_keys) {
    generated.push_back(load_image(gen.at(k), size));
    sources.push_back(load_image(src.at(k), size));
  }
  for (const auto& k : ref_keys) {
    references.push_back(load_image(ref.at(k), size));
  }

  MetricsReport r;
  r.n_generated = generated.size();
  r.n_source = sources.size();
  r.n_reference = references.size();
  r.fid = fid(extract_features(generated, tools.extractor),
              extract_features(references, tools.extractor));
  for (size_t i = 0; i < generated.size(); ++i) {
    r.ssim_mean += ssim(generated[i], sources[i]);
    r.lpips_mean += lpips(generated[i], sources[i], *tools.perceptual);
    r.clip_ae_mean += aesthetic_score(generated[i], tools.aesthetic);
  }
  const auto n = static_cast<double>(generated.size());
  r.ssim_mean /= n;
  r.lpips_mean /= n;
  r.clip_ae_mean /= n;
  return r;
}

void write_report_csv(const MetricsReport& r, const fs::path& path) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "FID,SSIM,LPIPS,CLIP-ae,n_generated,n_reference,n_source\n";
  out << r.fid << "," << r.ssim_mean << "," << r.lpips_mean << "," << r.clip_ae_mean << ","
      << r.n_generated << "," << r.n_reference << "," << r.n_source << "\n";
  write_file_atomic(path, out.str());
}

std::string report_json(const MetricsReport& r) {
  const nlohmann::json j = {{"FID", r.fid},
                            {"SSIM", r.ssim_mean},
                            {"LPIPS", r.lpips_mean},
                            {"CLIP-ae", r.clip_ae_mean},
                            {"CLIP-ac", r.clip_ae_mean},
                            {"n_generated", r.n_generated},
                            {"n_reference", r.n_reference},
                            {"n_source", r.n_source}};
  return j.dump(2);
}

void write_report_json(const MetricsReport& r, const fs::path& path) {
  write_file_atomic(path, report_json(r) + "\n");
}

}  // namespace styleloop
