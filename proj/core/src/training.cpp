// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "styleloop/training.hpp"

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include "styleloop/checkpoint.hpp"
#include "styleloop/error.hpp"
#include "styleloop/fsutil.hpp"
#include "styleloop/rng.hpp"

namespace styleloop {

namespace fs = std::filesystem;

Model init_model(const ExperimentConfig& cfg, TrainingMode mode) {
  const auto seed = static_cast<uint64_t>(cfg.seed);
  Model m;
  m.text = init_text_encoder(TextEncoderShape::from(cfg.model), cfg.lora, derive_seed(seed, "text"));
  m.generator = init_generator(GeneratorShape::from(cfg), cfg.lora, derive_seed(seed, "generator"),
                               mode != TrainingMode::kNoLora);
  if (mode == TrainingMode::kNoLora) {
    m.text.source_adapters.adapters.clear();
    m.text.target_adapters.adapters.clear();
  }
  return m;
}

Model clone_model(const Model& m) {
  Model c;
  c.text.shape = m.text.shape;
  c.text.base = m.text.base.clone();
  c.text.source_adapters = m.text.source_adapters.clone();
  c.text.target_adapters = m.text.target_adapters.clone();
  c.generator.shape = m.generator.shape;
  c.generator.base = m.generator.base.clone();
  c.generator.adapters = m.generator.adapters.clone();
  c.generator.identity = m.generator.identity;
  return c;
}

namespace {

void append_adapters(std::vector<NamedTensor>& out, const lora::AdapterSet& set) {
  const std::string prefix = std::string(lora::to_string(set.domain)) + ".adapter/";
  for (const auto& [id, a] : set.adapters) {
    out.push_back({prefix + id + ".A", a.a});
    out.push_back({prefix + id + ".B", a.b});
  }
}

void set_all_requires_grad(const Model& m, bool on) {
  for (const auto& e : m.text.base.entries()) {
    ag::Tensor(e.tensor).set_requires_grad(on);
  }
  for (const auto& e : m.generator.base.entries()) {
    ag::Tensor(e.tensor).set_requires_grad(on);
  }
  for (const auto* set : {&m.text.source_adapters, &m.text.target_adapters, &m.generator.adapters}) {
    for (const auto& t : lora::trainable_parameters(*set)) {
      ag::Tensor(t).set_requires_grad(on);
    }
  }
}

std::span<const double> grad_or_empty(const ag::Tensor& t) {
  if (t.grad().size() != t.size()) {
    return {};
  }
  return t.grad();
}

bool finite(const LossBreakdown& l) {
  return std::isfinite(l.cycle_l1) && std::isfinite(l.perceptual) && std::isfinite(l.separation) &&
         std::isfinite(l.total);
}

}  // namespace

int two_stage_boundary(const ExperimentConfig& cfg) {
  return static_cast<int>(std::floor(cfg.train_steps * cfg.two_stage_split));
}

std::vector<NamedTensor> trainable_tensors(const Model& m, TrainingMode mode, int step,
                                           const ExperimentConfig& cfg) {
  std::vector<NamedTensor> out;
  switch (mode) {
    case TrainingMode::kJoint:
      append_adapters(out, m.generator.adapters);
      append_adapters(out, m.text.source_adapters);
      append_adapters(out, m.text.target_adapters);
      break;
    case TrainingMode::kTwoStage:
      if (step < two_stage_boundary(cfg)) {
        append_adapters(out, m.generator.adapters);
      } else {
        append_adapters(out, m.text.source_adapters);
        append_adapters(out, m.text.target_adapters);
      }
      break;
    case TrainingMode::kNoLora:
      for (const auto& e : m.generator.base.entries()) {
        out.push_back({"generator.base/" + e.name, e.tensor});
      }
      break;
  }
  return out;
}

double weighted_total(const LossWeights& w, double cycle_l1, double perceptual, double separation) {
  return w.l1 * cycle_l1 + w.perceptual * perceptual + w.separation * separation;
}

double cycle_loss(const ImageTensor& reconstructed, const ImageTensor& original) {
  if (!reconstructed.same_shape(original)) {
    throw ShapeError("cycle_loss: image shapes differ");
  }
  double s = 0.0;
  for (size_t i = 0; i < original.data.size(); ++i) {
    s += std::abs(reconstructed.data[i] - original.data[i]);
  }
  return s / static_cast<double>(original.data.size());
}

double perceptual_loss(const ImageTensor& a, const ImageTensor& b, const PerceptualNet& net) {
  return net.distance(a, b);
}

LossGraph forward_loss(const Model& m, std::span<const SamplePair> samples,
                       const ExperimentConfig& cfg, const PerceptualNet& net) {
  if (samples.empty()) {
    throw Error("empty batch");
  }
  const int max_tokens = m.text.shape.max_tokens;
  const auto source_family = cfg.prompts.source_family();
  const auto target_family = cfg.prompts.target_family();
  std::vector<ag::Tensor> pooled_s;
  std::vector<ag::Tensor> pooled_t;
  ag::Tensor c_s;
  ag::Tensor c_t;
  for (size_t i = 0; i < source_family.size(); ++i) {
    const auto tokens = tokenize(source_family[i], max_tokens);
    const ag::Tensor e = encode(m.text, tokens, &m.text.source_adapters);
    pooled_s.push_back(ag::masked_mean_rows(e, tokens.attention_mask));
    if (i == 0) {
      c_s = e;
    }
  }
  for (size_t i = 0; i < target_family.size(); ++i) {
    const auto tokens = tokenize(target_family[i], max_tokens);
    const ag::Tensor e = encode(m.text, tokens, &m.text.target_adapters);
    pooled_t.push_back(ag::masked_mean_rows(e, tokens.attention_mask));
    if (i == 0) {
      c_t = e;
    }
  }
  const ag::Tensor sep = separation_loss_pooled(pooled_s, pooled_t, cfg.separation_temperature);

  const int size = m.generator.shape.image_size;
  ag::Tensor l1_sum;
  ag::Tensor perc_sum;
  auto accumulate = [](ag::Tensor& acc, const ag::Tensor& v) {
    acc = acc.defined() ? ag::add(acc, v) : v;
  };
  for (const auto& s : samples) {
    if (s.source.height != size || s.source.width != size || !s.source.same_shape(s.pseudo)) {
      throw ShapeError("training images must be " + std::to_string(size) + "x" +
                       std::to_string(size));
    }
    const ag::Tensor x_s = image_to_rows(s.source);
    const ag::Tensor x_p = image_to_rows(s.pseudo);
    const ag::Tensor y_t = translate_rows(m.generator, x_s, c_t);
    const ag::Tensor x_s_hat = translate_rows(m.generator, y_t, c_s);
    const ag::Tensor y_s = translate_rows(m.generator, x_p, c_s);
    const ag::Tensor x_p_hat = translate_rows(m.generator, y_s, c_t);
    accumulate(l1_sum, ag::mean_abs_diff(x_s_hat, x_s));
    accumulate(l1_sum, ag::mean_abs_diff(x_p_hat, x_p));
    accumulate(perc_sum, net.distance(x_s_hat, x_s, size, size));
    accumulate(perc_sum, net.distance(x_p_hat, x_p, size, size));
  }
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  const ag::Tensor l1 = ag::scale(l1_sum, inv_n);
  const ag::Tensor perc = ag::scale(perc_sum, inv_n);
  const auto& w = cfg.loss_weights;
  const ag::Tensor total =
      ag::add(ag::add(ag::scale(l1, w.l1), ag::scale(perc, w.perceptual)), ag::scale(sep, w.separation));

  LossGraph g;
  g.total = total;
  g.terms.cycle_l1 = l1.item();
  g.terms.perceptual = perc.item();
  g.terms.separation = sep.item();
  g.terms.total = weighted_total(w, g.terms.cycle_l1, g.terms.perceptual, g.terms.separation);
  return g;
}

AdamWOptions AdamWOptions::from(const ExperimentConfig& cfg) {
  return {cfg.lr, cfg.weight_decay, cfg.adam_betas[0], cfg.adam_betas[1], cfg.adam_eps};
}

void adamw_update(std::span<double> param, std::span<const double> grad, AdamMoments& s,
                  const AdamWOptions& opt) {
  if (s.m.size() != param.size()) {
    s.m.assign(param.size(), 0.0);
    s.v.assign(param.size(), 0.0);
    s.t = 0;
  }
  ++s.t;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(s.t));
  const double decay = 1.0 - opt.lr * opt.weight_decay;
  for (size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    param[i] *= decay;
    s.m[i] = opt.beta1 * s.m[i] + (1.0 - opt.beta1) * g;
    s.v[i] = opt.beta2 * s.v[i] + (1.0 - opt.beta2) * g * g;
    const double m_hat = s.m[i] / bc1;
    const double v_hat = s.v[i] / bc2;
    param[i] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
  }
}

double global_grad_norm(const std::vector<NamedTensor>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : grad_or_empty(p.tensor)) {
      sq += g * g;
    }
  }
  return std::sqrt(sq);
}

double clip_grad_norm(const std::vector<NamedTensor>& params, double clip) {
  const double norm = global_grad_norm(params);
  if (norm > clip) {
    const double scale = clip / norm;
    for (const auto& p : params) {
      ag::Tensor t = p.tensor;
      if (grad_or_empty(t).empty()) {
        continue;
      }
      for (double& g : t.mutable_grad()) {
        g *= scale;
      }
    }
  }
  return norm;
}

std::vector<SamplePair> load_samples(const std::vector<PseudoPair>& pairs,
                                     const fs::path& manifest_path, int image_size) {
  std::vector<SamplePair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back({load_image(resolve_pair_path(manifest_path, p.source_path), image_size),
                   load_image(resolve_pair_path(manifest_path, p.pseudo_path), image_size)});
  }
  return out;
}

DataSource::DataSource(const DatasetManifest& manifest, fs::path manifest_path,
                       const ExperimentConfig& cfg)
    : manifest_(manifest),
      manifest_path_(std::move(manifest_path)),
      batch_size_(cfg.batch_size),
      seed_(cfg.seed),
      image_size_(cfg.image_size) {
  if (manifest_.domain_tag != DomainTag::kPaired || manifest_.pairs.empty()) {
    throw ManifestError("training needs a non-empty paired manifest");
  }
}

std::vector<SamplePair> DataSource::next(TrainState& state) {
  auto batches = epoch_batches(manifest_.pairs.size(), batch_size_, seed_, state.epoch);
  if (state.cursor >= batches.size()) {
    ++state.epoch;
    state.cursor = 0;
    batches = epoch_batches(manifest_.pairs.size(), batch_size_, seed_, state.epoch);
  }
  std::vector<PseudoPair> pairs;
  for (size_t i : batches[state.cursor]) {
    pairs.push_back(manifest_.pairs[i]);
  }
  ++state.cursor;
  return load_samples(pairs, manifest_path_, image_size_);
}

LossRow training_step(Model& m, TrainState& state, DataSource& data, const ExperimentConfig& cfg,
                      const PerceptualNet& net) {
  ag::MixedPrecisionScope precision(cfg.mixed_precision);
  const auto params = trainable_tensors(m, state.mode, state.step, cfg);
  set_all_requires_grad(m, false);
  for (const auto& p : params) {
    ag::Tensor t = p.tensor;
    t.set_requires_grad(true);
    t.zero_grad();
  }

  const int k = cfg.grad_accum_steps;
  LossBreakdown sum;
  try {
    for (state.accumulation = 0; state.accumulation < k; ++state.accumulation) {
      const auto samples = data.next(state);
      const LossGraph g = forward_loss(m, samples, cfg, net);
      if (!finite(g.terms)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << state.step << " (micro-batch " << state.accumulation
            << "): cycle_l1=" << g.terms.cycle_l1 << " perceptual=" << g.terms.perceptual
            << " separation=" << g.terms.separation;
        throw NonFiniteLoss(msg.str());
      }
      g.total.backward(1.0 / k);
      sum.cycle_l1 += g.terms.cycle_l1;
      sum.perceptual += g.terms.perceptual;
      sum.separation += g.terms.separation;
    }
  } catch (...) {
    set_all_requires_grad(m, false);
    throw;
  }
  state.accumulation = 0;

  LossRow row;
  row.loss.cycle_l1 = sum.cycle_l1 / k;
  row.loss.perceptual = sum.perceptual / k;
  row.loss.separation = sum.separation / k;
  row.loss.total =
      weighted_total(cfg.loss_weights, row.loss.cycle_l1, row.loss.perceptual, row.loss.separation);
  row.grad_norm = clip_grad_norm(params, cfg.grad_clip_norm);
  if (!std::isfinite(row.grad_norm)) {
    set_all_requires_grad(m, false);
    throw NonFiniteLoss("non-finite gradient norm at step " + std::to_string(state.step));
  }
  const auto opt = AdamWOptions::from(cfg);
  for (const auto& p : params) {
    ag::Tensor t = p.tensor;
    adamw_update(t.mutable_data(), grad_or_empty(t), state.moments[p.name], opt);
    t.zero_grad();
  }
  set_all_requires_grad(m, false);
  ++state.step;
  row.step = state.step;
  return row;
}

double validation_cycle_l1(const Model& m, const DataSource& data, const ExperimentConfig& cfg) {
  ag::NoGradGuard guard;
  const auto& pairs = data.manifest().pairs;
  const size_t n = std::min(pairs.size(), static_cast<size_t>(cfg.validation_samples));
  const std::vector<PseudoPair> head(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(n));
  const auto samples = load_samples(head, data.manifest_path(), cfg.image_size);
  const auto c_s = encode_domain(tokenize(cfg.prompts.source_prompt, m.text.shape.max_tokens),
                                 EmbeddingDomain::kSource, m.text);
  const auto c_t = encode_domain(tokenize(cfg.prompts.target_prompt, m.text.shape.max_tokens),
                                 EmbeddingDomain::kTarget, m.text);
  double s = 0.0;
  for (const auto& sample : samples) {
    const ImageTensor rec = translate(translate(sample.source, c_t, m.generator), c_s, m.generator);
    s += cycle_loss(rec, sample.source);
  }
  return s / static_cast<double>(n);
}

namespace {

std::string step_dir_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step-%06d", step);
  return buf;
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg, const DatasetManifest& manifest,
                  const fs::path& manifest_path, const TrainOptions& options) {
  auto log = [&options](const std::string& line) {
    if (options.log) {
      options.log(line);
    }
  };
  DataSource data(manifest, manifest_path, cfg);
  const PerceptualNet net(cfg.model.perceptual_seed);

  Model model;
  TrainState state;
  std::vector<LossRow> history;
  if (!options.resume_from.empty()) {
    Checkpoint ck = load_checkpoint(options.resume_from, &cfg);
    if (ck.state.mode != cfg.training_mode) {
      throw CheckpointMismatch(std::string("checkpoint was trained in mode ") +
                               to_string(ck.state.mode) + ", config requests " +
                               to_string(cfg.training_mode));
    }
    model = std::move(ck.model);
    state = std::move(ck.state);
    history = std::move(ck.history);
    log("resumed from " + options.resume_from.string() + " at step " + std::to_string(state.step));
  } else {
    model = init_model(cfg, cfg.training_mode);
    state.mode = cfg.training_mode;
  }

  fs::create_directories(options.checkpoint_root);
  TrainResult result;
  auto checkpoint = [&](bool final) {
    state.validation_cycle_l1 = validation_cycle_l1(model, data, cfg);
    const fs::path dir = options.checkpoint_root / step_dir_name(state.step);
    save_checkpoint(dir, cfg, model, state, history);
    write_file_atomic(options.checkpoint_root / "loss_history.csv", loss_history_csv(history));
    write_file_atomic(options.checkpoint_root / "LATEST", dir.filename().string() + "\n");
    log("checkpoint " + dir.string() + " (validation cycle L1 " +
        std::to_string(state.validation_cycle_l1) + ")");
    if (final) {
      result.final_checkpoint = dir;
    }
  };

  const int start = state.step;
  while (state.step < cfg.train_steps) {
    const LossRow row = training_step(model, state, data, cfg, net);
    history.push_back(row);
    if (options.on_step) {
      options.on_step(row);
    }
    if (state.step % cfg.checkpoint_every == 0 && state.step < cfg.train_steps) {
      checkpoint(false);
    }
  }
  checkpoint(true);
  result.history = history;
  result.validation_cycle_l1 = state.validation_cycle_l1;
  result.steps_run = state.step - start;
  return result;
}

std::string loss_history_csv(const std::vector<LossRow>& rows) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "step,cycle_l1,perceptual,separation,total,grad_norm\n";
  for (const auto& r : rows) {
    out << r.step << "," << r.loss.cycle_l1 << "," << r.loss.perceptual << "," << r.loss.separation
        << "," << r.loss.total << "," << r.grad_norm << "\n";
  }
  return out.str();
}

std::vector<LossRow> parse_loss_history_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<LossRow> rows;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) {
      continue;
    }
    LossRow r;
    char c1, c2, c3, c4, c5;
    std::istringstream fields(line);
    fields >> r.step >> c1 >> r.loss.cycle_l1 >> c2 >> r.loss.perceptual >> c3 >> r.loss.separation >>
        c4 >> r.loss.total >> c5 >> r.grad_norm;
    if (!fields || c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',' || c5 != ',') {
      throw CheckpointError("malformed loss history line: " + line);
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace styleloop
