// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "styleloop/config.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "styleloop/error.hpp"
#include "styleloop/rng.hpp"

namespace styleloop {

using nlohmann::json;

const char* to_string(TrainingMode m) {
  switch (m) {
    case TrainingMode::kJoint:
      return "joint";
    case TrainingMode::kTwoStage:
      return "two_stage";
    case TrainingMode::kNoLora:
      return "no_lora";
  }
  return "joint";
}

std::optional<TrainingMode> parse_training_mode(const std::string& s) {
  if (s == "joint") {
    return TrainingMode::kJoint;
  }
  if (s == "two_stage") {
    return TrainingMode::kTwoStage;
  }
  if (s == "no_lora") {
    return TrainingMode::kNoLora;
  }
  return std::nullopt;
}

std::vector<std::string> DomainPrompts::source_family() const {
  std::vector<std::string> out{source_prompt};
  out.insert(out.end(), source_paraphrases.begin(), source_paraphrases.end());
  return out;
}

std::vector<std::string> DomainPrompts::target_family() const {
  std::vector<std::string> out{target_prompt};
  out.insert(out.end(), target_paraphrases.begin(), target_paraphrases.end());
  return out;
}

namespace {

json to_json(const ExperimentConfig& c) {
  return json{
      {"prompts",
       {{"source", c.prompts.source_prompt},
        {"target", c.prompts.target_prompt},
        {"source_paraphrases", c.prompts.source_paraphrases},
        {"target_paraphrases", c.prompts.target_paraphrases}}},
      {"image_size", c.image_size},
      {"train_steps", c.train_steps},
      {"batch_size", c.batch_size},
      {"grad_accum_steps", c.grad_accum_steps},
      {"lr", c.lr},
      {"weight_decay", c.weight_decay},
      {"adam_betas", c.adam_betas},
      {"adam_eps", c.adam_eps},
      {"grad_clip_norm", c.grad_clip_norm},
      {"seed", c.seed},
      {"loss_weights",
       {{"l1", c.loss_weights.l1},
        {"perceptual", c.loss_weights.perceptual},
        {"separation", c.loss_weights.separation}}},
      {"separation_temperature", c.separation_temperature},
      {"training_mode", to_string(c.training_mode)},
      {"two_stage_split", c.two_stage_split},
      {"lora", {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}}},
      {"model",
       {{"max_tokens", c.model.max_tokens},
        {"d_model", c.model.d_model},
        {"text_layers", c.model.text_layers},
        {"text_heads", c.model.text_heads},
        {"vae_channels", c.model.vae_channels},
        {"latent_channels", c.model.latent_channels},
        {"unet_channels", c.model.unet_channels},
        {"unet_heads", c.model.unet_heads},
        {"vae_skip_connections", c.model.vae_skip_connections},
        {"perceptual_seed", c.model.perceptual_seed}}},
      {"mixed_precision", c.mixed_precision},
      {"checkpoint_every", c.checkpoint_every},
      {"validation_samples", c.validation_samples},
      {"eval",
       {{"max_samples", c.eval.max_samples},
        {"feature_seed", c.eval.feature_seed},
        {"aesthetic_seed", c.eval.aesthetic_seed}}},
      {"distill",
       {{"generator_id", c.distill.generator_id},
        {"max_in_flight", c.distill.max_in_flight},
        {"max_attempts", c.distill.max_attempts},
        {"backoff_ms", c.distill.backoff_ms},
        {"timeout_ms", c.distill.timeout_ms}}},
      {"paths",
       {{"source_dir", c.paths.source_dir.string()},
        {"style_dir", c.paths.style_dir.string()},
        {"manifest", c.paths.manifest.string()},
        {"checkpoints", c.paths.checkpoints.string()},
        {"outputs", c.paths.outputs.string()}}},
  };
}

ExperimentConfig from_json(const json& j) {
  ExperimentConfig c;
  const auto& p = j.at("prompts");
  c.prompts.source_prompt = p.at("source").get<std::string>();
  c.prompts.target_prompt = p.at("target").get<std::string>();
  c.prompts.source_paraphrases = p.at("source_paraphrases").get<std::vector<std::string>>();
  c.prompts.target_paraphrases = p.at("target_paraphrases").get<std::vector<std::string>>();
  c.image_size = j.at("image_size").get<int>();
  c.train_steps = j.at("train_steps").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.grad_accum_steps = j.at("grad_accum_steps").get<int>();
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.adam_betas = j.at("adam_betas").get<std::array<double, 2>>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.grad_clip_norm = j.at("grad_clip_norm").get<double>();
  c.seed = j.at("seed").get<int64_t>();
  const auto& w = j.at("loss_weights");
  c.loss_weights.l1 = w.at("l1").get<double>();
  c.loss_weights.perceptual = w.at("perceptual").get<double>();
  c.loss_weights.separation = w.at("separation").get<double>();
  c.separation_temperature = j.at("separation_temperature").get<double>();
  const auto mode_name = j.at("training_mode").get<std::string>();
  auto mode = parse_training_mode(mode_name);
  if (!mode) {
    throw ConfigError("training_mode: unknown mode '" + mode_name + "'");
  }
  c.training_mode = *mode;
  c.two_stage_split = j.at("two_stage_split").get<double>();
  c.lora.rank = j.at("lora").at("rank").get<int>();
  c.lora.alpha = j.at("lora").at("alpha").get<double>();
  const auto& m = j.at("model");
  c.model.max_tokens = m.at("max_tokens").get<int>();
  c.model.d_model = m.at("d_model").get<int>();
  c.model.text_layers = m.at("text_layers").get<int>();
  c.model.text_heads = m.at("text_heads").get<int>();
  c.model.vae_channels = m.at("vae_channels").get<std::array<int, 3>>();
  c.model.latent_channels = m.at("latent_channels").get<int>();
  c.model.unet_channels = m.at("unet_channels").get<int>();
  c.model.unet_heads = m.at("unet_heads").get<int>();
  c.model.vae_skip_connections = m.at("vae_skip_connections").get<bool>();
  c.model.perceptual_seed = m.at("perceptual_seed").get<uint64_t>();
  c.mixed_precision = j.at("mixed_precision").get<bool>();
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
  c.validation_samples = j.at("validation_samples").get<int>();
  const auto& e = j.at("eval");
  c.eval.max_samples = e.at("max_samples").get<int>();
  c.eval.feature_seed = e.at("feature_seed").get<uint64_t>();
  c.eval.aesthetic_seed = e.at("aesthetic_seed").get<uint64_t>();
  const auto& d = j.at("distill");
  c.distill.generator_id = d.at("generator_id").get<std::string>();
  c.distill.max_in_flight = d.at("max_in_flight").get<int>();
  c.distill.max_attempts = d.at("max_attempts").get<int>();
  c.distill.backoff_ms = d.at("backoff_ms").get<int>();
  c.distill.timeout_ms = d.at("timeout_ms").get<int>();
  const auto& ps = j.at("paths");
  c.paths.source_dir = ps.at("source_dir").get<std::string>();
  c.paths.style_dir = ps.at("style_dir").get<std::string>();
  c.paths.manifest = ps.at("manifest").get<std::string>();
  c.paths.checkpoints = ps.at("checkpoints").get<std::string>();
  c.paths.outputs = ps.at("outputs").get<std::string>();
  return c;
}

void collect_unknown(const json& given, const json& known, const std::string& prefix,
                     std::vector<std::string>& out) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    auto k = known.find(it.key());
    if (k == known.end()) {
      out.push_back("unknown key '" + key + "' ignored");
    } else if (it->is_object() && k->is_object()) {
      collect_unknown(*it, *k, key, out);
    }
  }
}

size_t token_length(const std::string& prompt) { return prompt.size() + 2; }  // BOS + bytes + EOS

}  // namespace

std::vector<Violation> validate_config(const ExperimentConfig& c) {
  std::vector<Violation> v;
  auto need = [&v](bool ok, const char* field, const std::string& msg) {
    if (!ok) {
      v.push_back({field, msg});
    }
  };
  need(c.image_size >= 1, "image_size", "must be >= 1");
  need(c.image_size % kVaeDownsample == 0, "image_size",
       "must be divisible by the VAE downsample factor 8");
  need(c.train_steps >= 1, "train_steps", "must be >= 1");
  need(c.batch_size >= 1, "batch_size", "must be >= 1");
  need(c.grad_accum_steps >= 1, "grad_accum_steps", "must be >= 1");
  need(c.lr > 0.0, "lr", "must be > 0");
  need(c.weight_decay >= 0.0, "weight_decay", "must be >= 0");
  need(c.adam_betas[0] >= 0.0 && c.adam_betas[0] < 1.0 && c.adam_betas[1] >= 0.0 &&
           c.adam_betas[1] < 1.0,
       "adam_betas", "both betas must lie in [0, 1)");
  need(c.adam_eps > 0.0, "adam_eps", "must be > 0");
  need(c.grad_clip_norm > 0.0, "grad_clip_norm", "must be > 0");
  need(c.loss_weights.l1 >= 0.0, "loss_weights.l1", "must be >= 0");
  need(c.loss_weights.perceptual >= 0.0, "loss_weights.perceptual", "must be >= 0");
  need(c.loss_weights.separation >= 0.0, "loss_weights.separation", "must be >= 0");
  need(c.separation_temperature > 0.0, "separation_temperature", "must be > 0");
  need(c.two_stage_split > 0.0 && c.two_stage_split < 1.0, "two_stage_split", "must lie in (0, 1)");
  need(c.lora.rank >= 1, "lora.rank", "must be >= 1");
  need(c.lora.alpha > 0.0, "lora.alpha", "must be > 0");
  need(c.model.max_tokens >= 2, "model.max_tokens", "must be >= 2");
  need(c.model.d_model >= 1, "model.d_model", "must be >= 1");
  need(c.model.text_layers >= 1, "model.text_layers", "must be >= 1");
  need(c.model.text_heads >= 1 && c.model.d_model % std::max(c.model.text_heads, 1) == 0,
       "model.text_heads", "must divide d_model");
  need(c.model.vae_channels[0] >= 1 && c.model.vae_channels[1] >= 1 && c.model.vae_channels[2] >= 1,
       "model.vae_channels", "all widths must be >= 1");
  need(c.model.latent_channels >= 1, "model.latent_channels", "must be >= 1");
  need(c.model.unet_channels >= 1, "model.unet_channels", "must be >= 1");
  need(c.model.unet_heads >= 1 && c.model.unet_channels % std::max(c.model.unet_heads, 1) == 0,
       "model.unet_heads", "must divide unet_channels");
  need(c.checkpoint_every >= 1, "checkpoint_every", "must be >= 1");
  need(c.validation_samples >= 1, "validation_samples", "must be >= 1");
  need(c.eval.max_samples >= 2, "eval.max_samples", "must be >= 2");
  need(c.distill.max_in_flight >= 1, "distill.max_in_flight", "must be >= 1");
  need(c.distill.max_attempts >= 1, "distill.max_attempts", "must be >= 1");
  need(c.distill.backoff_ms >= 0, "distill.backoff_ms", "must be >= 0");
  need(c.distill.timeout_ms >= 1, "distill.timeout_ms", "must be >= 1");

  const auto max_tokens = static_cast<size_t>(std::max(c.model.max_tokens, 0));
  need(!c.prompts.source_prompt.empty(), "prompts.source", "must be non-empty");
  need(!c.prompts.target_prompt.empty(), "prompts.target", "must be non-empty");
  for (const auto& fam : {c.prompts.source_family(), c.prompts.target_family()}) {
    for (const auto& p : fam) {
      if (token_length(p) > max_tokens) {
        v.push_back({"prompts", "prompt '" + p.substr(0, 32) + "...' exceeds model.max_tokens"});
      }
      if (p.empty()) {
        v.push_back({"prompts", "paraphrases must be non-empty"});
      }
    }
  }
  return v;
}

LoadedConfig parse_config(const std::string& text) {
  LoadedConfig out;
  json defaults = to_json(ExperimentConfig{});
  json given = json::object();
  const bool blank = text.find_first_not_of(" \t\r\n") == std::string::npos;
  if (!blank) {
    try {
      given = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config parse error: ") + e.what());
    }
    if (!given.is_object()) {
      throw ConfigError("config parse error: top level must be a JSON object");
    }
  }
  collect_unknown(given, defaults, "", out.warnings);
  json merged = defaults;
  merged.merge_patch(given);
  try {
    out.config = from_json(merged);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config type error: ") + e.what());
  }
  auto violations = validate_config(out.config);
  if (!violations.empty()) {
    std::ostringstream msg;
    msg << "invalid config:";
    for (const auto& v : violations) {
      msg << " " << v.field << " " << v.message << ";";
    }
    throw ConfigError(msg.str());
  }
  return out;
}

LoadedConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open config '" + path.string() + "'");
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string config_to_json(const ExperimentConfig& cfg) { return to_json(cfg).dump(2); }

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write config '" + path.string() + "'");
  }
  out << config_to_json(cfg) << "\n";
}

uint64_t structure_hash(const ExperimentConfig& c) {
  const json j = {{"image_size", c.image_size},
                  {"lora", {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}}},
                  {"model", to_json(c).at("model")}};
  return Fnv1a{}.str(j.dump()).digest();
}

}  // namespace styleloop
