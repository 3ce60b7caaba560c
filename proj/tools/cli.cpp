// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "styleloop/checkpoint.hpp"
#include "styleloop/config.hpp"
#include "styleloop/dataset.hpp"
#include "styleloop/distill.hpp"
#include "styleloop/error.hpp"
#include "styleloop/fsutil.hpp"
#include "styleloop/generator.hpp"
#include "styleloop/image.hpp"
#include "styleloop/metrics.hpp"
#include "styleloop/text_encoder.hpp"
#include "styleloop/training.hpp"

namespace styleloop::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Bad input detected after parsing; maps to the usage exit code.
struct UsageError : Error {
  using Error::Error;
};

struct Globals {
  std::string config;
  std::string workdir;
  std::optional<int64_t> seed;
};

struct Context {
  Globals globals;
  std::ostream& out;
  std::ostream& err;
  json summary = json::object();
  std::vector<std::string> artifacts;

  fs::path workdir() const { return globals.workdir.empty() ? fs::current_path() : fs::path(globals.workdir); }

  fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : workdir() / p; }

  bool has_config() const { return !globals.config.empty(); }

  ExperimentConfig config() {
    ExperimentConfig cfg;
    if (has_config()) {
      const fs::path path = resolve(globals.config);
      if (!fs::exists(path)) {
        throw UsageError("config file '" + path.string() + "' does not exist");
      }
      auto loaded = load_config(path);
      for (const auto& w : loaded.warnings) {
        err << "warning: " << w << "\n";
      }
      cfg = loaded.config;
    }
    apply_seed(cfg);
    return cfg;
  }

  void apply_seed(ExperimentConfig& cfg) const {
    if (globals.seed) {
      cfg.seed = *globals.seed;
    }
  }

  void artifact(const fs::path& p) { artifacts.push_back(p.string()); }
};

fs::path require_dir(const Context& ctx, const std::string& value, const char* flag) {
  const fs::path p = ctx.resolve(value);
  if (!fs::is_directory(p)) {
    throw UsageError(std::string(flag) + ": directory '" + p.string() + "' does not exist");
  }
  return p;
}

// ---- distill ----------------------------------------------------------------

struct DistillArgs {
  std::string source_dir;
  std::string out;
  std::string client = "stub";
  std::string endpoint;
};

void cmd_distill(Context& ctx, const DistillArgs& a) {
  const ExperimentConfig cfg = ctx.config();
  const fs::path source = require_dir(ctx, a.source_dir.empty() ? cfg.paths.source_dir.string() : a.source_dir,
                                      "--source-dir");
  const fs::path out = ctx.resolve(a.out.empty() ? cfg.paths.manifest.parent_path() : fs::path(a.out));
  DistillationJob job = make_distillation_job(cfg, source, out);
  if (a.client == "remote") {
    if (a.endpoint.empty()) {
      throw UsageError("--client remote needs --endpoint");
    }
    job.client.kind = ClientKind::kRemoteHttp;
    job.client.endpoint = a.endpoint;
    if (job.client.generator_id == "procedural-stub") {
      job.client.generator_id = "remote:" + a.endpoint;
    }
  }
  job.log = [&ctx](const std::string& line) { ctx.err << line << "\n"; };
  const DistillResult r = distill(job);
  ctx.out << r.manifest.pairs.size() << " pairs, " << r.skips.size() << " skips\n";
  ctx.artifact(r.manifest_path);
  ctx.artifact(r.skips_path);
  ctx.summary["pairs"] = r.manifest.pairs.size();
  ctx.summary["skips"] = r.skips.size();
  ctx.summary["manifest"] = r.manifest_path.string();
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string mode;
  std::string resume;
  std::string checkpoints;
};

void cmd_train(Context& ctx, const TrainArgs& a) {
  ExperimentConfig cfg = ctx.config();
  if (!a.mode.empty()) {
    cfg.training_mode = *parse_training_mode(a.mode);
  }
  const fs::path manifest_path = ctx.resolve(a.manifest.empty() ? cfg.paths.manifest : fs::path(a.manifest));
  if (!fs::exists(manifest_path)) {
    throw UsageError("--manifest: '" + manifest_path.string() + "' does not exist");
  }
  const DatasetManifest manifest = read_manifest(manifest_path);
  TrainOptions opt;
  opt.checkpoint_root = ctx.resolve(a.checkpoints.empty() ? cfg.paths.checkpoints : fs::path(a.checkpoints));
  if (!a.resume.empty()) {
    opt.resume_from = ctx.resolve(a.resume);
  }
  const int every = std::max(1, cfg.train_steps / 20);
  opt.on_step = [&ctx, every](const LossRow& r) {
    if (r.step % every == 0) {
      ctx.err << "step " << r.step << " total " << r.loss.total << " cycle_l1 " << r.loss.cycle_l1
              << " perceptual " << r.loss.perceptual << " separation " << r.loss.separation << "\n";
    }
  };
  opt.log = [&ctx](const std::string& line) { ctx.err << line << "\n"; };
  const TrainResult r = train(cfg, manifest, manifest_path, opt);
  ctx.out << "trained " << r.steps_run << " steps in " << to_string(cfg.training_mode) << " mode\n";
  ctx.artifact(r.final_checkpoint);
  ctx.artifact(opt.checkpoint_root / "loss_history.csv");
  ctx.summary["mode"] = to_string(cfg.training_mode);
  ctx.summary["step"] = r.history.empty() ? 0 : r.history.back().step;
  ctx.summary["steps_run"] = r.steps_run;
  ctx.summary["checkpoint"] = r.final_checkpoint.string();
  ctx.summary["validation_cycle_l1"] = r.validation_cycle_l1;
  if (!r.history.empty()) {
    ctx.summary["initial_total"] = r.history.front().loss.total;
    ctx.summary["final_total"] = r.history.back().loss.total;
  }
}

// ---- stylize / destylize ----------------------------------------------------

struct InferArgs {
  std::string checkpoint;
  std::string input;
  std::string out;
};

Checkpoint load_for_inference(Context& ctx, const fs::path& path) {
  if (ctx.has_config()) {
    const ExperimentConfig cfg = ctx.config();
    return load_checkpoint(path, &cfg);
  }
  return load_checkpoint(path);
}

void cmd_infer(Context& ctx, const InferArgs& a, EmbeddingDomain domain) {
  ExperimentConfig base_cfg;
  if (ctx.has_config()) {
    base_cfg = ctx.config();
  }
  const fs::path ck_path = ctx.resolve(a.checkpoint.empty() ? base_cfg.paths.checkpoints : fs::path(a.checkpoint));
  if (!fs::exists(ck_path)) {
    throw UsageError("--checkpoint: '" + ck_path.string() + "' does not exist");
  }
  const fs::path input = ctx.resolve(a.input);
  if (!fs::exists(input)) {
    throw UsageError("--input: '" + input.string() + "' does not exist");
  }
  const Checkpoint ck = load_for_inference(ctx, ck_path);
  const ExperimentConfig& cfg = ctx.has_config() ? base_cfg : ck.config;
  const std::string& prompt =
      domain == EmbeddingDomain::kTarget ? cfg.prompts.target_prompt : cfg.prompts.source_prompt;
  const auto c = encode_domain(tokenize(prompt, ck.model.text.shape.max_tokens), domain, ck.model.text);

  std::vector<fs::path> inputs;
  if (fs::is_directory(input)) {
    inputs = list_images(input);
    if (inputs.empty()) {
      throw UsageError("--input: directory '" + input.string() + "' has no images");
    }
  } else {
    inputs.push_back(input);
  }
  fs::path out = ctx.resolve(a.out);
  const bool single_file = !fs::is_directory(input) && out.extension() == ".png";
  if (!single_file) {
    fs::create_directories(out);
  } else if (out.has_parent_path()) {
    fs::create_directories(out.parent_path());
  }
  for (const auto& in : inputs) {
    const ImageTensor img = load_image(in, ck.config.image_size);
    const ImageTensor result = translate(img, c, ck.model.generator);
    const fs::path dst = single_file ? out : out / (in.stem().string() + ".png");
    save_image(result, dst);
    ctx.artifact(dst);
  }
  ctx.out << "wrote " << inputs.size() << " image" << (inputs.size() == 1 ? "" : "s") << "\n";
  ctx.summary["images"] = inputs.size();
  ctx.summary["checkpoint_step"] = ck.state.step;
  ctx.summary["prompt"] = prompt;
}

// ---- evaluate ---------------------------------------------------------------

struct EvalArgs {
  std::string generated;
  std::string reference;
  std::string source;
  std::string out;
};

void cmd_evaluate(Context& ctx, const EvalArgs& a) {
  const ExperimentConfig cfg = ctx.config();
  const fs::path gen = require_dir(ctx, a.generated, "--generated");
  const fs::path ref = require_dir(ctx, a.reference, "--reference");
  const fs::path src = require_dir(ctx, a.source, "--source");
  const fs::path out = ctx.resolve(a.out.empty() ? cfg.paths.outputs / "metrics" : fs::path(a.out));
  const MetricsReport r = evaluate(gen, ref, src, cfg);
  fs::create_directories(out);
  write_report_csv(r, out / "metrics.csv");
  write_report_json(r, out / "metrics.json");
  ctx.artifact(out / "metrics.csv");
  ctx.artifact(out / "metrics.json");
  ctx.out << "FID " << r.fid << "  SSIM " << r.ssim_mean << "  LPIPS " << r.lpips_mean << "  CLIP-ae "
          << r.clip_ae_mean << "\n";
  ctx.summary["FID"] = r.fid;
  ctx.summary["SSIM"] = r.ssim_mean;
  ctx.summary["LPIPS"] = r.lpips_mean;
  ctx.summary["CLIP-ae"] = r.clip_ae_mean;
}

// ---- separation-report ------------------------------------------------------

struct SeparationArgs {
  std::string checkpoint;
  std::string prompts_file;
  std::string out;
};

struct PromptFamilies {
  std::vector<std::string> source;
  std::vector<std::string> target;
};

PromptFamilies read_prompt_families(const fs::path& path) {
  const std::string text = read_text_file(path);
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw UsageError("--prompts-file: '" + path.string() + "' is empty");
  }
  PromptFamilies f;
  const json j = json::parse(text, nullptr, false);
  if (!j.is_discarded() && j.is_object()) {
    try {
      f.source = j.at("source").get<std::vector<std::string>>();
      f.target = j.at("target").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw UsageError("--prompts-file: expected {\"source\": [...], \"target\": [...]}: " +
                       std::string(e.what()));
    }
    return f;
  }
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
      continue;
    }
    const auto e = line.find_last_not_of(" \t\r");
    f.source.push_back(line.substr(b, e - b + 1));
  }
  f.target = f.source;
  return f;
}

std::string csv_quote(const std::string& s) {
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') {
      q += '"';
    }
    q += c;
  }
  return q + "\"";
}

void cmd_separation(Context& ctx, const SeparationArgs& a) {
  ExperimentConfig base_cfg;
  if (ctx.has_config()) {
    base_cfg = ctx.config();
  }
  const fs::path ck_path = ctx.resolve(a.checkpoint.empty() ? base_cfg.paths.checkpoints : fs::path(a.checkpoint));
  if (!fs::exists(ck_path)) {
    throw UsageError("--checkpoint: '" + ck_path.string() + "' does not exist");
  }
  PromptFamilies fam;
  if (!a.prompts_file.empty()) {
    const fs::path pf = ctx.resolve(a.prompts_file);
    if (!fs::exists(pf)) {
      throw UsageError("--prompts-file: '" + pf.string() + "' does not exist");
    }
    fam = read_prompt_families(pf);
  }
  const Checkpoint ck = load_for_inference(ctx, ck_path);
  const ExperimentConfig& cfg = ctx.has_config() ? base_cfg : ck.config;
  if (a.prompts_file.empty()) {
    fam.source = cfg.prompts.source_family();
    fam.target = cfg.prompts.target_family();
  }
  if (fam.source.empty() || fam.target.empty()) {
    throw Error("empty prompt family");
  }
  const int max_tokens = ck.model.text.shape.max_tokens;
  std::vector<ConditioningEmbedding> es;
  std::vector<ConditioningEmbedding> et;
  for (const auto& p : fam.source) {
    es.push_back(encode_domain(tokenize(p, max_tokens), EmbeddingDomain::kSource, ck.model.text));
  }
  for (const auto& p : fam.target) {
    et.push_back(encode_domain(tokenize(p, max_tokens), EmbeddingDomain::kTarget, ck.model.text));
  }
  const SeparationReport r = embedding_separation(es, et);

  std::vector<std::vector<double>> rows;
  for (const auto* set : {&es, &et}) {
    for (const auto& e : *set) {
      const auto p = pool(e);
      rows.emplace_back(p.data().begin(), p.data().end());
    }
  }
  const auto proj = pca_2d(rows);
  std::ostringstream csv;
  csv.precision(17);
  csv << "domain,prompt,x,y\n";
  for (size_t i = 0; i < rows.size(); ++i) {
    const bool src = i < fam.source.size();
    const std::string& prompt = src ? fam.source[i] : fam.target[i - fam.source.size()];
    csv << (src ? "source" : "target") << "," << csv_quote(prompt) << "," << proj[i][0] << ","
        << proj[i][1] << "\n";
  }

  const fs::path out = ctx.resolve(a.out.empty() ? cfg.paths.outputs / "separation" : fs::path(a.out));
  fs::create_directories(out);
  const json report = {{"checkpoint", ck_path.string()},
                       {"step", ck.state.step},
                       {"source_prompts", fam.source},
                       {"target_prompts", fam.target},
                       {"mean_within_source", r.mean_within_source},
                       {"mean_within_target", r.mean_within_target},
                       {"mean_between", r.mean_between},
                       {"silhouette", r.silhouette}};
  write_file_atomic(out / "separation.json", report.dump(2) + "\n");
  write_file_atomic(out / "separation_scatter.csv", csv.str());
  ctx.artifact(out / "separation.json");
  ctx.artifact(out / "separation_scatter.csv");
  ctx.out << "silhouette " << r.silhouette << "  within(source) " << r.mean_within_source
          << "  within(target) " << r.mean_within_target << "  between " << r.mean_between << "\n";
  ctx.summary["silhouette"] = r.silhouette;
  ctx.summary["mean_between"] = r.mean_between;
}

// ---- make-fixtures ----------------------------------------------------------

struct FixtureArgs {
  std::string out = "data/fixtures/source";
  int count = 16;
  int size = 64;
};

void cmd_fixtures(Context& ctx, const FixtureArgs& a) {
  const ExperimentConfig cfg = ctx.config();
  const auto paths = write_fixtures(ctx.resolve(a.out), a.count, a.size, static_cast<uint64_t>(cfg.seed));
  for (const auto& p : paths) {
    ctx.artifact(p);
  }
  ctx.out << "wrote " << paths.size() << " fixtures\n";
  ctx.summary["fixtures"] = paths.size();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"styleloop: pseudo-pair distillation, cycle training and evaluation"};
  app.set_version_flag("--version", "0.1.0");
  app.require_subcommand(1);

  Globals g;
  int64_t seed = 0;
  app.add_option("--config", g.config, "Experiment config (JSON)")->envname("STYLELOOP_CONFIG");
  app.add_option("--workdir", g.workdir, "Base directory for relative paths")
      ->envname("STYLELOOP_WORKDIR");
  auto* seed_opt = app.add_option("--seed", seed, "Override the config seed");

  DistillArgs da;
  auto* distill_cmd = app.add_subcommand("distill", "Synthesise pseudo-targets for a source set");
  distill_cmd->add_option("--source-dir", da.source_dir, "Source images");
  distill_cmd->add_option("--out", da.out, "Output directory (pseudo/, manifest.jsonl)");
  distill_cmd->add_option("--client", da.client, "Frozen generator client")
      ->check(CLI::IsMember({"stub", "remote"}));
  distill_cmd->add_option("--endpoint", da.endpoint, "Remote generator URL");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Cycle training on a paired manifest");
  train_cmd->add_option("--manifest", ta.manifest, "Paired manifest");
  train_cmd->add_option("--mode", ta.mode, "Training mode")
      ->check(CLI::IsMember({"joint", "two_stage", "no_lora"}));
  train_cmd->add_option("--resume", ta.resume, "Checkpoint directory or root to resume from");
  train_cmd->add_option("--checkpoints", ta.checkpoints, "Checkpoint root");

  InferArgs sa;
  auto* stylize_cmd = app.add_subcommand("stylize", "Translate images to the target domain");
  InferArgs dsa;
  auto* destylize_cmd = app.add_subcommand("destylize", "Translate images to the source domain");
  for (auto [cmd, a] : {std::pair{stylize_cmd, &sa}, std::pair{destylize_cmd, &dsa}}) {
    cmd->add_option("--checkpoint", a->checkpoint, "Checkpoint directory or root");
    cmd->add_option("--input", a->input, "Image file or directory")->required();
    cmd->add_option("--out", a->out, "Output directory (or .png file for a single input)")
        ->required();
  }

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("evaluate", "FID / SSIM / LPIPS / aesthetic report");
  eval_cmd->add_option("--generated", ea.generated, "Generated images")->required();
  eval_cmd->add_option("--reference", ea.reference, "Reference style images")->required();
  eval_cmd->add_option("--source", ea.source, "Source images paired by file stem")->required();
  eval_cmd->add_option("--out", ea.out, "Report directory");

  SeparationArgs sep;
  auto* sep_cmd = app.add_subcommand("separation-report", "Prompt-embedding cluster report");
  sep_cmd->add_option("--checkpoint", sep.checkpoint, "Checkpoint directory or root");
  sep_cmd->add_option("--prompts-file", sep.prompts_file,
                      "JSON {\"source\": [...], \"target\": [...]} or one prompt per line");
  sep_cmd->add_option("--out", sep.out, "Report directory");

  FixtureArgs fa;
  auto* fix_cmd = app.add_subcommand("make-fixtures", "Write the procedural fixture corpus");
  fix_cmd->add_option("--out", fa.out, "Output directory");
  fix_cmd->add_option("--count", fa.count, "Number of images")->check(CLI::PositiveNumber);
  fix_cmd->add_option("--size", fa.size, "Image side in pixels")->check(CLI::Range(8, 4096));

  json summary = {{"status", "error"}};
  auto finish = [&](int code, const std::string& error) {
    summary["exit_code"] = code;
    if (!error.empty()) {
      summary["error"] = error;
    }
    out << summary.dump() << std::endl;
    return code;
  };

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    summary["status"] = "ok";
    return finish(kExitOk, "");
  } catch (const CLI::CallForVersion& e) {
    out << "0.1.0\n";
    summary["status"] = "ok";
    return finish(kExitOk, "");
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return finish(kExitUsage, e.what());
  }
  if (seed_opt->count() > 0) {
    g.seed = seed;
  }

  Context ctx{g, out, err};
  std::string name;
  try {
    if (*distill_cmd) {
      name = "distill";
      cmd_distill(ctx, da);
    } else if (*train_cmd) {
      name = "train";
      cmd_train(ctx, ta);
    } else if (*stylize_cmd) {
      name = "stylize";
      cmd_infer(ctx, sa, EmbeddingDomain::kTarget);
    } else if (*destylize_cmd) {
      name = "destylize";
      cmd_infer(ctx, dsa, EmbeddingDomain::kSource);
    } else if (*eval_cmd) {
      name = "evaluate";
      cmd_evaluate(ctx, ea);
    } else if (*sep_cmd) {
      name = "separation-report";
      cmd_separation(ctx, sep);
    } else if (*fix_cmd) {
      name = "make-fixtures";
      cmd_fixtures(ctx, fa);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    summary["command"] = name;
    return finish(kExitUsage, e.what());
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    summary["command"] = name;
    return finish(kExitUsage, e.what());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    summary["command"] = name;
    return finish(kExitRuntime, e.what());
  }
  for (const auto& p : ctx.artifacts) {
    if (!fs::exists(p)) {
      summary["command"] = name;
      return finish(kExitRuntime, "declared artifact missing: " + p);
    }
  }
  summary = ctx.summary;
  summary["command"] = name;
  summary["status"] = "ok";
  summary["artifacts"] = ctx.artifacts;
  return finish(kExitOk, "");
}

}  // namespace styleloop::cli
