// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "styleloop/config.hpp"
#include "styleloop/dataset.hpp"
#include "styleloop/image.hpp"

namespace styleloop {

enum class ClientKind { kLocalStub, kRemoteHttp };

struct FrozenGeneratorClient {
  ClientKind kind = ClientKind::kLocalStub;
  std::string generator_id = "procedural-stub";
  std::string endpoint;  // http://host:port/path, remote only
  int64_t request_seed = 42;
  int max_attempts = 3;
  int backoff_ms = 100;  // doubled after every failed attempt
  int timeout_ms = 30000;
};

/// Deterministic procedural stylisation keyed by (prompt, seed): palette
/// gradient map over luminance, oriented stroke texture and an unsharp edge
/// boost, clamped to [-1, 1].
ImageTensor stub_stylize(const ImageTensor& img, const std::string& prompt, int64_t seed);

/// POSTs {"image": base64 PNG, "prompt", "seed", "width", "height"} and
/// expects {"image": base64 PNG} of the same size back. Transport failures
/// and 5xx replies are retried up to client.max_attempts attempts in total;
/// malformed or wrongly sized replies fail at once. Throws RemoteError.
ImageTensor remote_stylize(const FrozenGeneratorClient& client, const ImageTensor& img,
                           const std::string& prompt,
                           const std::function<void(const std::string&)>& log = {},
                           int* attempts_used = nullptr);

std::string base64_encode(const std::vector<uint8_t>& bytes);
/// Throws RemoteError on invalid input.
std::vector<uint8_t> base64_decode(const std::string& text);

struct DistillationJob {
  std::filesystem::path source_dir;
  std::string source_prompt;
  std::string target_prompt;
  FrozenGeneratorClient client;
  std::filesystem::path output_dir;
  int64_t seed = 42;
  int max_in_flight = 4;
  std::function<void(const std::string&)> log;
};

struct SkipRecord {
  std::filesystem::path source_path;
  std::string reason;
  int attempts = 0;
};

struct DistillResult {
  DatasetManifest manifest;
  std::vector<SkipRecord> skips;
  std::filesystem::path manifest_path;
  std::filesystem::path skips_path;
};

/// Stylises every image in source_dir (sorted by filename) into
/// output_dir/pseudo/<stem>.png and writes output_dir/manifest.jsonl plus the
/// skip list output_dir/manifest.skips.jsonl. Per-item failures become skip
/// records. Throws Error when source_dir has no images and RemoteError when
/// every item failed.
DistillResult distill(const DistillationJob& job);

DistillationJob make_distillation_job(const ExperimentConfig& cfg,
                                      const std::filesystem::path& source_dir,
                                      const std::filesystem::path& output_dir);

}  // namespace styleloop
