// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "styleloop/image.hpp"

namespace styleloop {

struct PseudoPair {
  std::filesystem::path source_path;
  std::filesystem::path pseudo_path;
  std::string source_prompt;
  std::string target_prompt;
  std::string generator_id;
  int64_t seed = 0;

  friend bool operator==(const PseudoPair&, const PseudoPair&) = default;
};

enum class DomainTag { kSource, kTarget, kPaired };

const char* to_string(DomainTag t);
std::optional<DomainTag> parse_domain_tag(const std::string& s);

struct DatasetManifest {
  std::vector<PseudoPair> pairs;
  DomainTag domain_tag = DomainTag::kPaired;
  int64_t created_seed = 0;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// One line of JSON header followed by one JSON record per pair. The file is
/// written to a temporary sibling and renamed into place.
/// Throws ManifestError on duplicate source paths, empty prompts or an empty
/// paired manifest, IoError on write failure.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Relative pair paths are resolved against the manifest's directory.
std::filesystem::path resolve_pair_path(const std::filesystem::path& manifest_path,
                                        const std::filesystem::path& p);

/// Pair indices of one epoch, shuffled by a permutation derived from
/// (shuffle_seed, epoch) and cut into batches; the last batch may be short.
std::vector<std::vector<size_t>> epoch_batches(size_t n_pairs, int batch_size, int64_t shuffle_seed,
                                               int64_t epoch);

/// Endless batch stream over a manifest, epoch after epoch.
class BatchIterator {
 public:
  BatchIterator(const DatasetManifest& manifest, int batch_size, int64_t shuffle_seed);

  std::vector<PseudoPair> next();
  int64_t epoch() const { return epoch_; }
  /// Position as (epoch, batch index within epoch); enough to resume.
  size_t cursor() const { return cursor_; }
  void seek(int64_t epoch, size_t cursor);

 private:
  const DatasetManifest* manifest_;
  int batch_size_;
  int64_t seed_;
  int64_t epoch_ = 0;
  size_t cursor_ = 0;
  std::vector<std::vector<size_t>> batches_;
};

/// Procedural landscape-like RGB test image (sky, sun, hills, blocks).
Rgb8 synthesize_fixture(int index, int size, uint64_t seed);

/// Writes `count` fixtures as fixture_XX.png into `dir` and returns the paths.
std::vector<std::filesystem::path> write_fixtures(const std::filesystem::path& dir, int count,
                                                  int size, uint64_t seed);

}  // namespace styleloop
