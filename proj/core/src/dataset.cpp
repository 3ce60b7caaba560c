// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "styleloop/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <set>
#include <sstream>

#include "styleloop/error.hpp"
#include "styleloop/fsutil.hpp"
#include "styleloop/rng.hpp"

namespace styleloop {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifestFormat = "styleloop-manifest";
constexpr int kManifestVersion = 1;

void check_manifest(const DatasetManifest& m) {
  if (m.domain_tag == DomainTag::kPaired && m.pairs.empty()) {
    throw ManifestError("paired manifest has no pairs");
  }
  std::set<std::string> seen;
  for (const auto& p : m.pairs) {
    if (!seen.insert(p.source_path.string()).second) {
      throw ManifestError("duplicate source_path '" + p.source_path.string() + "'");
    }
    if (p.source_prompt.empty() || p.target_prompt.empty()) {
      throw ManifestError("empty prompt in record for '" + p.source_path.string() + "'");
    }
  }
}

}  // namespace

const char* to_string(DomainTag t) {
  switch (t) {
    case DomainTag::kSource:
      return "source";
    case DomainTag::kTarget:
      return "target";
    case DomainTag::kPaired:
      return "paired";
  }
  return "paired";
}

std::optional<DomainTag> parse_domain_tag(const std::string& s) {
  if (s == "source") {
    return DomainTag::kSource;
  }
  if (s == "target") {
    return DomainTag::kTarget;
  }
  if (s == "paired") {
    return DomainTag::kPaired;
  }
  return std::nullopt;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  check_manifest(manifest);
  std::ostringstream out;
  out << json{{"format", kManifestFormat},
              {"version", kManifestVersion},
              {"domain_tag", to_string(manifest.domain_tag)},
              {"created_seed", manifest.created_seed},
              {"count", manifest.pairs.size()}}
             .dump()
      << "\n";
  for (const auto& p : manifest.pairs) {
    out << json{{"source_path", p.source_path.string()},
                {"pseudo_path", p.pseudo_path.string()},
                {"source_prompt", p.source_prompt},
                {"target_prompt", p.target_prompt},
                {"generator_id", p.generator_id},
                {"seed", p.seed}}
               .dump()
        << "\n";
  }
  write_file_atomic(path, out.str());
}

DatasetManifest read_manifest(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw ManifestError(path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  DatasetManifest m;
  bool have_header = false;
  size_t declared = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(std::string("malformed record: ") + e.what());
    }
    try {
      if (!have_header) {
        if (j.value("format", "") != kManifestFormat) {
          fail("missing manifest header");
        }
        if (j.at("version").get<int>() != kManifestVersion) {
          fail("unsupported manifest version");
        }
        auto tag = parse_domain_tag(j.at("domain_tag").get<std::string>());
        if (!tag) {
          fail("unknown domain_tag");
        }
        m.domain_tag = *tag;
        m.created_seed = j.at("created_seed").get<int64_t>();
        declared = j.at("count").get<size_t>();
        have_header = true;
        continue;
      }
      PseudoPair p;
      p.source_path = j.at("source_path").get<std::string>();
      p.pseudo_path = j.at("pseudo_path").get<std::string>();
      p.source_prompt = j.at("source_prompt").get<std::string>();
      p.target_prompt = j.at("target_prompt").get<std::string>();
      p.generator_id = j.at("generator_id").get<std::string>();
      p.seed = j.at("seed").get<int64_t>();
      m.pairs.push_back(std::move(p));
    } catch (const json::exception& e) {
      fail(std::string("malformed record: ") + e.what());
    }
  }
  if (!have_header) {
    throw ManifestError(path.string() + ": empty manifest");
  }
  if (declared != m.pairs.size()) {
    throw ManifestError(path.string() + ": header declares " + std::to_string(declared) +
                        " pairs, found " + std::to_string(m.pairs.size()));
  }
  check_manifest(m);
  return m;
}

fs::path resolve_pair_path(const fs::path& manifest_path, const fs::path& p) {
  if (p.is_absolute()) {
    return p;
  }
  return manifest_path.parent_path() / p;
}

std::vector<std::vector<size_t>> epoch_batches(size_t n_pairs, int batch_size, int64_t shuffle_seed,
                                               int64_t epoch) {
  if (batch_size < 1) {
    throw ConfigError("batch_size must be >= 1");
  }
  std::vector<size_t> order(n_pairs);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(derive_seed(static_cast<uint64_t>(shuffle_seed), "epoch/" + std::to_string(epoch)));
  for (size_t i = n_pairs; i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  std::vector<std::vector<size_t>> out;
  for (size_t i = 0; i < n_pairs; i += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(n_pairs, i + static_cast<size_t>(batch_size));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

BatchIterator::BatchIterator(const DatasetManifest& manifest, int batch_size, int64_t shuffle_seed)
    : manifest_(&manifest), batch_size_(batch_size), seed_(shuffle_seed) {
  if (manifest.pairs.empty()) {
    throw ManifestError("cannot iterate an empty manifest");
  }
  batches_ = epoch_batches(manifest.pairs.size(), batch_size_, seed_, epoch_);
}

std::vector<PseudoPair> BatchIterator::next() {
  if (cursor_ >= batches_.size()) {
    seek(epoch_ + 1, 0);
  }
  std::vector<PseudoPair> batch;
  for (size_t i : batches_[cursor_]) {
    batch.push_back(manifest_->pairs[i]);
  }
  ++cursor_;
  return batch;
}

void BatchIterator::seek(int64_t epoch, size_t cursor) {
  if (epoch != epoch_ || batches_.empty()) {
    batches_ = epoch_batches(manifest_->pairs.size(), batch_size_, seed_, epoch);
  }
  epoch_ = epoch;
  cursor_ = cursor;
}

Rgb8 synthesize_fixture(int index, int size, uint64_t seed) {
  Rng rng(derive_seed(seed, "fixture/" + std::to_string(index)));
  auto u = [&rng](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };

  const double sky_top[3] = {u(20, 90), u(60, 140), u(150, 240)};
  const double sky_bottom[3] = {u(150, 240), u(150, 220), u(120, 230)};
  const double sun_x = u(0.15, 0.85) * size;
  const double sun_y = u(0.1, 0.35) * size;
  const double sun_r = u(0.05, 0.12) * size;
  const double sun_col[3] = {u(230, 255), u(180, 240), u(40, 140)};

  struct Hill {
    double base, amp, freq, phase;
    double col[3];
  };
  std::vector<Hill> hills(3);
  for (size_t h = 0; h < hills.size(); ++h) {
    auto& hl = hills[h];
    hl.base = (0.45 + 0.15 * static_cast<double>(h)) * size;
    hl.amp = u(0.03, 0.1) * size;
    hl.freq = u(1.0, 4.0) * 2.0 * M_PI / size;
    hl.phase = u(0.0, 2.0 * M_PI);
    const double shade = 1.0 - 0.25 * static_cast<double>(h);
    hl.col[0] = u(30, 120) * shade;
    hl.col[1] = u(80, 180) * shade;
    hl.col[2] = u(20, 90) * shade;
  }
  struct Block {
    double x0, y0, x1, y1;
    double col[3];
  };
  std::vector<Block> blocks(static_cast<size_t>(1 + rng.below(3)));
  for (auto& b : blocks) {
    const double w = u(0.08, 0.2) * size;
    const double h = u(0.1, 0.25) * size;
    b.x0 = u(0.0, size - w);
    b.y1 = u(0.7, 0.95) * size;
    b.x1 = b.x0 + w;
    b.y0 = b.y1 - h;
    b.col[0] = u(90, 230);
    b.col[1] = u(60, 200);
    b.col[2] = u(50, 180);
  }

  Rgb8 img;
  img.height = size;
  img.width = size;
  img.pixels.resize(static_cast<size_t>(size) * size * 3);
  for (int y = 0; y < size; ++y) {
    const double t = static_cast<double>(y) / std::max(size - 1, 1);
    for (int x = 0; x < size; ++x) {
      double c[3];
      for (int k = 0; k < 3; ++k) {
        c[k] = sky_top[k] * (1.0 - t) + sky_bottom[k] * t;
      }
      const double dx = x - sun_x;
      const double dy = y - sun_y;
      if (dx * dx + dy * dy <= sun_r * sun_r) {
        for (int k = 0; k < 3; ++k) {
          c[k] = sun_col[k];
        }
      }
      for (const auto& hl : hills) {
        if (y >= hl.base + hl.amp * std::sin(hl.freq * x + hl.phase)) {
          const double grain = 12.0 * std::sin(0.9 * x + 1.3 * y + hl.phase);
          for (int k = 0; k < 3; ++k) {
            c[k] = hl.col[k] + grain;
          }
        }
      }
      for (const auto& b : blocks) {
        if (x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1) {
          const bool window = (static_cast<int>((x - b.x0) / 3) % 2 == 0) &&
                              (static_cast<int>((y - b.y0) / 4) % 2 == 0);
          for (int k = 0; k < 3; ++k) {
            c[k] = window ? b.col[k] * 0.6 : b.col[k];
          }
        }
      }
      for (int k = 0; k < 3; ++k) {
        const double noisy = c[k] + 4.0 * (rng.uniform() - 0.5);
        img.pixels[(static_cast<size_t>(y) * size + x) * 3 + k] =
            static_cast<uint8_t>(std::clamp(std::lround(noisy), 0L, 255L));
      }
    }
  }
  return img;
}

std::vector<fs::path> write_fixtures(const fs::path& dir, int count, int size, uint64_t seed) {
  fs::create_directories(dir);
  std::vector<fs::path> out;
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "fixture_%02d.png", i);
    const fs::path p = dir / name;
    write_png(synthesize_fixture(i, size, seed), p);
    out.push_back(p);
  }
  return out;
}

}  // namespace styleloop
