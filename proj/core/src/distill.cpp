// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "styleloop/distill.hpp"

#include <httplib.h>
#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <deque>
#include <future>
#include <json.hpp>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "styleloop/error.hpp"
#include "styleloop/fsutil.hpp"
#include "styleloop/rng.hpp"

namespace styleloop {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double luminance(const ImageTensor& img, int y, int x) {
  return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
}

}  // namespace

ImageTensor stub_stylize(const ImageTensor& img, const std::string& prompt, int64_t seed) {
  Rng rng(Fnv1a{}.str(prompt).u64(static_cast<uint64_t>(seed)).digest());
  constexpr int kStops = 4;
  std::array<std::array<double, 3>, kStops> palette{};
  for (auto& stop : palette) {
    for (double& c : stop) {
      c = 2.0 * rng.uniform() - 1.0;
    }
  }
  // Dark to light.
  std::sort(palette.begin(), palette.end(), [](const auto& a, const auto& b) {
    return a[0] + a[1] + a[2] < b[0] + b[1] + b[2];
  });
  const double angle = M_PI * rng.uniform();
  const double freq = 2.0 * M_PI * (3.0 + 5.0 * rng.uniform());
  const double phase = 2.0 * M_PI * rng.uniform();
  const double swirl = 0.5 + rng.uniform();
  const double stroke = 0.08 + 0.06 * rng.uniform();

  const int h = img.height;
  const int w = img.width;
  std::vector<double> lum(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      lum[static_cast<size_t>(y) * w + x] = luminance(img, y, x);
    }
  }
  auto lum_at = [&](int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return lum[static_cast<size_t>(y) * w + x];
  };

  ImageTensor out(h, w);
  const double scale = 1.0 / std::max(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double l = lum_at(y, x);
      const double t = std::clamp((l + 1.0) * 0.5, 0.0, 1.0) * (kStops - 1);
      const int i0 = std::min(static_cast<int>(t), kStops - 2);
      const double f = t - i0;
      double blur = 0.0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          blur += lum_at(y + dy, x + dx);
        }
      }
      const double edge = l - blur / 9.0;
      const double u = (x * std::cos(angle) + y * std::sin(angle)) * scale;
      const double v = (-x * std::sin(angle) + y * std::cos(angle)) * scale;
      const double tex = stroke * std::sin(freq * u + swirl * std::sin(freq * 0.5 * v) + phase);
      for (int c = 0; c < 3; ++c) {
        const double mapped = palette[i0][c] * (1.0 - f) + palette[i0 + 1][c] * f;
        const double value = 0.55 * mapped + 0.45 * img.at(c, y, x) + tex + 0.8 * edge;
        out.at(c, y, x) = std::clamp(value, -1.0, 1.0);
      }
    }
  }
  return out;
}

std::string base64_encode(const std::vector<uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<size_t>(n));
  return out;
}

std::vector<uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) {
    throw RemoteError("invalid base64 payload length");
  }
  std::vector<uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) {
    throw RemoteError("invalid base64 payload");
  }
  size_t pad = 0;
  if (!text.empty() && text.back() == '=') {
    ++pad;
    if (text.size() > 1 && text[text.size() - 2] == '=') {
      ++pad;
    }
  }
  out.resize(static_cast<size_t>(n) - pad);
  return out;
}

namespace {

struct Endpoint {
  std::string origin;  // scheme://host:port
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) {
    throw RemoteError("endpoint '" + url + "' is not an http URL");
  }
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) {
    return {url, "/"};
  }
  return {url.substr(0, slash), url.substr(slash)};
}

// Thrown for failures worth another attempt.
struct TransientFailure : RemoteError {
  using RemoteError::RemoteError;
};

ImageTensor attempt_once(const FrozenGeneratorClient& client, const Endpoint& ep,
                         const std::string& body, int height, int width) {
  httplib::Client http(ep.origin);
  const auto timeout = std::chrono::milliseconds(client.timeout_ms);
  http.set_connection_timeout(timeout);
  http.set_read_timeout(timeout);
  http.set_write_timeout(timeout);
  auto res = http.Post(ep.path, body, "application/json");
  if (!res) {
    throw TransientFailure("request failed: " + httplib::to_string(res.error()));
  }
  if (res->status >= 500) {
    throw TransientFailure("server error " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw RemoteError("unexpected status " + std::to_string(res->status));
  }
  json reply;
  try {
    reply = json::parse(res->body);
  } catch (const json::parse_error&) {
    throw RemoteError("malformed response: not JSON");
  }
  if (!reply.is_object() || !reply.contains("image") || !reply["image"].is_string()) {
    throw RemoteError("malformed response: missing \"image\"");
  }
  Rgb8 decoded;
  try {
    decoded = decode_png(base64_decode(reply["image"].get<std::string>()));
  } catch (const IoError& e) {
    throw RemoteError(std::string("malformed response: ") + e.what());
  }
  if (decoded.height != height || decoded.width != width) {
    throw RemoteError("response image is " + std::to_string(decoded.width) + "x" +
                      std::to_string(decoded.height) + ", expected " + std::to_string(width) + "x" +
                      std::to_string(height));
  }
  return to_tensor(decoded);
}

}  // namespace

ImageTensor remote_stylize(const FrozenGeneratorClient& client, const ImageTensor& img,
                           const std::string& prompt,
                           const std::function<void(const std::string&)>& log,
                           int* attempts_used) {
  const Endpoint ep = split_endpoint(client.endpoint);
  const json request = {{"image", base64_encode(encode_png(to_rgb8(img)))},
                        {"prompt", prompt},
                        {"seed", client.request_seed},
                        {"width", img.width},
                        {"height", img.height}};
  const std::string body = request.dump();
  int backoff = client.backoff_ms;
  for (int attempt = 1;; ++attempt) {
    if (attempts_used != nullptr) {
      *attempts_used = attempt;
    }
    try {
      return attempt_once(client, ep, body, img.height, img.width);
    } catch (const TransientFailure& e) {
      if (log) {
        log("attempt " + std::to_string(attempt) + "/" + std::to_string(client.max_attempts) +
            " to " + client.endpoint + " failed: " + e.what());
      }
      if (attempt >= client.max_attempts) {
        throw RemoteError(std::string(e.what()) + " (after " + std::to_string(attempt) +
                          " attempts)");
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff *= 2;
    }
  }
}

namespace {

struct ItemOutcome {
  bool ok = false;
  std::string reason;
  int attempts = 0;
};

ItemOutcome process_item(const DistillationJob& job, const fs::path& source, const fs::path& pseudo,
                         const std::function<void(const std::string&)>& log) {
  ItemOutcome out;
  try {
    const ImageTensor img = to_tensor(decode_image_file(source));
    ImageTensor styled;
    if (job.client.kind == ClientKind::kLocalStub) {
      out.attempts = 1;
      styled = stub_stylize(img, job.target_prompt, job.client.request_seed);
    } else {
      styled = remote_stylize(job.client, img, job.target_prompt, log, &out.attempts);
    }
    save_image(styled, pseudo);
    out.ok = true;
  } catch (const Error& e) {
    out.reason = e.what();
  }
  return out;
}

std::string skips_jsonl(const std::vector<SkipRecord>& skips) {
  std::ostringstream out;
  for (const auto& s : skips) {
    out << json{{"source_path", s.source_path.string()},
                {"reason", s.reason},
                {"attempts", s.attempts}}
               .dump()
        << "\n";
  }
  return out.str();
}

}  // namespace

DistillResult distill(const DistillationJob& job) {
  if (!fs::is_directory(job.source_dir)) {
    throw IoError("source directory '" + job.source_dir.string() + "' does not exist");
  }
  const auto sources = list_images(job.source_dir);
  if (sources.empty()) {
    throw Error("source directory '" + job.source_dir.string() + "' has no images");
  }
  if (job.source_prompt.empty() || job.target_prompt.empty()) {
    throw ConfigError("distillation prompts must be non-empty");
  }
  const fs::path pseudo_dir = job.output_dir / "pseudo";
  fs::create_directories(pseudo_dir);

  DistillResult result;
  result.manifest.domain_tag = DomainTag::kPaired;
  result.manifest.created_seed = job.seed;
  result.manifest_path = job.output_dir / "manifest.jsonl";
  result.skips_path = job.output_dir / "manifest.skips.jsonl";

  struct Item {
    fs::path source;
    fs::path pseudo_rel;
    bool duplicate = false;
  };
  std::vector<Item> items;
  std::set<std::string> stems;
  for (const auto& s : sources) {
    const std::string stem = s.stem().string();
    items.push_back({fs::absolute(s).lexically_normal(), fs::path("pseudo") / (stem + ".png"),
                     !stems.insert(stem).second});
  }

  std::mutex log_mutex;
  std::function<void(const std::string&)> log;
  if (job.log) {
    log = [&job, &log_mutex](const std::string& line) {
      std::lock_guard<std::mutex> lock(log_mutex);
      job.log(line);
    };
  }

  // Bounded in-flight work; outcomes are consumed in source order.
  const size_t limit = static_cast<size_t>(std::max(job.max_in_flight, 1));
  std::deque<std::future<ItemOutcome>> pending;
  size_t next_launch = 0;
  auto launch = [&](size_t i) {
    if (items[i].duplicate) {
      std::promise<ItemOutcome> p;
      p.set_value({false, "duplicate stem; pseudo-target name already taken", 0});
      pending.push_back(p.get_future());
      return;
    }
    pending.push_back(std::async(std::launch::async, [&job, &items, &pseudo_dir, &log, i] {
      return process_item(job, items[i].source, pseudo_dir / items[i].pseudo_rel.filename(), log);
    }));
  };
  for (size_t i = 0; i < items.size(); ++i) {
    while (next_launch < items.size() && pending.size() < limit) {
      launch(next_launch++);
    }
    const ItemOutcome outcome = pending.front().get();
    pending.pop_front();
    if (outcome.ok) {
      result.manifest.pairs.push_back({items[i].source, items[i].pseudo_rel, job.source_prompt,
                                       job.target_prompt, job.client.generator_id,
                                       job.client.request_seed});
    } else {
      result.skips.push_back({items[i].source, outcome.reason, outcome.attempts});
      if (log) {
        log("skipped " + items[i].source.string() + ": " + outcome.reason);
      }
    }
  }

  write_file_atomic(result.skips_path, skips_jsonl(result.skips));
  if (result.manifest.pairs.empty()) {
    throw RemoteError("all " + std::to_string(items.size()) + " items failed; see " +
                      result.skips_path.string());
  }
  write_manifest(result.manifest, result.manifest_path);
  return result;
}

DistillationJob make_distillation_job(const ExperimentConfig& cfg, const fs::path& source_dir,
                                      const fs::path& output_dir) {
  DistillationJob job;
  job.source_dir = source_dir;
  job.output_dir = output_dir;
  job.source_prompt = cfg.prompts.source_prompt;
  job.target_prompt = cfg.prompts.target_prompt;
  job.seed = cfg.seed;
  job.max_in_flight = cfg.distill.max_in_flight;
  job.client.generator_id = cfg.distill.generator_id;
  job.client.request_seed = cfg.seed;
  job.client.max_attempts = cfg.distill.max_attempts;
  job.client.backoff_ms = cfg.distill.backoff_ms;
  job.client.timeout_ms = cfg.distill.timeout_ms;
  return job;
}

}  // namespace styleloop
