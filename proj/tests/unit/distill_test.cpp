// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "styleloop/distill.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <json.hpp>
#include <thread>

#include "styleloop/error.hpp"
#include "styleloop/fsutil.hpp"
#include "styleloop/metrics.hpp"
#include "test_util.hpp"

// Must follow the Eigen-based headers.
#include <httplib.h>

namespace styleloop {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class LoopbackServer {
 public:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  explicit LoopbackServer(Handler h) {
    server_.Post("/stylize", [this, h](const httplib::Request& req, httplib::Response& res) {
      ++requests;
      h(req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LoopbackServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/stylize"; }

  std::atomic<int> requests{0};

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

void reply_with(httplib::Response& res, const Rgb8& img) {
  res.set_content(json{{"image", base64_encode(encode_png(img))}}.dump(), "application/json");
}

FrozenGeneratorClient remote_client(const std::string& url) {
  FrozenGeneratorClient c;
  c.kind = ClientKind::kRemoteHttp;
  c.generator_id = "remote-test";
  c.endpoint = url;
  c.request_seed = 5;
  c.max_attempts = 3;
  c.backoff_ms = 1;
  c.timeout_ms = 2000;
  return c;
}

ImageTensor lattice_image(int size, uint64_t seed) {
  return to_tensor(to_rgb8(testing::random_image(size, size, seed)));
}

DistillationJob fixture_job(const fs::path& out) {
  ExperimentConfig cfg;
  return make_distillation_job(cfg, testing::source_dir() / "data/fixtures/source", out);
}

TEST(Base64, KnownVectors) {
  auto bytes = [](const std::string& s) { return std::vector<uint8_t>(s.begin(), s.end()); };
  EXPECT_EQ(base64_encode(bytes("")), "");
  EXPECT_EQ(base64_encode(bytes("fo")), "Zm8=");
  EXPECT_EQ(base64_encode(bytes("foobar")), "Zm9vYmFy");
  EXPECT_EQ(base64_decode("Zm8="), bytes("fo"));
  EXPECT_EQ(base64_decode("Zm9vYg=="), bytes("foob"));
  EXPECT_THROW(base64_decode("abc"), RemoteError);
}

TEST(StubStylize, DeterministicAndPromptKeyed) {
  const auto img = lattice_image(32, 1);
  const auto a = stub_stylize(img, "a painting in the style of Van Gogh", 42);
  EXPECT_EQ(a, stub_stylize(img, "a painting in the style of Van Gogh", 42));
  EXPECT_NE(a, stub_stylize(img, "a watercolour", 42));
  EXPECT_NE(a, stub_stylize(img, "a painting in the style of Van Gogh", 43));
  EXPECT_TRUE(a.same_shape(img));
  for (double v : a.data) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(StubStylize, ConstantGrayIsRestyled) {
  const ImageTensor gray(24, 24, 0.0);
  const auto out = stub_stylize(gray, "a painting", 7);
  double diff = 0.0;
  for (double v : out.data) {
    diff += std::abs(v);
  }
  EXPECT_GT(diff / out.data.size(), 0.01);
}

TEST(StubStylize, PreservesStructureOnFixtures) {
  double total = 0.0;
  const auto files = list_images(testing::source_dir() / "data/fixtures/source");
  ASSERT_FALSE(files.empty());
  for (const auto& f : files) {
    const auto img = load_image(f, 64);
    total += ssim(img, stub_stylize(img, ExperimentConfig{}.prompts.target_prompt, 42));
  }
  EXPECT_GE(total / files.size(), 0.3);
}

TEST(Distill, FixtureCorpusCardinalityAndDeterminism) {
  testing::TempDir a;
  testing::TempDir b;
  const auto ra = distill(fixture_job(a.path()));
  const auto rb = distill(fixture_job(b.path()));
  ASSERT_EQ(ra.manifest.pairs.size(), 16u);
  EXPECT_TRUE(ra.skips.empty());
  EXPECT_EQ(read_text_file(ra.skips_path), "");
  for (const auto& p : ra.manifest.pairs) {
    EXPECT_TRUE(fs::exists(p.source_path));
    EXPECT_EQ(p.generator_id, "procedural-stub");
    EXPECT_EQ(p.seed, 42);
    const auto pa = resolve_pair_path(ra.manifest_path, p.pseudo_path);
    const auto pb = resolve_pair_path(rb.manifest_path, p.pseudo_path);
    ASSERT_TRUE(fs::exists(pa));
    EXPECT_EQ(read_text_file(pa), read_text_file(pb));
  }
  EXPECT_EQ(read_text_file(ra.manifest_path), read_text_file(rb.manifest_path));
  EXPECT_EQ(read_manifest(ra.manifest_path), ra.manifest);
}

TEST(Distill, UnreadableFileBecomesSkip) {
  testing::TempDir src;
  testing::TempDir out;
  for (const auto& f : list_images(testing::source_dir() / "data/fixtures/source")) {
    fs::copy_file(f, src / f.filename().string());
  }
  std::ofstream(src / "fixture_03.png", std::ios::trunc) << "truncated";
  ExperimentConfig cfg;
  const auto r = distill(make_distillation_job(cfg, src.path(), out.path()));
  EXPECT_EQ(r.manifest.pairs.size(), 15u);
  ASSERT_EQ(r.skips.size(), 1u);
  EXPECT_EQ(r.skips[0].source_path.filename(), "fixture_03.png");
  const auto line = json::parse(read_text_file(r.skips_path));
  EXPECT_EQ(line.at("source_path").get<std::string>(), r.skips[0].source_path.string());
  EXPECT_FALSE(line.at("reason").get<std::string>().empty());
}

TEST(Distill, EmptySourceRejected) {
  testing::TempDir src;
  testing::TempDir out;
  ExperimentConfig cfg;
  EXPECT_THROW(distill(make_distillation_job(cfg, src.path(), out.path())), Error);
  EXPECT_THROW(distill(make_distillation_job(cfg, src / "missing", out.path())), IoError);
}

TEST(Remote, EchoServerRoundTrips) {
  json seen;
  LoopbackServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    res.set_content(json{{"image", seen.at("image")}}.dump(), "application/json");
  });
  const auto img = lattice_image(16, 2);
  int attempts = 0;
  const auto out = remote_stylize(remote_client(server.url()), img, "oil", {}, &attempts);
  EXPECT_EQ(out, img);
  EXPECT_EQ(attempts, 1);
  EXPECT_EQ(seen.at("prompt"), "oil");
  EXPECT_EQ(seen.at("seed"), 5);
  EXPECT_EQ(seen.at("width"), 16);
  EXPECT_EQ(seen.at("height"), 16);
}

TEST(Remote, ServerErrorsAreRetried) {
  std::atomic<int> calls{0};
  LoopbackServer server([&](const httplib::Request& req, httplib::Response& res) {
    if (++calls < 3) {
      res.status = 503;
      return;
    }
    res.set_content(json{{"image", json::parse(req.body).at("image")}}.dump(), "application/json");
  });
  std::vector<std::string> log;
  int attempts = 0;
  const auto img = lattice_image(8, 3);
  EXPECT_EQ(remote_stylize(remote_client(server.url()), img, "p",
                           [&](const std::string& l) { log.push_back(l); }, &attempts),
            img);
  EXPECT_EQ(attempts, 3);
  EXPECT_EQ(log.size(), 2u);
}

TEST(Remote, MalformedReplyFailsWithoutRetry) {
  LoopbackServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"picture\": 1}", "application/json");
  });
  EXPECT_THROW(remote_stylize(remote_client(server.url()), lattice_image(8, 4), "p"), RemoteError);
  EXPECT_EQ(server.requests.load(), 1);
}

TEST(Remote, WrongSizeRecordedAndJobContinues) {
  testing::TempDir src;
  testing::TempDir out;
  write_png(to_rgb8(lattice_image(16, 5)), src / "a.png");
  write_png(to_rgb8(lattice_image(12, 6)), src / "b.png");
  LoopbackServer server([](const httplib::Request&, httplib::Response& res) {
    reply_with(res, to_rgb8(ImageTensor(16, 16, 0.5)));
  });
  ExperimentConfig cfg;
  auto job = make_distillation_job(cfg, src.path(), out.path());
  job.client = remote_client(server.url());
  const auto r = distill(job);
  ASSERT_EQ(r.manifest.pairs.size(), 1u);
  EXPECT_EQ(r.manifest.pairs[0].source_path.filename(), "a.png");
  EXPECT_EQ(r.manifest.pairs[0].generator_id, "remote-test");
  ASSERT_EQ(r.skips.size(), 1u);
  EXPECT_NE(r.skips[0].reason.find("expected 12x12"), std::string::npos);
}

TEST(Remote, TimeoutsExhaustRetriesIntoSidecar) {
  testing::TempDir src;
  testing::TempDir out;
  write_png(to_rgb8(lattice_image(8, 7)), src / "slow.png");
  write_png(to_rgb8(lattice_image(8, 8)), src / "zfast.png");
  LoopbackServer server([](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    const auto img = decode_png(base64_decode(body.at("image").get<std::string>()));
    // The first pixel tells the two inputs apart.
    if (img.pixels[0] == to_rgb8(lattice_image(8, 7)).pixels[0]) {
      std::this_thread::sleep_for(std::chrono::milliseconds(400));
    }
    res.set_content(json{{"image", body.at("image")}}.dump(), "application/json");
  });
  ExperimentConfig cfg;
  auto job = make_distillation_job(cfg, src.path(), out.path());
  job.client = remote_client(server.url());
  job.client.timeout_ms = 100;
  job.max_in_flight = 1;
  std::vector<std::string> log;
  job.log = [&](const std::string& l) { log.push_back(l); };
  const auto r = distill(job);
  ASSERT_EQ(r.manifest.pairs.size(), 1u);
  ASSERT_EQ(r.skips.size(), 1u);
  EXPECT_EQ(r.skips[0].source_path.filename(), "slow.png");
  EXPECT_EQ(r.skips[0].attempts, 3);
  const auto line = json::parse(read_text_file(r.skips_path));
  EXPECT_EQ(line.at("attempts"), 3);
  EXPECT_GE(log.size(), 3u);
}

TEST(Remote, AllItemsFailingIsAnError) {
  testing::TempDir src;
  testing::TempDir out;
  write_png(to_rgb8(lattice_image(8, 9)), src / "a.png");
  ExperimentConfig cfg;
  auto job = make_distillation_job(cfg, src.path(), out.path());
  // Nothing listens on port 9 of the loopback interface.
  job.client = remote_client("http://127.0.0.1:9/stylize");
  job.client.timeout_ms = 200;
  EXPECT_THROW(distill(job), RemoteError);
  EXPECT_TRUE(fs::exists(out / "manifest.skips.jsonl"));
  EXPECT_FALSE(fs::exists(out / "manifest.jsonl"));
}

}  // namespace
}  // namespace styleloop
