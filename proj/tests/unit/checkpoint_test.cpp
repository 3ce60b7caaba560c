// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "styleloop/checkpoint.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <json.hpp>

#include "styleloop/error.hpp"
#include "styleloop/fsutil.hpp"
#include "test_util.hpp"

namespace styleloop {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Trained {
  ExperimentConfig cfg;
  Model model;
  TrainState state;
  std::vector<LossRow> history;
};

// Two optimiser steps, non-trivial moments.
Trained trained_model(const fs::path& scratch) {
  Trained t;
  t.cfg = testing::tiny_config();
  const auto manifest_path = testing::make_paired_dataset(scratch, 3, t.cfg.image_size, t.cfg);
  DataSource data(read_manifest(manifest_path), manifest_path, t.cfg);
  const PerceptualNet net(t.cfg.model.perceptual_seed);
  t.model = init_model(t.cfg, TrainingMode::kJoint);
  for (int i = 0; i < 2; ++i) {
    t.history.push_back(training_step(t.model, t.state, data, t.cfg, net));
  }
  t.state.validation_cycle_l1 = 0.25;
  return t;
}

void expect_same_entries(const nn::ParameterSet& a, const nn::ParameterSet& b) {
  ASSERT_EQ(a.entries().size(), b.entries().size());
  for (const auto& e : a.entries()) {
    const ag::Tensor other = b.get(e.name);
    ASSERT_EQ(other.rows(), e.tensor.rows()) << e.name;
    ASSERT_EQ(other.cols(), e.tensor.cols()) << e.name;
    for (size_t i = 0; i < e.tensor.size(); ++i) {
      ASSERT_EQ(other.data()[i], e.tensor.data()[i]) << e.name;
    }
  }
}

void expect_same_adapters(const lora::AdapterSet& a, const lora::AdapterSet& b) {
  ASSERT_EQ(a.adapters.size(), b.adapters.size());
  EXPECT_EQ(a.domain, b.domain);
  for (const auto& [id, x] : a.adapters) {
    const auto* y = b.find(id);
    ASSERT_NE(y, nullptr) << id;
    EXPECT_EQ(x.rank, y->rank);
    EXPECT_EQ(x.alpha, y->alpha);
    EXPECT_TRUE(std::equal(x.a.data().begin(), x.a.data().end(), y->a.data().begin())) << id;
    EXPECT_TRUE(std::equal(x.b.data().begin(), x.b.data().end(), y->b.data().begin())) << id;
  }
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    t_ = trained_model(scratch_.path());
    dir_ = scratch_ / "ckpt";
    save_checkpoint(dir_, t_.cfg, t_.model, t_.state, t_.history);
  }

  testing::TempDir scratch_;
  Trained t_;
  fs::path dir_;
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  const Checkpoint ck = load_checkpoint(dir_, &t_.cfg);
  expect_same_entries(t_.model.text.base, ck.model.text.base);
  expect_same_entries(t_.model.generator.base, ck.model.generator.base);
  expect_same_adapters(t_.model.text.source_adapters, ck.model.text.source_adapters);
  expect_same_adapters(t_.model.text.target_adapters, ck.model.text.target_adapters);
  expect_same_adapters(t_.model.generator.adapters, ck.model.generator.adapters);
  EXPECT_EQ(ck.state.step, 2);
  EXPECT_EQ(ck.state.epoch, t_.state.epoch);
  EXPECT_EQ(ck.state.cursor, t_.state.cursor);
  EXPECT_EQ(ck.state.mode, TrainingMode::kJoint);
  EXPECT_EQ(ck.state.validation_cycle_l1, 0.25);
  ASSERT_EQ(ck.state.moments.size(), t_.state.moments.size());
  for (const auto& [name, m] : t_.state.moments) {
    const auto& other = ck.state.moments.at(name);
    EXPECT_EQ(other.t, m.t);
    EXPECT_EQ(other.m, m.m);
    EXPECT_EQ(other.v, m.v);
  }
  ASSERT_EQ(ck.history.size(), 2u);
  EXPECT_EQ(ck.history[1].loss.total, t_.history[1].loss.total);
  EXPECT_EQ(ck.structure_hash, structure_hash(t_.cfg));
  EXPECT_EQ(config_to_json(ck.config), config_to_json(t_.cfg));
}

TEST_F(CheckpointTest, IndexAndAdapterRecords) {
  const json index = json::parse(read_text_file(dir_ / "index.json"));
  for (const char* key : {"format", "version", "step", "mode", "structure_hash", "perceptual_seed",
                          "base_hashes", "adapter_hashes", "files"}) {
    EXPECT_TRUE(index.contains(key)) << key;
  }
  EXPECT_EQ(index.at("step"), 2);
  EXPECT_EQ(index.at("mode"), "joint");
  EXPECT_EQ(index.at("structure_hash"), to_hex(structure_hash(t_.cfg)));
  EXPECT_EQ(index.at("base_hashes").at("generator"), to_hex(t_.model.generator.base.hash()));
  for (const auto& f : index.at("files")) {
    EXPECT_TRUE(fs::exists(dir_ / f.get<std::string>())) << f;
  }

  const json adapters = json::parse(read_text_file(dir_ / "adapters.json"));
  const size_t expected = t_.model.text.source_adapters.adapters.size() +
                          t_.model.text.target_adapters.adapters.size() +
                          t_.model.generator.adapters.adapters.size();
  ASSERT_EQ(adapters.size(), expected);
  for (const auto& rec : adapters) {
    const std::string domain = rec.at("domain");
    const auto& set = domain == "source"   ? t_.model.text.source_adapters
                      : domain == "target" ? t_.model.text.target_adapters
                                           : t_.model.generator.adapters;
    const auto* a = set.find(rec.at("layer_id").get<std::string>());
    ASSERT_NE(a, nullptr);
    EXPECT_EQ(rec.at("d_in"), a->d_in);
    EXPECT_EQ(rec.at("d_out"), a->d_out);
    EXPECT_EQ(rec.at("rank"), a->rank);
    EXPECT_EQ(rec.at("alpha"), a->alpha);
  }
  EXPECT_FALSE(fs::exists(fs::path(dir_.string() + ".tmp")));
}

TEST_F(CheckpointTest, StructureMismatchNamesBothHashes) {
  auto other = t_.cfg;
  other.lora.rank = 1;
  try {
    load_checkpoint(dir_, &other);
    FAIL() << "expected CheckpointMismatch";
  } catch (const CheckpointMismatch& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(to_hex(structure_hash(other))), std::string::npos) << msg;
    EXPECT_NE(msg.find(to_hex(structure_hash(t_.cfg))), std::string::npos) << msg;
  }
  other = t_.cfg;
  other.lr = 0.5;
  EXPECT_NO_THROW(load_checkpoint(dir_, &other));
}

TEST_F(CheckpointTest, MissingFilesRejected) {
  fs::remove(dir_ / "state.json");
  EXPECT_THROW(load_checkpoint(dir_), CheckpointError);
  EXPECT_THROW(load_checkpoint(scratch_ / "nowhere"), CheckpointError);
}

TEST_F(CheckpointTest, TruncatedBlobRejected) {
  const auto path = dir_ / "generator_base.bin";
  const auto size = fs::file_size(path);
  fs::resize_file(path, size / 2);
  EXPECT_THROW(load_checkpoint(dir_), CheckpointError);
}

TEST_F(CheckpointTest, AlteredWeightsFailHashCheck) {
  const auto path = dir_ / "text_base.bin";
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(static_cast<std::streamoff>(fs::file_size(path) - 3));
  f.put('\x7e');
  f.close();
  EXPECT_THROW(load_checkpoint(dir_), CheckpointError);
}

TEST_F(CheckpointTest, CorruptIndexRejected) {
  std::ofstream(dir_ / "index.json", std::ios::trunc) << "{not json";
  EXPECT_THROW(load_checkpoint(dir_), CheckpointError);
}

TEST(Blob, RoundTrip) {
  testing::TempDir dir;
  const std::vector<NamedTensor> in = {{"alpha", ag::Tensor::from(2, 3, {1, -2, 3.5, 1e-300, 7, 0})},
                                       {"b", ag::Tensor::from(1, 1, {-0.0})}};
  write_blob(dir / "x.bin", in);
  const auto out = read_blob(dir / "x.bin");
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].name, "alpha");
  EXPECT_EQ(out[0].tensor.rows(), 2);
  EXPECT_EQ(out[0].tensor.cols(), 3);
  EXPECT_TRUE(std::equal(in[0].tensor.data().begin(), in[0].tensor.data().end(),
                         out[0].tensor.data().begin()));
  EXPECT_TRUE(std::signbit(out[1].tensor.data()[0]));
  std::ofstream(dir / "bad.bin") << "SLBLOB00";
  EXPECT_THROW(read_blob(dir / "bad.bin"), CheckpointError);
}

TEST(Resume, SplitRunMatchesStraightRun) {
  testing::TempDir scratch;
  auto cfg = testing::tiny_config();
  cfg.train_steps = 2;
  cfg.checkpoint_every = 10;
  const auto manifest_path = testing::make_paired_dataset(scratch.path(), 3, cfg.image_size, cfg);
  const auto manifest = read_manifest(manifest_path);

  const auto straight = train(cfg, manifest, manifest_path, {scratch / "straight", {}, {}, {}});

  auto first = cfg;
  first.train_steps = 1;
  train(first, manifest, manifest_path, {scratch / "split", {}, {}, {}});
  EXPECT_EQ(resolve_checkpoint_dir(scratch / "split"), scratch / "split" / "step-000001");
  const auto resumed = train(cfg, manifest, manifest_path,
                             {scratch / "split", resolve_checkpoint_dir(scratch / "split"), {}, {}});
  EXPECT_EQ(resumed.steps_run, 1);
  ASSERT_EQ(resumed.history.size(), 2u);
  EXPECT_EQ(resumed.history[0].step, 1);
  EXPECT_EQ(resumed.history[1].step, 2);
  EXPECT_NEAR(resumed.history[1].loss.total, straight.history[1].loss.total, 1e-6);

  const auto a = load_checkpoint(straight.final_checkpoint);
  const auto b = load_checkpoint(resumed.final_checkpoint);
  const auto pa = trainable_tensors(a.model, TrainingMode::kJoint, 0, cfg);
  const auto pb = trainable_tensors(b.model, TrainingMode::kJoint, 0, cfg);
  ASSERT_EQ(pa.size(), pb.size());
  double worst = 0.0;
  for (size_t i = 0; i < pa.size(); ++i) {
    for (size_t j = 0; j < pa[i].tensor.size(); ++j) {
      worst = std::max(worst, std::fabs(pa[i].tensor.data()[j] - pb[i].tensor.data()[j]));
    }
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(Resume, ModeChangeRejected) {
  testing::TempDir scratch;
  auto cfg = testing::tiny_config();
  cfg.train_steps = 1;
  const auto manifest_path = testing::make_paired_dataset(scratch.path(), 2, cfg.image_size, cfg);
  const auto manifest = read_manifest(manifest_path);
  const auto r = train(cfg, manifest, manifest_path, {scratch / "ck", {}, {}, {}});
  cfg.training_mode = TrainingMode::kTwoStage;
  cfg.train_steps = 2;
  EXPECT_THROW(train(cfg, manifest, manifest_path, {scratch / "ck", r.final_checkpoint, {}, {}}),
               CheckpointMismatch);
}

}  // namespace
}  // namespace styleloop
