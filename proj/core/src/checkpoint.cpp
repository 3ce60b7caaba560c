// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "styleloop/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <map>

#include "styleloop/error.hpp"
#include "styleloop/fsutil.hpp"
#include "styleloop/nn.hpp"

namespace styleloop {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kBlobMagic[8] = {'S', 'L', 'B', 'L', 'O', 'B', '0', '1'};
constexpr const char* kFormat = "styleloop-checkpoint";
constexpr int kVersion = 1;

const lora::AdapterDomain kDomains[] = {lora::AdapterDomain::kSource, lora::AdapterDomain::kTarget,
                                        lora::AdapterDomain::kGenerator};

lora::AdapterSet& adapter_set(Model& m, lora::AdapterDomain d) {
  switch (d) {
    case lora::AdapterDomain::kSource:
      return m.text.source_adapters;
    case lora::AdapterDomain::kTarget:
      return m.text.target_adapters;
    case lora::AdapterDomain::kGenerator:
      break;
  }
  return m.generator.adapters;
}

const lora::AdapterSet& adapter_set(const Model& m, lora::AdapterDomain d) {
  return adapter_set(const_cast<Model&>(m), d);
}

std::vector<NamedTensor> entries_of(const nn::ParameterSet& p) {
  std::vector<NamedTensor> out;
  for (const auto& e : p.entries()) {
    out.push_back({e.name, e.tensor});
  }
  return out;
}

std::vector<NamedTensor> adapter_tensors(const lora::AdapterSet& set) {
  std::vector<NamedTensor> out;
  for (const auto& [id, a] : set.adapters) {
    out.push_back({id + ".A", a.a});
    out.push_back({id + ".B", a.b});
  }
  return out;
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const IoError& e) {
    throw CheckpointError(std::string("missing checkpoint file: ") + e.what());
  } catch (const json::parse_error& e) {
    throw CheckpointError("corrupt checkpoint file '" + path.string() + "': " + e.what());
  }
}

void load_into(nn::ParameterSet& params, const std::vector<NamedTensor>& blob, const fs::path& src) {
  if (blob.size() != params.entries().size()) {
    throw CheckpointError("'" + src.string() + "' holds " + std::to_string(blob.size()) +
                          " tensors, model expects " + std::to_string(params.entries().size()));
  }
  for (const auto& nt : blob) {
    if (!params.contains(nt.name)) {
      throw CheckpointError("'" + src.string() + "' has unknown tensor '" + nt.name + "'");
    }
    ag::Tensor dst = params.get(nt.name);
    if (dst.rows() != nt.tensor.rows() || dst.cols() != nt.tensor.cols()) {
      throw CheckpointError("tensor '" + nt.name + "' has the wrong shape in '" + src.string() + "'");
    }
    std::copy(nt.tensor.data().begin(), nt.tensor.data().end(), dst.mutable_data().begin());
  }
}

}  // namespace

void write_blob(const fs::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write '" + path.string() + "'");
  }
  out.write(kBlobMagic, sizeof(kBlobMagic));
  const uint64_t count = tensors.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& t : tensors) {
    const auto len = static_cast<uint32_t>(t.name.size());
    const int32_t rows = t.tensor.rows();
    const int32_t cols = t.tensor.cols();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(t.name.data(), len);
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    out.write(reinterpret_cast<const char*>(t.tensor.data().data()),
              static_cast<std::streamsize>(t.tensor.size() * sizeof(double)));
  }
  if (!out) {
    throw IoError("short write to '" + path.string() + "'");
  }
}

std::vector<NamedTensor> read_blob(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError("missing checkpoint blob '" + path.string() + "'");
  }
  auto fail = [&path](const std::string& why) {
    throw CheckpointError("corrupt blob '" + path.string() + "': " + why);
  };
  char magic[sizeof(kBlobMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kBlobMagic, sizeof(magic)) != 0) {
    fail("bad magic");
  }
  uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!in || count > (1u << 20)) {
    fail("bad tensor count");
  }
  std::vector<NamedTensor> out;
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > 4096) {
      fail("bad name length");
    }
    std::string name(len, '\0');
    in.read(name.data(), len);
    int32_t rows = 0;
    int32_t cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    if (!in || rows < 0 || cols < 0 || static_cast<int64_t>(rows) * cols > (int64_t{1} << 28)) {
      fail("bad shape for '" + name + "'");
    }
    std::vector<double> values(static_cast<size_t>(rows) * cols);
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) {
      fail("truncated data for '" + name + "'");
    }
    out.push_back({name, ag::Tensor::from(rows, cols, std::move(values))});
  }
  return out;
}

void save_checkpoint(const fs::path& dir, const ExperimentConfig& cfg, const Model& model,
                     const TrainState& state, const std::vector<LossRow>& history) {
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  write_file_atomic(tmp / "config.json", config_to_json(cfg) + "\n");
  write_blob(tmp / "text_base.bin", entries_of(model.text.base));
  write_blob(tmp / "generator_base.bin", entries_of(model.generator.base));

  json adapters = json::array();
  json adapter_hashes = json::object();
  for (const auto d : kDomains) {
    const auto& set = adapter_set(model, d);
    write_blob(tmp / (std::string("adapters_") + lora::to_string(d) + ".bin"), adapter_tensors(set));
    adapter_hashes[lora::to_string(d)] = to_hex(nn::hash_adapters(set));
    for (const auto& [id, a] : set.adapters) {
      adapters.push_back({{"domain", lora::to_string(d)},
                          {"layer_id", id},
                          {"d_in", a.d_in},
                          {"d_out", a.d_out},
                          {"rank", a.rank},
                          {"alpha", a.alpha}});
    }
  }
  write_file_atomic(tmp / "adapters.json", adapters.dump(2) + "\n");

  std::vector<NamedTensor> moments;
  json steps = json::object();
  for (const auto& [name, m] : state.moments) {
    moments.push_back({name + ".m", ag::Tensor::from(1, static_cast<int>(m.m.size()), m.m)});
    moments.push_back({name + ".v", ag::Tensor::from(1, static_cast<int>(m.v.size()), m.v)});
    steps[name] = m.t;
  }
  write_blob(tmp / "optimizer.bin", moments);
  write_file_atomic(tmp / "optimizer.json", steps.dump(2) + "\n");

  json st = {{"step", state.step},
             {"epoch", state.epoch},
             {"cursor", state.cursor},
             {"accumulation", state.accumulation},
             {"mode", to_string(state.mode)},
             {"validation_cycle_l1", nullptr}};
  if (std::isfinite(state.validation_cycle_l1)) {
    st["validation_cycle_l1"] = state.validation_cycle_l1;
  }
  write_file_atomic(tmp / "state.json", st.dump(2) + "\n");
  write_file_atomic(tmp / "loss_history.csv", loss_history_csv(history));

  const json index = {
      {"format", kFormat},
      {"version", kVersion},
      {"step", state.step},
      {"mode", to_string(state.mode)},
      {"structure_hash", to_hex(structure_hash(cfg))},
      {"perceptual_seed", cfg.model.perceptual_seed},
      {"base_hashes",
       {{"text", to_hex(model.text.base.hash())}, {"generator", to_hex(model.generator.base.hash())}}},
      {"adapter_hashes", adapter_hashes},
      {"files",
       {"config.json", "state.json", "text_base.bin", "generator_base.bin", "adapters.json",
        "adapters_source.bin", "adapters_target.bin", "adapters_generator.bin", "optimizer.bin",
        "optimizer.json", "loss_history.csv"}}};
  write_file_atomic(tmp / "index.json", index.dump(2) + "\n");

  std::error_code ec;
  fs::remove_all(dir, ec);
  fs::rename(tmp, dir, ec);
  if (ec) {
    throw IoError("cannot move checkpoint into '" + dir.string() + "': " + ec.message());
  }
}

fs::path resolve_checkpoint_dir(const fs::path& path) {
  if (fs::exists(path / "index.json")) {
    return path;
  }
  if (fs::exists(path / "LATEST")) {
    std::string name = read_text_file(path / "LATEST");
    while (!name.empty() && (name.back() == '\n' || name.back() == '\r' || name.back() == ' ')) {
      name.pop_back();
    }
    return path / name;
  }
  throw CheckpointError("no checkpoint at '" + path.string() + "'");
}

Checkpoint load_checkpoint(const fs::path& path, const ExperimentConfig* expected) {
  const fs::path dir = resolve_checkpoint_dir(path);
  const json index = read_json(dir / "index.json");
  if (index.value("format", "") != kFormat || index.value("version", 0) != kVersion) {
    throw CheckpointError("'" + dir.string() + "' is not a supported checkpoint");
  }
  Checkpoint ck;
  try {
    const std::string stored = index.at("structure_hash").get<std::string>();
    if (expected != nullptr && to_hex(structure_hash(*expected)) != stored) {
      throw CheckpointMismatch("config structure hash " + to_hex(structure_hash(*expected)) +
                               " does not match checkpoint hash " + stored + " in '" +
                               dir.string() + "'");
    }
    try {
      ck.config = parse_config(read_text_file(dir / "config.json")).config;
    } catch (const ConfigError& e) {
      throw CheckpointError(std::string("corrupt config snapshot: ") + e.what());
    } catch (const IoError& e) {
      throw CheckpointError(std::string("missing checkpoint file: ") + e.what());
    }
    ck.structure_hash = structure_hash(ck.config);
    if (to_hex(ck.structure_hash) != stored) {
      throw CheckpointError("config snapshot does not match the stored structure hash");
    }

    const json st = read_json(dir / "state.json");
    const auto mode = parse_training_mode(st.at("mode").get<std::string>());
    if (!mode) {
      throw CheckpointError("unknown training mode in state.json");
    }
    ck.state.mode = *mode;
    ck.state.step = st.at("step").get<int>();
    ck.state.epoch = st.at("epoch").get<int64_t>();
    ck.state.cursor = st.at("cursor").get<size_t>();
    ck.state.accumulation = st.at("accumulation").get<int>();
    if (!st.at("validation_cycle_l1").is_null()) {
      ck.state.validation_cycle_l1 = st.at("validation_cycle_l1").get<double>();
    }

    ck.model = init_model(ck.config, ck.state.mode);
    load_into(ck.model.text.base, read_blob(dir / "text_base.bin"), dir / "text_base.bin");
    load_into(ck.model.generator.base, read_blob(dir / "generator_base.bin"),
              dir / "generator_base.bin");

    const json adapters = read_json(dir / "adapters.json");
    std::map<std::string, std::map<std::string, ag::Tensor>> blobs;
    for (const auto d : kDomains) {
      const fs::path blob_path = dir / (std::string("adapters_") + lora::to_string(d) + ".bin");
      for (auto& nt : read_blob(blob_path)) {
        blobs[lora::to_string(d)][nt.name] = nt.tensor;
      }
      adapter_set(ck.model, d).adapters.clear();
    }
    for (const auto& rec : adapters) {
      const std::string domain = rec.at("domain").get<std::string>();
      const std::string id = rec.at("layer_id").get<std::string>();
      lora::LoRAAdapter a;
      a.target_layer_id = id;
      a.d_in = rec.at("d_in").get<int>();
      a.d_out = rec.at("d_out").get<int>();
      a.rank = rec.at("rank").get<int>();
      a.alpha = rec.at("alpha").get<double>();
      auto& tensors = blobs[domain];
      if (tensors.count(id + ".A") == 0 || tensors.count(id + ".B") == 0) {
        throw CheckpointError("adapter '" + domain + "/" + id + "' has no weights");
      }
      a.a = tensors.at(id + ".A");
      a.b = tensors.at(id + ".B");
      if (a.a.rows() != a.rank || a.a.cols() != a.d_in || a.b.rows() != a.d_out ||
          a.b.cols() != a.rank) {
        throw CheckpointError("adapter '" + domain + "/" + id + "' does not match its index entry");
      }
      bool placed = false;
      for (const auto d : kDomains) {
        if (domain == lora::to_string(d)) {
          adapter_set(ck.model, d).adapters.emplace(id, a);
          placed = true;
        }
      }
      if (!placed) {
        throw CheckpointError("unknown adapter domain '" + domain + "'");
      }
    }
    if (!ck.model.text.source_adapters.empty() || !ck.model.text.target_adapters.empty()) {
      nn::check_adapters(ck.model.text.source_adapters, text_adaptable_layers(ck.model.text.shape));
      nn::check_adapters(ck.model.text.target_adapters, text_adaptable_layers(ck.model.text.shape));
    }
    if (!ck.model.generator.adapters.empty()) {
      nn::check_adapters(ck.model.generator.adapters,
                         generator_adaptable_layers(ck.model.generator.shape));
    }

    const auto& hashes = index.at("base_hashes");
    if (hashes.at("text").get<std::string>() != to_hex(ck.model.text.base.hash()) ||
        hashes.at("generator").get<std::string>() != to_hex(ck.model.generator.base.hash())) {
      throw CheckpointError("base weight hash mismatch in '" + dir.string() + "'");
    }
    for (const auto d : kDomains) {
      if (index.at("adapter_hashes").at(lora::to_string(d)).get<std::string>() !=
          to_hex(nn::hash_adapters(adapter_set(ck.model, d)))) {
        throw CheckpointError(std::string("adapter hash mismatch for ") + lora::to_string(d));
      }
    }

    const json steps = read_json(dir / "optimizer.json");
    std::map<std::string, ag::Tensor> moment_blobs;
    for (auto& nt : read_blob(dir / "optimizer.bin")) {
      moment_blobs[nt.name] = nt.tensor;
    }
    for (auto it = steps.begin(); it != steps.end(); ++it) {
      const auto m = moment_blobs.find(it.key() + ".m");
      const auto v = moment_blobs.find(it.key() + ".v");
      if (m == moment_blobs.end() || v == moment_blobs.end()) {
        throw CheckpointError("optimizer state for '" + it.key() + "' is incomplete");
      }
      AdamMoments am;
      am.m.assign(m->second.data().begin(), m->second.data().end());
      am.v.assign(v->second.data().begin(), v->second.data().end());
      am.t = it.value().get<int64_t>();
      ck.state.moments.emplace(it.key(), std::move(am));
    }
    ck.history = parse_loss_history_csv(read_text_file(dir / "loss_history.csv"));
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt checkpoint '" + dir.string() + "': " + e.what());
  } catch (const IoError& e) {
    throw CheckpointError(std::string("missing checkpoint file: ") + e.what());
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("checkpoint adapters do not fit the model: ") + e.what());
  }
  return ck;
}

}  // namespace styleloop
