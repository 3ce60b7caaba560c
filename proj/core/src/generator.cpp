// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "styleloop/generator.hpp"

#include <cmath>
#include <string>

#include "styleloop/error.hpp"

namespace styleloop {

namespace {

constexpr const char* kUnetBlocks[] = {"down1", "down2", "mid", "up1", "up2"};

struct ConvSpec {
  const char* id;
  int c_in;
  int c_out;
  int kernel;
};

std::vector<ConvSpec> vae_convs(const GeneratorShape& s) {
  const auto& ch = s.vae_channels;
  std::vector<ConvSpec> v = {
      {"vae.enc.conv0", 3, ch[0], 3},       {"vae.enc.conv1", ch[0], ch[1], 3},
      {"vae.enc.conv2", ch[1], ch[2], 3},   {"vae.enc.proj", ch[2], s.latent_channels, 1},
      {"vae.dec.proj", s.latent_channels, ch[2], 1}, {"vae.dec.conv0", ch[2], ch[1], 3},
      {"vae.dec.conv1", ch[1], ch[0], 3},   {"vae.dec.conv_out", ch[0], 3, 3},
  };
  if (s.vae_skip_connections) {
    v.push_back({"vae.skip0", ch[1], ch[1], 1});
    v.push_back({"vae.skip1", ch[0], ch[0], 1});
  }
  return v;
}

const lora::LoRAAdapter* adapter_for(const GeneratorWeights& w, const std::string& id) {
  return w.adapters.find(id);
}

ag::Tensor conv(const GeneratorWeights& w, const std::string& id, const ag::Tensor& x,
                ag::Spatial in, int kernel, int stride) {
  return lora::adapted_conv(x, in, w.base.get(id + ".w"), w.base.get(id + ".b"), adapter_for(w, id),
                            kernel, stride, kernel / 2);
}

ag::Tensor linear(const GeneratorWeights& w, const std::string& id, const ag::Tensor& x) {
  return lora::adapted_linear(x, w.base.get(id + ".w"), w.base.get(id + ".b"), adapter_for(w, id));
}

ag::Tensor norm(const GeneratorWeights& w, const std::string& id, const ag::Tensor& x) {
  return ag::layer_norm(x, w.base.get(id + ".g"), w.base.get(id + ".b"));
}

ag::Spatial down(ag::Spatial s) {
  return {ag::conv_out_size(s.height, 3, 2, 1), ag::conv_out_size(s.width, 3, 2, 1)};
}

ag::Tensor unet_block(const GeneratorWeights& w, const std::string& name, const ag::Tensor& x_in,
                      ag::Spatial in, int stride, const ag::Tensor& cond, ag::Spatial* out) {
  const std::string pre = "unet." + name + ".";
  ag::Tensor x = ag::add_row(x_in, w.base.get("unet.t_emb"));
  x = ag::silu(conv(w, pre + "conv", x, in, 3, stride));
  *out = stride == 1 ? in : down(in);
  const ag::Tensor h = norm(w, pre + "ln1", x);
  const ag::Tensor att = ag::attention(linear(w, pre + "q", h), linear(w, pre + "k", cond),
                                       linear(w, pre + "v", cond), w.shape.unet_heads);
  x = ag::add(x, linear(w, pre + "out", att));
  const ag::Tensor h2 = norm(w, pre + "ln2", x);
  return ag::add(x, linear(w, pre + "ffn2", ag::gelu(linear(w, pre + "ffn1", h2))));
}

void check_image_rows(const GeneratorShape& s, const ag::Tensor& rows) {
  if (rows.rows() != s.image_size * s.image_size || rows.cols() != 3) {
    throw ShapeError("generator expects a 3x" + std::to_string(s.image_size) + "x" +
                     std::to_string(s.image_size) + " image");
  }
}

}  // namespace

GeneratorShape GeneratorShape::from(const ExperimentConfig& cfg) {
  GeneratorShape s;
  s.image_size = cfg.image_size;
  s.vae_channels = cfg.model.vae_channels;
  s.latent_channels = cfg.model.latent_channels;
  s.unet_channels = cfg.model.unet_channels;
  s.unet_heads = cfg.model.unet_heads;
  s.d_cond = cfg.model.d_model;
  s.vae_skip_connections = cfg.model.vae_skip_connections;
  return s;
}

std::vector<nn::AdaptableLayer> generator_adaptable_layers(const GeneratorShape& s) {
  std::vector<nn::AdaptableLayer> out;
  for (const auto& c : vae_convs(s)) {
    out.push_back({c.id, c.kernel * c.kernel * c.c_in, c.c_out});
  }
  const int c = s.unet_channels;
  for (const char* b : kUnetBlocks) {
    const std::string pre = std::string("unet.") + b + ".";
    out.push_back({pre + "q", c, c});
    out.push_back({pre + "k", s.d_cond, c});
    out.push_back({pre + "v", s.d_cond, c});
    out.push_back({pre + "out", c, c});
    out.push_back({pre + "ffn1", c, 4 * c});
    out.push_back({pre + "ffn2", 4 * c, c});
  }
  return out;
}

GeneratorWeights init_generator(const GeneratorShape& s, const LoraSettings& lora, uint64_t seed,
                                bool with_adapters) {
  if (s.image_size % kVaeDownsample != 0) {
    throw ConfigError("image_size must be divisible by " + std::to_string(kVaeDownsample));
  }
  GeneratorWeights w;
  w.shape = s;
  auto& p = w.base;
  auto add_conv = [&](const std::string& id, int c_in, int c_out, int kernel, double gain) {
    const int fan_in = kernel * kernel * c_in;
    p.add(id + ".w", nn::gaussian(c_out, fan_in, gain / std::sqrt(static_cast<double>(fan_in)),
                                  seed, id + ".w"));
    p.add(id + ".b", nn::filled(1, c_out, 0.0));
  };
  auto add_linear = [&](const std::string& id, int d_in, int d_out) {
    add_conv(id, d_in, d_out, 1, 1.0);
  };
  auto add_norm = [&](const std::string& id, int d) {
    p.add(id + ".g", nn::filled(1, d, 1.0));
    p.add(id + ".b", nn::filled(1, d, 0.0));
  };
  for (const auto& c : vae_convs(s)) {
    add_conv(c.id, c.c_in, c.c_out, c.kernel, 1.0);
  }
  const int c = s.unet_channels;
  p.add("unet.t_emb", nn::gaussian(1, c, 0.1, seed, "unet.t_emb"));
  add_conv("unet.in", s.latent_channels, c, 3, 1.0);
  for (const char* b : kUnetBlocks) {
    const std::string pre = std::string("unet.") + b + ".";
    add_conv(pre + "conv", c, c, 3, 1.0);
    add_norm(pre + "ln1", c);
    add_linear(pre + "q", c, c);
    add_linear(pre + "k", s.d_cond, c);
    add_linear(pre + "v", s.d_cond, c);
    add_linear(pre + "out", c, c);
    add_norm(pre + "ln2", c);
    add_linear(pre + "ffn1", c, 4 * c);
    add_linear(pre + "ffn2", 4 * c, c);
  }
  add_conv("unet.out", c, s.latent_channels, 3, 0.1);
  if (with_adapters) {
    w.adapters = nn::make_adapters(generator_adaptable_layers(s), lora::AdapterDomain::kGenerator,
                                   lora.rank, lora.alpha, seed);
  } else {
    w.adapters.domain = lora::AdapterDomain::kGenerator;
  }
  return w;
}

EncoderFeatures encode_latent(const GeneratorWeights& w, const ag::Tensor& image_rows) {
  check_image_rows(w.shape, image_rows);
  if (!w.adapters.empty()) {
    nn::check_adapters(w.adapters, generator_adaptable_layers(w.shape));
  }
  EncoderFeatures f;
  ag::Spatial s{w.shape.image_size, w.shape.image_size};
  ag::Tensor x = image_rows;
  for (int i = 0; i < 3; ++i) {
    x = ag::silu(conv(w, "vae.enc.conv" + std::to_string(i), x, s, 3, 2));
    s = down(s);
    if (w.shape.vae_skip_connections && i < 2) {
      f.skips.push_back(x);
    }
  }
  f.latent = {s.height, s.width, conv(w, "vae.enc.proj", x, s, 1, 1)};
  return f;
}

ag::Tensor decode_latent(const GeneratorWeights& w, const LatentTensor& z,
                         const std::vector<ag::Tensor>& skips) {
  const int ls = w.shape.latent_size();
  if (z.height != ls || z.width != ls || z.channels() != w.shape.latent_channels ||
      z.rows.rows() != ls * ls) {
    throw ShapeError("latent must be " + std::to_string(w.shape.latent_channels) + "x" +
                     std::to_string(ls) + "x" + std::to_string(ls));
  }
  ag::Spatial s{z.height, z.width};
  ag::Tensor x = ag::silu(conv(w, "vae.dec.proj", z.rows, s, 1, 1));
  const char* stages[] = {"vae.dec.conv0", "vae.dec.conv1", "vae.dec.conv_out"};
  for (int i = 0; i < 3; ++i) {
    const ag::Spatial up{s.height * 2, s.width * 2};
    x = ag::upsample_nearest(x, s, up);
    s = up;
    x = conv(w, stages[i], x, s, 3, 1);
    if (i == 2) {
      return ag::tanh(x);
    }
    x = ag::silu(x);
    if (w.shape.vae_skip_connections && skips.size() == 2) {
      // skips[1] is the H/4 encoder map, skips[0] the H/2 one.
      const ag::Tensor& skip = skips[static_cast<size_t>(1 - i)];
      x = ag::add(x, conv(w, "vae.skip" + std::to_string(i), skip, s, 1, 1));
    }
  }
  return x;
}

LatentTensor unet_forward(const GeneratorWeights& w, const LatentTensor& z, const ag::Tensor& cond) {
  if (cond.cols() != w.shape.d_cond) {
    throw ShapeError("conditioning width " + std::to_string(cond.cols()) + " != " +
                     std::to_string(w.shape.d_cond));
  }
  const ag::Spatial s0{z.height, z.width};
  const ag::Tensor h0 = conv(w, "unet.in", z.rows, s0, 3, 1);
  ag::Spatial s1;
  ag::Spatial s2;
  ag::Spatial tmp;
  const ag::Tensor h1 = unet_block(w, "down1", h0, s0, 2, cond, &s1);
  ag::Tensor x = unet_block(w, "down2", h1, s1, 2, cond, &s2);
  x = unet_block(w, "mid", x, s2, 1, cond, &tmp);
  x = ag::add(ag::upsample_nearest(x, s2, s1), h1);
  x = unet_block(w, "up1", x, s1, 1, cond, &tmp);
  x = ag::add(ag::upsample_nearest(x, s1, s0), h0);
  x = unet_block(w, "up2", x, s0, 1, cond, &tmp);
  const ag::Tensor delta = conv(w, "unet.out", x, s0, 3, 1);
  return {z.height, z.width, ag::add(z.rows, delta)};
}

ag::Tensor translate_rows(const GeneratorWeights& w, const ag::Tensor& image_rows,
                          const ag::Tensor& cond) {
  if (w.identity) {
    check_image_rows(w.shape, image_rows);
    return image_rows;
  }
  const EncoderFeatures f = encode_latent(w, image_rows);
  return decode_latent(w, unet_forward(w, f.latent, cond), f.skips);
}

LatentTensor vae_encode(const ImageTensor& img, const GeneratorWeights& w) {
  ag::NoGradGuard guard;
  if (img.height != w.shape.image_size || img.width != w.shape.image_size) {
    throw ShapeError("vae_encode: image is " + std::to_string(img.height) + "x" +
                     std::to_string(img.width) + ", expected " + std::to_string(w.shape.image_size));
  }
  return encode_latent(w, image_to_rows(img)).latent;
}

ImageTensor vae_decode(const LatentTensor& z, const GeneratorWeights& w) {
  ag::NoGradGuard guard;
  return rows_to_image(decode_latent(w, z), w.shape.image_size, w.shape.image_size);
}

LatentTensor unet(const LatentTensor& z, const ConditioningEmbedding& c, const GeneratorWeights& w) {
  ag::NoGradGuard guard;
  return unet_forward(w, z, c.values);
}

ImageTensor translate(const ImageTensor& img, const ConditioningEmbedding& c,
                      const GeneratorWeights& w) {
  ag::NoGradGuard guard;
  if (img.height != w.shape.image_size || img.width != w.shape.image_size) {
    throw ShapeError("translate: image is " + std::to_string(img.height) + "x" +
                     std::to_string(img.width) + ", expected " + std::to_string(w.shape.image_size));
  }
  return rows_to_image(translate_rows(w, image_to_rows(img), c.values), img.height, img.width);
}

size_t trainable_parameter_count(const GeneratorWeights& w, TrainingMode mode) {
  if (mode == TrainingMode::kNoLora) {
    return w.base.parameter_count();
  }
  return lora::trainable_parameter_count(w.adapters);
}

}  // namespace styleloop
