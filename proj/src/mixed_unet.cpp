#include "camforge/mixed_unet.hpp"

#include "camforge/errors.hpp"
#include "camforge/nn/checkpoint.hpp"

namespace camforge {

using nn::Var;

void MixedUNetConfig::validate() const {
  if (in_channels < 1) throw ConfigError("unet in_channels must be >= 1");
  if (num_classes < 2) throw ConfigError("unet.classes must be >= 2");
  if (base_channels < 1) throw ConfigError("unet.base_channels must be >= 1");
}

namespace {

DoubleConv make_double(std::int64_t in, std::int64_t out, Rng& rng) {
  return {nn::make_conv2d(in, out, 3, rng), nn::make_batchnorm(out), nn::make_conv2d(out, out, 3, rng),
          nn::make_batchnorm(out)};
}

Var double_forward(const Var& x, DoubleConv& d, bool training) {
  Var y = nn::relu(nn::batchnorm_forward(nn::conv2d_forward(x, d.conv1, 1, 1), d.bn1, training));
  return nn::relu(nn::batchnorm_forward(nn::conv2d_forward(y, d.conv2, 1, 1), d.bn2, training));
}

void collect_double(const std::string& p, DoubleConv& d, std::vector<nn::NamedParameter>& params,
                    std::vector<nn::NamedBuffer>& bufs) {
  nn::collect(p + ".conv1", d.conv1, params, bufs);
  nn::collect(p + ".bn1", d.bn1, params, bufs);
  nn::collect(p + ".conv2", d.conv2, params, bufs);
  nn::collect(p + ".bn2", d.bn2, params, bufs);
}

void collect_all(MixedUNetModel& m, std::vector<nn::NamedParameter>& params, std::vector<nn::NamedBuffer>& bufs) {
  for (std::size_t i = 0; i < m.encoder.size(); ++i) collect_double("enc" + std::to_string(i), m.encoder[i], params, bufs);
  collect_double("bottleneck", m.bottleneck, params, bufs);
  for (std::size_t b = 0; b < m.branches.size(); ++b) {
    for (std::size_t s = 0; s < m.branches[b].steps.size(); ++s) {
      const std::string p = "branch" + std::to_string(b + 1) + ".step" + std::to_string(s);
      nn::collect(p + ".up", m.branches[b].steps[s].up, params, bufs);
      collect_double(p, m.branches[b].steps[s].conv, params, bufs);
    }
  }
  nn::collect("head", m.head, params, bufs);
}

DecoderBranch make_branch(std::int64_t base, Rng& rng) {
  DecoderBranch br;
  for (std::int64_t ci = 8 * base; ci > base; ci /= 2) {
    DecoderStep s;
    s.up = nn::make_transposed_conv2d(ci, ci / 2, 3, rng);
    s.conv = make_double(ci, ci / 2, rng);
    br.steps.push_back(std::move(s));
  }
  return br;
}

std::int64_t conv_count(std::int64_t ci, std::int64_t co, std::int64_t k) { return k * k * ci * co + co; }
std::int64_t double_count(std::int64_t ci, std::int64_t co) {
  return conv_count(ci, co, 3) + 2 * co + conv_count(co, co, 3) + 2 * co;
}

Var pool(const Var& x) { return nn::maxpool2d(x, 3, 2, 1); }

}  // namespace

std::vector<nn::NamedParameter> MixedUNetModel::parameters() {
  std::vector<nn::NamedParameter> params;
  std::vector<nn::NamedBuffer> bufs;
  collect_all(*this, params, bufs);
  return params;
}

std::vector<nn::NamedBuffer> MixedUNetModel::buffers() {
  std::vector<nn::NamedParameter> params;
  std::vector<nn::NamedBuffer> bufs;
  collect_all(*this, params, bufs);
  return bufs;
}

MixedUNetModel make_mixed_unet(const MixedUNetConfig& config, std::uint64_t seed, bool tied_init) {
  config.validate();
  MixedUNetModel m;
  m.config = config;
  const auto b = config.base_channels;
  Rng enc_rng(seed, 0x0E0C);
  std::int64_t in = config.in_channels;
  for (int i = 0; i < MixedUNetConfig::kDepth; ++i) {
    m.encoder.push_back(make_double(in, b << i, enc_rng));
    in = b << i;
  }
  m.bottleneck = make_double(4 * b, 8 * b, enc_rng);
  for (std::int64_t k = 0; k < config.branches(); ++k) {
    Rng rng(seed, 0xB0 + static_cast<std::uint64_t>(tied_init ? 0 : k));
    m.branches.push_back(make_branch(b, rng));
  }
  Rng head_rng(seed, 0x4EAD);
  m.head = nn::make_conv2d(config.branches() * b, config.num_classes, 1, head_rng);
  return m;
}

MixedUNetConfig single_branch_ablation(MixedUNetConfig config) {
  config.single_branch = true;
  return config;
}

void swap_branches(MixedUNetModel& model) {
  if (model.branches.size() != 2) throw ContractError("swap_branches needs two decoder branches");
  std::swap(model.branches[0], model.branches[1]);
}

MixedUNetForward mixed_unet_forward(MixedUNetModel& model, const Var& input, bool training) {
  const auto& s = input.shape();
  if (s.c != model.config.in_channels) {
    throw ShapeError("unet expects " + std::to_string(model.config.in_channels) + " input channels, got " +
                     s.str());
  }
  if (s.h % 8 != 0 || s.w % 8 != 0 || s.h == 0 || s.w == 0) {
    throw ShapeError("unet input sides must be multiples of 8, got " + s.str());
  }
  MixedUNetForward out;
  Var x = input;
  for (auto& e : model.encoder) {
    x = double_forward(x, e, training);
    out.skips.push_back(x);
    x = pool(x);
  }
  out.encoded = double_forward(x, model.bottleneck, training);
  Var fused;
  for (auto& br : model.branches) {
    Var d = out.encoded;
    for (std::size_t k = 0; k < br.steps.size(); ++k) {
      auto& st = br.steps[k];
      d = nn::transposed_conv2d_forward(nn::upsample_nearest(d, 2), st.up, 1, 1);
      const Var& skip = out.skips[out.skips.size() - 1 - k];
      d = nn::concat_channels(nn::center_crop(skip, d.shape().h, d.shape().w), d);
      d = double_forward(d, st.conv, training);
    }
    out.branches.push_back(d);
    fused = fused.defined() ? nn::concat_channels(fused, d) : d;
  }
  out.logits = nn::conv2d_forward(fused, model.head, 1, 0);
  out.probs = nn::softmax_channel(out.logits);
  return out;
}

std::int64_t param_count(const MixedUNetConfig& config) {
  config.validate();
  const auto b = config.base_channels;
  std::int64_t total = double_count(config.in_channels, b) + double_count(b, 2 * b) + double_count(2 * b, 4 * b);
  total += double_count(4 * b, 8 * b);
  std::int64_t branch = 0;
  for (std::int64_t ci = 8 * b; ci > b; ci /= 2) branch += conv_count(ci, ci / 2, 3) + double_count(ci, ci / 2);
  total += config.branches() * branch;
  total += conv_count(config.branches() * b, config.num_classes, 1);
  return total;
}

std::int64_t count_parameters(MixedUNetModel& model) {
  std::int64_t n = 0;
  for (const auto& p : model.parameters()) n += static_cast<std::int64_t>(p.var.value().numel());
  return n;
}

namespace {

nn::NamedTensor meta(const std::string& name, std::int64_t v) {
  return {name, nn::Tensor({1, 1, 1, 1}, static_cast<float>(v))};
}

std::int64_t read_meta(std::span<const nn::NamedTensor> blobs, const std::string& name) {
  for (const auto& b : blobs) {
    if (b.name == name) return static_cast<std::int64_t>(b.tensor[0]);
  }
  throw DataError("checkpoint lacks blob '" + name + "'");
}

}  // namespace

void save_mixed_unet(const std::filesystem::path& path, MixedUNetModel& model) {
  std::vector<nn::NamedTensor> blobs{meta("meta.in_channels", model.config.in_channels),
                                     meta("meta.num_classes", model.config.num_classes),
                                     meta("meta.base_channels", model.config.base_channels),
                                     meta("meta.branches", model.config.branches())};
  const auto params = model.parameters();
  const auto bufs = model.buffers();
  for (auto& b : nn::export_state(params, bufs)) blobs.push_back(std::move(b));
  nn::save_checkpoint(path, blobs);
}

MixedUNetModel load_mixed_unet(const std::filesystem::path& path) {
  const auto blobs = nn::load_checkpoint(path);
  MixedUNetConfig cfg;
  cfg.in_channels = read_meta(blobs, "meta.in_channels");
  cfg.num_classes = read_meta(blobs, "meta.num_classes");
  cfg.base_channels = read_meta(blobs, "meta.base_channels");
  const auto branches = read_meta(blobs, "meta.branches");
  if (branches != 1 && branches != 2) throw DataError("unet checkpoint has " + std::to_string(branches) + " branches");
  cfg.single_branch = branches == 1;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("unet checkpoint has an invalid architecture: ") + e.what());
  }
  auto model = make_mixed_unet(cfg, 0);
  auto params = model.parameters();
  auto bufs = model.buffers();
  nn::import_state(blobs, params, bufs);
  return model;
}

}  // namespace camforge
