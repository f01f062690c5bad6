#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "peakit/error.hpp"
#include "peakit/nn/layers.hpp"
#include "peakit/pea_type.hpp"

namespace peakit {

enum class Architecture : std::uint8_t { LeNet5, ResNeXt };

inline const char* to_string(Architecture a) { return a == Architecture::LeNet5 ? "lenet5" : "resnext"; }

inline Architecture parse_architecture(const std::string& s) {
  if (s == "lenet5" || s == "lenet") return Architecture::LeNet5;
  if (s == "resnext") return Architecture::ResNeXt;
  fail(ErrorCode::ParseError, "unknown architecture '" + s + "' (expected lenet5 or resnext)");
}

/// Input tensor geometry for one PEA type: 3 channels (Y, U, V) for spatial
/// types, 10 luma channels for temporal ones.
inline int input_channels(PeaType t) { return is_temporal(t) ? kTemporalSpan : 3; }

struct LeNet5Config {
  int input_size = 32;
  int input_channels = 3;
  int conv1_filters = 20;
  int conv2_filters = 50;
  int fc1_width = 500;

  /// Side length after conv1 -> pool -> conv2 -> pool.
  int final_side() const { return ((input_size - 4) / 2 - 4) / 2; }
  int fc1_inputs() const { return conv2_filters * final_side() * final_side(); }

  void validate() const {
    if (input_channels <= 0 || conv1_filters <= 0 || conv2_filters <= 0 || fc1_width <= 0)
      fail(ErrorCode::ConfigInvalid, "lenet5 widths must be positive");
    const int c1 = input_size - 4;
    if (c1 <= 0 || c1 % 2 != 0 || c1 / 2 - 4 <= 0 || (c1 / 2 - 4) % 2 != 0)
      fail(ErrorCode::ShapeUnderflow, "lenet5 input " + std::to_string(input_size) +
                                          " is too small or not poolable (needs two 5x5 convs and two 2x2 pools)");
  }
};

template <typename T>
std::unique_ptr<nn::Sequential<T>> build_lenet5(const LeNet5Config& cfg) {
  cfg.validate();
  auto net = std::make_unique<nn::Sequential<T>>();
  net->template add<nn::Conv2d<T>>(nn::Conv2dOptions{cfg.input_channels, cfg.conv1_filters, 5, 1, 0, 1, true});
  net->template add<nn::ReLU<T>>();
  net->template add<nn::MaxPool2x2<T>>();
  net->template add<nn::Conv2d<T>>(nn::Conv2dOptions{cfg.conv1_filters, cfg.conv2_filters, 5, 1, 0, 1, true});
  net->template add<nn::ReLU<T>>();
  net->template add<nn::MaxPool2x2<T>>();
  net->template add<nn::FullyConnected<T>>(cfg.fc1_inputs(), cfg.fc1_width);
  net->template add<nn::ReLU<T>>();
  net->template add<nn::FullyConnected<T>>(cfg.fc1_width, 2);
  net->template add<nn::Softmax<T>>();
  return net;
}

inline std::size_t lenet5_parameter_count(const LeNet5Config& c) {
  const auto conv1 = static_cast<std::size_t>(c.conv1_filters) * (c.input_channels * 25 + 1);
  const auto conv2 = static_cast<std::size_t>(c.conv2_filters) * (c.conv1_filters * 25 + 1);
  const auto fc1 = static_cast<std::size_t>(c.fc1_width) * (c.fc1_inputs() + 1);
  const auto fc2 = static_cast<std::size_t>(2) * (c.fc1_width + 1);
  return conv1 + conv2 + fc1 + fc2;
}

/// Stage s (0-based) has bottleneck width cardinality * bottleneck_width * 2^s
/// and output width stage_channels[s]. Stages after the first downsample by
/// two in their first block.
struct ResNeXtConfig {
  int input_size = 32;
  int input_channels = 3;
  int stem_channels = 64;
  int stem_stride = 1;
  std::vector<int> stage_channels = {64, 128, 256};
  std::vector<int> blocks_per_stage = {1, 1, 1};
  int cardinality = 32;
  int bottleneck_width = 4;

  int bottleneck_channels(std::size_t stage) const { return cardinality * bottleneck_width * (1 << stage); }

  void validate() const {
    if (cardinality <= 0 || bottleneck_width <= 0 || stem_channels <= 0 || input_channels <= 0)
      fail(ErrorCode::ConfigInvalid, "resnext widths must be positive");
    if (stem_stride != 1 && stem_stride != 2) fail(ErrorCode::ConfigInvalid, "stem stride must be 1 or 2");
    if (stage_channels.empty() || stage_channels.size() != blocks_per_stage.size())
      fail(ErrorCode::ConfigInvalid, "stage_channels and blocks_per_stage must be non-empty and equally long");
    for (std::size_t s = 0; s < stage_channels.size(); ++s) {
      if (stage_channels[s] <= 0 || blocks_per_stage[s] <= 0) fail(ErrorCode::ConfigInvalid, "stage sizes must be positive");
      if (bottleneck_channels(s) % cardinality != 0)
        fail(ErrorCode::ConfigInvalid, "cardinality must divide the bottleneck channels");
    }
    int side = (input_size - 1) / stem_stride + 1;
    for (std::size_t s = 1; s < stage_channels.size(); ++s) side = (side - 1) / 2 + 1;
    if (input_size < 1 || side < 1) fail(ErrorCode::ShapeUnderflow, "resnext input too small");
  }
};

template <typename T>
void add_conv_bn(nn::Sequential<T>& seq, int in, int out, int kernel, int stride, int groups, bool relu) {
  seq.template add<nn::Conv2d<T>>(nn::Conv2dOptions{in, out, kernel, stride, kernel / 2, groups, false, stride > 1});
  seq.template add<nn::BatchNorm<T>>(out);
  if (relu) seq.template add<nn::ReLU<T>>();
}

/// 1x1 reduce -> 3x3 grouped -> 1x1 expand, each followed by BN (and ReLU except
/// the last); ReLU after the shortcut add.
template <typename T>
std::unique_ptr<nn::ResidualBlock<T>> make_resnext_block(int in, int bottleneck, int out, int cardinality, int stride) {
  if (bottleneck % cardinality != 0) fail(ErrorCode::ConfigInvalid, "cardinality must divide the bottleneck channels");
  auto block = std::make_unique<nn::ResidualBlock<T>>();
  add_conv_bn(block->branch(), in, bottleneck, 1, 1, 1, true);
  add_conv_bn(block->branch(), bottleneck, bottleneck, 3, stride, cardinality, true);
  add_conv_bn(block->branch(), bottleneck, out, 1, 1, 1, false);
  if (in != out || stride != 1) add_conv_bn(block->shortcut(), in, out, 1, stride, 1, false);
  return block;
}

template <typename T>
std::unique_ptr<nn::Sequential<T>> build_resnext(const ResNeXtConfig& cfg) {
  cfg.validate();
  auto net = std::make_unique<nn::Sequential<T>>();
  add_conv_bn(*net, cfg.input_channels, cfg.stem_channels, 3, cfg.stem_stride, 1, true);
  int in = cfg.stem_channels;
  for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s)
    for (int b = 0; b < cfg.blocks_per_stage[s]; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      net->push_back(make_resnext_block<T>(in, cfg.bottleneck_channels(s), cfg.stage_channels[s], cfg.cardinality, stride));
      in = cfg.stage_channels[s];
    }
  net->template add<nn::GlobalAvgPool<T>>();
  net->template add<nn::FullyConnected<T>>(in, 2);
  net->template add<nn::Softmax<T>>();
  return net;
}

inline std::size_t resnext_parameter_count(const ResNeXtConfig& c) {
  auto conv_bn = [](std::size_t in, std::size_t out, std::size_t k, std::size_t groups) {
    return out * (in / groups) * k * k + 2 * out;
  };
  std::size_t n = conv_bn(c.input_channels, c.stem_channels, 3, 1);
  std::size_t in = c.stem_channels;
  for (std::size_t s = 0; s < c.stage_channels.size(); ++s)
    for (int b = 0; b < c.blocks_per_stage[s]; ++b) {
      const std::size_t d = c.bottleneck_channels(s), out = c.stage_channels[s];
      n += conv_bn(in, d, 1, 1) + conv_bn(d, d, 3, c.cardinality) + conv_bn(d, out, 1, 1);
      if (in != out || (s > 0 && b == 0)) n += conv_bn(in, out, 1, 1);
      in = out;
    }
  return n + 2 * (in + 1);
}

inline void to_json(nlohmann::json& j, const LeNet5Config& c) {
  j = {{"input_size", c.input_size},
       {"input_channels", c.input_channels},
       {"conv1_filters", c.conv1_filters},
       {"conv2_filters", c.conv2_filters},
       {"fc1_width", c.fc1_width}};
}
inline void from_json(const nlohmann::json& j, LeNet5Config& c) {
  c.input_size = j.value("input_size", c.input_size);
  c.input_channels = j.value("input_channels", c.input_channels);
  c.conv1_filters = j.value("conv1_filters", c.conv1_filters);
  c.conv2_filters = j.value("conv2_filters", c.conv2_filters);
  c.fc1_width = j.value("fc1_width", c.fc1_width);
}
inline void to_json(nlohmann::json& j, const ResNeXtConfig& c) {
  j = {{"input_size", c.input_size},           {"input_channels", c.input_channels},
       {"stem_channels", c.stem_channels},     {"stem_stride", c.stem_stride},
       {"stage_channels", c.stage_channels},   {"blocks_per_stage", c.blocks_per_stage},
       {"cardinality", c.cardinality},         {"bottleneck_width", c.bottleneck_width}};
}
inline void from_json(const nlohmann::json& j, ResNeXtConfig& c) {
  c.input_size = j.value("input_size", c.input_size);
  c.input_channels = j.value("input_channels", c.input_channels);
  c.stem_channels = j.value("stem_channels", c.stem_channels);
  c.stem_stride = j.value("stem_stride", c.stem_stride);
  c.stage_channels = j.value("stage_channels", c.stage_channels);
  c.blocks_per_stage = j.value("blocks_per_stage", c.blocks_per_stage);
  c.cardinality = j.value("cardinality", c.cardinality);
  c.bottleneck_width = j.value("bottleneck_width", c.bottleneck_width);
}

/// Either family, configured for one input geometry.
struct ModelConfig {
  Architecture arch = Architecture::LeNet5;
  LeNet5Config lenet;
  ResNeXtConfig resnext;

  /// Desk defaults for a PEA type: LeNet-5 as specified, and a ResNeXt whose
  /// stem downsamples 72-pixel inputs so a single core trains it in minutes.
  static ModelConfig for_type(Architecture a, PeaType t) {
    ModelConfig m;
    m.arch = a;
    m.lenet.input_size = m.resnext.input_size = window_size(t);
    m.lenet.input_channels = m.resnext.input_channels = peakit::input_channels(t);
    if (window_size(t) == 72) {
      m.resnext.stem_channels = 32;
      m.resnext.stem_stride = 2;
      m.resnext.stage_channels = {32, 64, 128};
      m.resnext.bottleneck_width = 1;
    }
    return m;
  }

  int input_size() const { return arch == Architecture::LeNet5 ? lenet.input_size : resnext.input_size; }
  int input_channels() const { return arch == Architecture::LeNet5 ? lenet.input_channels : resnext.input_channels; }

  template <typename T>
  std::unique_ptr<nn::Sequential<T>> build() const {
    return arch == Architecture::LeNet5 ? build_lenet5<T>(lenet) : build_resnext<T>(resnext);
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& m) {
  j = {{"arch", to_string(m.arch)}};
  if (m.arch == Architecture::LeNet5)
    j["lenet5"] = m.lenet;
  else
    j["resnext"] = m.resnext;
}
inline void from_json(const nlohmann::json& j, ModelConfig& m) {
  m.arch = parse_architecture(j.at("arch").get<std::string>());
  if (j.contains("lenet5")) m.lenet = j.at("lenet5").get<LeNet5Config>();
  if (j.contains("resnext")) m.resnext = j.at("resnext").get<ResNeXtConfig>();
}

}  // namespace peakit
