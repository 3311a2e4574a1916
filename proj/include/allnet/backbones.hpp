#pragma once

// Mini VGG-, ResNet- and Inception-style feature extractors and the
// three-way fusion network built on top of them.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "graph.hpp"

namespace allnet {

/// Nodes a backbone exports to the fusion head: two intermediate taps and
/// the final activation.
struct Fragment {
  std::array<int, 2> taps{};
  int output = 0;
};

struct VggConfig {
  std::vector<std::size_t> widths{16, 32, 64};
};

struct ResNetConfig {
  std::size_t width = 32;
  std::size_t blocks = 3;
};

struct InceptionConfig {
  std::size_t stem_width = 16;
  std::size_t blocks = 2;
  /// 1x1, 1x1->3x3, 1x1->5x5, pool->1x1
  std::array<std::size_t, 4> branch_widths{8, 16, 8, 8};

  std::size_t block_channels() const {
    return branch_widths[0] + branch_widths[1] + branch_widths[2] + branch_widths[3];
  }
};

struct FusionConfig {
  std::size_t grid = 4;       ///< common spatial grid for every concat
  std::size_t tap_width = 16; ///< width of the conv pair on each tap
  std::array<std::size_t, 2> bridge_widths{64, 32};
  std::size_t head_width = 32; ///< 1x1 conv after the final max pool
  std::size_t fc_width = 64;
};

struct AllNetConfig {
  std::size_t channels = 3;
  std::size_t height = 64;
  std::size_t width = 64;
  VggConfig vgg;
  ResNetConfig resnet;
  InceptionConfig inception;
  FusionConfig fusion;

  /// Reduced-scale variant: 32x32 input and every width halved.
  static AllNetConfig toy() {
    AllNetConfig c;
    c.height = 32;
    c.width = 32;
    c.vgg.widths = {8, 16, 32};
    c.resnet.width = 16;
    c.inception.stem_width = 8;
    c.inception.branch_widths = {4, 8, 4, 4};
    c.fusion.tap_width = 8;
    c.fusion.bridge_widths = {32, 16};
    c.fusion.head_width = 16;
    c.fusion.fc_width = 32;
    return c;
  }
};

/// Stages of two 3x3 pad-1 convs with relu, each closed by a 2x2 stride-2
/// max pool. Taps are the ends of the last two stages.
template <typename T> Fragment build_mini_vgg(GraphBuilder<T>& b, int input, const VggConfig& cfg) {
  if (cfg.widths.size() < 2) throw UsageError("mini VGG needs at least 2 stages to expose two taps");
  std::vector<int> stage_ends;
  int x = input;
  for (std::size_t s = 0; s < cfg.widths.size(); ++s) {
    const std::string stage = "vgg.stage" + std::to_string(s + 1);
    for (int i = 1; i <= 2; ++i) {
      x = b.conv(x, cfg.widths[s], 3, 1, 1, stage + ".conv" + std::to_string(i));
      x = b.relu(x, stage + ".relu" + std::to_string(i));
    }
    x = b.maxpool(x, 2, 2, 0, stage + ".pool");
    stage_ends.push_back(x);
  }
  const std::size_t k = stage_ends.size();
  return Fragment{{stage_ends[k - 2], stage_ends[k - 1]}, x};
}

/// 3x3 stem, then residual blocks relu(x + conv(relu(conv(x)))). Spatial
/// extent is preserved throughout. Taps: block 2 and the last block.
template <typename T> Fragment build_mini_resnet(GraphBuilder<T>& b, int input, const ResNetConfig& cfg) {
  if (cfg.blocks < 2) throw UsageError("mini ResNet needs at least 2 blocks");
  int x = b.conv(input, cfg.width, 3, 1, 1, "resnet.stem.conv");
  x = b.relu(x, "resnet.stem.relu");
  int block2 = x;
  for (std::size_t i = 1; i <= cfg.blocks; ++i) {
    const std::string block = "resnet.block" + std::to_string(i);
    int y = b.conv(x, cfg.width, 3, 1, 1, block + ".conv1");
    y = b.relu(y, block + ".relu1");
    y = b.conv(y, cfg.width, 3, 1, 1, block + ".conv2");
    y = b.add(x, y, block + ".add");
    x = b.relu(y, block + ".relu2");
    if (i == 2) block2 = x;
  }
  return Fragment{{block2, x}, x};
}

/// One inception block: four parallel branches concatenated on channels.
template <typename T>
int inception_block(GraphBuilder<T>& b, int x, const std::array<std::size_t, 4>& widths, const std::string& prefix) {
  int b1 = b.conv(x, widths[0], 1, 1, 0, prefix + ".b1.conv1x1");
  b1 = b.relu(b1, prefix + ".b1.relu");

  int b2 = b.conv(x, widths[1], 1, 1, 0, prefix + ".b2.conv1x1");
  b2 = b.relu(b2, prefix + ".b2.relu1");
  b2 = b.conv(b2, widths[1], 3, 1, 1, prefix + ".b2.conv3x3");
  b2 = b.relu(b2, prefix + ".b2.relu2");

  int b3 = b.conv(x, widths[2], 1, 1, 0, prefix + ".b3.conv1x1");
  b3 = b.relu(b3, prefix + ".b3.relu1");
  b3 = b.conv(b3, widths[2], 5, 1, 2, prefix + ".b3.conv5x5");
  b3 = b.relu(b3, prefix + ".b3.relu2");

  int b4 = b.maxpool(x, 3, 1, 1, prefix + ".b4.pool");
  b4 = b.conv(b4, widths[3], 1, 1, 0, prefix + ".b4.conv1x1");
  b4 = b.relu(b4, prefix + ".b4.relu");

  return b.concat({b1, b2, b3, b4}, prefix + ".concat");
}

/// 3x3 stride-2 stem, then inception blocks. Taps: blocks 1 and 2.
template <typename T> Fragment build_mini_inception(GraphBuilder<T>& b, int input, const InceptionConfig& cfg) {
  if (cfg.blocks < 2) throw UsageError("mini Inception needs at least 2 blocks");
  int x = b.conv(input, cfg.stem_width, 3, 2, 1, "inception.stem.conv");
  x = b.relu(x, "inception.stem.relu");
  std::array<int, 2> taps{};
  for (std::size_t i = 1; i <= cfg.blocks; ++i) {
    x = inception_block(b, x, cfg.branch_widths, "inception.block" + std::to_string(i));
    if (i <= 2) taps[i - 1] = x;
  }
  return Fragment{taps, x};
}

/// The fusion network:
///   concatenate2 = backbone final activations pooled onto the grid;
///   concatenate1 = each backbone tap through max pool 2/2, two 3x3 convs,
///                  and the grid pool;
///   concatenate3 = concatenate1 through two 1x1 convs, joined with
///                  concatenate2;
///   output       = max pool 3/2, 1x1 conv, dense, dense(1), sigmoid.
/// Backbone nodes are scoped "vgg", "resnet", "inception"; everything else
/// is "head".
template <typename T> BasicGraph<T> build_allnet(const AllNetConfig& cfg, std::uint64_t seed) {
  GraphBuilder<T> b(cfg.channels, cfg.height, cfg.width, seed);
  const int input = b.input();
  const FusionConfig& f = cfg.fusion;

  b.set_scope("vgg");
  const Fragment vgg = build_mini_vgg(b, input, cfg.vgg);
  b.set_scope("resnet");
  const Fragment resnet = build_mini_resnet(b, input, cfg.resnet);
  b.set_scope("inception");
  const Fragment inception = build_mini_inception(b, input, cfg.inception);

  b.set_scope("head");
  const std::array<std::pair<const char*, const Fragment*>, 3> backbones{
      {{"vgg", &vgg}, {"resnet", &resnet}, {"inception", &inception}}};

  std::vector<int> finals;
  for (const auto& [name, frag] : backbones) {
    finals.push_back(b.adaptive_maxpool(frag->output, f.grid, f.grid, std::string("head.") + name + ".final_grid"));
  }
  const int concat2 = b.concat(finals, "head.concatenate2");

  std::vector<int> tapped;
  for (const auto& [name, frag] : backbones) {
    for (int t = 0; t < 2; ++t) {
      const std::string prefix = std::string("head.") + name + ".tap" + std::to_string(t + 1);
      int x = b.maxpool(frag->taps[static_cast<std::size_t>(t)], 2, 2, 0, prefix + ".pool");
      x = b.conv(x, f.tap_width, 3, 1, 1, prefix + ".conv1");
      x = b.relu(x, prefix + ".relu1");
      x = b.conv(x, f.tap_width, 3, 1, 1, prefix + ".conv2");
      x = b.relu(x, prefix + ".relu2");
      tapped.push_back(b.adaptive_maxpool(x, f.grid, f.grid, prefix + ".grid"));
    }
  }
  const int concat1 = b.concat(tapped, "head.concatenate1");

  int bridge = b.conv(concat1, f.bridge_widths[0], 1, 1, 0, "head.bridge.conv1");
  bridge = b.relu(bridge, "head.bridge.relu1");
  bridge = b.conv(bridge, f.bridge_widths[1], 1, 1, 0, "head.bridge.conv2");
  bridge = b.relu(bridge, "head.bridge.relu2");
  const int concat3 = b.concat({bridge, concat2}, "head.concatenate3");

  int x = b.maxpool(concat3, 3, 2, 0, "head.pool");
  x = b.conv(x, f.head_width, 1, 1, 0, "head.conv");
  x = b.relu(x, "head.relu");
  x = b.dense(x, f.fc_width, "head.fc1");
  x = b.relu(x, "head.fc1.relu");
  x = b.dense(x, 1, "head.fc2");
  const int out = b.sigmoid(x, "head.sigmoid");

  b.tap("concatenate1", concat1);
  b.tap("concatenate2", concat2);
  b.tap("concatenate3", concat3);
  b.tap("output", out);
  return std::move(b).finish();
}

inline Graph build_allnet(const AllNetConfig& cfg, std::uint64_t seed) { return build_allnet<float>(cfg, seed); }

} // namespace allnet
