#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace textnas {

/// Candidate layer operators. Integer codes are a serialization contract.
enum class LayerOpKind : std::uint8_t {
  kConv1 = 0,
  kConv3 = 1,
  kConv5 = 2,
  kConv7 = 3,
  kMaxPool3 = 4,
  kAvgPool3 = 5,
  kGru = 6,
  kSelfAttention = 7,
};

inline constexpr std::size_t kNumLayerOps = 8;

inline constexpr std::array<LayerOpKind, kNumLayerOps> kAllLayerOps = {
    LayerOpKind::kConv1,    LayerOpKind::kConv3,    LayerOpKind::kConv5, LayerOpKind::kConv7,
    LayerOpKind::kMaxPool3, LayerOpKind::kAvgPool3, LayerOpKind::kGru,   LayerOpKind::kSelfAttention,
};

inline constexpr std::array<std::string_view, kNumLayerOps> kLayerOpNames = {
    "conv1", "conv3", "conv5", "conv7", "maxpool", "avgpool", "gru", "attention",
};

inline constexpr std::size_t op_code(LayerOpKind op) { return static_cast<std::size_t>(op); }

inline std::string_view op_name(LayerOpKind op) { return kLayerOpNames[op_code(op)]; }

inline std::optional<LayerOpKind> op_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumLayerOps; ++i)
    if (kLayerOpNames[i] == name) return kAllLayerOps[i];
  return std::nullopt;
}

inline bool is_conv(LayerOpKind op) { return op_code(op) <= op_code(LayerOpKind::kConv7); }

inline std::size_t conv_width(LayerOpKind op) { return 2 * op_code(op) + 1; }

}  // namespace textnas
