#pragma once

#include <cstddef>
#include <vector>

#include "escq/qnet.hpp"

namespace escq::detail {

struct SeqBlockOffsets {
  std::size_t wq, wk, wv, wo, w1, b1, w2, b2;
};

struct SeqLayout {
  std::size_t vocab = 0;
  std::size_t d = 0;
  std::size_t heads = 0;
  std::size_t ff = 0;
  std::size_t embed = 0;
  std::vector<SeqBlockOffsets> blocks;
  std::size_t out_w = 0;
  std::size_t out_b = 0;
  std::size_t total = 0;
};

SeqLayout seq_layout(const SeqConfig& config, std::size_t vocab);

struct MlpLayerOffsets {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t w = 0;
  std::size_t b = 0;
};

// Hidden layers followed by a final 1-unit linear layer.
struct MlpLayout {
  std::size_t input = 0;
  std::vector<MlpLayerOffsets> layers;
  std::size_t total = 0;
};

MlpLayout mlp_layout(const MlpConfig& config, std::size_t input_dim);

}  // namespace escq::detail
