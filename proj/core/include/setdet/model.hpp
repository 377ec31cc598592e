#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "setdet/image.hpp"
#include "setdet/tensor.hpp"
#include "setdet/types.hpp"

namespace setdet {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_encoder_layers = 2;
  std::size_t n_decoder_layers = 2;
  std::size_t n_queries = 100;
  std::size_t num_classes = 1;
  std::size_t backbone_channels = 64;
  std::size_t ffn_hidden = 128;
  std::uint64_t init_seed = 0;

  /// Throws ConfigError on inconsistent values.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

inline constexpr std::size_t kBackboneStages = 5;
inline constexpr std::size_t kBackboneStride = 32;

/// Channels-last feature grid: `data` is [height*width x channels].
struct FeatureMap {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor data;
};

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  Tensor operator()(const Tensor& x) const { return add_row_bias(matmul(x, weight), bias); }
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

struct MultiHeadAttention {
  Linear query, key, value, output;
  std::size_t heads = 1;
};

struct AttentionResult {
  Tensor output;                // [Lq x d]
  std::vector<Tensor> weights;  // per head, [Lq x Lk], rows sum to 1
};

/// Scaled dot-product attention over `heads` column blocks.
AttentionResult multi_head_attention(const MultiHeadAttention& attn, const Tensor& query_in,
                                     const Tensor& key_in, const Tensor& value_in);

// Post-norm layers: sublayer, residual add, then layer norm.
struct EncoderLayer {
  MultiHeadAttention self_attn;
  Linear ffn_in, ffn_out;
  LayerNormParams norm1, norm2;
};

struct DecoderLayer {
  MultiHeadAttention self_attn, cross_attn;
  Linear ffn_in, ffn_out;
  LayerNormParams norm1, norm2, norm3;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Fixed sinusoidal encoding of a height x width grid, row-major positions.
/// Channels [0, d/2) encode x, [d/2, d) encode y; within each half, channel
/// 2k is sin(p / 10000^(2k/(d/2))) and 2k+1 the matching cosine.
/// Throws ContractError unless d is divisible by 4.
Tensor positional_encoding_2d(std::size_t height, std::size_t width, std::size_t d);

/// Image [3 x H x W] zero-padded on the bottom/right to multiples of 32 and
/// laid out channels-last as [Hp*Wp x 3].
Tensor image_to_tokens(const Image& image, std::size_t& padded_height, std::size_t& padded_width);

/// Backbone, channel reduction, encoder, decoder over learned object queries,
/// and the class/box heads. Members are public so tests can pin weights.
class DetectionModel {
 public:
  explicit DetectionModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  /// Five stride-2 stages (2x2 mean pool, linear channel map, ReLU).
  FeatureMap backbone_forward(const Image& image) const;
  /// Per-position linear map C -> d, flattened row-major to [HW x d].
  Tensor reduce_and_flatten(const FeatureMap& features) const;
  Tensor encoder_forward(const Tensor& tokens, const Tensor& pos) const;
  /// Decodes all queries in parallel. The target stream starts at zero and
  /// `queries` is added to attention queries (and self-attention keys).
  Tensor decoder_forward(const Tensor& memory, const Tensor& pos, const Tensor& queries) const;
  PredictionSet prediction_heads(const Tensor& embeddings) const;
  PredictionSet forward(const Image& image) const;

  /// Every trainable tensor in a stable order with hierarchical names.
  std::vector<NamedTensor> parameters() const;
  void zero_grad() const;
  std::size_t parameter_count() const;
  /// Deep copy: fresh leaves with identical values.
  DetectionModel clone() const;

  std::vector<Linear> backbone;
  Linear reduce;
  std::vector<EncoderLayer> encoder;
  std::vector<DecoderLayer> decoder;
  Tensor queries;  // [N x d]
  std::vector<Linear> box_head;
  Linear class_head;

 private:
  ModelConfig config_;
};

}  // namespace setdet
