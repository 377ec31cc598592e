#include "setdet/model.hpp"

#include <cmath>
#include <string>

#include "setdet/errors.hpp"
#include "setdet/rng.hpp"

namespace setdet {

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    throw ConfigError("model: d_model must be a positive multiple of n_heads");
  if (d_model % 4 != 0) throw ConfigError("model: d_model must be divisible by 4 for positional encoding");
  if (n_queries == 0) throw ConfigError("model: n_queries must be positive");
  if (num_classes == 0) throw ConfigError("model: num_classes must be positive");
  if (backbone_channels == 0 || ffn_hidden == 0)
    throw ConfigError("model: backbone_channels and ffn_hidden must be positive");
}

Tensor positional_encoding_2d(std::size_t height, std::size_t width, std::size_t d) {
  if (d == 0 || d % 4 != 0) throw ContractError("positional encoding width must be divisible by 4");
  const std::size_t half = d / 2;
  std::vector<double> out(height * width * d);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      double* row = out.data() + (y * width + x) * d;
      for (std::size_t k = 0; k < half / 2; ++k) {
        const double freq = std::pow(10000.0, -static_cast<double>(2 * k) / static_cast<double>(half));
        row[2 * k] = std::sin(static_cast<double>(x) * freq);
        row[2 * k + 1] = std::cos(static_cast<double>(x) * freq);
        row[half + 2 * k] = std::sin(static_cast<double>(y) * freq);
        row[half + 2 * k + 1] = std::cos(static_cast<double>(y) * freq);
      }
    }
  return Tensor::from({height * width, d}, std::move(out));
}

Tensor image_to_tokens(const Image& image, std::size_t& padded_height, std::size_t& padded_width) {
  if (image.width() == 0 || image.height() == 0) throw ContractError("backbone: empty image");
  padded_height = (image.height() + kBackboneStride - 1) / kBackboneStride * kBackboneStride;
  padded_width = (image.width() + kBackboneStride - 1) / kBackboneStride * kBackboneStride;
  std::vector<double> tokens(padded_height * padded_width * Image::kChannels, 0.0);
  for (std::size_t y = 0; y < image.height(); ++y)
    for (std::size_t x = 0; x < image.width(); ++x)
      for (std::size_t c = 0; c < Image::kChannels; ++c)
        tokens[(y * padded_width + x) * Image::kChannels + c] = image.at(c, y, x);
  return Tensor::from({padded_height * padded_width, Image::kChannels}, std::move(tokens));
}

AttentionResult multi_head_attention(const MultiHeadAttention& attn, const Tensor& query_in,
                                     const Tensor& key_in, const Tensor& value_in) {
  const Tensor q = attn.query(query_in);
  const Tensor k = attn.key(key_in);
  const Tensor v = attn.value(value_in);
  const std::size_t d = q.dim(1);
  if (d % attn.heads != 0) throw DimensionError("attention width not divisible by head count");
  const std::size_t dh = d / attn.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  AttentionResult result;
  std::vector<Tensor> heads;
  heads.reserve(attn.heads);
  for (std::size_t h = 0; h < attn.heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, dh);
    const Tensor kh = slice_cols(k, h * dh, dh);
    const Tensor vh = slice_cols(v, h * dh, dh);
    Tensor w = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
    heads.push_back(matmul(w, vh));
    result.weights.push_back(std::move(w));
  }
  result.output = attn.output(attn.heads == 1 ? heads.front() : concat_cols(heads));
  return result;
}

namespace {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(derived_stream(seed, 0x6d6f64656cULL)) {}

  Tensor uniform(Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = setdet::uniform(rng_, -bound, bound);
    return Tensor::from(std::move(shape), std::move(v), true);
  }

  Tensor normal(Shape shape, double stddev) {
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = stddev * standard_normal(rng_);
    return Tensor::from(std::move(shape), std::move(v), true);
  }

  Linear linear(std::size_t in, std::size_t out) { return {uniform({in, out}, in), uniform({out}, in)}; }

  LayerNormParams norm(std::size_t d) {
    return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
  }

  MultiHeadAttention attention(std::size_t d, std::size_t heads) {
    MultiHeadAttention a;
    a.query = linear(d, d);
    a.key = linear(d, d);
    a.value = linear(d, d);
    a.output = linear(d, d);
    a.heads = heads;
    return a;
  }

 private:
  Rng rng_;
};

void add_linear(std::vector<NamedTensor>& out, const std::string& name, const Linear& l) {
  out.push_back({name + ".weight", l.weight});
  out.push_back({name + ".bias", l.bias});
}

void add_norm(std::vector<NamedTensor>& out, const std::string& name, const LayerNormParams& n) {
  out.push_back({name + ".gamma", n.gamma});
  out.push_back({name + ".beta", n.beta});
}

void add_attention(std::vector<NamedTensor>& out, const std::string& name, const MultiHeadAttention& a) {
  add_linear(out, name + ".query", a.query);
  add_linear(out, name + ".key", a.key);
  add_linear(out, name + ".value", a.value);
  add_linear(out, name + ".output", a.output);
}

Linear clone_linear(const Linear& l) { return {l.weight.detach(true), l.bias.detach(true)}; }
LayerNormParams clone_norm(const LayerNormParams& n) { return {n.gamma.detach(true), n.beta.detach(true)}; }
MultiHeadAttention clone_attention(const MultiHeadAttention& a) {
  return {clone_linear(a.query), clone_linear(a.key), clone_linear(a.value), clone_linear(a.output), a.heads};
}

}  // namespace

DetectionModel::DetectionModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  Initializer init(config_.init_seed);
  const std::size_t c = config_.backbone_channels, d = config_.d_model;

  for (std::size_t s = 0; s < kBackboneStages; ++s) backbone.push_back(init.linear(s == 0 ? Image::kChannels : c, c));
  reduce = init.linear(c, d);
  for (std::size_t l = 0; l < config_.n_encoder_layers; ++l) {
    EncoderLayer layer;
    layer.self_attn = init.attention(d, config_.n_heads);
    layer.ffn_in = init.linear(d, config_.ffn_hidden);
    layer.ffn_out = init.linear(config_.ffn_hidden, d);
    layer.norm1 = init.norm(d);
    layer.norm2 = init.norm(d);
    encoder.push_back(std::move(layer));
  }
  for (std::size_t l = 0; l < config_.n_decoder_layers; ++l) {
    DecoderLayer layer;
    layer.self_attn = init.attention(d, config_.n_heads);
    layer.cross_attn = init.attention(d, config_.n_heads);
    layer.ffn_in = init.linear(d, config_.ffn_hidden);
    layer.ffn_out = init.linear(config_.ffn_hidden, d);
    layer.norm1 = init.norm(d);
    layer.norm2 = init.norm(d);
    layer.norm3 = init.norm(d);
    decoder.push_back(std::move(layer));
  }
  queries = init.normal({config_.n_queries, d}, 0.02);
  for (std::size_t l = 0; l < 3; ++l) box_head.push_back(init.linear(d, d));
  box_head.push_back(init.linear(d, 4));
  class_head = init.linear(d, config_.num_classes + 1);
}

FeatureMap DetectionModel::backbone_forward(const Image& image) const {
  std::size_t h = 0, w = 0;
  Tensor x = image_to_tokens(image, h, w);
  for (const auto& stage : backbone) {
    x = relu(stage(avg_pool2x2(x, h, w)));
    h /= 2;
    w /= 2;
  }
  return {config_.backbone_channels, h, w, x};
}

Tensor DetectionModel::reduce_and_flatten(const FeatureMap& features) const {
  // Features are already stored position-major, so the flatten is the layout itself.
  return reduce(features.data);
}

Tensor DetectionModel::encoder_forward(const Tensor& tokens, const Tensor& pos) const {
  if (tokens.shape() != pos.shape()) throw DimensionError("encoder: tokens and positions differ in shape");
  Tensor x = tokens;
  for (const auto& layer : encoder) {
    const Tensor qk = add(x, pos);
    x = layer.norm1(add(x, multi_head_attention(layer.self_attn, qk, qk, x).output));
    x = layer.norm2(add(x, layer.ffn_out(relu(layer.ffn_in(x)))));
  }
  return x;
}

Tensor DetectionModel::decoder_forward(const Tensor& memory, const Tensor& pos, const Tensor& query_pos) const {
  if (memory.shape() != pos.shape()) throw DimensionError("decoder: memory and positions differ in shape");
  if (query_pos.rank() != 2 || query_pos.dim(1) != memory.dim(1))
    throw DimensionError("decoder: query width differs from memory width");
  const Tensor keys = add(memory, pos);
  Tensor tgt = Tensor::zeros(query_pos.shape());
  for (const auto& layer : decoder) {
    const Tensor q = add(tgt, query_pos);
    tgt = layer.norm1(add(tgt, multi_head_attention(layer.self_attn, q, q, tgt).output));
    tgt = layer.norm2(
        add(tgt, multi_head_attention(layer.cross_attn, add(tgt, query_pos), keys, memory).output));
    tgt = layer.norm3(add(tgt, layer.ffn_out(relu(layer.ffn_in(tgt)))));
  }
  return tgt;
}

PredictionSet DetectionModel::prediction_heads(const Tensor& embeddings) const {
  Tensor h = embeddings;
  for (std::size_t l = 0; l + 1 < box_head.size(); ++l) h = relu(box_head[l](h));
  PredictionSet out;
  out.boxes = sigmoid(box_head.back()(h));
  out.class_probs = softmax_rows(class_head(embeddings));
  return out;
}

PredictionSet DetectionModel::forward(const Image& image) const {
  const FeatureMap f = backbone_forward(image);
  const Tensor tokens = reduce_and_flatten(f);
  const Tensor pos = positional_encoding_2d(f.height, f.width, config_.d_model);
  const Tensor memory = encoder_forward(tokens, pos);
  return prediction_heads(decoder_forward(memory, pos, queries));
}

std::vector<NamedTensor> DetectionModel::parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t s = 0; s < backbone.size(); ++s) add_linear(out, "backbone." + std::to_string(s), backbone[s]);
  add_linear(out, "reduce", reduce);
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    const std::string p = "encoder." + std::to_string(l);
    add_attention(out, p + ".self_attn", encoder[l].self_attn);
    add_linear(out, p + ".ffn_in", encoder[l].ffn_in);
    add_linear(out, p + ".ffn_out", encoder[l].ffn_out);
    add_norm(out, p + ".norm1", encoder[l].norm1);
    add_norm(out, p + ".norm2", encoder[l].norm2);
  }
  for (std::size_t l = 0; l < decoder.size(); ++l) {
    const std::string p = "decoder." + std::to_string(l);
    add_attention(out, p + ".self_attn", decoder[l].self_attn);
    add_attention(out, p + ".cross_attn", decoder[l].cross_attn);
    add_linear(out, p + ".ffn_in", decoder[l].ffn_in);
    add_linear(out, p + ".ffn_out", decoder[l].ffn_out);
    add_norm(out, p + ".norm1", decoder[l].norm1);
    add_norm(out, p + ".norm2", decoder[l].norm2);
    add_norm(out, p + ".norm3", decoder[l].norm3);
  }
  out.push_back({"queries", queries});
  for (std::size_t l = 0; l < box_head.size(); ++l) add_linear(out, "box_head." + std::to_string(l), box_head[l]);
  add_linear(out, "class_head", class_head);
  return out;
}

void DetectionModel::zero_grad() const {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

std::size_t DetectionModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.size();
  return n;
}

DetectionModel DetectionModel::clone() const {
  DetectionModel copy = *this;
  for (auto& l : copy.backbone) l = clone_linear(l);
  copy.reduce = clone_linear(reduce);
  for (auto& layer : copy.encoder) {
    layer.self_attn = clone_attention(layer.self_attn);
    layer.ffn_in = clone_linear(layer.ffn_in);
    layer.ffn_out = clone_linear(layer.ffn_out);
    layer.norm1 = clone_norm(layer.norm1);
    layer.norm2 = clone_norm(layer.norm2);
  }
  for (auto& layer : copy.decoder) {
    layer.self_attn = clone_attention(layer.self_attn);
    layer.cross_attn = clone_attention(layer.cross_attn);
    layer.ffn_in = clone_linear(layer.ffn_in);
    layer.ffn_out = clone_linear(layer.ffn_out);
    layer.norm1 = clone_norm(layer.norm1);
    layer.norm2 = clone_norm(layer.norm2);
    layer.norm3 = clone_norm(layer.norm3);
  }
  copy.queries = queries.detach(true);
  for (auto& l : copy.box_head) l = clone_linear(l);
  copy.class_head = clone_linear(class_head);
  return copy;
}

}  // namespace setdet
