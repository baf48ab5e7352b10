#include "dalign/text_encoder.hpp"

#include <algorithm>

#include "dalign/error.hpp"
#include "dalign/rng.hpp"

namespace dalign {

namespace {

constexpr double kInitStd = 0.02;

Tensor normal_param(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = kInitStd * rng.normal();
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor const_param(Shape shape, double value) {
  return Tensor::full(std::move(shape), value, true);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_row(matmul(x, w), b);
}

}  // namespace

void EncoderConfig::validate() const {
  if (width == 0 || heads == 0 || width % heads != 0) {
    throw ConfigError("encoder: width " + std::to_string(width) +
                      " must be a positive multiple of heads " + std::to_string(heads));
  }
  if (max_len < 4) throw ConfigError("encoder: max_len must be at least 4");
  if (vocab_size <= Vocabulary::kSpecialCount) {
    throw ConfigError("encoder: vocab_size must exceed the special token count");
  }
  if (out_dim == 0 || layers == 0) throw ConfigError("encoder: out_dim and layers must be positive");
}

TextEncoder::TextEncoder(EncoderConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto w = config_.width;
  token_embedding_ = normal_param({config_.vocab_size, w}, rng);
  position_embedding_ = normal_param({config_.max_len, w}, rng);
  params_.push_back({"encoder.token_embedding", token_embedding_});
  params_.push_back({"encoder.position_embedding", position_embedding_});
  for (std::size_t l = 0; l < config_.layers; ++l) {
    Block b;
    b.ln1_gain = const_param({w}, 1.0);
    b.ln1_bias = const_param({w}, 0.0);
    b.qkv_weight = normal_param({w, 3 * w}, rng);
    b.qkv_bias = const_param({3 * w}, 0.0);
    b.out_weight = normal_param({w, w}, rng);
    b.out_bias = const_param({w}, 0.0);
    b.ln2_gain = const_param({w}, 1.0);
    b.ln2_bias = const_param({w}, 0.0);
    b.fc_weight = normal_param({w, 4 * w}, rng);
    b.fc_bias = const_param({4 * w}, 0.0);
    b.proj_weight = normal_param({4 * w, w}, rng);
    b.proj_bias = const_param({w}, 0.0);
    const auto p = "encoder.block" + std::to_string(l) + ".";
    params_.push_back({p + "ln1.gain", b.ln1_gain});
    params_.push_back({p + "ln1.bias", b.ln1_bias});
    params_.push_back({p + "attn.qkv.weight", b.qkv_weight});
    params_.push_back({p + "attn.qkv.bias", b.qkv_bias});
    params_.push_back({p + "attn.out.weight", b.out_weight});
    params_.push_back({p + "attn.out.bias", b.out_bias});
    params_.push_back({p + "ln2.gain", b.ln2_gain});
    params_.push_back({p + "ln2.bias", b.ln2_bias});
    params_.push_back({p + "mlp.fc.weight", b.fc_weight});
    params_.push_back({p + "mlp.fc.bias", b.fc_bias});
    params_.push_back({p + "mlp.proj.weight", b.proj_weight});
    params_.push_back({p + "mlp.proj.bias", b.proj_bias});
    blocks_.push_back(std::move(b));
  }
  final_gain_ = const_param({w}, 1.0);
  final_bias_ = const_param({w}, 0.0);
  projection_ = normal_param({w, config_.out_dim}, rng);
  params_.push_back({"encoder.final_ln.gain", final_gain_});
  params_.push_back({"encoder.final_ln.bias", final_bias_});
  params_.push_back({"encoder.projection", projection_});
}

std::size_t TextEncoder::parameter_count(const EncoderConfig& c) {
  const auto w = c.width;
  const std::size_t per_block = 2 * w + (w * 3 * w + 3 * w) + (w * w + w) + 2 * w +
                                (w * 4 * w + 4 * w) + (4 * w * w + w);
  return c.vocab_size * w + c.max_len * w + c.layers * per_block + 2 * w + w * c.out_dim;
}

std::size_t TextEncoder::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

EncodeResult TextEncoder::encode(std::span<const TokenizedCaption> batch) const {
  if (batch.empty()) throw InputError("encode: empty batch");
  EncodeResult r;
  r.batch = batch.size();
  for (const auto& t : batch) {
    if (t.length < 2 || t.length > t.ids.size() || t.length > config_.max_len) {
      throw ContractError("encode: malformed tokenized caption");
    }
    r.seq = std::max(r.seq, t.length);
  }
  std::vector<std::size_t> ids, positions, lengths;
  ids.reserve(r.batch * r.seq);
  positions.reserve(r.batch * r.seq);
  for (const auto& t : batch) {
    for (std::size_t i = 0; i < r.seq; ++i) {
      const TokenId id = i < t.length ? t.ids[i] : Vocabulary::kPad;
      if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
        throw IndexError("encode: token id " + std::to_string(id) +
                         " out of range for vocab size " + std::to_string(config_.vocab_size));
      }
      ids.push_back(static_cast<std::size_t>(id));
      positions.push_back(i);
    }
    lengths.push_back(t.length);
    r.eos.push_back(t.length - 1);
  }

  Tensor x = add(gather_rows(token_embedding_, ids), gather_rows(position_embedding_, positions));
  for (const auto& b : blocks_) {
    Tensor h = layer_norm(x, b.ln1_gain, b.ln1_bias);
    Tensor attn = causal_self_attention(linear(h, b.qkv_weight, b.qkv_bias), r.batch, r.seq,
                                        config_.heads, lengths);
    x = add(x, linear(attn, b.out_weight, b.out_bias));
    h = layer_norm(x, b.ln2_gain, b.ln2_bias);
    x = add(x, linear(gelu(linear(h, b.fc_weight, b.fc_bias)), b.proj_weight, b.proj_bias));
  }
  x = layer_norm(x, final_gain_, final_bias_);
  r.dense = matmul(x, projection_);
  std::vector<std::size_t> eos_rows;
  for (std::size_t b = 0; b < r.batch; ++b) eos_rows.push_back(r.row(b, r.eos[b]));
  r.global = gather_rows(r.dense, eos_rows);
  return r;
}

}  // namespace dalign
