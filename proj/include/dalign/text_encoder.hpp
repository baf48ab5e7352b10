#pragma once

// Causal pre-norm transformer text encoder. Produces per-token features and
// the EOS-position feature as the global text representation.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dalign/tensor.hpp"
#include "dalign/vocab.hpp"

namespace dalign {

struct EncoderConfig {
  std::size_t width = 128;  // d_t
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t max_len = 32;
  std::size_t vocab_size = 0;
  std::size_t out_dim = 64;  // d, equal to the visual feature width

  // Throws ConfigError on violated invariants.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct EncodeResult {
  Tensor global;  // {batch, out_dim}
  Tensor dense;   // {batch * seq, out_dim}, row b * seq + i
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::size_t> eos;  // per example

  std::size_t row(std::size_t example, std::size_t position) const {
    return example * seq + position;
  }
};

class TextEncoder {
 public:
  // normal(0, 0.02) weights and embeddings, zero biases, unit norm gains.
  TextEncoder(EncoderConfig config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }

  // The sequence axis is trimmed to the longest caption in the batch;
  // trailing PAD never changes any non-PAD output.
  EncodeResult encode(std::span<const TokenizedCaption> batch) const;

  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  static std::size_t parameter_count(const EncoderConfig& config);

 private:
  struct Block {
    Tensor ln1_gain, ln1_bias, qkv_weight, qkv_bias, out_weight, out_bias;
    Tensor ln2_gain, ln2_bias, fc_weight, fc_bias, proj_weight, proj_bias;
  };

  EncoderConfig config_;
  Tensor token_embedding_, position_embedding_;
  std::vector<Block> blocks_;
  Tensor final_gain_, final_bias_, projection_;
  std::vector<NamedTensor> params_;
};

}  // namespace dalign
