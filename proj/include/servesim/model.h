/* Copyright 2026 The servesim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "servesim/common.h"

namespace servesim {

// Decoder-only transformer described by its dimensions.
struct ModelConfig {
  std::string name;
  std::int64_t num_layers = 0;
  std::int64_t hidden_dim = 0;
  std::int64_t num_heads = 0;
  std::int64_t ffn_dim = 0;
  std::int64_t vocab_size = 0;
  std::int64_t bytes_per_param = 2;

  // Throws ConfigError unless all dims are positive and heads divide hidden.
  void validate() const;

  std::int64_t head_dim() const { return hidden_dim / num_heads; }
  // QKV, output projection, two FFN matrices and two norms.
  std::uint64_t block_weight_bytes() const;
  // Embedding (tied with the LM head), all blocks, final norm.
  std::uint64_t weight_bytes() const;
};

// K and V for one token across all layers.
std::uint64_t kv_bytes_per_token(const ModelConfig& model);

// Reads presets from an INI file with one [name] section per model. ffn_dim
// defaults to 4 * hidden_dim and bytes_per_param to 2.
std::map<std::string, ModelConfig> load_model_presets(const std::filesystem::path& path);
std::map<std::string, ModelConfig> parse_model_presets(std::string_view text);

enum class OpKind {
  kEmbedding,
  kQKVGen,
  kScore,
  kAttend,
  kOutProj,
  kFFN1,
  kFFN2,
  kLayerNorm,
  kLMHead,
};

enum class Phase { kInitiation, kGeneration };

std::string_view to_string(OpKind kind);
std::string_view to_string(Phase phase);

// Score and Attend are the per-request attention operators.
inline bool is_attention(OpKind kind) {
  return kind == OpKind::kScore || kind == OpKind::kAttend;
}

// Operators costed as (batched) matrix products on a systolic array.
inline bool is_matmul(OpKind kind) {
  return kind != OpKind::kEmbedding && kind != OpKind::kLayerNorm;
}

inline constexpr std::int64_t kAllLayers = -1;

// One operator instance. For attention kinds (m, k, n) are per-head dims and
// `heads` counts the heads aggregated into the descriptor; every other kind
// has heads == 1.
struct OperatorDescriptor {
  OpKind kind = OpKind::kLayerNorm;
  std::int64_t layer = kAllLayers;
  std::optional<RequestId> attention_id;
  Phase phase = Phase::kInitiation;

  std::uint64_t m = 0;
  std::uint64_t k = 0;
  std::uint64_t n = 0;
  std::uint64_t heads = 1;

  std::uint64_t flops = 0;
  std::uint64_t weight_bytes = 0;
  std::uint64_t input_bytes = 0;
  std::uint64_t output_bytes = 0;
  std::uint64_t kv_bytes = 0;
  std::uint64_t bytes = 0;

  double arithmetic_intensity() const {
    return bytes == 0 ? 0.0 : static_cast<double>(flops) / static_cast<double>(bytes);
  }
  bool operator==(const OperatorDescriptor&) const = default;
};

// Builds a descriptor and fills its FLOP and byte counts from the dims.
// Softmax is folded into Score, residual adds into LayerNorm.
OperatorDescriptor describe_operator(OpKind kind, Phase phase, std::uint64_t m,
                                     std::uint64_t k, std::uint64_t n,
                                     std::uint64_t heads, const ModelConfig& model);

// weights + input activations + output activations + KV traffic.
std::uint64_t operator_bytes(const OperatorDescriptor& desc, const ModelConfig& model);

// One request as seen by the profiler.
struct BatchEntry {
  RequestId id = 0;
  Phase phase = Phase::kInitiation;
  std::int64_t input_len = 0;
  // Tokens in KV when this iteration runs (prompt length during initiation).
  std::int64_t context_len = 0;

  // Query rows this iteration contributes.
  std::int64_t query_len() const { return phase == Phase::kInitiation ? input_len : 1; }
};

struct AttentionOps {
  RequestId request = 0;
  OperatorDescriptor score;
  OperatorDescriptor attend;
};

// Operators for one iteration of one (sub-)batch. The block operators
// describe a single representative transformer block that is replicated
// `num_layers` times.
struct IterationProfile {
  OperatorDescriptor embedding;
  std::vector<OperatorDescriptor> pre_attention;   // LayerNorm, QKVGen
  std::vector<AttentionOps> attention;             // batch order
  std::vector<OperatorDescriptor> post_attention;  // OutProj, LayerNorm, FFN1, FFN2
  OperatorDescriptor lm_head;
  std::int64_t total_tokens = 0;
  std::int64_t num_layers = 0;

  std::uint64_t total_flops() const;
};

IterationProfile profile_operators(const ModelConfig& model, std::span<const BatchEntry> batch);

}  // namespace servesim
