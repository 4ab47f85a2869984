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

#include "servesim/model.h"

#include <fmt/format.h>

#include "servesim/config_file.h"

namespace servesim {

namespace {

// Token ids fed to the embedding lookup.
constexpr std::uint64_t kTokenIdBytes = 4;
// mean, variance, normalize, scale and shift per element.
constexpr std::uint64_t kLayerNormFlopsPerElement = 5;

std::uint64_t u64(std::int64_t v) { return static_cast<std::uint64_t>(v); }

ModelConfig model_from_section(const ConfigFile& file, const std::string& name) {
  file.expect_only(name, {"num_layers", "hidden_dim", "num_heads", "ffn_dim",
                          "vocab_size", "bytes_per_param"});
  ModelConfig m;
  m.name = name;
  m.num_layers = file.get_int(name + ".num_layers");
  m.hidden_dim = file.get_int(name + ".hidden_dim");
  m.num_heads = file.get_int(name + ".num_heads");
  m.ffn_dim = file.get_int(name + ".ffn_dim", 4 * m.hidden_dim);
  m.vocab_size = file.get_int(name + ".vocab_size");
  m.bytes_per_param = file.get_int(name + ".bytes_per_param", 2);
  m.validate();
  return m;
}

std::map<std::string, ModelConfig> presets_from(const ConfigFile& file) {
  std::map<std::string, ModelConfig> presets;
  for (const auto& name : file.sections()) {
    presets.emplace(name, model_from_section(file, name));
  }
  return presets;
}

}  // namespace

void ModelConfig::validate() const {
  if (num_layers < 1 || hidden_dim < 1 || num_heads < 1 || ffn_dim < 1 ||
      vocab_size < 1 || bytes_per_param < 1) {
    throw ConfigError(fmt::format("model '{}': all dimensions must be >= 1", name));
  }
  if (hidden_dim % num_heads != 0) {
    throw ConfigError(fmt::format("model '{}': num_heads {} does not divide hidden_dim {}",
                                  name, num_heads, hidden_dim));
  }
}

std::uint64_t ModelConfig::block_weight_bytes() const {
  const std::uint64_t d = u64(hidden_dim);
  const std::uint64_t f = u64(ffn_dim);
  return (4 * d * d + 2 * d * f + 4 * d) * u64(bytes_per_param);
}

std::uint64_t ModelConfig::weight_bytes() const {
  const std::uint64_t d = u64(hidden_dim);
  const std::uint64_t embedding = u64(vocab_size) * d * u64(bytes_per_param);
  const std::uint64_t final_norm = 2 * d * u64(bytes_per_param);
  return embedding + u64(num_layers) * block_weight_bytes() + final_norm;
}

std::uint64_t kv_bytes_per_token(const ModelConfig& model) {
  return 2 * u64(model.hidden_dim) * u64(model.num_layers) * u64(model.bytes_per_param);
}

std::map<std::string, ModelConfig> load_model_presets(const std::filesystem::path& path) {
  return presets_from(ConfigFile::load(path));
}

std::map<std::string, ModelConfig> parse_model_presets(std::string_view text) {
  return presets_from(ConfigFile::parse(text, "<presets>"));
}

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::kEmbedding: return "Embedding";
    case OpKind::kQKVGen: return "QKVGen";
    case OpKind::kScore: return "Score";
    case OpKind::kAttend: return "Attend";
    case OpKind::kOutProj: return "OutProj";
    case OpKind::kFFN1: return "FFN1";
    case OpKind::kFFN2: return "FFN2";
    case OpKind::kLayerNorm: return "LayerNorm";
    case OpKind::kLMHead: return "LMHead";
  }
  return "Unknown";
}

std::string_view to_string(Phase phase) {
  return phase == Phase::kInitiation ? "initiation" : "generation";
}

namespace {

struct ByteBreakdown {
  std::uint64_t weights = 0;
  std::uint64_t input = 0;
  std::uint64_t output = 0;
  std::uint64_t kv = 0;
};

ByteBreakdown byte_breakdown(OpKind kind, std::uint64_t m, std::uint64_t k,
                             std::uint64_t n, std::uint64_t heads, std::uint64_t bp) {
  ByteBreakdown b;
  switch (kind) {
    case OpKind::kEmbedding:
      // Gathers m rows of width n from the table.
      b.weights = m * n * bp;
      b.input = m * kTokenIdBytes;
      b.output = m * n * bp;
      break;
    case OpKind::kLayerNorm:
      b.input = m * n * bp;
      b.output = m * n * bp;
      break;
    case OpKind::kScore:
      // Q (m x k) against cached K (n x k), per head.
      b.kv = heads * n * k * bp;
      b.input = heads * m * k * bp;
      b.output = heads * m * n * bp;
      break;
    case OpKind::kAttend:
      // Probabilities (m x k) against cached V (k x n), per head.
      b.kv = heads * k * n * bp;
      b.input = heads * m * k * bp;
      b.output = heads * m * n * bp;
      break;
    case OpKind::kQKVGen:
    case OpKind::kOutProj:
    case OpKind::kFFN1:
    case OpKind::kFFN2:
    case OpKind::kLMHead:
      b.weights = k * n * bp;
      b.input = m * k * bp;
      b.output = m * n * bp;
      break;
  }
  return b;
}

}  // namespace

std::uint64_t operator_bytes(const OperatorDescriptor& desc, const ModelConfig& model) {
  auto b = byte_breakdown(desc.kind, desc.m, desc.k, desc.n, desc.heads,
                          u64(model.bytes_per_param));
  return b.weights + b.input + b.output + b.kv;
}

OperatorDescriptor describe_operator(OpKind kind, Phase phase, std::uint64_t m,
                                     std::uint64_t k, std::uint64_t n,
                                     std::uint64_t heads, const ModelConfig& model) {
  OperatorDescriptor d;
  d.kind = kind;
  d.phase = phase;
  d.m = m;
  d.k = k;
  d.n = n;
  d.heads = is_attention(kind) ? heads : 1;
  if (kind == OpKind::kLayerNorm) {
    d.flops = kLayerNormFlopsPerElement * m * n;
  } else if (is_matmul(kind)) {
    d.flops = 2 * d.heads * m * k * n;
  }
  auto b = byte_breakdown(kind, m, k, n, d.heads, u64(model.bytes_per_param));
  d.weight_bytes = b.weights;
  d.input_bytes = b.input;
  d.output_bytes = b.output;
  d.kv_bytes = b.kv;
  d.bytes = operator_bytes(d, model);
  return d;
}

std::uint64_t IterationProfile::total_flops() const {
  std::uint64_t block = 0;
  for (const auto& op : pre_attention) block += op.flops;
  for (const auto& op : post_attention) block += op.flops;
  for (const auto& a : attention) block += a.score.flops + a.attend.flops;
  return embedding.flops + u64(num_layers) * block + lm_head.flops;
}

IterationProfile profile_operators(const ModelConfig& model, std::span<const BatchEntry> batch) {
  if (batch.empty()) throw Error("cannot profile an empty batch");

  const std::uint64_t d = u64(model.hidden_dim);
  const std::uint64_t f = u64(model.ffn_dim);
  const std::uint64_t h = u64(model.num_heads);
  const std::uint64_t dh = u64(model.head_dim());

  IterationProfile p;
  p.num_layers = model.num_layers;
  bool any_initiation = false;
  for (const auto& e : batch) {
    if (e.phase == Phase::kGeneration && e.context_len <= 0) {
      throw Error(fmt::format("request {} is in generation with an empty context", e.id));
    }
    if (e.phase == Phase::kInitiation && e.input_len <= 0) {
      throw Error(fmt::format("request {} has an empty prompt", e.id));
    }
    any_initiation |= e.phase == Phase::kInitiation;
    p.total_tokens += e.query_len();
  }
  const Phase batched_phase = any_initiation ? Phase::kInitiation : Phase::kGeneration;
  const std::uint64_t t = u64(p.total_tokens);

  auto batched = [&](OpKind kind, std::uint64_t k, std::uint64_t n) {
    return describe_operator(kind, batched_phase, t, k, n, 1, model);
  };

  p.embedding = batched(OpKind::kEmbedding, u64(model.vocab_size), d);
  p.pre_attention = {batched(OpKind::kLayerNorm, d, d), batched(OpKind::kQKVGen, d, 3 * d)};
  for (const auto& e : batch) {
    const std::uint64_t q = u64(e.query_len());
    const std::uint64_t c = u64(e.phase == Phase::kInitiation ? e.input_len : e.context_len);
    AttentionOps a;
    a.request = e.id;
    a.score = describe_operator(OpKind::kScore, e.phase, q, dh, c, h, model);
    a.attend = describe_operator(OpKind::kAttend, e.phase, q, c, dh, h, model);
    a.score.attention_id = e.id;
    a.attend.attention_id = e.id;
    p.attention.push_back(a);
  }
  p.post_attention = {batched(OpKind::kOutProj, d, d), batched(OpKind::kLayerNorm, d, d),
                      batched(OpKind::kFFN1, d, f), batched(OpKind::kFFN2, f, d)};
  p.lm_head = batched(OpKind::kLMHead, d, u64(model.vocab_size));
  p.embedding.layer = 0;
  p.lm_head.layer = model.num_layers - 1;
  return p;
}

}  // namespace servesim
