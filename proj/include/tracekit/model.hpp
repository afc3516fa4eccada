#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "tracekit/checkpoint.hpp"
#include "tracekit/tokenizer.hpp"

namespace tracekit {

class ContextOverflow : public error {
  using error::error;
};
class SiteOutOfRange : public error {
  using error::error;
};

enum class Component : uint8_t { Residual = 0, MlpOut = 1, AttnOut = 2 };
constexpr int kComponentCount = 3;

const char* component_name(Component c);
Component component_from_name(std::string_view name);

struct ActivationCache {
  int n_layer = 0;
  int seq_len = 0;
  // residual[0] is the post-embedding stream (layer -1); residual[l+1] is
  // the stream after block l
  std::vector<MatrixRM> residual;
  std::vector<MatrixRM> mlp_out;
  std::vector<MatrixRM> attn_out;

  const MatrixRM& residual_at(int layer) const;  // layer in [-1, n_layer)
  const MatrixRM& component_at(int layer, Component c) const;
};

struct EmbeddingNoise {
  TokenSpan span;
  MatrixRM noise;  // [span length, d_model], added to the embedding rows
};

struct Restoration {
  int layer = 0;  // -1 allowed for Residual only
  int position = 0;
  Component component = Component::Residual;
  const ActivationCache* source = nullptr;
};

struct InterventionSet {
  std::optional<EmbeddingNoise> embedding_noise;
  std::vector<Restoration> restorations;
};

struct ForwardResult {
  VectorF final_logits;  // [vocab_size], last sequence position
  std::optional<ActivationCache> cache;
};

ForwardResult forward(const std::vector<int>& tokens, const ModelWeights& w,
                      const InterventionSet* interventions = nullptr, bool capture = false);

// softmax of the final-position logits, accumulated in double
Eigen::VectorXd next_token_distribution(const std::vector<int>& tokens, const ModelWeights& w,
                                        const InterventionSet* interventions = nullptr);

double object_probability(const std::vector<int>& tokens, int object_first_token_id,
                          const ModelWeights& w, const InterventionSet* interventions = nullptr);

}  // namespace tracekit
