#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qilcm/data.hpp"
#include "qilcm/graph.hpp"

namespace qilcm::model {

enum class Pooling { attention, mean };

struct ModelConfig {
  std::size_t d1 = 100;  // encoder hidden sizes
  std::size_t d2 = 100;
  std::vector<std::size_t> att_hidden{256, 128};
  std::vector<std::size_t> rank_hidden{256, 128};
  double eps = 1e-5;  // query normalization guard
  Pooling pooling = Pooling::attention;
  bool qn_enabled = true;
  double lambda_conf = 0.1;  // weight of the query confusion loss

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct DenseLayer {
  diff::Tensor W;  // [in x out]
  diff::Tensor b;  // [out]
};

struct Mlp {
  std::vector<DenseLayer> hidden;  // ELU layers
  DenseLayer out;                  // linear scalar head
};

/// All learnable tensors. named() fixes the canonical parameter order used
/// by the optimizer state, gradient aggregation and checkpoints.
struct ModelParams {
  DenseLayer enc1, enc2;
  std::vector<diff::Tensor> embeddings;  // one table per categorical column
  Mlp att;
  Mlp rank;

  std::vector<std::pair<std::string, const diff::Tensor*>> named() const;
  std::vector<std::pair<std::string, diff::Tensor*>> named_mutable();
  std::size_t count() const;
};

/// Encoder input width: numeric columns (order feature included) plus the
/// embedding dims of all categorical columns.
std::size_t input_dim(const data::FeatureSchema& schema,
                      const ModelConfig& config);

/// Fan-based uniform init (+-sqrt(6/(fan_in+fan_out))), zero biases,
/// embeddings uniform in [-0.05, 0.05].
ModelParams init_params(const data::FeatureSchema& schema,
                        const ModelConfig& config, std::uint64_t seed);

/// Throws SchemaError when parameter shapes disagree with (schema, config).
void validate_params(const ModelParams& params,
                     const data::FeatureSchema& schema,
                     const ModelConfig& config);

struct MlpNodes {
  std::vector<std::pair<diff::NodeId, diff::NodeId>> hidden;
  diff::NodeId out_W = 0, out_b = 0;
};

/// Graph leaves for one parameter set; `ordered` matches ModelParams::named().
struct ParamNodes {
  diff::NodeId enc1_W = 0, enc1_b = 0, enc2_W = 0, enc2_b = 0;
  std::vector<diff::NodeId> embeddings;
  MlpNodes att, rank;
  std::vector<diff::NodeId> ordered;
};

ParamNodes bind_params(diff::Graph& g, const ModelParams& params);

/// Node ids of every intermediate of one query's forward pass. When the QN
/// layer is disabled, `normalized` aliases `refined` and the statistics are
/// absent.
struct ForwardTrace {
  diff::NodeId x = 0;          // encoder input rows        [n x F']
  diff::NodeId h = 0;          // item encodings            [n x (F'+d2)]
  diff::NodeId attention = 0;  // pooling weights           [n]
  diff::NodeId context = 0;    // pooled query vector       [1 x (F'+d2)]
  diff::NodeId refined = 0;    // context-refined encodings [n x 2(F'+d2)]
  std::optional<diff::NodeId> refined_mean;  // [1 x 2(F'+d2)]
  std::optional<diff::NodeId> refined_var;   // [1 x 2(F'+d2)]
  diff::NodeId normalized = 0;  // QN output                [n x 2(F'+d2)]
  diff::NodeId scores = 0;      // ranking distribution     [n]
};

/// Two ELU layers over the preprocessed features, concatenated with the
/// input rows. Numeric features must already be normalized to [0, 1].
diff::NodeId encode_items(diff::Graph& g, const ParamNodes& pn,
                          const data::QueryGroup& group,
                          const data::FeatureSchema& schema,
                          const ModelConfig& config);

/// Self-attention pooling: softmax(MLP_att(h_i)) weights and their
/// weighted mean. Returns (weights, context).
std::pair<diff::NodeId, diff::NodeId> attention_pool(diff::Graph& g,
                                                     const ParamNodes& pn,
                                                     diff::NodeId h);

/// Uniform weights and the plain row mean; the uniform weights also feed
/// the QN statistics.
std::pair<diff::NodeId, diff::NodeId> mean_pool(diff::Graph& g, diff::NodeId h);

/// Refined encoding [context (.) h_i ; h_i] per row.
diff::NodeId refine(diff::Graph& g, diff::NodeId h, diff::NodeId context);

struct QnResult {
  diff::NodeId normalized = 0;
  diff::NodeId mean = 0;
  diff::NodeId var = 0;
};

/// Attention-weighted standardization of the refined encodings. The same
/// weights as the pooling layer are used; gradients flow through both uses.
QnResult query_normalize(diff::Graph& g, diff::NodeId refined,
                         diff::NodeId attention, double eps);

/// Softmax(MLP_rank(row)) ranking distribution over the query's items.
diff::NodeId rank_scores(diff::Graph& g, const ParamNodes& pn,
                         diff::NodeId normalized);

ForwardTrace forward(diff::Graph& g, const ParamNodes& pn,
                     const data::QueryGroup& group,
                     const data::FeatureSchema& schema,
                     const ModelConfig& config);

/// Everything needed to score queries: the checkpoint payload.
struct ModelBundle {
  ModelConfig config;
  data::FeatureSchema schema;
  std::optional<data::Normalizer> normalizer;
  ModelParams params;
};

/// Forward one query on a throwaway graph and return its score vector.
std::vector<double> score_query(const ModelBundle& bundle,
                                const data::QueryGroup& group);

}  // namespace qilcm::model
