#pragma once

#include <cstdint>
#include <vector>

#include "qilcm/data.hpp"
#include "qilcm/model.hpp"

namespace qilcm::loss {

/// Guard for log(score); softmax can underflow for extreme logits.
inline constexpr double kLogClamp = 1e-30;

struct LossBreakdown {
  double rank_loss = 0.0;
  double conf_loss = 0.0;
  double total = 0.0;  // rank + lambda * conf, exactly as computed
  std::size_t pair_count = 0;  // query pairs evaluated for the conf term
};

/// Truncated-exponential label normalization: psi(y) = exp(y) for y > 0,
/// else 0; output sums to 1. Throws DomainError when all labels are zero.
std::vector<double> normalize_labels(const std::vector<int>& labels);

/// Mean over queries of -(1/n_q) sum_i y~_i log s_i, log clamped at 1e-30.
double attrank_loss(const std::vector<std::vector<double>>& scores,
                    const std::vector<std::vector<double>>& norm_labels);

/// Chamfer pseudo-distance between two row sets (sum of squared
/// nearest-neighbour distances, both directions).
double chamfer_distance(const diff::Tensor& a, const diff::Tensor& b);

/// How the confusion term's double sum over batch pairs is evaluated:
/// all unordered pairs, or a seeded subsample rescaled to stay an
/// unbiased estimate of the full sum.
struct PairPolicy {
  enum class Mode { all, sample };
  Mode mode = Mode::all;
  std::size_t sample_pairs = 0;
  std::uint64_t seed = 0;
};

/// Loss nodes for one batch, built on the caller's graph. Queries are
/// processed in qid-sorted order so that reductions are run-to-run
/// identical regardless of batch shuffling.
struct BatchLossNodes {
  diff::NodeId total = 0;
  diff::NodeId rank = 0;
  bool has_conf = false;
  diff::NodeId conf = 0;
  std::size_t pair_count = 0;
  std::vector<const data::QueryGroup*> queries;  // qid-sorted
  std::vector<model::ForwardTrace> traces;       // aligned with queries

  LossBreakdown breakdown(const diff::Graph& g) const;
};

/// Build ranking + confusion loss for a batch. `normalize_by` overrides the
/// 1/|B| factor (0 = batch size); used when per-query subgraphs of a larger
/// batch are built separately.
BatchLossNodes build_batch_loss(diff::Graph& g, const model::ParamNodes& pn,
                                std::vector<const data::QueryGroup*> batch,
                                const model::ModelConfig& config,
                                const data::FeatureSchema& schema,
                                const PairPolicy& policy = {},
                                std::size_t normalize_by = 0);

/// Convenience: run the batch on a throwaway graph and report the values.
LossBreakdown total_loss(const std::vector<const data::QueryGroup*>& batch,
                         const model::ModelParams& params,
                         const model::ModelConfig& config,
                         const data::FeatureSchema& schema,
                         const PairPolicy& policy = {});

}  // namespace qilcm::loss
