#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qilcm/data.hpp"
#include "qilcm/metrics.hpp"
#include "qilcm/model.hpp"

namespace qilcm::analysis {

/// Condensed query representation: mean of the top-min(k, n_q) items'
/// numeric feature rows (categorical columns excluded). "Top" means the
/// initial ranking: the scores argument, an attached order feature, or
/// file order, in that precedence.
std::vector<double> query_vector(const data::QueryGroup& group,
                                 const data::FeatureSchema& schema,
                                 const std::vector<double>* initial_scores,
                                 std::size_t k);

/// Isolation forest: random-split trees on seeded subsamples; short
/// isolation paths signal anomalies.
class IsolationForest {
 public:
  static IsolationForest fit(const std::vector<std::vector<double>>& vectors,
                             std::size_t n_trees, std::size_t subsample,
                             std::uint64_t seed);

  /// Average path length over the trees (unisolated leaves are extended
  /// by c(leaf size)).
  double mean_path_length(std::span<const double> v) const;
  /// 2^(-E[h]/c(n)), strictly inside (0, 1).
  double anomaly_score(std::span<const double> v) const;

  std::size_t n_trees() const { return trees_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t subsample() const { return subsample_; }
  /// True when the data had no splittable feature at some root; scores
  /// are then ~0.5 everywhere.
  bool degenerate() const { return degenerate_; }
  std::size_t max_height() const;

 private:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double split = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::uint32_t size = 0;   // points reaching this node
    std::uint32_t depth = 0;  // edges from the root
  };
  struct Tree {
    std::vector<Node> nodes;
  };

  std::vector<Tree> trees_;
  std::size_t dim_ = 0;
  std::size_t subsample_ = 0;
  bool degenerate_ = false;
};

/// Average-unsuccessful-BST-search normalizer 2 H(n-1) - 2 (n-1)/n with
/// exact harmonic numbers; c(0) = c(1) = 0.
double average_path_length(std::size_t n);

struct GapBucket {
  double score_lo = 0.0;
  double score_hi = 0.0;
  std::size_t count = 0;
  double mean_a = 0.0;
  double mean_b = 0.0;
  double gap = 0.0;  // mean_a - mean_b
};

/// Performance gap between two models across anomaly-score buckets,
/// ordered from least to most anomalous.
struct GapReport {
  std::string metric;
  std::vector<GapBucket> buckets;
  std::size_t total_queries = 0;

  std::string to_json() const;
  std::string to_csv() const;
  /// gnuplot-friendly whitespace table with a comment header.
  std::string to_gnuplot() const;
};

/// Score each test query with the forest, partition into n_buckets
/// equal-count quantile buckets (ties broken by qid), and report the mean
/// metric of both models plus the gap per bucket. Both bundles must share
/// the dataset's schema; the dataset must be normalized for scoring.
GapReport gap_report(const model::ModelBundle& model_a,
                     const model::ModelBundle& model_b,
                     const data::Dataset& test_ds,
                     const IsolationForest& forest,
                     const eval::MetricSpec& metric, std::size_t n_buckets,
                     std::size_t query_vector_k = 10,
                     std::size_t threads = 1);

}  // namespace qilcm::analysis
