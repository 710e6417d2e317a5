#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qilcm/data.hpp"
#include "qilcm/model.hpp"

namespace qilcm::eval {

struct MetricSpec {
  enum class Kind { ndcg, precision };
  Kind kind = Kind::ndcg;
  std::size_t k = 10;

  std::string str() const;
  bool operator==(const MetricSpec&) const = default;
};

/// Parse "ndcg@K" / "p@K"; throws DomainError listing the valid forms.
MetricSpec parse_metric(const std::string& token);
std::vector<MetricSpec> parse_metric_list(const std::string& csv);

/// Queries whose ideal DCG is zero score 0 by default; `skip` excludes
/// them from aggregate means instead.
enum class ZeroIdcgPolicy { score_zero, skip };

/// Denominator of P@k when the list is shorter than k.
enum class PrecisionDenom { k, min_k_n };

/// NDCG@k with gain 2^label - 1 and discount log2(rank+1). Items are
/// sorted by score descending, ties broken by original index.
double ndcg_at_k(std::span<const double> scores, std::span<const int> labels,
                 std::size_t k);

/// Fraction of the top-k score-sorted items with (binary) label 1.
double precision_at_k(std::span<const double> scores,
                      std::span<const int> labels, std::size_t k,
                      PrecisionDenom denom = PrecisionDenom::k);

/// Per-query and aggregate metric values for one model on one dataset.
/// Rows are qid-sorted.
struct MetricReport {
  std::vector<std::string> metrics;
  std::vector<std::int64_t> qids;
  std::vector<std::vector<double>> per_query;  // [metric][query]
  std::vector<double> mean;                    // [metric]
  std::uint64_t run_seed = 0;
  std::size_t query_count = 0;

  std::string to_json() const;
  /// Aligned two-column text table (metric, mean).
  std::string to_table() const;
};

struct EvaluateOptions {
  ZeroIdcgPolicy zero_idcg = ZeroIdcgPolicy::score_zero;
  PrecisionDenom precision_denom = PrecisionDenom::k;
  std::size_t threads = 1;
  std::uint64_t run_seed = 0;  // recorded in the report
};

/// Forward every query and aggregate the requested metrics. The dataset
/// must already be normalized with the checkpoint's normalizer.
MetricReport evaluate(const model::ModelBundle& bundle,
                      const data::Dataset& ds,
                      std::span<const MetricSpec> metrics,
                      const EvaluateOptions& options = {});

/// Metric of one scored query (shared by evaluate and the gap report).
double metric_value(const MetricSpec& metric, std::span<const double> scores,
                    std::span<const int> labels,
                    PrecisionDenom denom = PrecisionDenom::k);

}  // namespace qilcm::eval
