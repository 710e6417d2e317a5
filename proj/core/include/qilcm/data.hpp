#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qilcm::data {

/// Declares how the raw feature columns are interpreted. The LETOR text
/// format is all-numeric; categorical columns and their embedding sizes
/// have to be declared explicitly.
struct CategoricalSpec {
  std::size_t index = 0;        // raw column index
  std::size_t cardinality = 0;  // >= 2
  std::size_t dim = 0;          // embedding size, 0 = default

  bool operator==(const CategoricalSpec&) const = default;
};

struct FeatureSchema {
  std::size_t n_numeric = 0;
  std::vector<CategoricalSpec> categorical;
  /// Set by attach_initial_order: an extra numeric column rank/n_q is
  /// appended after the raw columns.
  bool has_initial_order = false;

  /// Raw columns in the data file (numeric + categorical).
  std::size_t raw_columns() const { return n_numeric + categorical.size(); }
  /// Columns of a loaded feature matrix (raw + optional order feature).
  std::size_t total_columns() const {
    return raw_columns() + (has_initial_order ? 1 : 0);
  }
  bool is_categorical(std::size_t col) const;
  /// Indices of all numeric columns, in order (order feature included).
  std::vector<std::size_t> numeric_columns() const;
  /// min(16, ceil(cardinality/2)) when dim was left 0.
  std::size_t embedding_dim(std::size_t cat) const;

  void validate() const;
  bool operator==(const FeatureSchema&) const = default;
};

/// Default schema for a plain LETOR file: n numeric features, nothing else.
FeatureSchema numeric_schema(std::size_t n_features);

/// One query's candidate items: the unit of ranking. Rows of `features`
/// and entries of `labels` are aligned.
struct QueryGroup {
  std::int64_t qid = 0;
  std::size_t n_items = 0;
  std::size_t n_features = 0;
  std::vector<double> features;  // row-major n_items x n_features
  std::vector<int> labels;
  /// After attach_initial_order: original row index of each (sorted,
  /// possibly truncated) item. Empty otherwise.
  std::vector<std::size_t> initial_order;
  /// Original 0-based line numbers in the source file, when loaded from
  /// text. Used to align per-line score files.
  std::vector<std::size_t> source_lines;

  double feature(std::size_t item, std::size_t col) const {
    return features[item * n_features + col];
  }
  std::span<const double> row(std::size_t item) const {
    return {features.data() + item * n_features, n_features};
  }
  bool all_labels_zero() const;
};

/// Per-numeric-feature min/max collected from the training split.
struct Normalizer {
  std::vector<std::size_t> columns;
  std::vector<double> min;
  std::vector<double> max;
  bool operator==(const Normalizer&) const = default;
};

struct Dataset {
  std::vector<QueryGroup> groups;
  FeatureSchema schema;
  std::optional<Normalizer> normalizer;  // set once apply_normalizer ran

  std::size_t n_queries() const { return groups.size(); }
  std::size_t n_items() const;
};

/// One parsed LETOR line: `<label> qid:<id> <fid>:<val> ... [# comment]`.
struct ParsedLine {
  int label = 0;
  std::int64_t qid = 0;
  std::vector<std::pair<std::size_t, double>> features;  // 1-based fids
};

/// Parse a single LETOR line. `line_number` is only used in error messages.
ParsedLine parse_letor_line(const std::string& line, std::size_t line_number = 0);

/// Load a LETOR file into one QueryGroup per distinct qid (order of first
/// appearance; file order preserved within a query). Missing fids are 0.
Dataset load_dataset(const std::string& path, const FeatureSchema& schema);

/// Scan a LETOR file for the largest feature id, for schema inference.
std::size_t scan_max_feature_id(const std::string& path);

/// Min/max per numeric column over the training split only.
Normalizer fit_normalizer(const Dataset& train);

/// Map numeric features via (v - min)/(max - min); constant features go to
/// 0 and out-of-range values clamp to [0, 1].
Dataset apply_normalizer(const Dataset& ds, const Normalizer& norm);

struct SplitResult {
  Dataset train, valid, test;
};

/// 60/20/20 split by query count (never by item): valid and test get
/// floor(20%) queries each, the remainder goes to train.
SplitResult split_dataset(const Dataset& ds, std::uint64_t seed);

/// Drop queries whose labels are all zero (the normalized label
/// distribution is undefined for them). Training split only.
Dataset drop_zero_label_queries(const Dataset& ds);

using Batch = std::vector<std::size_t>;  // indices into Dataset::groups

/// One epoch of batches: seeded shuffle of the queries, last partial
/// batch kept.
std::vector<Batch> make_batches(const Dataset& ds, std::size_t batch_size,
                                std::uint64_t seed);

/// Per-query item scores from an initial ranker, aligned to the current
/// row order of each group.
using InitialScores = std::map<std::int64_t, std::vector<double>>;

/// Load an initial-scores file. Two formats, auto-detected by first line:
/// `<qid> <score_1> ... <score_n>` per query, or one score per line
/// parallel to the LETOR data file (requires source_lines on the groups).
InitialScores load_initial_scores(const std::string& path, const Dataset& ds);

/// Sort each group's items by initial score descending (ties by original
/// index), truncate to top_k (shorter lists kept whole), and append the
/// numeric feature rank/n_q in (0, 1].
Dataset attach_initial_order(const Dataset& ds, const InitialScores& scores,
                             std::size_t top_k);

/// Schema JSON: {"n_numeric": N, "categorical": [{"index","cardinality",
/// "dim"?}...]}.
FeatureSchema load_schema(const std::string& path);
std::string schema_to_json(const FeatureSchema& schema);
FeatureSchema schema_from_json_text(const std::string& text);

}  // namespace qilcm::data
