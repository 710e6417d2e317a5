#include "qilcm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "qilcm/errors.hpp"
#include "qilcm/parallel.hpp"
#include "qilcm/rng.hpp"

namespace qilcm::analysis {

using json = nlohmann::json;

std::vector<double> query_vector(const data::QueryGroup& group,
                                 const data::FeatureSchema& schema,
                                 const std::vector<double>* initial_scores,
                                 std::size_t k) {
  if (k < 1) throw DomainError("query_vector needs k >= 1");
  if (group.n_items < 1) throw DomainError("query_vector on empty group");
  if (group.n_features != schema.total_columns()) {
    throw SchemaError("query " + std::to_string(group.qid) +
                      " does not match the schema column count");
  }
  std::vector<std::size_t> order(group.n_items);
  std::iota(order.begin(), order.end(), 0);
  if (initial_scores) {
    if (initial_scores->size() != group.n_items) {
      throw DataError("initial scores for qid " + std::to_string(group.qid) +
                      " cover " + std::to_string(initial_scores->size()) +
                      " items, group has " + std::to_string(group.n_items));
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) {
                       return (*initial_scores)[a] > (*initial_scores)[b];
                     });
  }
  // With an attached order feature (or without any ranking information),
  // rows already stand in ranked/file order.
  const std::size_t top = std::min(k, group.n_items);
  const std::vector<std::size_t> cols = schema.numeric_columns();
  std::vector<double> mean(cols.size(), 0.0);
  for (std::size_t r = 0; r < top; ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      mean[c] += group.feature(order[r], cols[c]);
    }
  }
  for (auto& v : mean) v /= static_cast<double>(top);
  return mean;
}

double average_path_length(std::size_t n) {
  if (n <= 1) return 0.0;
  // exact harmonic number H(n-1)
  double h = 0.0;
  for (std::size_t i = 1; i < n; ++i) h += 1.0 / static_cast<double>(i);
  return 2.0 * h -
         2.0 * static_cast<double>(n - 1) / static_cast<double>(n);
}

IsolationForest IsolationForest::fit(
    const std::vector<std::vector<double>>& vectors, std::size_t n_trees,
    std::size_t subsample, std::uint64_t seed) {
  if (vectors.size() < 2) {
    throw DomainError("isolation forest needs at least 2 vectors");
  }
  if (n_trees < 1) throw DomainError("isolation forest needs n_trees >= 1");
  const std::size_t dim = vectors[0].size();
  for (const auto& v : vectors) {
    if (v.size() != dim) {
      throw DimensionError("isolation forest vectors have mixed dimensions");
    }
  }
  IsolationForest forest;
  forest.dim_ = dim;
  forest.subsample_ = std::min(subsample < 2 ? vectors.size() : subsample,
                               vectors.size());
  const std::size_t height_cap = static_cast<std::size_t>(
      std::ceil(std::log2(static_cast<double>(forest.subsample_))));

  for (std::size_t t = 0; t < n_trees; ++t) {
    Rng rng(derive_seed(seed, t));
    // seeded subsample without replacement
    std::vector<std::size_t> idx(vectors.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < forest.subsample_; ++i) {
      std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
    }
    idx.resize(forest.subsample_);

    Tree tree;
    // iterative construction; each frame owns its point subset
    struct Frame {
      std::vector<std::size_t> points;
      std::int32_t slot;
      std::uint32_t depth;
    };
    std::vector<Frame> stack;
    tree.nodes.emplace_back();
    stack.push_back({std::move(idx), 0, 0});
    while (!stack.empty()) {
      Frame frame = std::move(stack.back());
      stack.pop_back();
      {
        Node& node = tree.nodes[frame.slot];
        node.size = static_cast<std::uint32_t>(frame.points.size());
        node.depth = frame.depth;
        node.feature = -1;
      }
      if (frame.points.size() <= 1 || frame.depth >= height_cap) continue;

      // features with spread at this node
      std::vector<int> splittable;
      std::vector<double> col_lo(dim), col_hi(dim);
      for (std::size_t f = 0; f < dim; ++f) {
        double lo = vectors[frame.points[0]][f];
        double hi = lo;
        for (std::size_t p : frame.points) {
          lo = std::min(lo, vectors[p][f]);
          hi = std::max(hi, vectors[p][f]);
        }
        col_lo[f] = lo;
        col_hi[f] = hi;
        if (hi > lo) splittable.push_back(static_cast<int>(f));
      }
      if (splittable.empty()) {
        if (frame.depth == 0) forest.degenerate_ = true;
        continue;
      }
      const int f = splittable[uniform_index(rng, splittable.size())];
      double split = uniform(rng, col_lo[f], col_hi[f]);
      if (split <= col_lo[f]) {
        split = std::nextafter(col_lo[f], col_hi[f]);  // both sides non-empty
      }
      std::vector<std::size_t> left, right;
      for (std::size_t p : frame.points) {
        (vectors[p][f] < split ? left : right).push_back(p);
      }
      const std::int32_t left_slot = static_cast<std::int32_t>(tree.nodes.size());
      tree.nodes.emplace_back();
      const std::int32_t right_slot = static_cast<std::int32_t>(tree.nodes.size());
      tree.nodes.emplace_back();
      Node& node = tree.nodes[frame.slot];
      node.feature = f;
      node.split = split;
      node.left = left_slot;
      node.right = right_slot;
      stack.push_back({std::move(left), left_slot, frame.depth + 1});
      stack.push_back({std::move(right), right_slot, frame.depth + 1});
    }
    forest.trees_.push_back(std::move(tree));
  }
  return forest;
}

double IsolationForest::mean_path_length(std::span<const double> v) const {
  if (v.size() != dim_) {
    throw ContractViolation("anomaly vector has dimension " +
                            std::to_string(v.size()) + ", forest expects " +
                            std::to_string(dim_));
  }
  double sum = 0.0;
  for (const Tree& tree : trees_) {
    std::int32_t at = 0;
    while (tree.nodes[at].feature >= 0) {
      const Node& n = tree.nodes[at];
      at = v[static_cast<std::size_t>(n.feature)] < n.split ? n.left : n.right;
    }
    const Node& leaf = tree.nodes[at];
    sum += static_cast<double>(leaf.depth) + average_path_length(leaf.size);
  }
  return sum / static_cast<double>(trees_.size());
}

double IsolationForest::anomaly_score(std::span<const double> v) const {
  const double e_h = mean_path_length(v);
  const double c = average_path_length(subsample_);
  if (c <= 0.0) return 0.5;
  return std::exp2(-e_h / c);
}

std::size_t IsolationForest::max_height() const {
  std::size_t h = 0;
  for (const Tree& tree : trees_) {
    for (const Node& n : tree.nodes) h = std::max<std::size_t>(h, n.depth);
  }
  return h;
}

std::string GapReport::to_json() const {
  json j;
  j["metric"] = metric;
  j["total_queries"] = total_queries;
  j["buckets"] = json::array();
  for (const auto& b : buckets) {
    j["buckets"].push_back({{"score_lo", b.score_lo},
                            {"score_hi", b.score_hi},
                            {"count", b.count},
                            {"mean_a", b.mean_a},
                            {"mean_b", b.mean_b},
                            {"gap", b.gap}});
  }
  return j.dump(2);
}

std::string GapReport::to_csv() const {
  std::string out = "bucket,score_lo,score_hi,count,mean_a,mean_b,gap\n";
  char buf[200];
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    const auto& b = buckets[i];
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%zu,%.17g,%.17g,%.17g\n",
                  i, b.score_lo, b.score_hi, b.count, b.mean_a, b.mean_b,
                  b.gap);
    out += buf;
  }
  return out;
}

std::string GapReport::to_gnuplot() const {
  std::string out = "# bucket score_lo score_hi count mean_a mean_b gap\n";
  char buf[200];
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    const auto& b = buckets[i];
    std::snprintf(buf, sizeof(buf), "%zu %.10g %.10g %zu %.10g %.10g %.10g\n",
                  i, b.score_lo, b.score_hi, b.count, b.mean_a, b.mean_b,
                  b.gap);
    out += buf;
  }
  return out;
}

GapReport gap_report(const model::ModelBundle& model_a,
                     const model::ModelBundle& model_b,
                     const data::Dataset& test_ds,
                     const IsolationForest& forest,
                     const eval::MetricSpec& metric, std::size_t n_buckets,
                     std::size_t query_vector_k, std::size_t threads) {
  if (n_buckets < 2) throw DomainError("gap_report needs n_buckets >= 2");
  if (model_a.schema != model_b.schema) {
    throw SchemaError("the two checkpoints use different feature schemas");
  }
  if (test_ds.groups.size() < n_buckets) {
    throw DomainError("gap_report: " + std::to_string(test_ds.groups.size()) +
                      " queries cannot fill " + std::to_string(n_buckets) +
                      " buckets");
  }

  const std::size_t n = test_ds.groups.size();
  std::vector<double> score(n);
  std::vector<double> metric_a(n), metric_b(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const data::QueryGroup& g = test_ds.groups[i];
    score[i] = forest.anomaly_score(
        query_vector(g, test_ds.schema, nullptr, query_vector_k));
    const std::vector<double> sa = model::score_query(model_a, g);
    const std::vector<double> sb = model::score_query(model_b, g);
    metric_a[i] = eval::metric_value(metric, sa, g.labels);
    metric_b[i] = eval::metric_value(metric, sb, g.labels);
  });

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] < score[b];
    return test_ds.groups[a].qid < test_ds.groups[b].qid;
  });

  GapReport report;
  report.metric = metric.str();
  report.total_queries = n;
  for (std::size_t b = 0; b < n_buckets; ++b) {
    const std::size_t begin = b * n / n_buckets;
    const std::size_t end = (b + 1) * n / n_buckets;
    GapBucket bucket;
    bucket.count = end - begin;
    bucket.score_lo = score[order[begin]];
    bucket.score_hi = score[order[end - 1]];
    for (std::size_t i = begin; i < end; ++i) {
      bucket.mean_a += metric_a[order[i]];
      bucket.mean_b += metric_b[order[i]];
    }
    bucket.mean_a /= static_cast<double>(bucket.count);
    bucket.mean_b /= static_cast<double>(bucket.count);
    bucket.gap = bucket.mean_a - bucket.mean_b;
    report.buckets.push_back(bucket);
  }
  return report;
}

}  // namespace qilcm::analysis
