#include "qilcm/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qilcm/errors.hpp"
#include "qilcm/rng.hpp"

namespace qilcm::loss {

using diff::Graph;
using diff::NodeId;
using diff::Tensor;

std::vector<double> normalize_labels(const std::vector<int>& labels) {
  std::vector<double> psi(labels.size());
  double z = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    psi[i] = labels[i] > 0 ? std::exp(static_cast<double>(labels[i])) : 0.0;
    z += psi[i];
  }
  if (z == 0.0) {
    throw DomainError(
        "label distribution undefined: all labels are zero (such queries "
        "must be dropped from the training split)");
  }
  for (auto& v : psi) v /= z;
  return psi;
}

double attrank_loss(const std::vector<std::vector<double>>& scores,
                    const std::vector<std::vector<double>>& norm_labels) {
  if (scores.empty() || scores.size() != norm_labels.size()) {
    throw DomainError("attrank_loss needs one score vector per label vector");
  }
  double total = 0.0;
  for (std::size_t q = 0; q < scores.size(); ++q) {
    const auto& s = scores[q];
    const auto& y = norm_labels[q];
    if (s.size() != y.size() || s.empty()) {
      throw DomainError("attrank_loss length mismatch in query " +
                        std::to_string(q));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      acc += y[i] * std::log(std::max(s[i], kLogClamp));
    }
    total += -acc / static_cast<double>(s.size());
  }
  return total / static_cast<double>(scores.size());
}

double chamfer_distance(const Tensor& a, const Tensor& b) {
  Graph g;
  return g.value(g.chamfer(g.constant(a), g.constant(b))).item();
}

LossBreakdown BatchLossNodes::breakdown(const Graph& g) const {
  LossBreakdown out;
  out.rank_loss = g.value(rank).item();
  out.conf_loss = has_conf ? g.value(conf).item() : 0.0;
  out.total = g.value(total).item();
  out.pair_count = pair_count;
  return out;
}

BatchLossNodes build_batch_loss(Graph& g, const model::ParamNodes& pn,
                                std::vector<const data::QueryGroup*> batch,
                                const model::ModelConfig& config,
                                const data::FeatureSchema& schema,
                                const PairPolicy& policy,
                                std::size_t normalize_by) {
  if (batch.empty()) throw DomainError("batch must contain >= 1 query");
  std::sort(batch.begin(), batch.end(),
            [](const data::QueryGroup* a, const data::QueryGroup* b) {
              return a->qid < b->qid;
            });
  const double inv_batch =
      1.0 / static_cast<double>(normalize_by ? normalize_by : batch.size());

  BatchLossNodes out;
  out.queries = batch;
  out.traces.reserve(batch.size());

  std::optional<NodeId> rank_sum;
  for (const data::QueryGroup* q : batch) {
    const model::ForwardTrace trace = model::forward(g, pn, *q, schema, config);
    out.traces.push_back(trace);
    const std::vector<double> y = normalize_labels(q->labels);
    const NodeId y_const = g.constant(Tensor::vector(y));
    const NodeId logs = g.log(g.clamp_min(trace.scores, kLogClamp));
    const NodeId q_loss = g.scale(g.sum(g.hadamard(y_const, logs)),
                                  -1.0 / static_cast<double>(q->n_items));
    rank_sum = rank_sum ? g.add(*rank_sum, q_loss) : q_loss;
  }
  out.rank = g.scale(*rank_sum, inv_batch);

  if (config.lambda_conf > 0.0 && batch.size() > 1) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (std::size_t j = i + 1; j < batch.size(); ++j) pairs.emplace_back(i, j);
    }
    const std::size_t all_pairs = pairs.size();
    if (policy.mode == PairPolicy::Mode::sample &&
        policy.sample_pairs < all_pairs) {
      if (policy.sample_pairs == 0) {
        throw DomainError("pair sampling needs sample_pairs >= 1");
      }
      Rng rng(policy.seed);
      for (std::size_t i = 0; i < policy.sample_pairs; ++i) {
        std::swap(pairs[i], pairs[i + uniform_index(rng, pairs.size() - i)]);
      }
      pairs.resize(policy.sample_pairs);
    }
    std::optional<NodeId> conf_sum;
    for (const auto& [i, j] : pairs) {
      const NodeId d =
          g.chamfer(out.traces[i].normalized, out.traces[j].normalized);
      conf_sum = conf_sum ? g.add(*conf_sum, d) : d;
    }
    // Ordered double sum over the batch = 2x the unordered pairs
    // (self-pairs contribute 0); subsampling rescales by all/used.
    const double b = static_cast<double>(batch.size());
    const double factor = 2.0 * static_cast<double>(all_pairs) /
                          (static_cast<double>(pairs.size()) * b * b);
    out.conf = g.scale(*conf_sum, factor);
    out.has_conf = true;
    out.pair_count = pairs.size();
    out.total = g.scale_add(out.rank, out.conf, config.lambda_conf);
  } else if (config.lambda_conf > 0.0) {
    // single query: only the zero self-pair
    out.conf = g.constant(Tensor::scalar(0.0));
    out.has_conf = true;
    out.pair_count = 0;
    out.total = g.scale_add(out.rank, out.conf, config.lambda_conf);
  } else {
    out.total = out.rank;
  }
  return out;
}

LossBreakdown total_loss(const std::vector<const data::QueryGroup*>& batch,
                         const model::ModelParams& params,
                         const model::ModelConfig& config,
                         const data::FeatureSchema& schema,
                         const PairPolicy& policy) {
  Graph g;
  const model::ParamNodes pn = model::bind_params(g, params);
  return build_batch_loss(g, pn, batch, config, schema, policy).breakdown(g);
}

}  // namespace qilcm::loss
