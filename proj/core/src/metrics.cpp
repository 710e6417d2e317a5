#include "qilcm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "qilcm/errors.hpp"
#include "qilcm/parallel.hpp"

namespace qilcm::eval {

using json = nlohmann::json;

std::string MetricSpec::str() const {
  return (kind == Kind::ndcg ? "ndcg@" : "p@") + std::to_string(k);
}

MetricSpec parse_metric(const std::string& token) {
  const auto fail = [&]() -> MetricSpec {
    throw DomainError("unknown metric token \"" + token +
                      "\"; valid tokens are ndcg@<k> and p@<k>");
  };
  const std::size_t at = token.find('@');
  if (at == std::string::npos) return fail();
  const std::string head = token.substr(0, at);
  MetricSpec spec;
  if (head == "ndcg") {
    spec.kind = MetricSpec::Kind::ndcg;
  } else if (head == "p" || head == "P") {
    spec.kind = MetricSpec::Kind::precision;
  } else {
    return fail();
  }
  try {
    const long k = std::stol(token.substr(at + 1));
    if (k < 1) return fail();
    spec.k = static_cast<std::size_t>(k);
  } catch (const std::exception&) {
    return fail();
  }
  return spec;
}

std::vector<MetricSpec> parse_metric_list(const std::string& csv) {
  std::vector<MetricSpec> out;
  std::stringstream ss(csv);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (!token.empty()) out.push_back(parse_metric(token));
  }
  if (out.empty()) throw DomainError("empty metric list");
  return out;
}

namespace {

std::vector<std::size_t> rank_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];  // ties keep original index
  });
  return order;
}

double gain(int label) { return std::exp2(static_cast<double>(label)) - 1.0; }

double discount(std::size_t rank) {  // rank is 1-based
  return std::log2(static_cast<double>(rank) + 1.0);
}

}  // namespace

double ndcg_at_k(std::span<const double> scores, std::span<const int> labels,
                 std::size_t k) {
  if (scores.size() != labels.size()) {
    throw ContractViolation("ndcg_at_k: " + std::to_string(scores.size()) +
                            " scores vs " + std::to_string(labels.size()) +
                            " labels");
  }
  if (scores.empty() || k < 1) {
    throw DomainError("ndcg_at_k needs n >= 1 and k >= 1");
  }
  const std::size_t depth = std::min(k, scores.size());
  const std::vector<std::size_t> order = rank_order(scores);
  double dcg = 0.0;
  for (std::size_t r = 0; r < depth; ++r) {
    dcg += gain(labels[order[r]]) / discount(r + 1);
  }
  std::vector<int> ideal(labels.begin(), labels.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double idcg = 0.0;
  for (std::size_t r = 0; r < depth; ++r) {
    idcg += gain(ideal[r]) / discount(r + 1);
  }
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

double precision_at_k(std::span<const double> scores,
                      std::span<const int> labels, std::size_t k,
                      PrecisionDenom denom) {
  if (scores.size() != labels.size()) {
    throw ContractViolation("precision_at_k: " +
                            std::to_string(scores.size()) + " scores vs " +
                            std::to_string(labels.size()) + " labels");
  }
  if (scores.empty() || k < 1) {
    throw DomainError("precision_at_k needs n >= 1 and k >= 1");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) {
      throw ContractViolation("precision_at_k requires binary labels, got " +
                              std::to_string(y));
    }
  }
  const std::size_t depth = std::min(k, scores.size());
  const std::vector<std::size_t> order = rank_order(scores);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < depth; ++r) hits += labels[order[r]] == 1;
  const std::size_t d = denom == PrecisionDenom::k ? k : depth;
  return static_cast<double>(hits) / static_cast<double>(d);
}

double metric_value(const MetricSpec& metric, std::span<const double> scores,
                    std::span<const int> labels, PrecisionDenom denom) {
  return metric.kind == MetricSpec::Kind::ndcg
             ? ndcg_at_k(scores, labels, metric.k)
             : precision_at_k(scores, labels, metric.k, denom);
}

std::string MetricReport::to_json() const {
  json j;
  j["run_seed"] = run_seed;
  j["query_count"] = query_count;
  j["qids"] = qids;
  j["metrics"] = json::object();
  for (std::size_t m = 0; m < metrics.size(); ++m) {
    j["metrics"][metrics[m]] = {{"mean", mean[m]}, {"per_query", per_query[m]}};
  }
  return j.dump(2);
}

std::string MetricReport::to_table() const {
  std::size_t width = 6;
  for (const auto& m : metrics) width = std::max(width, m.size());
  std::ostringstream os;
  os << std::left;
  os.width(static_cast<std::streamsize>(width + 2));
  os << "metric";
  os << "mean\n";
  char buf[64];
  for (std::size_t m = 0; m < metrics.size(); ++m) {
    os.width(static_cast<std::streamsize>(width + 2));
    os << metrics[m];
    std::snprintf(buf, sizeof(buf), "%.4f", mean[m]);
    os << buf << "\n";
  }
  return os.str();
}

MetricReport evaluate(const model::ModelBundle& bundle,
                      const data::Dataset& ds,
                      std::span<const MetricSpec> metrics,
                      const EvaluateOptions& options) {
  if (ds.schema != bundle.schema) {
    throw SchemaError("dataset schema does not match the checkpoint schema");
  }
  if (ds.groups.empty()) throw DomainError("evaluate on empty dataset");
  model::validate_params(bundle.params, bundle.schema, bundle.config);

  std::vector<std::size_t> order(ds.groups.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ds.groups[a].qid < ds.groups[b].qid;
  });

  std::vector<std::vector<double>> scores(ds.groups.size());
  parallel_for(ds.groups.size(), resolve_threads(options.threads),
               [&](std::size_t i) {
                 scores[i] = model::score_query(bundle, ds.groups[order[i]]);
               });

  MetricReport report;
  report.run_seed = options.run_seed;
  report.query_count = ds.groups.size();
  report.qids.reserve(order.size());
  for (std::size_t i : order) report.qids.push_back(ds.groups[i].qid);
  report.metrics.reserve(metrics.size());
  for (const auto& m : metrics) report.metrics.push_back(m.str());
  report.per_query.assign(metrics.size(), {});
  report.mean.assign(metrics.size(), 0.0);

  for (std::size_t m = 0; m < metrics.size(); ++m) {
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const data::QueryGroup& g = ds.groups[order[i]];
      const double v = metric_value(metrics[m], scores[i], g.labels,
                                    options.precision_denom);
      report.per_query[m].push_back(v);
      const bool skip = options.zero_idcg == ZeroIdcgPolicy::skip &&
                        metrics[m].kind == MetricSpec::Kind::ndcg &&
                        g.all_labels_zero();
      if (!skip) {
        sum += v;
        ++counted;
      }
    }
    report.mean[m] = counted > 0 ? sum / static_cast<double>(counted) : 0.0;
  }
  return report;
}

}  // namespace qilcm::eval
