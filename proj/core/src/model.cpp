#include "qilcm/model.hpp"

#include <cmath>

#include "qilcm/errors.hpp"
#include "qilcm/rng.hpp"

namespace qilcm::model {

using diff::Graph;
using diff::NodeId;
using diff::Tensor;

void ModelConfig::validate() const {
  if (d1 < 1 || d2 < 1) throw DomainError("encoder dims must be >= 1");
  for (std::size_t d : att_hidden) {
    if (d < 1) throw DomainError("att_hidden dims must be >= 1");
  }
  for (std::size_t d : rank_hidden) {
    if (d < 1) throw DomainError("rank_hidden dims must be >= 1");
  }
  if (eps <= 0.0) throw DomainError("eps must be positive");
  if (lambda_conf < 0.0) throw DomainError("lambda_conf must be >= 0");
}

namespace {

void collect_mlp(const Mlp& mlp, const std::string& prefix,
                 std::vector<std::pair<std::string, const Tensor*>>& out) {
  for (std::size_t i = 0; i < mlp.hidden.size(); ++i) {
    out.emplace_back(prefix + ".h" + std::to_string(i) + ".W",
                     &mlp.hidden[i].W);
    out.emplace_back(prefix + ".h" + std::to_string(i) + ".b",
                     &mlp.hidden[i].b);
  }
  out.emplace_back(prefix + ".out.W", &mlp.out.W);
  out.emplace_back(prefix + ".out.b", &mlp.out.b);
}

}  // namespace

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.emplace_back("enc1.W", &enc1.W);
  out.emplace_back("enc1.b", &enc1.b);
  out.emplace_back("enc2.W", &enc2.W);
  out.emplace_back("enc2.b", &enc2.b);
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    out.emplace_back("emb." + std::to_string(i), &embeddings[i]);
  }
  collect_mlp(att, "att", out);
  collect_mlp(rank, "rank", out);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named_mutable() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [name, t] : named()) {
    out.emplace_back(name, const_cast<Tensor*>(t));
  }
  return out;
}

std::size_t ModelParams::count() const { return named().size(); }

std::size_t input_dim(const data::FeatureSchema& schema,
                      const ModelConfig& config) {
  (void)config;
  std::size_t dim = schema.numeric_columns().size();
  for (std::size_t k = 0; k < schema.categorical.size(); ++k) {
    dim += schema.embedding_dim(k);
  }
  return dim;
}

namespace {

Tensor uniform_tensor(std::vector<std::size_t> shape, double lo, double hi,
                      Rng& rng) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(rng, lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

DenseLayer init_dense(std::size_t in, std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  DenseLayer layer;
  layer.W = uniform_tensor({in, out}, -limit, limit, rng);
  layer.b = Tensor::zeros({out});
  return layer;
}

Mlp init_mlp(std::size_t in, const std::vector<std::size_t>& hidden, Rng& rng) {
  Mlp mlp;
  std::size_t cur = in;
  for (std::size_t d : hidden) {
    mlp.hidden.push_back(init_dense(cur, d, rng));
    cur = d;
  }
  mlp.out = init_dense(cur, 1, rng);
  return mlp;
}

}  // namespace

ModelParams init_params(const data::FeatureSchema& schema,
                        const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  schema.validate();
  Rng rng(seed);
  const std::size_t f = input_dim(schema, config);
  ModelParams p;
  p.enc1 = init_dense(f, config.d1, rng);
  p.enc2 = init_dense(config.d1, config.d2, rng);
  for (std::size_t k = 0; k < schema.categorical.size(); ++k) {
    p.embeddings.push_back(uniform_tensor(
        {schema.categorical[k].cardinality, schema.embedding_dim(k)}, -0.05,
        0.05, rng));
  }
  const std::size_t h_dim = f + config.d2;
  p.att = init_mlp(h_dim, config.att_hidden, rng);
  p.rank = init_mlp(2 * h_dim, config.rank_hidden, rng);
  return p;
}

namespace {

void check_dense(const DenseLayer& layer, std::size_t in, std::size_t out,
                 const std::string& name) {
  if (layer.W.rank() != 2 || layer.W.rows() != in || layer.W.cols() != out ||
      layer.b.numel() != out) {
    throw SchemaError("parameter '" + name + "' has shape " +
                      layer.W.shape_str() + "/" + layer.b.shape_str() +
                      ", expected [" + std::to_string(in) + "x" +
                      std::to_string(out) + "]");
  }
}

void check_mlp(const Mlp& mlp, std::size_t in,
               const std::vector<std::size_t>& hidden,
               const std::string& name) {
  if (mlp.hidden.size() != hidden.size()) {
    throw SchemaError("parameter '" + name + "' has " +
                      std::to_string(mlp.hidden.size()) +
                      " hidden layers, config expects " +
                      std::to_string(hidden.size()));
  }
  std::size_t cur = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    check_dense(mlp.hidden[i], cur, hidden[i],
                name + ".h" + std::to_string(i));
    cur = hidden[i];
  }
  check_dense(mlp.out, cur, 1, name + ".out");
}

}  // namespace

void validate_params(const ModelParams& params,
                     const data::FeatureSchema& schema,
                     const ModelConfig& config) {
  const std::size_t f = input_dim(schema, config);
  check_dense(params.enc1, f, config.d1, "enc1");
  check_dense(params.enc2, config.d1, config.d2, "enc2");
  if (params.embeddings.size() != schema.categorical.size()) {
    throw SchemaError("parameter set has " +
                      std::to_string(params.embeddings.size()) +
                      " embedding tables, schema declares " +
                      std::to_string(schema.categorical.size()));
  }
  for (std::size_t k = 0; k < params.embeddings.size(); ++k) {
    const Tensor& t = params.embeddings[k];
    if (t.rank() != 2 || t.rows() != schema.categorical[k].cardinality ||
        t.cols() != schema.embedding_dim(k)) {
      throw SchemaError("embedding table " + std::to_string(k) +
                        " has shape " + t.shape_str());
    }
  }
  const std::size_t h_dim = f + config.d2;
  check_mlp(params.att, h_dim, config.att_hidden, "att");
  check_mlp(params.rank, 2 * h_dim, config.rank_hidden, "rank");
}

ParamNodes bind_params(Graph& g, const ModelParams& params) {
  ParamNodes pn;
  auto push = [&](const Tensor& t) {
    const NodeId id = g.leaf(t);
    pn.ordered.push_back(id);
    return id;
  };
  pn.enc1_W = push(params.enc1.W);
  pn.enc1_b = push(params.enc1.b);
  pn.enc2_W = push(params.enc2.W);
  pn.enc2_b = push(params.enc2.b);
  for (const Tensor& t : params.embeddings) pn.embeddings.push_back(push(t));
  auto bind_mlp = [&](const Mlp& mlp) {
    MlpNodes nodes;
    for (const auto& layer : mlp.hidden) {
      const NodeId w = push(layer.W);
      const NodeId b = push(layer.b);
      nodes.hidden.emplace_back(w, b);
    }
    nodes.out_W = push(mlp.out.W);
    nodes.out_b = push(mlp.out.b);
    return nodes;
  };
  pn.att = bind_mlp(params.att);
  pn.rank = bind_mlp(params.rank);
  return pn;
}

namespace {

NodeId apply_mlp(Graph& g, const MlpNodes& mlp, NodeId x) {
  NodeId cur = x;
  for (const auto& [w, b] : mlp.hidden) {
    cur = g.elu(g.add_rowvec(g.matmul(cur, w), b));
  }
  return g.add_rowvec(g.matmul(cur, mlp.out_W), mlp.out_b);  // [n x 1]
}

}  // namespace

NodeId encode_items(Graph& g, const ParamNodes& pn,
                    const data::QueryGroup& group,
                    const data::FeatureSchema& schema,
                    const ModelConfig& config) {
  (void)config;
  if (group.n_features != schema.total_columns()) {
    throw SchemaError("query " + std::to_string(group.qid) + " has " +
                      std::to_string(group.n_features) +
                      " columns, schema expects " +
                      std::to_string(schema.total_columns()));
  }
  if (group.n_items < 1) {
    throw DomainError("query " + std::to_string(group.qid) + " has no items");
  }
  const std::size_t n = group.n_items;

  const std::vector<std::size_t> num_cols = schema.numeric_columns();
  std::vector<double> numeric(n * num_cols.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < num_cols.size(); ++c) {
      const double v = group.feature(i, num_cols[c]);
      if (v < 0.0 || v > 1.0) {
        throw ContractViolation(
            "query " + std::to_string(group.qid) + " item " +
            std::to_string(i) + ": numeric feature " +
            std::to_string(num_cols[c]) + " = " + std::to_string(v) +
            " is not normalized to [0,1]");
      }
      numeric[i * num_cols.size() + c] = v;
    }
  }

  std::vector<NodeId> pieces;
  if (!num_cols.empty()) {
    pieces.push_back(g.constant(Tensor::matrix(n, num_cols.size(), std::move(numeric))));
  }
  for (std::size_t k = 0; k < schema.categorical.size(); ++k) {
    const std::size_t col = schema.categorical[k].index;
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = group.feature(i, col);
      if (v < 0.0 || v != std::floor(v) ||
          v >= static_cast<double>(schema.categorical[k].cardinality)) {
        throw ContractViolation(
            "query " + std::to_string(group.qid) + " item " +
            std::to_string(i) + ": categorical column " + std::to_string(col) +
            " value " + std::to_string(v) + " is not a valid category id");
      }
      idx[i] = static_cast<std::size_t>(v);
    }
    pieces.push_back(g.gather_rows(pn.embeddings[k], std::move(idx)));
  }
  if (pieces.empty()) {
    throw SchemaError("schema declares no features");
  }
  NodeId x = pieces[0];
  for (std::size_t i = 1; i < pieces.size(); ++i) x = g.concat(x, pieces[i], 1);

  const NodeId x1 = g.elu(g.add_rowvec(g.matmul(x, pn.enc1_W), pn.enc1_b));
  const NodeId x2 = g.elu(g.add_rowvec(g.matmul(x1, pn.enc2_W), pn.enc2_b));
  return g.concat(x, x2, 1);
}

std::pair<NodeId, NodeId> attention_pool(Graph& g, const ParamNodes& pn,
                                         NodeId h) {
  const std::size_t n = g.value(h).rows();
  const NodeId z = apply_mlp(g, pn.att, h);
  const NodeId a = g.softmax(g.reshape(z, {n}));
  const NodeId c = g.matmul(g.reshape(a, {1, n}), h);
  return {a, c};
}

std::pair<NodeId, NodeId> mean_pool(Graph& g, NodeId h) {
  const std::size_t n = g.value(h).rows();
  const NodeId a =
      g.constant(Tensor::full({n}, 1.0 / static_cast<double>(n)));
  const NodeId c = g.matmul(g.reshape(a, {1, n}), h);
  return {a, c};
}

NodeId refine(Graph& g, NodeId h, NodeId context) {
  if (g.value(context).numel() != g.value(h).cols()) {
    throw ContractViolation("refine: context width " +
                            g.value(context).shape_str() +
                            " does not match encodings " +
                            g.value(h).shape_str());
  }
  const NodeId ch = g.mul_rowvec(h, context);
  return g.concat(ch, h, 1);
}

QnResult query_normalize(Graph& g, NodeId refined, NodeId attention,
                         double eps) {
  if (eps <= 0.0) throw DomainError("query_normalize eps must be positive");
  const std::size_t n = g.value(refined).rows();
  const NodeId a_row = g.reshape(attention, {1, n});
  QnResult qn;
  qn.mean = g.matmul(a_row, refined);
  const NodeId dev = g.sub_rowvec(refined, qn.mean);
  qn.var = g.matmul(a_row, g.hadamard(dev, dev));
  const NodeId inv = g.recip(g.add_scalar(g.sqrt(qn.var), eps));
  qn.normalized = g.mul_rowvec(dev, inv);
  return qn;
}

NodeId rank_scores(Graph& g, const ParamNodes& pn, NodeId normalized) {
  const std::size_t n = g.value(normalized).rows();
  const NodeId z = apply_mlp(g, pn.rank, normalized);
  return g.softmax(g.reshape(z, {n}));
}

ForwardTrace forward(Graph& g, const ParamNodes& pn,
                     const data::QueryGroup& group,
                     const data::FeatureSchema& schema,
                     const ModelConfig& config) {
  ForwardTrace trace;
  trace.h = encode_items(g, pn, group, schema, config);
  trace.x = g.inputs(trace.h)[0];  // concat(x, x2) keeps x as first input
  if (config.pooling == Pooling::attention) {
    std::tie(trace.attention, trace.context) = attention_pool(g, pn, trace.h);
  } else {
    std::tie(trace.attention, trace.context) = mean_pool(g, trace.h);
  }
  trace.refined = refine(g, trace.h, trace.context);
  if (config.qn_enabled) {
    const QnResult qn = query_normalize(g, trace.refined, trace.attention,
                                        config.eps);
    trace.normalized = qn.normalized;
    trace.refined_mean = qn.mean;
    trace.refined_var = qn.var;
  } else {
    trace.normalized = trace.refined;
  }
  trace.scores = rank_scores(g, pn, trace.normalized);
  return trace;
}

std::vector<double> score_query(const ModelBundle& bundle,
                                const data::QueryGroup& group) {
  Graph g;
  const ParamNodes pn = bind_params(g, bundle.params);
  const ForwardTrace trace =
      forward(g, pn, group, bundle.schema, bundle.config);
  const Tensor& s = g.value(trace.scores);
  return {s.values().begin(), s.values().end()};
}

}  // namespace qilcm::model
