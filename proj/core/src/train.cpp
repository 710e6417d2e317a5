#include "qilcm/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "qilcm/errors.hpp"
#include "qilcm/metrics.hpp"
#include "qilcm/parallel.hpp"
#include "qilcm/rng.hpp"

namespace qilcm::train {

using diff::Tensor;

void TrainConfig::validate() const {
  if (lr <= 0.0) throw DomainError("learning rate must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw DomainError("Adam betas must lie in [0, 1)");
  }
  if (adam_eps <= 0.0) throw DomainError("adam_eps must be positive");
  if (batch_size < 1) throw DomainError("batch_size must be >= 1");
  if (max_epochs < 1) throw DomainError("max_epochs must be >= 1");
  if (grad_clip_norm && *grad_clip_norm <= 0.0) {
    throw DomainError("grad_clip_norm must be positive");
  }
  eval::parse_metric(selection_metric);
}

OptimizerState OptimizerState::init(const model::ModelParams& params) {
  OptimizerState state;
  for (const auto& [name, t] : params.named()) {
    state.m.push_back(Tensor::zeros(t->shape()));
    state.v.push_back(Tensor::zeros(t->shape()));
  }
  return state;
}

void adam_step(model::ModelParams& params, const std::vector<Tensor>& grads,
               OptimizerState& state, const TrainConfig& config) {
  auto named = params.named_mutable();
  if (grads.size() != named.size() || state.m.size() != named.size()) {
    throw DomainError("adam_step: gradient/state count mismatch");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));

  double clip_scale = 1.0;
  if (config.grad_clip_norm) {
    double sq = 0.0;
    for (const Tensor& g : grads) {
      for (double v : g.values()) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (norm > *config.grad_clip_norm) clip_scale = *config.grad_clip_norm / norm;
  }

  for (std::size_t p = 0; p < named.size(); ++p) {
    auto& [name, theta] = named[p];
    const Tensor& g = grads[p];
    if (!same_shape(g, *theta)) {
      throw DomainError("adam_step: gradient shape " + g.shape_str() +
                        " does not match parameter '" + name + "' " +
                        theta->shape_str());
    }
    for (double v : g.values()) {
      if (!std::isfinite(v)) {
        throw DomainError("non-finite gradient for parameter '" + name + "'");
      }
    }
    std::vector<double> m(state.m[p].values().begin(), state.m[p].values().end());
    std::vector<double> v(state.v[p].values().begin(), state.v[p].values().end());
    std::vector<double> w(theta->values().begin(), theta->values().end());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.at(i) * clip_scale;
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= config.lr * mhat / (std::sqrt(vhat) + config.adam_eps);
    }
    try {
      state.m[p] = Tensor(theta->shape(), std::move(m));
      state.v[p] = Tensor(theta->shape(), std::move(v));
      *theta = Tensor(theta->shape(), std::move(w));
    } catch (const DomainError&) {
      throw DomainError("non-finite update for parameter '" + name + "'");
    }
  }
}

namespace {

std::vector<Tensor> leaf_gradients(const diff::Gradients& grads,
                                   const std::vector<diff::NodeId>& leaves) {
  std::vector<Tensor> out;
  out.reserve(leaves.size());
  for (diff::NodeId id : leaves) out.push_back(grads.at(id));
  return out;
}

void accumulate(std::vector<std::vector<double>>& acc,
                const std::vector<Tensor>& grads) {
  if (acc.empty()) {
    acc.resize(grads.size());
    for (std::size_t p = 0; p < grads.size(); ++p) {
      acc[p].assign(grads[p].values().begin(), grads[p].values().end());
    }
    return;
  }
  for (std::size_t p = 0; p < grads.size(); ++p) {
    for (std::size_t i = 0; i < acc[p].size(); ++i) acc[p][i] += grads[p].at(i);
  }
}

}  // namespace

BatchGradients batch_gradients(const std::vector<const data::QueryGroup*>& batch,
                               const model::ModelParams& params,
                               const model::ModelConfig& model_cfg,
                               const data::FeatureSchema& schema,
                               const loss::PairPolicy& policy,
                               std::size_t threads) {
  BatchGradients out;
  if (model_cfg.lambda_conf == 0.0 && threads > 1 && batch.size() > 1) {
    // The queries are independent without the confusion term: fan out one
    // subgraph per query and reduce in qid-sorted order.
    std::vector<const data::QueryGroup*> sorted = batch;
    std::sort(sorted.begin(), sorted.end(),
              [](const data::QueryGroup* a, const data::QueryGroup* b) {
                return a->qid < b->qid;
              });
    std::vector<loss::LossBreakdown> losses(sorted.size());
    std::vector<std::vector<Tensor>> grads(sorted.size());
    parallel_for(sorted.size(), threads, [&](std::size_t i) {
      diff::Graph g;
      const model::ParamNodes pn = model::bind_params(g, params);
      const loss::BatchLossNodes nodes = loss::build_batch_loss(
          g, pn, {sorted[i]}, model_cfg, schema, policy, batch.size());
      losses[i] = nodes.breakdown(g);
      grads[i] = leaf_gradients(g, g.backward(nodes.total), pn.ordered);
    });
    std::vector<std::vector<double>> acc;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      accumulate(acc, grads[i]);
      out.losses.rank_loss += losses[i].rank_loss;
      out.losses.total += losses[i].total;
    }
    const auto named = params.named();
    for (std::size_t p = 0; p < named.size(); ++p) {
      out.grads.emplace_back(named[p].second->shape(), std::move(acc[p]));
    }
    return out;
  }

  diff::Graph g;
  const model::ParamNodes pn = model::bind_params(g, params);
  const loss::BatchLossNodes nodes =
      loss::build_batch_loss(g, pn, batch, model_cfg, schema, policy);
  out.losses = nodes.breakdown(g);
  out.grads = leaf_gradients(g, g.backward(nodes.total), pn.ordered);
  return out;
}

FitResult fit(const data::Dataset& train_ds, const data::Dataset& valid_ds,
              const model::ModelConfig& model_cfg,
              const TrainConfig& train_cfg) {
  model_cfg.validate();
  train_cfg.validate();
  for (const auto& g : train_ds.groups) {
    if (g.all_labels_zero()) {
      throw DomainError("training split contains all-zero-label query " +
                        std::to_string(g.qid) +
                        "; drop_zero_label_queries must run first");
    }
  }
  if (train_ds.groups.empty()) throw DomainError("empty training split");
  if (valid_ds.groups.empty()) throw DomainError("empty validation split");

  const eval::MetricSpec selection =
      eval::parse_metric(train_cfg.selection_metric);

  FitResult result;
  result.best.config = model_cfg;
  result.best.schema = train_ds.schema;
  result.best.normalizer = train_ds.normalizer;
  model::ModelParams params = model::init_params(
      train_ds.schema, model_cfg, derive_seed(train_cfg.seed, 0));
  result.best.params = params;
  OptimizerState state = OptimizerState::init(params);

  double best_metric = -1.0;
  std::size_t best_epoch = 0;
  std::size_t stale_epochs = 0;

  for (std::size_t epoch = 1; epoch <= train_cfg.max_epochs; ++epoch) {
    const std::vector<data::Batch> batches = data::make_batches(
        train_ds, train_cfg.batch_size, derive_seed(train_cfg.seed, epoch));
    double rank_sum = 0.0, conf_sum = 0.0, total_sum = 0.0;
    std::size_t n_queries = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<const data::QueryGroup*> batch;
      batch.reserve(batches[b].size());
      for (std::size_t idx : batches[b]) batch.push_back(&train_ds.groups[idx]);
      loss::PairPolicy policy = train_cfg.pair_policy;
      policy.seed = derive_seed(train_cfg.seed, (epoch << 20) + b);
      try {
        BatchGradients bg = batch_gradients(batch, params, model_cfg,
                                            train_ds.schema, policy,
                                            resolve_threads(train_cfg.threads));
        adam_step(params, bg.grads, state, train_cfg);
        rank_sum += bg.losses.rank_loss * static_cast<double>(batch.size());
        conf_sum += bg.losses.conf_loss * static_cast<double>(batch.size());
        total_sum += bg.losses.total * static_cast<double>(batch.size());
        n_queries += batch.size();
      } catch (const Error& e) {
        throw DomainError("training aborted at epoch " + std::to_string(epoch) +
                          ", batch " + std::to_string(b + 1) + ": " + e.what());
      }
    }

    model::ModelBundle current{model_cfg, train_ds.schema, train_ds.normalizer,
                               params};
    eval::EvaluateOptions opts;
    opts.threads = resolve_threads(train_cfg.threads);
    const eval::MetricReport valid_report =
        eval::evaluate(current, valid_ds, {&selection, 1}, opts);
    const double metric = valid_report.mean[0];

    EpochRecord rec;
    rec.epoch = epoch;
    const double inv = 1.0 / static_cast<double>(n_queries);
    rec.rank_loss = rank_sum * inv;
    rec.conf_loss = conf_sum * inv;
    rec.total = total_sum * inv;
    rec.valid_metric = metric;
    result.history.push_back(rec);

    if (metric > best_metric) {
      best_metric = metric;
      best_epoch = epoch;
      result.best.params = params;
      stale_epochs = 0;
    } else {
      ++stale_epochs;
      if (stale_epochs >= train_cfg.early_stop_patience) break;
    }
  }
  result.best_epoch = best_epoch;
  result.best_metric = best_metric;
  return result;
}

std::string history_to_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,rank_loss,conf_loss,total,valid_metric\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g\n", r.epoch,
                  r.rank_loss, r.conf_loss, r.total, r.valid_metric);
    out += buf;
  }
  return out;
}

void write_history_csv(const std::string& path,
                       const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write history CSV: " + path);
  out << history_to_csv(history);
}

}  // namespace qilcm::train
