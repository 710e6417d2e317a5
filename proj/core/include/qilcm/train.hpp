#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qilcm/data.hpp"
#include "qilcm/loss.hpp"
#include "qilcm/model.hpp"

namespace qilcm::train {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 80;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 0;
  std::size_t early_stop_patience = 10;  // epochs without improvement
  std::string selection_metric = "ndcg@10";
  std::optional<double> grad_clip_norm;  // global max-norm, off by default
  std::size_t threads = 1;
  loss::PairPolicy pair_policy;

  void validate() const;
};

/// Adam moments, one pair per parameter in ModelParams::named() order.
struct OptimizerState {
  std::vector<diff::Tensor> m;
  std::vector<diff::Tensor> v;
  std::uint64_t t = 0;

  static OptimizerState init(const model::ModelParams& params);
};

/// One Adam update. `grads` must align with ModelParams::named(); a
/// non-finite gradient aborts with the parameter's name.
void adam_step(model::ModelParams& params,
               const std::vector<diff::Tensor>& grads, OptimizerState& state,
               const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double rank_loss = 0.0;
  double conf_loss = 0.0;
  double total = 0.0;
  double valid_metric = 0.0;
};

struct FitResult {
  model::ModelBundle best;
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
  std::vector<EpochRecord> history;
};

/// Adam training loop with per-epoch validation and best-checkpoint
/// retention. Both datasets must already be normalized; the training split
/// must not contain all-zero-label queries. Fully deterministic for a
/// given (seed, data, configs).
FitResult fit(const data::Dataset& train_ds, const data::Dataset& valid_ds,
              const model::ModelConfig& model_cfg,
              const TrainConfig& train_cfg);

/// Gradients of one batch in ModelParams::named() order, plus the loss
/// values. With lambda = 0 and threads > 1 the per-query subgraphs run in
/// parallel and reduce in qid-sorted order; the result is identical to the
/// single-threaded path.
struct BatchGradients {
  loss::LossBreakdown losses;
  std::vector<diff::Tensor> grads;
};
BatchGradients batch_gradients(const std::vector<const data::QueryGroup*>& batch,
                               const model::ModelParams& params,
                               const model::ModelConfig& model_cfg,
                               const data::FeatureSchema& schema,
                               const loss::PairPolicy& policy,
                               std::size_t threads);

/// History CSV: epoch,rank_loss,conf_loss,total,valid_metric.
std::string history_to_csv(const std::vector<EpochRecord>& history);
void write_history_csv(const std::string& path,
                       const std::vector<EpochRecord>& history);

/// Checkpoint JSON document; round-trips forward outputs exactly.
std::string checkpoint_to_json(const model::ModelBundle& bundle);
model::ModelBundle checkpoint_from_json_text(const std::string& text);
void save_checkpoint(const std::string& path, const model::ModelBundle& bundle);
model::ModelBundle load_checkpoint(const std::string& path);

}  // namespace qilcm::train
