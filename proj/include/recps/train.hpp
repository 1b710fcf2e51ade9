#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "recps/dataset.hpp"
#include "recps/model.hpp"

namespace recps {

/// Gradient buffers shaped like a model's parameters.
struct Gradients {
  Matrix user;
  Matrix item;
  std::vector<DenseLayer> mlp;
  std::vector<UserId> touched_users;
  std::vector<ItemId> touched_items;
  bool dense = false;  // lightgcn: every row may carry gradient

  explicit Gradients(const RecModel& model);
  void clear();
};

/// Mean binary cross-entropy of `batch` under `model`, with the exact
/// gradient of that mean written into `grads` (which is cleared first).
/// For lightgcn the propagation is recomputed from the current layer-0
/// embeddings and the model's graph; the model's cached propagation is
/// not used.
double loss_and_gradient(const RecModel& model, std::span<const LabeledExample> batch,
                         Gradients& grads);

/// Mean BCE without gradients.
double mean_loss(const RecModel& model, std::span<const LabeledExample> examples);

struct TrainResult {
  RecModel model;
  std::vector<double> epoch_loss;        // running mean BCE per epoch
  std::vector<double> validation_hr;     // per epoch; empty without early stopping
  int epochs_run = 0;
  int best_epoch = 0;
};

/// Mini-batch SGD on mean BCE. Example order is re-drawn every epoch from
/// a seeded hash of (epoch, user, item, label), so an example's position
/// does not depend on which other examples are present. With
/// cfg.patience > 0, training stops after `patience` epochs without a
/// strict improvement of validation HR@eval_k and the latest best-scoring
/// parameters are returned. lightgcn builds its graph from the positive
/// examples.
TrainResult train_with_history(ModelFamily family, const InteractionDataset& ds,
                               std::span<const LabeledExample> examples, const TrainConfig& cfg);

RecModel train(ModelFamily family, const InteractionDataset& ds,
               std::span<const LabeledExample> examples, const TrainConfig& cfg);

}  // namespace recps
