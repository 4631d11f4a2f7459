#pragma once

#include <functional>
#include <span>
#include <vector>

#include "surt/config.h"
#include "surt/datagen.h"
#include "surt/model.h"

namespace surt {

struct TrainOptions {
  LossConfig loss;
  nn::AdamConfig adam;
  double grad_clip = 0;  // 0 disables
  std::size_t threads = 1;
};

struct StepResult {
  double loss = 0;  // batch mean
  double loss_ch1 = 0;
  double loss_ch2 = 0;
  double grad_norm = 0;  // before clipping
};

// Reference for channel `channel` (1 or 2) of a sample under the loss config:
// eos kept or stripped.
ChannelTarget channel_target(const data::MixtureSample& s, int channel, const LossConfig& loss,
                             const TokenVocab& vocab);

// Loss of one sample on a fresh graph; the caller may run backward on it.
template <typename T>
SurtLoss<T> sample_loss(nn::Graph<T>& g, const SurtModel<T>& model,
                        const data::MixtureSample& s, const LossConfig& loss);

// Mean loss over the batch, backpropagated through unmixing and recognition,
// followed by one Adam update. Per-sample gradients are summed in batch order
// so the result does not depend on the worker count.
StepResult training_step(SurtModel<float>& model,
                         std::span<const data::MixtureSample* const> batch,
                         const TrainOptions& opts);

// SURT_THREADS if set and positive, else 1.
std::size_t worker_count();

struct LossLogRow {
  std::size_t step = 0;
  double loss = 0, loss_ch1 = 0, loss_ch2 = 0;
};

// cfg.train.steps steps over shuffled epochs of `train`.
std::vector<LossLogRow> train_model(SurtModel<float>& model,
                                    const std::vector<data::MixtureSample>& train,
                                    const ExperimentConfig& cfg,
                                    const std::function<void(const LossLogRow&)>& on_step = {});

}  // namespace surt
