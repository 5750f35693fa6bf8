#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "seqbias/learners.hpp"
#include "seqbias/tasks.hpp"

namespace seqbias::training {

using learners::Seq2SeqModel;
using tensor::Param;

// The optimization protocol: Adam for `epochs` full-batch updates, learning
// rate warming up linearly from `lr_floor` to `lr_peak` over the first
// `warmup_updates` updates and constant afterwards. One epoch = one update,
// since every available example goes into a single batch.
struct TrainHyper {
  int epochs = 3000;
  int warmup_updates = 1000;
  double lr_floor = 1e-5;
  double lr_peak = 1e-3;
  double dropout = 0.5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

double lr_at(int update_index, const TrainHyper& hyper);

struct OptimizerState {
  std::vector<Mat> first_moment;
  std::vector<Mat> second_moment;
  long update_count = 0;
};

// Standard bias-corrected Adam update. Gradients are read from each Param's
// grad slot; non-finite gradients raise an error naming the parameter.
void adam_step(std::span<Param* const> params, OptimizerState& state,
               const TrainHyper& hyper, double lr);

struct TrainOutcome {
  double final_loss = 0.0;             // summed nll of the last epoch, dropout active
  bool success = false;                // greedy decode reproduces every training output
  bool diverged = false;               // loss left the finite range; training stopped
  std::vector<double> loss_trace;      // per-epoch summed nll
  long updates_applied = 0;
};

// Trains `model` in place on the full batch of examples. Deterministic in
// (model parameters, train_set, hyper, seed): the dropout stream derives from
// `seed` alone. The model's dropout probability is taken from `hyper`.
TrainOutcome train(Seq2SeqModel& model, const std::vector<tasks::Example>& train_set,
                   const TrainHyper& hyper, std::uint64_t seed);

}  // namespace seqbias::training
