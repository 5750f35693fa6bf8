#include "seqbias/training.hpp"

#include <cmath>
#include <memory>

#include "seqbias/graph.hpp"

namespace seqbias::training {

using tensor::Graph;

void TrainHyper::validate() const {
  demand(epochs >= 0, "hyper: epochs must be >= 0");
  // warmup may exceed the budget (the rate then simply never reaches the
  // peak); a zero-epoch run with default warmup stays valid
  demand(warmup_updates >= 1, "hyper: warmup must be >= 1 update");
  demand(lr_floor <= lr_peak, "hyper: lr floor must not exceed the peak");
  demand(dropout >= 0.0 && dropout < 1.0, "hyper: dropout must lie in [0,1)");
  demand(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
         "hyper: Adam decays must lie in [0,1)");
  demand(adam_eps > 0.0, "hyper: Adam epsilon must be positive");
}

double lr_at(int update_index, const TrainHyper& hyper) {
  demand(update_index >= 0, "lr_at: update index must be nonnegative");
  if (update_index >= hyper.warmup_updates) return hyper.lr_peak;
  const double frac = static_cast<double>(update_index) / hyper.warmup_updates;
  return hyper.lr_floor + (hyper.lr_peak - hyper.lr_floor) * frac;
}

void adam_step(std::span<Param* const> params, OptimizerState& state,
               const TrainHyper& hyper, double lr) {
  if (state.first_moment.empty()) {
    state.first_moment.reserve(params.size());
    state.second_moment.reserve(params.size());
    for (Param* p : params) {
      state.first_moment.push_back(Mat::Zero(p->a.value.rows(), p->a.value.cols()));
      state.second_moment.push_back(Mat::Zero(p->a.value.rows(), p->a.value.cols()));
    }
  }
  demand(state.first_moment.size() == params.size(),
         "adam_step: optimizer state does not match the parameter list");
  state.update_count += 1;
  const double bc1 = 1.0 - std::pow(hyper.adam_beta1, double(state.update_count));
  const double bc2 = 1.0 - std::pow(hyper.adam_beta2, double(state.update_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    const Mat& g = p.a.grad;
    demand(g.rows() == p.a.value.rows() && g.cols() == p.a.value.cols(),
           "adam_step: missing gradient for " + p.name);
    demand(g.allFinite(), "adam_step: non-finite gradient for parameter " + p.name);
    Mat& m = state.first_moment[i];
    Mat& v = state.second_moment[i];
    m.array() = hyper.adam_beta1 * m.array() + (1.0 - hyper.adam_beta1) * g.array();
    v.array() = hyper.adam_beta2 * v.array() + (1.0 - hyper.adam_beta2) * g.array().square();
    p.a.value.array() -=
        lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + hyper.adam_eps);
  }
}

namespace {

bool decodes_train_set(Seq2SeqModel& model, const std::vector<tasks::Example>& train_set) {
  for (const auto& ex : train_set) {
    auto decoded =
        learners::greedy_decode(model, ex.input, static_cast<int>(ex.output.size()) + 8);
    if (decoded.tokens != ex.output) return false;
  }
  return true;
}

}  // namespace

TrainOutcome train(Seq2SeqModel& model, const std::vector<tasks::Example>& train_set,
                   const TrainHyper& hyper, std::uint64_t seed) {
  hyper.validate();
  demand(!train_set.empty(), "train: empty train set");
  model.config.dropout = hyper.dropout;

  TrainOutcome outcome;
  outcome.loss_trace.reserve(static_cast<std::size_t>(hyper.epochs));

  // One graph per example, built once and re-run every epoch; shapes are
  // fixed because the batch never changes.
  std::vector<std::unique_ptr<Graph>> graphs;
  std::vector<int> loss_nodes;
  graphs.reserve(train_set.size());
  const bool train_mode = hyper.dropout > 0.0;
  for (const auto& ex : train_set) {
    auto g = std::make_unique<Graph>();
    auto nodes = learners::build_teacher_forced(model, *g, ex.input, ex.output, train_mode);
    loss_nodes.push_back(nodes.nll);
    graphs.push_back(std::move(g));
  }

  auto params = model.params();
  OptimizerState state;
  Rng dropout_rng(Rng::derive(seed, "dropout"));

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (Param* p : params) {
      p->a.ensure_grad();
      p->a.grad.setZero();
    }
    double total = 0.0;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
      graphs[i]->forward(train_mode, &dropout_rng);
      graphs[i]->backward(loss_nodes[i]);
      total += graphs[i]->value(loss_nodes[i])(0, 0);
    }
    outcome.loss_trace.push_back(total);
    outcome.final_loss = total;
    if (!std::isfinite(total)) {
      outcome.diverged = true;
      break;
    }
    adam_step(params, state, hyper, lr_at(epoch, hyper));
  }
  outcome.updates_applied = state.update_count;
  outcome.success = !outcome.diverged && decodes_train_set(model, train_set);
  return outcome;
}

}  // namespace seqbias::training
