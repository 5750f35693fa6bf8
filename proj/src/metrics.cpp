#include "seqbias/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/students_t.hpp>

namespace seqbias::metrics {

int default_block_size(tasks::TaskKind kind) {
  return kind == tasks::TaskKind::kHierOrLinear ? 4 : 1;
}

TransmissionSchedule build_schedule(const tasks::TaskInstance& instance,
                                    const tasks::TaskData& data, tasks::Rule rule,
                                    int block_size, std::uint64_t order_seed) {
  demand(block_size >= 1, "schedule: block size must be >= 1");
  TransmissionSchedule s;
  s.blocks.push_back(data.train);
  s.holdout_ids.emplace_back();
  Rng rng(Rng::derive(order_seed, "holdout-order"));
  const auto order = rng.permutation(data.holdout_inputs.size());
  std::vector<tasks::Example> block;
  std::vector<int> ids;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const int id = static_cast<int>(order[k]);
    const auto& input = data.holdout_inputs[static_cast<std::size_t>(id)];
    block.push_back({input, tasks::apply_rule(instance, rule, input, data)});
    ids.push_back(id);
    if (static_cast<int>(block.size()) == block_size || k + 1 == order.size()) {
      s.blocks.push_back(std::move(block));
      s.holdout_ids.push_back(std::move(ids));
      block.clear();
      ids.clear();
    }
  }
  return s;
}

void validate_schedule(const TransmissionSchedule& schedule,
                       const tasks::TaskInstance& instance, const tasks::TaskData& data,
                       tasks::Rule rule) {
  demand(!schedule.blocks.empty(), "schedule: no blocks");
  demand(schedule.blocks[0] == data.train,
         "schedule: block 0 must equal the training set exactly");
  demand(schedule.holdout_ids.size() == schedule.blocks.size(),
         "schedule: holdout id bookkeeping out of sync");
  std::vector<bool> seen(data.holdout_inputs.size(), false);
  for (std::size_t b = 1; b < schedule.blocks.size(); ++b) {
    demand(schedule.blocks[b].size() == schedule.holdout_ids[b].size(),
           "schedule: block and id sizes differ");
    for (std::size_t k = 0; k < schedule.blocks[b].size(); ++k) {
      const int id = schedule.holdout_ids[b][k];
      demand(id >= 0 && id < static_cast<int>(data.holdout_inputs.size()),
             "schedule: holdout id out of range");
      demand(!seen[static_cast<std::size_t>(id)], "schedule: blocks overlap");
      seen[static_cast<std::size_t>(id)] = true;
      const auto& ex = schedule.blocks[b][k];
      demand(ex.input == data.holdout_inputs[static_cast<std::size_t>(id)],
             "schedule: block input does not match its holdout id");
      demand(ex.output == tasks::apply_rule(instance, rule, ex.input, data),
             "schedule: block output is not labeled by the rule");
    }
  }
  for (bool b : seen)
    demand(b, "schedule: blocks do not cover the holdout");
}

DLResult description_length(const TransmissionSchedule& schedule, CodingProtocol& protocol,
                            int output_vocab_size) {
  demand(!schedule.blocks.empty(), "description_length: empty schedule");
  demand(output_vocab_size >= 1, "description_length: empty output vocabulary");
  DLResult result;
  for (const auto& ex : schedule.blocks[0])
    result.constant_c += static_cast<double>(ex.output.size()) *
                         std::log(static_cast<double>(output_vocab_size));
  std::vector<tasks::Example> prefix = schedule.blocks[0];
  std::size_t holdout_count = 0;
  for (std::size_t t = 1; t < schedule.blocks.size(); ++t) {
    protocol.fit(prefix, static_cast<int>(t));
    double block_nats = 0.0;
    for (std::size_t k = 0; k < schedule.blocks[t].size(); ++k) {
      const auto& ex = schedule.blocks[t][k];
      const double nats = protocol.sequence_nll(ex);
      demand(std::isfinite(nats), "description_length: non-finite coding cost");
      demand(nats >= -1e-9, "description_length: negative coding cost");
      block_nats += nats;
      result.example_nats.push_back(
          {schedule.holdout_ids[t][k], static_cast<int>(t), nats});
      ++holdout_count;
    }
    result.step_nats.push_back(block_nats);
    result.total += block_nats;
    prefix.insert(prefix.end(), schedule.blocks[t].begin(), schedule.blocks[t].end());
  }
  result.per_example_mean =
      holdout_count == 0 ? 0.0 : result.total / static_cast<double>(holdout_count);
  return result;
}

Seq2SeqProtocol::Seq2SeqProtocol(const learners::LearnerConfig& config,
                                 const tasks::Vocab& input_vocab,
                                 const tasks::Vocab& output_vocab,
                                 const training::TrainHyper& hyper, std::uint64_t seed)
    : config_(config),
      input_vocab_(input_vocab),
      output_vocab_(output_vocab),
      hyper_(hyper),
      seed_(seed) {}

void Seq2SeqProtocol::fit(const std::vector<tasks::Example>& prefix, int step) {
  // identical initialization at every step; only the dropout stream and the
  // data prefix change
  model_ = std::make_unique<learners::Seq2SeqModel>(
      learners::init_learner(config_, input_vocab_, output_vocab_, seed_));
  outcome_ = training::train(*model_, prefix, hyper_,
                             Rng::derive(seed_, "dl-step", static_cast<std::uint64_t>(step)));
}

double Seq2SeqProtocol::sequence_nll(const tasks::Example& example) {
  demand(model_ != nullptr, "protocol: fit before scoring");
  const auto lp = learners::teacher_forced_logprobs(*model_, example.input, example.output);
  double total = 0.0;
  for (double v : lp) total -= v;
  return total;
}

learners::Seq2SeqModel& Seq2SeqProtocol::model() {
  demand(model_ != nullptr, "protocol: no fitted model");
  return *model_;
}

DLResult description_length(const tasks::TaskInstance& instance, tasks::Rule rule,
                            const learners::LearnerConfig& config,
                            const training::TrainHyper& hyper,
                            const TransmissionSchedule& schedule, std::uint64_t seed) {
  const tasks::TaskData data = tasks::make_task_data(instance);
  validate_schedule(schedule, instance, data, rule);
  Seq2SeqProtocol protocol(config, data.input_vocab, data.output_vocab, hyper, seed);
  return description_length(schedule, protocol, data.output_vocab.size());
}

FPAResult fpa(const std::vector<std::vector<std::vector<int>>>& decodes_per_seed,
              const std::vector<std::vector<int>>& rule_outputs, const std::string& rule) {
  demand(!decodes_per_seed.empty(), "fpa: no seeds");
  FPAResult result;
  result.rule = rule;
  result.seeds = static_cast<int>(decodes_per_seed.size());
  for (const auto& decodes : decodes_per_seed) {
    demand(decodes.size() == rule_outputs.size(),
           "fpa: a seed is missing holdout decodes");
    bool perfect = true;
    for (std::size_t i = 0; i < decodes.size(); ++i)
      if (decodes[i] != rule_outputs[i]) {
        perfect = false;
        break;
      }
    if (perfect) ++result.perfect;
  }
  result.fraction = static_cast<double>(result.perfect) / result.seeds;
  return result;
}

std::vector<NormalizedPoint> normalized_dl(int n_primitives,
                                           const std::vector<int>& m_values,
                                           tasks::Rule rule,
                                           const learners::LearnerConfig& config,
                                           const training::TrainHyper& hyper, int seeds,
                                           std::uint64_t master_seed) {
  demand(!m_values.empty(), "normalized_dl: no M values");
  demand(seeds >= 1, "normalized_dl: need at least one seed");
  for (std::size_t i = 1; i < m_values.size(); ++i)
    demand(m_values[i] > m_values[i - 1], "normalized_dl: M values must increase");
  std::vector<NormalizedPoint> curve;
  for (int m : m_values) {
    demand(m >= 0 && m < n_primitives,
           "normalized_dl: remaining example count must stay positive");
    tasks::TaskInstance instance{tasks::TaskKind::kCompOrMem, 0, 0, n_primitives, m};
    const tasks::TaskData data = tasks::make_task_data(instance);
    const int remaining = static_cast<int>(data.holdout_inputs.size());
    NormalizedPoint point;
    point.m = m;
    for (int s = 0; s < seeds; ++s) {
      const std::uint64_t seed = Rng::derive(master_seed, "normalized-dl", s);
      // the remaining compositional outputs travel as one block, so the cost
      // is the trained model's cross-entropy on them
      TransmissionSchedule schedule =
          build_schedule(instance, data, rule, remaining, seed);
      Seq2SeqProtocol protocol(config, data.input_vocab, data.output_vocab, hyper, seed);
      DLResult dl = description_length(schedule, protocol, data.output_vocab.size());
      point.per_seed.push_back(dl.total / remaining);
    }
    double sum = 0.0;
    for (double v : point.per_seed) sum += v;
    point.mean = sum / seeds;
    curve.push_back(std::move(point));
  }
  return curve;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  demand(a.size() == b.size(), "paired_t_test: sample lengths differ");
  demand(a.size() >= 2, "paired_t_test: need at least two pairs");
  const int n = static_cast<int>(a.size());
  double mean = 0.0;
  for (int i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  TTestResult result;
  result.degrees_of_freedom = n - 1;
  const double var = ss / (n - 1);
  if (var == 0.0) {
    // constant differences: identical samples give t = 0, a constant nonzero
    // shift is a deterministic difference
    result.zero_variance = true;
    result.t = mean == 0.0 ? 0.0
                           : std::copysign(std::numeric_limits<double>::infinity(), mean);
    result.p = mean == 0.0 ? 1.0 : 0.0;
    return result;
  }
  result.t = mean / std::sqrt(var / n);
  boost::math::students_t dist(result.degrees_of_freedom);
  result.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(result.t)));
  return result;
}

}  // namespace seqbias::metrics
