#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "seqbias/learners.hpp"
#include "seqbias/tasks.hpp"
#include "seqbias/training.hpp"

namespace seqbias::metrics {

// ----- transmission schedule -----

// Ordered blocks of examples. Block 0 is always the entire training set;
// the remaining blocks partition the rule-labeled holdout in a seed-derived
// shuffled order.
struct TransmissionSchedule {
  std::vector<std::vector<tasks::Example>> blocks;
  std::vector<std::vector<int>> holdout_ids;  // per block >= 1: holdout indices
};

// Paper block sizes: 1 for count-mem, add-mul, mult3 and comp-mem; 4 for
// hier-linear.
int default_block_size(tasks::TaskKind kind);

TransmissionSchedule build_schedule(const tasks::TaskInstance& instance,
                                    const tasks::TaskData& data, tasks::Rule rule,
                                    int block_size, std::uint64_t order_seed);

// Throws unless block 0 equals the training set and blocks 1.. exactly cover
// the rule-labeled holdout without overlap.
void validate_schedule(const TransmissionSchedule& schedule,
                       const tasks::TaskInstance& instance, const tasks::TaskData& data,
                       tasks::Rule rule);

// ----- description length -----

// Something that can be retrained from a fixed initialization on a prefix of
// the transmitted data and then score outputs. The production implementation
// wraps a seq2seq learner; tests substitute oracles.
class CodingProtocol {
 public:
  virtual ~CodingProtocol() = default;
  // Train a fresh learner instance (always the same initialization) on the
  // given examples. `step` is the 1-based index of the model being produced.
  virtual void fit(const std::vector<tasks::Example>& prefix, int step) = 0;
  // -log p(output | input) in nats under the current fit, dropout disabled.
  virtual double sequence_nll(const tasks::Example& example) = 0;
};

struct StepExampleCost {
  int holdout_id = -1;  // index into TaskData::holdout_inputs
  int block = 0;        // 1-based block index within the schedule
  double nats = 0.0;
};

struct DLResult {
  std::vector<double> step_nats;               // cost of each block t >= 1
  std::vector<StepExampleCost> example_nats;   // per-example breakdown
  double total = 0.0;                          // sum of step_nats
  double per_example_mean = 0.0;               // total / holdout size
  double constant_c = 0.0;                     // naive cost of block 0, excluded
};

// Online (prequential) coding cost: block t >= 1 is scored under the protocol
// fitted to blocks 0..t-1; block 0 is charged the naive constant
// c = sum(|y| * log |V|) which is recorded but excluded from the total.
DLResult description_length(const TransmissionSchedule& schedule, CodingProtocol& protocol,
                            int output_vocab_size);

// Production protocol: retrains a seq2seq learner from the same seed-fixed
// initialization with the full optimization protocol at every step. Dropout
// stays active during the retrainings (stream derived from `seed` and the
// step index) and is disabled for scoring.
class Seq2SeqProtocol : public CodingProtocol {
 public:
  Seq2SeqProtocol(const learners::LearnerConfig& config, const tasks::Vocab& input_vocab,
                  const tasks::Vocab& output_vocab, const training::TrainHyper& hyper,
                  std::uint64_t seed);
  void fit(const std::vector<tasks::Example>& prefix, int step) override;
  double sequence_nll(const tasks::Example& example) override;
  learners::Seq2SeqModel& model();
  const training::TrainOutcome& last_outcome() const { return outcome_; }

 private:
  learners::LearnerConfig config_;
  tasks::Vocab input_vocab_;
  tasks::Vocab output_vocab_;
  training::TrainHyper hyper_;
  std::uint64_t seed_;
  std::unique_ptr<learners::Seq2SeqModel> model_;
  training::TrainOutcome outcome_;
};

// Convenience form matching the experiment pipeline.
DLResult description_length(const tasks::TaskInstance& instance, tasks::Rule rule,
                            const learners::LearnerConfig& config,
                            const training::TrainHyper& hyper,
                            const TransmissionSchedule& schedule, std::uint64_t seed);

// ----- fraction of perfect agreement -----

struct FPAResult {
  std::string rule;
  int seeds = 0;
  int perfect = 0;
  double fraction = 0.0;
};

// decodes_per_seed[s][i] is seed s's greedy decode of holdout input i; a seed
// counts as perfect iff every decode equals the rule's output token for
// token, end-of-sequence included.
FPAResult fpa(const std::vector<std::vector<std::vector<int>>>& decodes_per_seed,
              const std::vector<std::vector<int>>& rule_outputs, const std::string& rule);

// ----- normalized description length (growing M curve) -----

struct NormalizedPoint {
  int m = 0;
  double mean = 0.0;               // across seeds
  std::vector<double> per_seed;    // normalized nats per seed
};

// For each M in `m_values`: train on the comp-mem training set with M
// compositional examples and code the remaining (n - M) compositional
// outputs under `rule` as a single block, divided by their count.
std::vector<NormalizedPoint> normalized_dl(int n_primitives,
                                           const std::vector<int>& m_values,
                                           tasks::Rule rule,
                                           const learners::LearnerConfig& config,
                                           const training::TrainHyper& hyper, int seeds,
                                           std::uint64_t master_seed);

// ----- paired t-test -----

struct TTestResult {
  double t = 0.0;
  int degrees_of_freedom = 0;
  double p = 1.0;                // two-sided
  bool zero_variance = false;    // exact-tie sentinel when differences are constant
};

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

}  // namespace seqbias::metrics
