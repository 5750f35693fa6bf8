#include "seqbias/metrics.hpp"

#include <cmath>

#include "doctest.h"

using namespace seqbias;
using namespace seqbias::metrics;
using seqbias::tasks::make_task_data;
using seqbias::tasks::Rule;
using seqbias::tasks::TaskData;
using seqbias::tasks::TaskInstance;
using seqbias::tasks::TaskKind;

namespace {

// Textbook oracle for the paired t-test, independent of the implementation:
// t statistic from the difference definition and the two-sided p-value via
// the regularized incomplete beta function evaluated with the classic
// continued fraction (Numerical Recipes betacf form).
double betacf(double a, double b, double x) {
  const int kMaxIter = 300;
  const double eps = 3e-16, fpmin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

double inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

struct OracleT {
  double t;
  double p;
};

OracleT t_test_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  const int n = static_cast<int>(a.size());
  double mean = 0;
  for (int i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0;
  for (int i = 0; i < n; ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / (n - 1));
  const double t = mean / (sd / std::sqrt(double(n)));
  const double df = n - 1;
  // two-sided p through the incomplete beta identity for the t distribution
  const double p = inc_beta(df / 2.0, 0.5, df / (df + t * t));
  return {t, p};
}

// Probability-1 oracle learner: every output costs zero nats.
class PerfectProtocol : public CodingProtocol {
 public:
  void fit(const std::vector<tasks::Example>&, int) override { ++fits; }
  double sequence_nll(const tasks::Example&) override { return 0.0; }
  int fits = 0;
};

// Assigns a fixed per-example cost, recording the prefix sizes it saw.
class FixedCostProtocol : public CodingProtocol {
 public:
  explicit FixedCostProtocol(double cost) : cost_(cost) {}
  void fit(const std::vector<tasks::Example>& prefix, int) override {
    prefix_sizes.push_back(prefix.size());
  }
  double sequence_nll(const tasks::Example&) override { return cost_; }
  std::vector<std::size_t> prefix_sizes;

 private:
  double cost_;
};

}  // namespace

TEST_CASE("default block sizes follow the per-task convention") {
  CHECK(default_block_size(TaskKind::kCountOrMem) == 1);
  CHECK(default_block_size(TaskKind::kAddOrMul) == 1);
  CHECK(default_block_size(TaskKind::kMultiplyThree) == 1);
  CHECK(default_block_size(TaskKind::kCompOrMem) == 1);
  CHECK(default_block_size(TaskKind::kHierOrLinear) == 4);
}

TEST_CASE("schedules start with the training set and partition the holdout") {
  TaskInstance inst{TaskKind::kCountOrMem, 12, 0, 0, 0};
  TaskData data = make_task_data(inst);
  auto schedule = build_schedule(inst, data, Rule::kCount, 1, 99);
  validate_schedule(schedule, inst, data, Rule::kCount);
  CHECK(schedule.blocks.size() == 1 + data.holdout_inputs.size());
  CHECK(schedule.blocks[0] == data.train);

  // different seeds shuffle the holdout order
  auto other = build_schedule(inst, data, Rule::kCount, 1, 100);
  CHECK(schedule.holdout_ids != other.holdout_ids);

  // block size 4 groups with a smaller trailing block
  auto grouped = build_schedule(inst, data, Rule::kCount, 4, 99);
  validate_schedule(grouped, inst, data, Rule::kCount);
  CHECK(grouped.blocks.size() == 1 + (data.holdout_inputs.size() + 3) / 4);

  // tampering is caught
  auto broken = schedule;
  broken.blocks[2][0].output = {0, data.output_vocab.eos()};
  CHECK_THROWS_AS(validate_schedule(broken, inst, data, Rule::kCount), Error);
  auto wrong_first = schedule;
  wrong_first.blocks[0].clear();
  CHECK_THROWS_AS(validate_schedule(wrong_first, inst, data, Rule::kCount), Error);
}

TEST_CASE("a probability-1 oracle learner transmits every task for zero nats") {
  for (const TaskInstance inst :
       {TaskInstance{TaskKind::kCountOrMem, 10, 0, 0, 0},
        TaskInstance{TaskKind::kAddOrMul, 5, 0, 0, 0},
        TaskInstance{TaskKind::kMultiplyThree, 5, 0, 0, 0},
        TaskInstance{TaskKind::kHierOrLinear, 0, 4, 0, 0},
        TaskInstance{TaskKind::kCompOrMem, 0, 0, 8, 4}}) {
    TaskData data = make_task_data(inst);
    for (Rule rule : tasks::rules_for(inst)) {
      auto schedule =
          build_schedule(inst, data, rule, default_block_size(inst.kind), 5);
      PerfectProtocol oracle;
      auto dl = description_length(schedule, oracle, data.output_vocab.size());
      CHECK(dl.total == 0.0);
      CHECK(dl.per_example_mean == 0.0);
      CHECK(oracle.fits == static_cast<int>(schedule.blocks.size()) - 1);
      // the naive constant covers the training outputs only
      double expect_c = 0;
      for (const auto& ex : data.train)
        expect_c += double(ex.output.size()) * std::log(double(data.output_vocab.size()));
      CHECK(dl.constant_c == doctest::Approx(expect_c).epsilon(1e-12));
    }
  }
}

TEST_CASE("prequential bookkeeping: prefixes grow by one block, costs accumulate") {
  TaskInstance inst{TaskKind::kAddOrMul, 5, 0, 0, 0};
  TaskData data = make_task_data(inst);
  auto schedule = build_schedule(inst, data, Rule::kMul, 2, 5);
  FixedCostProtocol proto(1.5);
  auto dl = description_length(schedule, proto, data.output_vocab.size());
  // 7 holdout examples in blocks of 2 -> blocks sized 2,2,2,1
  REQUIRE(proto.prefix_sizes.size() == 4);
  CHECK(proto.prefix_sizes[0] == 1);
  CHECK(proto.prefix_sizes[1] == 3);
  CHECK(proto.prefix_sizes[2] == 5);
  CHECK(proto.prefix_sizes[3] == 7);
  CHECK(dl.total == doctest::Approx(1.5 * 7));
  CHECK(dl.per_example_mean == doctest::Approx(1.5));
  CHECK(dl.step_nats.size() == 4);
  CHECK(dl.example_nats.size() == 7);
}

TEST_CASE("single-block schedule equals the train-only cross-entropy to 1e-9") {
  TaskInstance inst{TaskKind::kCountOrMem, 4, 0, 0, 0};
  TaskData data = make_task_data(inst);
  learners::LearnerConfig config;
  config.kind = learners::LearnerKind::kLstmNoAttention;
  config.hidden = 16;
  config.embedding = 8;
  training::TrainHyper hyper;
  hyper.epochs = 60;
  hyper.warmup_updates = 20;
  const std::uint64_t seed = 71;

  auto schedule = build_schedule(inst, data, Rule::kCount,
                                 static_cast<int>(data.holdout_inputs.size()), seed);
  auto dl = description_length(inst, Rule::kCount, config, hyper, schedule, seed);

  // independent route: train once on the training set, sum holdout nll
  Seq2SeqProtocol protocol(config, data.input_vocab, data.output_vocab, hyper, seed);
  protocol.fit(data.train, 1);
  double cross_entropy = 0.0;
  for (const auto& input : data.holdout_inputs)
    cross_entropy += protocol.sequence_nll(
        {input, tasks::apply_rule(inst, Rule::kCount, input, data)});
  CHECK(dl.total == doctest::Approx(cross_entropy).epsilon(1e-12));
  CHECK(std::abs(dl.total - cross_entropy) < 1e-9);
}

TEST_CASE("splitting the holdout into blocks changes conditioning, not coverage") {
  TaskInstance inst{TaskKind::kAddOrMul, 4, 0, 0, 0};
  TaskData data = make_task_data(inst);
  for (int block_size : {1, 2, 3, 7}) {
    auto schedule = build_schedule(inst, data, Rule::kAdd, block_size, 11);
    validate_schedule(schedule, inst, data, Rule::kAdd);
    std::size_t covered = 0;
    for (std::size_t b = 1; b < schedule.blocks.size(); ++b)
      covered += schedule.blocks[b].size();
    CHECK(covered == data.holdout_inputs.size());
  }
}

TEST_CASE("per-step costs from a real learner are nonnegative and finite") {
  TaskInstance inst{TaskKind::kCountOrMem, 3, 0, 0, 0};
  TaskData data = make_task_data(inst);
  learners::LearnerConfig config;
  config.kind = learners::LearnerKind::kTransformer;
  config.hidden = 16;
  config.embedding = 8;
  config.heads = 2;
  training::TrainHyper hyper;
  hyper.epochs = 12;
  hyper.warmup_updates = 4;
  auto schedule = build_schedule(inst, data, Rule::kMem, 7, 3);
  auto dl = description_length(inst, Rule::kMem, config, hyper, schedule, 3);
  for (double step : dl.step_nats) {
    CHECK(step >= 0.0);
    CHECK(std::isfinite(step));
  }
  double sum = 0;
  for (double step : dl.step_nats) sum += step;
  CHECK(dl.total == doctest::Approx(sum).epsilon(1e-15));
}

TEST_CASE("fpa counts only seeds that match the rule everywhere") {
  std::vector<std::vector<int>> rule_out = {{0, 1}, {0, 0, 1}};
  std::vector<std::vector<std::vector<int>>> decodes = {
      {{0, 1}, {0, 0, 1}},        // perfect
      {{0, 1}, {0, 0, 0}},        // one token off on one input
      {{0, 1}, {0, 0, 1}},        // perfect
  };
  auto result = fpa(decodes, rule_out, "count");
  CHECK(result.seeds == 3);
  CHECK(result.perfect == 2);
  CHECK(result.fraction == doctest::Approx(2.0 / 3.0));

  // all seeds match -> 1.0
  decodes[1] = rule_out;
  CHECK(fpa(decodes, rule_out, "count").fraction == doctest::Approx(1.0));

  // missing decode -> error
  decodes[2].pop_back();
  CHECK_THROWS_AS(fpa(decodes, rule_out, "count"), Error);
}

TEST_CASE("paired t-test matches the textbook oracle to 1e-10 on random fixtures") {
  Rng rng(2718);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(40));
    std::vector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = rng.normal(0.0, 2.0);
      b[i] = a[i] + rng.normal(0.3, 1.5);  // correlated pairs
    }
    auto ours = paired_t_test(a, b);
    auto oracle = t_test_oracle(a, b);
    CHECK(std::abs(ours.t - oracle.t) < 1e-10);
    CHECK(std::abs(ours.p - oracle.p) < 1e-10);
    CHECK(ours.degrees_of_freedom == n - 1);
  }
}

TEST_CASE("paired t-test fixed example") {
  std::vector<double> a = {1, 2, 3, 4, 5};
  std::vector<double> b = {2, 2, 4, 4, 6};
  auto ours = paired_t_test(a, b);
  auto oracle = t_test_oracle(a, b);
  CHECK(ours.t == doctest::Approx(oracle.t).epsilon(1e-12));
  CHECK(ours.p == doctest::Approx(oracle.p).epsilon(1e-12));
}

TEST_CASE("paired t-test sentinels and errors") {
  std::vector<double> a = {1, 2, 3};
  auto tie = paired_t_test(a, a);
  CHECK(tie.zero_variance);
  CHECK(tie.t == 0.0);
  CHECK(tie.p == 1.0);

  std::vector<double> shifted = {2, 3, 4};
  auto shift = paired_t_test(shifted, a);
  CHECK(shift.zero_variance);
  CHECK(std::isinf(shift.t));
  CHECK(shift.p == 0.0);

  std::vector<double> one = {1};
  CHECK_THROWS_AS(paired_t_test(one, one), Error);
  std::vector<double> two = {1, 2};
  std::vector<double> three = {1, 2, 3};
  CHECK_THROWS_AS(paired_t_test(two, three), Error);
}

TEST_CASE("normalized dl: curve length equals the M grid") {
  learners::LearnerConfig config;
  config.kind = learners::LearnerKind::kTransformer;
  config.hidden = 12;
  config.embedding = 8;
  config.heads = 2;
  training::TrainHyper hyper;
  hyper.epochs = 6;
  hyper.warmup_updates = 2;
  auto curve = normalized_dl(6, {1, 3, 5}, Rule::kComp, config, hyper, 2, 5);
  REQUIRE(curve.size() == 3);
  for (const auto& point : curve) {
    CHECK(point.per_seed.size() == 2);
    CHECK(std::isfinite(point.mean));
    CHECK(point.mean >= 0.0);
  }
  CHECK_THROWS_AS(normalized_dl(6, {1, 6}, Rule::kComp, config, hyper, 1, 5), Error);
  CHECK_THROWS_AS(normalized_dl(6, {3, 1}, Rule::kComp, config, hyper, 1, 5), Error);
}
