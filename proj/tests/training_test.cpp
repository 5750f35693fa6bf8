#include "seqbias/training.hpp"

#include <cmath>

#include "doctest.h"

using namespace seqbias;
using namespace seqbias::training;
using seqbias::learners::LearnerConfig;
using seqbias::learners::LearnerKind;
using seqbias::tasks::make_task_data;
using seqbias::tasks::TaskKind;

namespace {

LearnerConfig tiny_lstm() {
  LearnerConfig c;
  c.kind = LearnerKind::kLstmNoAttention;
  c.hidden = 24;
  c.embedding = 8;
  return c;
}

}  // namespace

TEST_CASE("lr_at follows the linear warmup then stays at the peak") {
  TrainHyper h;
  CHECK(lr_at(0, h) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(lr_at(1000, h) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(lr_at(500, h) == doctest::Approx(5.05e-4).epsilon(1e-12));
  CHECK(lr_at(2999, h) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(-1, h), Error);
}

TEST_CASE("adam_step with zero gradients changes nothing") {
  tensor::Param p("w", Mat::Ones(2, 3));
  p.a.ensure_grad();
  OptimizerState state;
  TrainHyper h;
  std::vector<tensor::Param*> ps = {&p};
  adam_step(ps, state, h, 1e-3);
  CHECK((p.a.value.array() == 1.0).all());
  CHECK((state.first_moment[0].array() == 0.0).all());
  CHECK((state.second_moment[0].array() == 0.0).all());
  CHECK(state.update_count == 1);
}

TEST_CASE("first adam step on a large gradient moves by about lr") {
  tensor::Param p("w", Mat::Zero(1, 1));
  p.a.ensure_grad();
  p.a.grad(0, 0) = 1000.0;
  OptimizerState state;
  TrainHyper h;
  std::vector<tensor::Param*> ps = {&p};
  adam_step(ps, state, h, 1e-3);
  // bias-corrected ratio m_hat/sqrt(v_hat) = sign(g) at step 1
  CHECK(p.a.value(0, 0) == doctest::Approx(-1e-3).epsilon(1e-6));
}

TEST_CASE("epsilon guards the zero-gradient zero-moment division") {
  tensor::Param p("w", Mat::Zero(1, 2));
  p.a.ensure_grad();
  OptimizerState state;
  TrainHyper h;
  std::vector<tensor::Param*> ps = {&p};
  for (int i = 0; i < 3; ++i) adam_step(ps, state, h, 1e-3);
  CHECK(p.a.value.allFinite());
}

TEST_CASE("non-finite gradients raise an error naming the parameter") {
  tensor::Param p("encoder.w", Mat::Zero(1, 2));
  p.a.ensure_grad();
  p.a.grad(0, 1) = std::numeric_limits<double>::infinity();
  OptimizerState state;
  TrainHyper h;
  std::vector<tensor::Param*> ps = {&p};
  try {
    adam_step(ps, state, h, 1e-3);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("encoder.w") != std::string::npos);
  }
}

TEST_CASE("training is deterministic given (init, data, hyper, seed)") {
  auto data = make_task_data({TaskKind::kCountOrMem, 4, 0, 0, 0});
  TrainHyper h;
  h.epochs = 40;
  h.warmup_updates = 10;
  auto run = [&](std::uint64_t seed) {
    auto model =
        learners::init_learner(tiny_lstm(), data.input_vocab, data.output_vocab, 7);
    auto outcome = train(model, data.train, h, seed);
    return std::make_pair(outcome.loss_trace, model.params()[0]->a.value);
  };
  auto [trace_a, w_a] = run(3);
  auto [trace_b, w_b] = run(3);
  auto [trace_c, w_c] = run(4);
  CHECK(trace_a == trace_b);
  CHECK(w_a == w_b);
  CHECK(trace_a != trace_c);
}

TEST_CASE("zero-epoch budget returns the initial model with success evaluated") {
  auto data = make_task_data({TaskKind::kCountOrMem, 3, 0, 0, 0});
  auto model = learners::init_learner(tiny_lstm(), data.input_vocab, data.output_vocab, 7);
  const Mat w_before = model.params()[0]->a.value;
  TrainHyper h;
  h.epochs = 0;
  auto outcome = train(model, data.train, h, 1);
  CHECK(model.params()[0]->a.value == w_before);
  CHECK(outcome.updates_applied == 0);
  CHECK(outcome.loss_trace.empty());
  CHECK(!outcome.success);  // an untrained model does not decode the train set
}

TEST_CASE("empty train set is rejected") {
  auto data = make_task_data({TaskKind::kCountOrMem, 3, 0, 0, 0});
  auto model = learners::init_learner(tiny_lstm(), data.input_vocab, data.output_vocab, 7);
  TrainHyper h;
  CHECK_THROWS_AS(train(model, {}, h, 1), Error);
}

TEST_CASE("one optimizer update per epoch (full-batch regime)") {
  auto data = make_task_data({TaskKind::kHierOrLinear, 0, 2, 0, 0});
  auto model = learners::init_learner(tiny_lstm(), data.input_vocab, data.output_vocab, 7);
  TrainHyper h;
  h.epochs = 17;
  h.warmup_updates = 5;
  auto outcome = train(model, data.train, h, 1);
  CHECK(outcome.updates_applied == 17);
  CHECK(outcome.loss_trace.size() == 17);
}

TEST_CASE("loss trace is non-increasing late in training without dropout") {
  auto data = make_task_data({TaskKind::kCountOrMem, 4, 0, 0, 0});
  auto model = learners::init_learner(tiny_lstm(), data.input_vocab, data.output_vocab, 7);
  TrainHyper h;
  h.epochs = 400;
  h.warmup_updates = 100;
  h.dropout = 0.0;
  h.lr_peak = 3e-4;
  auto outcome = train(model, data.train, h, 1);
  CHECK(!outcome.diverged);
  for (std::size_t i = outcome.loss_trace.size() * 9 / 10;
       i + 1 < outcome.loss_trace.size(); ++i)
    CHECK(outcome.loss_trace[i + 1] <= outcome.loss_trace[i] + 1e-9);
}

TEST_CASE("train success implies teacher-forced argmax matches gold everywhere") {
  auto data = make_task_data({TaskKind::kCountOrMem, 4, 0, 0, 0});
  auto model = learners::init_learner(tiny_lstm(), data.input_vocab, data.output_vocab, 7);
  TrainHyper h;
  h.epochs = 600;
  h.warmup_updates = 100;
  h.dropout = 0.2;
  auto outcome = train(model, data.train, h, 1);
  REQUIRE(outcome.success);
  for (const auto& ex : data.train) {
    tensor::Graph g;
    auto nodes = learners::build_teacher_forced(model, g, ex.input, ex.output, false);
    g.forward(false);
    const Mat& lp = g.value(nodes.log_probs);
    for (Eigen::Index r = 0; r < lp.rows(); ++r) {
      Eigen::Index best = 0;
      lp.row(r).maxCoeff(&best);
      CHECK(static_cast<int>(best) == ex.output[static_cast<std::size_t>(r)]);
    }
  }
}
