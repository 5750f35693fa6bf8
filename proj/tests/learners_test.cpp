#include "seqbias/learners.hpp"

#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "fd_check.hpp"
#include "seqbias/training.hpp"

using namespace seqbias;
using namespace seqbias::learners;
using seqbias::tasks::make_task_data;
using seqbias::tasks::TaskData;
using seqbias::tasks::TaskInstance;
using seqbias::tasks::TaskKind;

namespace {

TaskData small_task() { return make_task_data({TaskKind::kCountOrMem, 5, 0, 0, 0}); }

LearnerConfig small_config(LearnerKind kind) {
  LearnerConfig c;
  c.kind = kind;
  c.layers = 1;
  c.hidden = kind == LearnerKind::kCnn ? 12 : 16;
  c.embedding = 8;
  c.heads = 2;
  c.kernel = 3;
  c.dropout = 0.5;
  return c;
}

const std::vector<LearnerKind> kAllKinds = {
    LearnerKind::kLstmNoAttention, LearnerKind::kLstmAttention, LearnerKind::kCnn,
    LearnerKind::kTransformer, LearnerKind::kJointSourceTarget};

}  // namespace

TEST_CASE("same (config, seed) initializes bit-identical parameters") {
  TaskData data = small_task();
  for (LearnerKind kind : kAllKinds) {
    auto a = init_learner(small_config(kind), data.input_vocab, data.output_vocab, 99);
    auto b = init_learner(small_config(kind), data.input_vocab, data.output_vocab, 99);
    auto c = init_learner(small_config(kind), data.input_vocab, data.output_vocab, 100);
    auto pa = a.params(), pb = b.params(), pc = c.params();
    REQUIRE(pa.size() == pb.size());
    bool identical = true, different_seed_differs = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      if (pa[i]->a.value != pb[i]->a.value) identical = false;
      if (pa[i]->a.value != pc[i]->a.value) different_seed_differs = true;
    }
    CHECK(identical);
    CHECK(different_seed_differs);
  }
}

TEST_CASE("parameter count matches the closed-form shape arithmetic") {
  // lstm-no-attention, 1 layer, hidden 512, emb 16, vocab sizes (3, 3)
  tasks::Vocab in_vocab{{"a", "b", "<eos>"}};
  tasks::Vocab out_vocab{{"x", "y", "<eos>"}};
  LearnerConfig c;
  c.kind = LearnerKind::kLstmNoAttention;
  c.layers = 1;
  c.hidden = 512;
  c.embedding = 16;
  auto model = init_learner(c, in_vocab, out_vocab, 7);
  // independent count from the layer shape formulas
  const std::size_t in_embed = 3u * 16u;
  const std::size_t out_embed = 4u * 16u;  // + beginning-of-sequence row
  const std::size_t enc = (16u + 512u) * 4u * 512u + 4u * 512u;
  const std::size_t dec = (16u + 512u) * 4u * 512u + 4u * 512u;
  const std::size_t proj = 512u * 3u + 3u;
  CHECK(model.parameter_count() == in_embed + out_embed + enc + dec + proj);
}

TEST_CASE("unknown learner names are rejected") {
  CHECK_THROWS_AS(learner_kind_from("gru"), Error);
  CHECK_THROWS_AS(learner_kind_from(""), Error);
  CHECK(learner_kind_from("transformer") == LearnerKind::kTransformer);
}

TEST_CASE("invalid configs are rejected") {
  TaskData data = small_task();
  LearnerConfig c = small_config(LearnerKind::kTransformer);
  c.heads = 3;  // does not divide embedding 8
  CHECK_THROWS_AS(init_learner(c, data.input_vocab, data.output_vocab, 1), Error);
  LearnerConfig c2 = small_config(LearnerKind::kCnn);
  c2.kernel = 4;
  CHECK_THROWS_AS(init_learner(c2, data.input_vocab, data.output_vocab, 1), Error);
  LearnerConfig c3 = small_config(LearnerKind::kLstmNoAttention);
  c3.layers = 0;
  CHECK_THROWS_AS(init_learner(c3, data.input_vocab, data.output_vocab, 1), Error);
}

TEST_CASE("teacher-forced log-probabilities are finite, nonpositive and normalized") {
  TaskData data = small_task();
  const auto& ex = data.train[0];
  for (LearnerKind kind : kAllKinds) {
    auto model = init_learner(small_config(kind), data.input_vocab, data.output_vocab, 3);
    auto lp = teacher_forced_logprobs(model, ex.input, ex.output);
    REQUIRE(lp.size() == ex.output.size());
    for (double v : lp) {
      CHECK(std::isfinite(v));
      CHECK(v <= 0.0);
    }
    // exp over the full output vocabulary sums to 1 per position
    Graph g;
    auto nodes = build_teacher_forced(model, g, ex.input, ex.output, false);
    g.forward(false);
    const Mat& rows = g.value(nodes.log_probs);
    for (Eigen::Index r = 0; r < rows.rows(); ++r)
      CHECK(std::abs(rows.row(r).array().exp().sum() - 1.0) < 1e-9);
    // the nll node is exactly the negated sum of the picked entries
    double total = 0.0;
    for (double v : lp) total += v;
    CHECK(g.value(nodes.nll)(0, 0) == doctest::Approx(-total).epsilon(1e-12));
  }
}

TEST_CASE("causality: perturbing y at position t never changes rows at or before t") {
  TaskData data = small_task();
  const auto& ex = data.train[0];  // a^5 -> b^5, output length 6
  for (LearnerKind kind : kAllKinds) {
    auto model = init_learner(small_config(kind), data.input_vocab, data.output_vocab, 17);
    Graph g0;
    auto n0 = build_teacher_forced(model, g0, ex.input, ex.output, false);
    g0.forward(false);
    const Mat base = g0.value(n0.log_probs);
    for (std::size_t t = 0; t + 1 < ex.output.size(); ++t) {
      auto perturbed = ex.output;
      perturbed[t] = perturbed[t] == 0 ? data.output_vocab.eos() : 0;
      Graph g1;
      auto n1 = build_teacher_forced(model, g1, ex.input, perturbed, false);
      g1.forward(false);
      const Mat& rows = g1.value(n1.log_probs);
      // the conditional at position s <= t depends only on x and y_<s, so
      // the whole distribution row must be untouched
      for (std::size_t s = 0; s <= t; ++s)
        CHECK((rows.row(static_cast<Eigen::Index>(s)) -
               base.row(static_cast<Eigen::Index>(s)))
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("token and shape errors") {
  TaskData data = small_task();
  auto model = init_learner(small_config(LearnerKind::kLstmNoAttention), data.input_vocab,
                            data.output_vocab, 3);
  const auto& ex = data.train[0];
  CHECK_THROWS_AS(teacher_forced_logprobs(model, {0, 9, 1}, ex.output), Error);
  CHECK_THROWS_AS(teacher_forced_logprobs(model, ex.input, {}), Error);
  CHECK_THROWS_AS(teacher_forced_logprobs(model, ex.input, {0, 0}), Error);  // no eos
}

TEST_CASE("greedy decode is deterministic and bounded by max_len") {
  TaskData data = small_task();
  for (LearnerKind kind : kAllKinds) {
    auto model = init_learner(small_config(kind), data.input_vocab, data.output_vocab, 23);
    auto a = greedy_decode(model, data.train[0].input, 9);
    auto b = greedy_decode(model, data.train[0].input, 9);
    CHECK(a.tokens == b.tokens);
    CHECK(a.tokens.size() <= 9);
    auto c = greedy_decode(model, data.train[0].input, 1);
    CHECK(c.tokens.size() == 1);
    if (c.tokens[0] != data.output_vocab.eos()) CHECK(c.truncated);
  }
}

TEST_CASE("overfitting one pair pushes every per-token probability above 0.99") {
  TaskData data = small_task();  // a^5 -> b^5
  LearnerConfig c = small_config(LearnerKind::kLstmNoAttention);
  c.hidden = 32;
  auto model = init_learner(c, data.input_vocab, data.output_vocab, 11);
  training::TrainHyper hyper;  // 3000 epochs, defaults
  auto outcome = training::train(model, data.train, hyper, 11);
  CHECK(!outcome.diverged);
  auto lp = teacher_forced_logprobs(model, data.train[0].input, data.train[0].output);
  for (double v : lp) CHECK(v >= std::log(0.99));
}

TEST_CASE("a model overfitted on a^40 -> b^40 decodes b^40") {
  TaskData data = make_task_data({TaskKind::kCountOrMem, 40, 0, 0, 0});
  LearnerConfig c = small_config(LearnerKind::kLstmNoAttention);
  c.hidden = 64;
  c.embedding = 16;
  auto model = init_learner(c, data.input_vocab, data.output_vocab, 5);
  training::TrainHyper hyper;
  auto outcome = training::train(model, data.train, hyper, 5);
  CHECK(outcome.success);
  auto decoded = greedy_decode(model, data.train[0].input, 130);
  CHECK(decoded.tokens == data.train[0].output);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  TaskData data = small_task();
  for (LearnerKind kind : {LearnerKind::kLstmAttention, LearnerKind::kCnn,
                           LearnerKind::kTransformer}) {
    auto model = init_learner(small_config(kind), data.input_vocab, data.output_vocab, 31);
    const std::string path = "/tmp/seqbias_ckpt_test.bin";
    save_model(model, path);
    auto loaded = load_model(path);
    auto pa = model.params(), pb = loaded.params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      CHECK(pa[i]->name == pb[i]->name);
      CHECK(pa[i]->a.value == pb[i]->a.value);
    }
    auto lp_a = teacher_forced_logprobs(model, data.train[0].input, data.train[0].output);
    auto lp_b = teacher_forced_logprobs(loaded, data.train[0].input, data.train[0].output);
    CHECK(lp_a == lp_b);
    std::remove(path.c_str());
  }
}

TEST_CASE("every learner's loss graph passes a finite-difference spot check") {
  // varied tokens so no two attention keys coincide; a constant-token input
  // makes parts of the true gradient numerically zero, which the relative
  // error metric cannot certify
  tasks::Vocab in_vocab{{"a", "b", "<eos>"}};
  tasks::Vocab out_vocab{{"x", "y", "<eos>"}};
  const std::vector<int> x = {0, 1, 1, 0, 1, 2};
  const std::vector<int> y = {1, 0, 0, 1, 2};
  Rng rng(606);
  for (LearnerKind kind : kAllKinds) {
    auto model = init_learner(small_config(kind), in_vocab, out_vocab, 41);
    // move to a generic random point in parameter space
    for (Param* p : model.params())
      for (Eigen::Index r = 0; r < p->a.value.rows(); ++r)
        for (Eigen::Index c2 = 0; c2 < p->a.value.cols(); ++c2)
          p->a.value(r, c2) = rng.uniform(-0.25, 0.25);
    CHECK(testutil::full_model_fd_error(model, x, y) < 1e-6);
  }
}
