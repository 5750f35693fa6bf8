#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seqbias/common.hpp"
#include "seqbias/rng.hpp"

namespace seqbias::tensor {

// Dense 2-D array of doubles with an optional gradient slot of the same
// shape. Sequences are [T x dim], vectors [1 x n], scalars [1 x 1].
struct Array {
  Mat value;
  Mat grad;  // 0x0 until ensure_grad()

  Array() = default;
  explicit Array(Mat v) : value(std::move(v)) {}

  bool has_grad() const { return grad.size() != 0; }
  void ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      grad = Mat::Zero(value.rows(), value.cols());
  }
  std::array<Eigen::Index, 2> shape() const { return {value.rows(), value.cols()}; }
};

// A named trainable parameter. Gradients accumulate across examples of a
// batch; the optimizer owns the moment estimates.
struct Param {
  std::string name;
  Array a;

  Param() = default;
  Param(std::string n, Mat v) : name(std::move(n)), a(std::move(v)) { a.ensure_grad(); }
};

enum class Op {
  kInput,
  kParam,
  kConst,
  kMatMul,
  kScaledDot,   // q k^T / sqrt(cols)
  kAdd,         // equal shapes, or rhs is a 1 x n row broadcast
  kMul,
  kTanh,
  kSigmoid,
  kRelu,
  kExp,
  kLog,
  kSoftmax,     // rowwise
  kLogSoftmax,  // rowwise
  kConcatCols,
  kConcatRows,
  kSliceCols,
  kSliceRows,
  kGatherRows,  // embedding lookup
  kConv1d,      // 1-D convolution over rows with zero padding
  kDropout,     // inverted dropout; identity in eval mode
  kLayerNorm,
  kPickNll,     // -sum of picked log-probabilities, scalar output
  kSum,
  kScale,
  kTranspose,
  kLstmSeq,     // fused LSTM unroll, output [2T x H] = h rows then c rows
};

const char* op_name(Op op);

struct Node {
  Op op;
  std::vector<int> in;
  Mat val;
  Mat grad;
  bool needs_grad = false;
  bool stochastic = false;

  // op-specific attributes
  int i0 = 0, i1 = 0, i2 = 0;   // slice lo/len, conv kernel/pads, lstm T
  double d0 = 0.0;              // scale factor / dropout p / layer-norm eps
  std::vector<int> idx;         // gather indices or pick targets
  Param* par = nullptr;         // kParam only
  Mat aux, aux2;                // saved forward state (masks, im2col, ...)
};

// A dynamically built computation graph. Nodes are appended in topological
// order by construction; shapes are checked while building so errors surface
// at the construction site with the offending node named. The graph can be
// re-evaluated cheaply (buffers are reused), which the trainer relies on: it
// builds one graph per example and runs it once per epoch.
class Graph {
 public:
  int input(Eigen::Index rows, Eigen::Index cols);
  int param(Param& p);
  int constant(Mat m);

  int matmul(int a, int b);
  int scaled_dot(int q, int k);
  int add(int a, int b);
  int mul(int a, int b);
  int tanh_(int a);
  int sigmoid(int a);
  int relu(int a);
  int exp_(int a);
  int log_(int a);
  int softmax(int a);
  int log_softmax(int a);
  int concat_cols(int a, int b);
  int concat_rows(int a, int b);
  int slice_cols(int a, int lo, int len);
  int slice_rows(int a, int lo, int len);
  int gather_rows(int table, std::vector<int> rows);
  int conv1d(int x, int w, int bias, int kernel, int pad_left, int pad_right);
  int dropout(int a, double p);
  int layer_norm(int a, int gain, int bias, double eps = 1e-5);
  int pick_nll(int logprobs, std::vector<int> targets);
  int sum(int a);
  int scale(int a, double f);
  int transpose(int a);
  int lstm_seq(int x, int h0, int c0, int w, int b);

  void bind(int input_id, Mat v);

  // Forward pass over every node. In train mode dropout nodes draw fresh
  // masks from `rng`; in eval mode they are the identity.
  void forward(bool train, Rng* rng = nullptr);

  // Reverse pass from a scalar loss node. Parameter gradients accumulate
  // into their Param storage; call zero_param_grads (or the trainer's epoch
  // loop) between batches.
  void backward(int loss_id);

  const Mat& value(int id) const;
  const Mat& grad(int id) const;

  Eigen::Index rows(int id) const { return shape_[id].first; }
  Eigen::Index cols(int id) const { return shape_[id].second; }
  std::size_t size() const { return nodes_.size(); }
  bool has_stochastic_nodes() const;
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  int push(Node n, Eigen::Index r, Eigen::Index c);
  void check(bool cond, int a, int b, const std::string& what) const;
  const Mat& in_val(const Node& n, int slot) const;
  Mat& grad_slot(int id);
  void forward_node(int id, bool train, Rng* rng);
  void backward_node(int id);

  std::vector<Node> nodes_;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shape_;
  bool evaluated_ = false;
};

// Contract-shaped wrappers.
//
// evaluate binds the given inputs, runs a deterministic forward pass and
// returns the values of the requested nodes.
std::vector<Mat> evaluate(Graph& g,
                          const std::vector<std::pair<int, Mat>>& bindings,
                          const std::vector<int>& outputs);

// backpropagate(graph, loss): forward must have run; loss must be scalar.
void backpropagate(Graph& g, int loss_id);

// Central-difference check of every parameter against the analytic gradient.
// Returns max over parameters of |analytic - numeric| / max(|a|,|n|,1e-12).
// Rejects graphs containing stochastic nodes.
double gradient_check(Graph& g, int loss_id, std::span<Param* const> params,
                      double step);

}  // namespace seqbias::tensor
