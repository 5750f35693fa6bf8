#pragma once

#include <string>
#include <utility>
#include <vector>

#include "seqbias/graph.hpp"
#include "seqbias/rng.hpp"

namespace seqbias::layers {

using tensor::Graph;
using tensor::Param;

// Initialization scheme used for every learner: weight matrices uniform in
// +-1/sqrt(fan_in) with fan_in = row count, biases zero, embedding-style
// tables normal(0, 0.1). Draw order is fixed (row major), so a seed pins
// every parameter bit-for-bit.
void fill_uniform_fanin(Mat& m, Rng& rng);
void fill_normal(Mat& m, Rng& rng, double stddev);

struct EmbeddingTable {
  int vocab_size = 0;
  int dim = 0;
  Param weight;  // [vocab_size x dim]

  EmbeddingTable() = default;
  EmbeddingTable(const std::string& name, int vocab, int dim, Rng& rng);
};

// Fused gate parameters for one LSTM cell. Gates are column blocks of `w` in
// the order input, forget, cell, output; each logical gate weight is
// (input_dim + hidden_dim) x hidden_dim and each gate bias has hidden_dim
// entries, matching the usual formulation.
struct LstmCellParams {
  int input_dim = 0;
  int hidden_dim = 0;
  Param w;  // [(input_dim + hidden_dim) x 4*hidden_dim]
  Param b;  // [1 x 4*hidden_dim]

  LstmCellParams() = default;
  LstmCellParams(const std::string& prefix, int input_dim, int hidden_dim, Rng& rng);

  enum Gate { kInputGate = 0, kForgetGate = 1, kCellGate = 2, kOutputGate = 3 };
  Mat gate_weight(Gate g) const { return w.a.value.middleCols(g * hidden_dim, hidden_dim); }
  Mat gate_bias(Gate g) const { return b.a.value.middleCols(g * hidden_dim, hidden_dim); }
};

// One step of the standard LSTM recurrence; a pure function of its inputs.
std::pair<Eigen::RowVectorXd, Eigen::RowVectorXd> lstm_cell_step(
    const Eigen::RowVectorXd& x, const Eigen::RowVectorXd& h,
    const Eigen::RowVectorXd& c, const LstmCellParams& p);

// Bahdanau-style additive attention: a joint projection of [query, key]
// followed by tanh scoring against a learned vector; the context is the
// weight-averaged value projection of the keys.
struct AdditiveAttentionParams {
  int query_dim = 0;
  int key_dim = 0;
  int attn_dim = 0;
  Param w_joint;  // [(query_dim + key_dim) x attn_dim]
  Param b_joint;  // [1 x attn_dim]
  Param v;        // [attn_dim x 1]
  Param w_value;  // [key_dim x key_dim]

  AdditiveAttentionParams() = default;
  AdditiveAttentionParams(const std::string& prefix, int query_dim, int key_dim,
                          int attn_dim, Rng& rng);
};

struct AttentionNodes {
  int context = -1;
  int weights = -1;
};

// Key-side projections, computed once per graph and shared by every query
// position of a decoding step loop.
struct AdditiveAttentionKeys {
  int kproj = -1;   // [T x attn_dim]
  int values = -1;  // [T x key_dim]
};

AdditiveAttentionKeys additive_attention_keys(Graph& g, int keys,
                                              AdditiveAttentionParams& p);
AttentionNodes additive_attention_query(Graph& g, int query,
                                        const AdditiveAttentionKeys& kc,
                                        AdditiveAttentionParams& p);

// query [1 x query_dim], keys [T x key_dim] -> context [1 x key_dim] and
// weights [1 x T]. Empty key sequences are rejected when the keys node is
// created (inputs must have positive extents).
AttentionNodes additive_attention(Graph& g, int query, int keys,
                                  AdditiveAttentionParams& p);

// Projection matrices only, as in the original formulation; biases on the
// q/k projections would be invisible to the softmax anyway (uniform row
// shifts), which also makes finite-difference checks degenerate.
struct MultiHeadAttentionParams {
  int model_dim = 0;
  int heads = 0;
  Param wq, wk, wv, wo;  // [model_dim x model_dim]

  MultiHeadAttentionParams() = default;
  MultiHeadAttentionParams(const std::string& prefix, int model_dim, int heads, Rng& rng);
};

struct MultiHeadNodes {
  int output = -1;
  std::vector<int> head_weights;  // softmax nodes, one per head
};

// queries [Tq x d], keys/values [Tk x d]. With `causal_mask` position i may
// only attend to keys at positions <= i (requires Tq == Tk). `extra_mask`,
// when non-null, is added to every head's scores before the softmax
// ([Tq x Tk], 0 = visible, large negative = hidden) — used by the joint
// source-target learner.
MultiHeadNodes multi_head_attention(Graph& g, int queries, int keys, int values,
                                    MultiHeadAttentionParams& p, bool causal_mask,
                                    double attn_dropout, bool train,
                                    const Mat* extra_mask = nullptr);

// Gated linear unit over column halves: out = x[:, :k] * sigmoid(x[:, k:]).
int glu(Graph& g, int x);

// Convolution block parameters for the CNN learner: output channels are
// doubled so the GLU can halve them back to `filters`.
struct ConvBlockParams {
  int in_channels = 0;
  int filters = 0;
  int kernel = 0;
  Param w;  // [kernel*in_channels x 2*filters]
  Param b;  // [1 x 2*filters]

  ConvBlockParams() = default;
  ConvBlockParams(const std::string& prefix, int in_channels, int filters, int kernel,
                  Rng& rng);
};

enum class PositionKind { kSinusoidal, kLearned };

// Sinusoidal table: row p = [sin(p/10000^(0/d)), cos(p/10000^(0/d)),
// sin(p/10000^(2/d)), cos(p/10000^(2/d)), ...]; all entries in [-1, 1].
Mat sinusoidal_positions(int length, int dim);

struct LearnedPositions {
  int max_len = 0;
  int dim = 0;
  Param table;  // [max_len x dim]

  LearnedPositions() = default;
  LearnedPositions(const std::string& name, int max_len, int dim, Rng& rng);
};

// Graph node holding position rows 0..length-1; errors if length exceeds the
// learned table.
int positions(Graph& g, PositionKind kind, int length, int dim,
              LearnedPositions* table = nullptr);

struct LayerNormParams {
  Param gain;  // [1 x dim]
  Param bias;  // [1 x dim]

  LayerNormParams() = default;
  LayerNormParams(const std::string& prefix, int dim);
};

int layer_norm(Graph& g, int x, LayerNormParams& p);

struct FeedForwardParams {
  Param w1, b1, w2, b2;  // dim -> inner -> dim

  FeedForwardParams() = default;
  FeedForwardParams(const std::string& prefix, int dim, int inner, Rng& rng);
};

// position-wise feed-forward with relu
int feed_forward(Graph& g, int x, FeedForwardParams& p);

}  // namespace seqbias::layers
