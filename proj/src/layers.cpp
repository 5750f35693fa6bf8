#include "seqbias/layers.hpp"

#include <cmath>

namespace seqbias::layers {

void fill_uniform_fanin(Mat& m, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-bound, bound);
}

void fill_normal(Mat& m, Rng& rng, double stddev) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.normal(0.0, stddev);
}

EmbeddingTable::EmbeddingTable(const std::string& name, int vocab, int dim_, Rng& rng)
    : vocab_size(vocab), dim(dim_) {
  demand(vocab > 0 && dim_ > 0, "embedding: extents must be positive");
  Mat w(vocab, dim_);
  fill_normal(w, rng, 0.1);
  weight = Param(name, std::move(w));
}

LstmCellParams::LstmCellParams(const std::string& prefix, int in_dim, int hidden, Rng& rng)
    : input_dim(in_dim), hidden_dim(hidden) {
  demand(in_dim > 0 && hidden > 0, "lstm: extents must be positive");
  Mat wv(in_dim + hidden, 4 * hidden);
  fill_uniform_fanin(wv, rng);
  w = Param(prefix + ".w", std::move(wv));
  b = Param(prefix + ".b", Mat::Zero(1, 4 * hidden));
}

std::pair<Eigen::RowVectorXd, Eigen::RowVectorXd> lstm_cell_step(
    const Eigen::RowVectorXd& x, const Eigen::RowVectorXd& h,
    const Eigen::RowVectorXd& c, const LstmCellParams& p) {
  demand(x.size() == p.input_dim, "lstm_cell_step: input dimension mismatch");
  demand(h.size() == p.hidden_dim && c.size() == p.hidden_dim,
         "lstm_cell_step: state dimension mismatch");
  const int H = p.hidden_dim;
  Eigen::RowVectorXd xt(p.input_dim + H);
  xt << x, h;
  Eigen::RowVectorXd pre = xt * p.w.a.value + p.b.a.value.row(0);
  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  Eigen::RowVectorXd h_next(H), c_next(H);
  for (int j = 0; j < H; ++j) {
    const double gi = sig(pre(j));
    const double gf = sig(pre(H + j));
    const double gg = std::tanh(pre(2 * H + j));
    const double go = sig(pre(3 * H + j));
    c_next(j) = gf * c(j) + gi * gg;
    h_next(j) = go * std::tanh(c_next(j));
  }
  return {h_next, c_next};
}

AdditiveAttentionParams::AdditiveAttentionParams(const std::string& prefix, int q_dim,
                                                 int k_dim, int a_dim, Rng& rng)
    : query_dim(q_dim), key_dim(k_dim), attn_dim(a_dim) {
  Mat wj(q_dim + k_dim, a_dim), vv(a_dim, 1), wval(k_dim, k_dim);
  fill_uniform_fanin(wj, rng);
  fill_uniform_fanin(vv, rng);
  fill_uniform_fanin(wval, rng);
  w_joint = Param(prefix + ".w_joint", std::move(wj));
  b_joint = Param(prefix + ".b_joint", Mat::Zero(1, a_dim));
  v = Param(prefix + ".v", std::move(vv));
  w_value = Param(prefix + ".w_value", std::move(wval));
}

AdditiveAttentionKeys additive_attention_keys(Graph& g, int keys,
                                              AdditiveAttentionParams& p) {
  demand(g.rows(keys) >= 1, "additive_attention: empty key sequence");
  demand(g.cols(keys) == p.key_dim, "additive_attention: key dimension mismatch");
  int wk = g.slice_rows(g.param(p.w_joint), p.query_dim, p.key_dim);
  AdditiveAttentionKeys kc;
  kc.kproj = g.add(g.matmul(keys, wk), g.param(p.b_joint));  // [T x A]
  kc.values = g.matmul(keys, g.param(p.w_value));            // [T x key_dim]
  return kc;
}

AttentionNodes additive_attention_query(Graph& g, int query,
                                        const AdditiveAttentionKeys& kc,
                                        AdditiveAttentionParams& p) {
  demand(g.rows(query) == 1 && g.cols(query) == p.query_dim,
         "additive_attention: query must be [1 x query_dim]");
  // scores_j = v . tanh([q, k_j] W + b), with the key side precomputed
  int wq = g.slice_rows(g.param(p.w_joint), 0, p.query_dim);
  int qproj = g.matmul(query, wq);                     // [1 x A]
  int pre = g.add(kc.kproj, qproj);                    // rows broadcast
  int scores = g.matmul(g.tanh_(pre), g.param(p.v));   // [T x 1]
  int weights = g.softmax(g.transpose(scores));        // [1 x T]
  int context = g.matmul(weights, kc.values);          // [1 x key_dim]
  return {context, weights};
}

AttentionNodes additive_attention(Graph& g, int query, int keys,
                                  AdditiveAttentionParams& p) {
  return additive_attention_query(g, query, additive_attention_keys(g, keys, p), p);
}

MultiHeadAttentionParams::MultiHeadAttentionParams(const std::string& prefix, int d,
                                                   int heads_, Rng& rng)
    : model_dim(d), heads(heads_) {
  demand(heads_ > 0 && d % heads_ == 0,
         "multi_head_attention: model dimension must be divisible by head count");
  auto mk = [&](const char* nm) {
    Mat m(d, d);
    fill_uniform_fanin(m, rng);
    return Param(prefix + nm, std::move(m));
  };
  wq = mk(".wq");
  wk = mk(".wk");
  wv = mk(".wv");
  wo = mk(".wo");
}

MultiHeadNodes multi_head_attention(Graph& g, int queries, int keys, int values,
                                    MultiHeadAttentionParams& p, bool causal_mask,
                                    double attn_dropout, bool train,
                                    const Mat* extra_mask) {
  const int d = p.model_dim;
  demand(g.cols(queries) == d && g.cols(keys) == d && g.cols(values) == d,
         "multi_head_attention: model dimension mismatch");
  demand(g.rows(keys) == g.rows(values), "multi_head_attention: key/value length mismatch");
  const int tq = static_cast<int>(g.rows(queries));
  const int tk = static_cast<int>(g.rows(keys));
  demand(!causal_mask || tq == tk, "multi_head_attention: causal mask needs square scores");
  const int dk = d / p.heads;

  int q = g.matmul(queries, g.param(p.wq));
  int k = g.matmul(keys, g.param(p.wk));
  int v = g.matmul(values, g.param(p.wv));

  int mask_node = -1;
  if (causal_mask || extra_mask != nullptr) {
    Mat mask = Mat::Zero(tq, tk);
    if (causal_mask)
      for (int r = 0; r < tq; ++r)
        for (int c = r + 1; c < tk; ++c) mask(r, c) = -1e30;
    if (extra_mask != nullptr) {
      demand(extra_mask->rows() == tq && extra_mask->cols() == tk,
             "multi_head_attention: extra mask shape mismatch");
      mask += *extra_mask;
    }
    mask_node = g.constant(std::move(mask));
  }

  MultiHeadNodes out;
  int heads_cat = -1;
  for (int h = 0; h < p.heads; ++h) {
    int qh = g.slice_cols(q, h * dk, dk);
    int kh = g.slice_cols(k, h * dk, dk);
    int vh = g.slice_cols(v, h * dk, dk);
    int scores = g.scaled_dot(qh, kh);
    if (mask_node >= 0) scores = g.add(scores, mask_node);
    int attn = g.softmax(scores);
    out.head_weights.push_back(attn);
    if (train && attn_dropout > 0.0) attn = g.dropout(attn, attn_dropout);
    int ctx = g.matmul(attn, vh);
    heads_cat = h == 0 ? ctx : g.concat_cols(heads_cat, ctx);
  }
  out.output = g.matmul(heads_cat, g.param(p.wo));
  return out;
}

int glu(Graph& g, int x) {
  const Eigen::Index cols = g.cols(x);
  demand(cols % 2 == 0, "glu: channel count must be even, got " + std::to_string(cols));
  const int half = static_cast<int>(cols / 2);
  int lin = g.slice_cols(x, 0, half);
  int gate = g.sigmoid(g.slice_cols(x, half, half));
  return g.mul(lin, gate);
}

ConvBlockParams::ConvBlockParams(const std::string& prefix, int in_ch, int filters_,
                                 int kernel_, Rng& rng)
    : in_channels(in_ch), filters(filters_), kernel(kernel_) {
  Mat wv(kernel_ * in_ch, 2 * filters_);
  fill_uniform_fanin(wv, rng);
  w = Param(prefix + ".w", std::move(wv));
  b = Param(prefix + ".b", Mat::Zero(1, 2 * filters_));
}

Mat sinusoidal_positions(int length, int dim) {
  demand(length > 0 && dim > 0, "positions: extents must be positive");
  Mat pe(length, dim);
  for (int pos = 0; pos < length; ++pos)
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -2.0 * double(i / 2) / double(dim));
      pe(pos, i) = i % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  return pe;
}

LearnedPositions::LearnedPositions(const std::string& name, int max_len_, int dim_, Rng& rng)
    : max_len(max_len_), dim(dim_) {
  Mat t(max_len_, dim_);
  fill_normal(t, rng, 0.1);
  table = Param(name, std::move(t));
}

int positions(Graph& g, PositionKind kind, int length, int dim, LearnedPositions* table) {
  if (kind == PositionKind::kSinusoidal) return g.constant(sinusoidal_positions(length, dim));
  demand(table != nullptr, "positions: learned kind needs a table");
  demand(table->dim == dim, "positions: table dimension mismatch");
  demand(length <= table->max_len,
         "positions: length " + std::to_string(length) + " exceeds learned table of " +
             std::to_string(table->max_len));
  return g.slice_rows(g.param(table->table), 0, length);
}

LayerNormParams::LayerNormParams(const std::string& prefix, int dim) {
  gain = Param(prefix + ".gain", Mat::Ones(1, dim));
  bias = Param(prefix + ".bias", Mat::Zero(1, dim));
}

int layer_norm(Graph& g, int x, LayerNormParams& p) {
  return g.layer_norm(x, g.param(p.gain), g.param(p.bias));
}

FeedForwardParams::FeedForwardParams(const std::string& prefix, int dim, int inner, Rng& rng) {
  Mat w1v(dim, inner), w2v(inner, dim);
  fill_uniform_fanin(w1v, rng);
  fill_uniform_fanin(w2v, rng);
  w1 = Param(prefix + ".w1", std::move(w1v));
  b1 = Param(prefix + ".b1", Mat::Zero(1, inner));
  w2 = Param(prefix + ".w2", std::move(w2v));
  b2 = Param(prefix + ".b2", Mat::Zero(1, dim));
}

int feed_forward(Graph& g, int x, FeedForwardParams& p) {
  int h = g.relu(g.add(g.matmul(x, g.param(p.w1)), g.param(p.b1)));
  return g.add(g.matmul(h, g.param(p.w2)), g.param(p.b2));
}

}  // namespace seqbias::layers
