#include "seqbias/learners.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace seqbias::learners {

LearnerKind learner_kind_from(const std::string& name) {
  if (name == "lstm-no-attention") return LearnerKind::kLstmNoAttention;
  if (name == "lstm-attention") return LearnerKind::kLstmAttention;
  if (name == "cnn") return LearnerKind::kCnn;
  if (name == "transformer") return LearnerKind::kTransformer;
  if (name == "joint-source-target-attention") return LearnerKind::kJointSourceTarget;
  throw Error("unknown learner kind '" + name + "'");
}

std::string to_string(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::kLstmNoAttention: return "lstm-no-attention";
    case LearnerKind::kLstmAttention: return "lstm-attention";
    case LearnerKind::kCnn: return "cnn";
    case LearnerKind::kTransformer: return "transformer";
    case LearnerKind::kJointSourceTarget: return "joint-source-target-attention";
  }
  return "?";
}

void LearnerConfig::validate() const {
  demand(layers >= 1, "learner config: layers must be >= 1");
  demand(hidden >= 1 && embedding >= 1, "learner config: extents must be positive");
  demand(dropout >= 0.0 && dropout < 1.0, "learner config: dropout must lie in [0,1)");
  if (kind == LearnerKind::kTransformer || kind == LearnerKind::kJointSourceTarget) {
    demand(heads >= 1, "learner config: heads must be >= 1");
    demand(embedding % heads == 0,
           "learner config: head count must divide the model (embedding) dimension");
  }
  if (kind == LearnerKind::kCnn)
    demand(kernel >= 1 && kernel % 2 == 1,
           "learner config: encoder convolutions need an odd kernel width");
}

std::string LearnerConfig::describe() const {
  return to_string(kind) + "(layers=" + std::to_string(layers) +
         ",hidden=" + std::to_string(hidden) + ",emb=" + std::to_string(embedding) +
         ",heads=" + std::to_string(heads) + ",kernel=" + std::to_string(kernel) +
         ",dropout=" + std::to_string(dropout) + ")";
}

namespace {

Param make_weight(const std::string& name, int rows, int cols, Rng& rng) {
  Mat m(rows, cols);
  layers::fill_uniform_fanin(m, rng);
  return Param(name, std::move(m));
}

Param make_bias(const std::string& name, int cols) {
  return Param(name, Mat::Zero(1, cols));
}

}  // namespace

Seq2SeqModel init_learner(const LearnerConfig& config, const tasks::Vocab& input_vocab,
                          const tasks::Vocab& output_vocab, std::uint64_t seed) {
  config.validate();
  demand(input_vocab.size() >= 1 && output_vocab.size() >= 1,
         "init_learner: empty vocabulary");
  Rng rng(Rng::derive(seed, "init"));
  Seq2SeqModel m;
  m.config = config;
  m.input_vocab = input_vocab;
  m.output_vocab = output_vocab;
  const int emb = config.embedding;
  const int hidden = config.hidden;
  const int v_out = output_vocab.size();

  m.in_embed = EmbeddingTable("in_embed", input_vocab.size(), emb, rng);
  m.out_embed = EmbeddingTable("out_embed", v_out + 1, emb, rng);  // + bos row

  switch (config.kind) {
    case LearnerKind::kLstmNoAttention:
    case LearnerKind::kLstmAttention: {
      m.enc_cells.reserve(config.layers);
      m.dec_cells.reserve(config.layers);
      for (int i = 0; i < config.layers; ++i)
        m.enc_cells.emplace_back("enc" + std::to_string(i), i == 0 ? emb : hidden, hidden,
                                 rng);
      for (int i = 0; i < config.layers; ++i)
        m.dec_cells.emplace_back("dec" + std::to_string(i), i == 0 ? emb : hidden, hidden,
                                 rng);
      if (config.kind == LearnerKind::kLstmAttention) {
        m.attention = AdditiveAttentionParams("attn", hidden, hidden, hidden, rng);
        m.out_proj_w = make_weight("out_proj.w", 2 * hidden, v_out, rng);
      } else {
        m.out_proj_w = make_weight("out_proj.w", hidden, v_out, rng);
      }
      m.out_proj_b = make_bias("out_proj.b", v_out);
      break;
    }
    case LearnerKind::kCnn: {
      m.in_positions = LearnedPositions("in_pos", kMaxPositions, emb, rng);
      m.out_positions = LearnedPositions("out_pos", kMaxPositions, emb, rng);
      m.enc_fc1_w = make_weight("enc_fc1.w", emb, hidden, rng);
      m.enc_fc1_b = make_bias("enc_fc1.b", hidden);
      m.enc_convs.reserve(config.layers);
      for (int i = 0; i < config.layers; ++i)
        m.enc_convs.emplace_back("enc_conv" + std::to_string(i), hidden, hidden,
                                 config.kernel, rng);
      m.enc_fc2_w = make_weight("enc_fc2.w", hidden, emb, rng);
      m.enc_fc2_b = make_bias("enc_fc2.b", emb);
      m.dec_fc1_w = make_weight("dec_fc1.w", emb, hidden, rng);
      m.dec_fc1_b = make_bias("dec_fc1.b", hidden);
      m.dec_convs.reserve(config.layers);
      for (int i = 0; i < config.layers; ++i)
        m.dec_convs.emplace_back("dec_conv" + std::to_string(i), hidden, hidden,
                                 config.kernel, rng);
      m.attn_q_w = make_weight("attn_q.w", hidden, emb, rng);
      m.attn_q_b = make_bias("attn_q.b", emb);
      m.attn_out_w = make_weight("attn_out.w", emb, hidden, rng);
      m.attn_out_b = make_bias("attn_out.b", hidden);
      m.dec_fc2_w = make_weight("dec_fc2.w", hidden, emb, rng);
      m.dec_fc2_b = make_bias("dec_fc2.b", emb);
      m.out_proj_w = make_weight("out_proj.w", emb, v_out, rng);
      m.out_proj_b = make_bias("out_proj.b", v_out);
      break;
    }
    case LearnerKind::kTransformer:
    case LearnerKind::kJointSourceTarget: {
      const bool joint = config.kind == LearnerKind::kJointSourceTarget;
      auto make_layer = [&](const std::string& prefix, bool with_cross) {
        Seq2SeqModel::TransformerLayer layer;
        layer.self_attn = MultiHeadAttentionParams(prefix + ".self", emb, config.heads, rng);
        layer.ln_self = LayerNormParams(prefix + ".ln_self", emb);
        if (with_cross) {
          layer.cross_attn =
              MultiHeadAttentionParams(prefix + ".cross", emb, config.heads, rng);
          layer.ln_cross = LayerNormParams(prefix + ".ln_cross", emb);
        }
        layer.ffn = FeedForwardParams(prefix + ".ffn", emb, hidden, rng);
        layer.ln_ffn = LayerNormParams(prefix + ".ln_ffn", emb);
        return layer;
      };
      if (!joint) {
        m.enc_layers.reserve(config.layers);
        for (int i = 0; i < config.layers; ++i)
          m.enc_layers.push_back(make_layer("enc" + std::to_string(i), false));
      }
      m.dec_layers.reserve(config.layers);
      for (int i = 0; i < config.layers; ++i)
        m.dec_layers.push_back(make_layer(joint ? "stack" + std::to_string(i)
                                                : "dec" + std::to_string(i),
                                          !joint));
      m.out_proj_w = make_weight("out_proj.w", emb, v_out, rng);
      m.out_proj_b = make_bias("out_proj.b", v_out);
      break;
    }
  }
  return m;
}

std::vector<Param*> Seq2SeqModel::params() {
  std::vector<Param*> out;
  auto push = [&](Param& p) {
    if (p.a.value.size() != 0) out.push_back(&p);
  };
  push(in_embed.weight);
  push(out_embed.weight);
  for (auto& c : enc_cells) {
    push(c.w);
    push(c.b);
  }
  for (auto& c : dec_cells) {
    push(c.w);
    push(c.b);
  }
  push(attention.w_joint);
  push(attention.b_joint);
  push(attention.v);
  push(attention.w_value);
  push(in_positions.table);
  push(out_positions.table);
  push(enc_fc1_w);
  push(enc_fc1_b);
  for (auto& c : enc_convs) {
    push(c.w);
    push(c.b);
  }
  push(enc_fc2_w);
  push(enc_fc2_b);
  push(dec_fc1_w);
  push(dec_fc1_b);
  for (auto& c : dec_convs) {
    push(c.w);
    push(c.b);
  }
  push(attn_q_w);
  push(attn_q_b);
  push(attn_out_w);
  push(attn_out_b);
  push(dec_fc2_w);
  push(dec_fc2_b);
  auto push_layer = [&](TransformerLayer& l) {
    push(l.self_attn.wq);
    push(l.self_attn.wk);
    push(l.self_attn.wv);
    push(l.self_attn.wo);
    push(l.ln_self.gain);
    push(l.ln_self.bias);
    push(l.cross_attn.wq);
    push(l.cross_attn.wk);
    push(l.cross_attn.wv);
    push(l.cross_attn.wo);
    push(l.ln_cross.gain);
    push(l.ln_cross.bias);
    push(l.ffn.w1);
    push(l.ffn.b1);
    push(l.ffn.w2);
    push(l.ffn.b2);
    push(l.ln_ffn.gain);
    push(l.ln_ffn.bias);
  };
  for (auto& l : enc_layers) push_layer(l);
  for (auto& l : dec_layers) push_layer(l);
  push(out_proj_w);
  push(out_proj_b);
  return out;
}

std::size_t Seq2SeqModel::parameter_count() {
  std::size_t n = 0;
  for (Param* p : params()) n += static_cast<std::size_t>(p->a.value.size());
  return n;
}

namespace {

void check_tokens(const std::vector<int>& seq, const tasks::Vocab& vocab,
                  const char* side) {
  demand(!seq.empty(), std::string(side) + " sequence must be nonempty");
  for (int t : seq)
    demand(t >= 0 && t < vocab.size(),
           std::string(side) + " token id " + std::to_string(t) + " outside vocabulary");
}

int embed_sequence(Seq2SeqModel& m, Graph& g, EmbeddingTable& table,
                   const std::vector<int>& ids, bool train) {
  int e = g.gather_rows(g.param(table.weight), ids);
  if (train && m.config.dropout > 0.0) e = g.dropout(e, m.config.dropout);
  return e;
}

// ---- LSTM ----

struct LstmEncoderOut {
  std::vector<int> final_h;   // per layer [1 x H]
  std::vector<int> final_c;
  int top_h = -1;             // [T x H] h rows of the top layer
};

LstmEncoderOut lstm_encode(Seq2SeqModel& m, Graph& g, const std::vector<int>& x,
                           bool train) {
  const int T = static_cast<int>(x.size());
  const int hidden = m.config.hidden;
  int inp = embed_sequence(m, g, m.in_embed, x, train);
  LstmEncoderOut out;
  for (std::size_t i = 0; i < m.enc_cells.size(); ++i) {
    auto& cell = m.enc_cells[i];
    int h0 = g.constant(Mat::Zero(1, hidden));
    int c0 = g.constant(Mat::Zero(1, hidden));
    int seq = g.lstm_seq(inp, h0, c0, g.param(cell.w), g.param(cell.b));
    int h_rows = g.slice_rows(seq, 0, T);
    out.final_h.push_back(g.slice_rows(seq, T - 1, 1));
    out.final_c.push_back(g.slice_rows(seq, 2 * T - 1, 1));
    inp = h_rows;
    if (i + 1 < m.enc_cells.size() && train && m.config.dropout > 0.0)
      inp = g.dropout(inp, m.config.dropout);
    out.top_h = h_rows;
  }
  return out;
}

int lstm_decoder_logprobs(Seq2SeqModel& m, Graph& g, const LstmEncoderOut& enc,
                          const std::vector<int>& dec_input, bool train) {
  const int T = static_cast<int>(dec_input.size());
  int inp = embed_sequence(m, g, m.out_embed, dec_input, train);
  int top = -1;
  for (std::size_t i = 0; i < m.dec_cells.size(); ++i) {
    auto& cell = m.dec_cells[i];
    int seq = g.lstm_seq(inp, enc.final_h[i], enc.final_c[i], g.param(cell.w),
                         g.param(cell.b));
    int h_rows = g.slice_rows(seq, 0, T);
    inp = h_rows;
    if (i + 1 < m.dec_cells.size() && train && m.config.dropout > 0.0)
      inp = g.dropout(inp, m.config.dropout);
    top = h_rows;
  }
  if (m.config.kind == LearnerKind::kLstmNoAttention) {
    int state = top;
    if (train && m.config.dropout > 0.0) state = g.dropout(state, m.config.dropout);
    int logits = g.add(g.matmul(state, g.param(m.out_proj_w)), g.param(m.out_proj_b));
    return g.log_softmax(logits);
  }
  // attention variant: per-step additive attention over the top encoder rows,
  // context concatenated with the decoder state ahead of the projection
  auto keys = layers::additive_attention_keys(g, enc.top_h, m.attention);
  int logits = -1;
  for (int t = 0; t < T; ++t) {
    int q = g.slice_rows(top, t, 1);
    auto att = layers::additive_attention_query(g, q, keys, m.attention);
    int state = g.concat_cols(q, att.context);
    if (train && m.config.dropout > 0.0) state = g.dropout(state, m.config.dropout);
    int row = g.add(g.matmul(state, g.param(m.out_proj_w)), g.param(m.out_proj_b));
    logits = t == 0 ? row : g.concat_rows(logits, row);
  }
  return g.log_softmax(logits);
}

// ---- CNN ----

constexpr double kHalfSqrt = 0.7071067811865476;  // sqrt(0.5)

struct CnnEncoderOut {
  int keys = -1;    // [T x emb]
  int values = -1;  // [T x emb]
};

CnnEncoderOut cnn_encode(Seq2SeqModel& m, Graph& g, const std::vector<int>& x, bool train) {
  const int T = static_cast<int>(x.size());
  int emb_tok = g.gather_rows(g.param(m.in_embed.weight), x);
  int pos = layers::positions(g, layers::PositionKind::kLearned, T, m.config.embedding,
                              &m.in_positions);
  int e = g.add(emb_tok, pos);
  if (train && m.config.dropout > 0.0) e = g.dropout(e, m.config.dropout);
  int h = g.add(g.matmul(e, g.param(m.enc_fc1_w)), g.param(m.enc_fc1_b));
  const int pad = (m.config.kernel - 1) / 2;
  for (auto& conv : m.enc_convs) {
    int c = g.conv1d(h, g.param(conv.w), g.param(conv.b), m.config.kernel, pad, pad);
    int gated = layers::glu(g, c);
    h = g.scale(g.add(gated, h), kHalfSqrt);
  }
  CnnEncoderOut out;
  out.keys = g.add(g.matmul(h, g.param(m.enc_fc2_w)), g.param(m.enc_fc2_b));
  out.values = g.scale(g.add(out.keys, e), kHalfSqrt);
  return out;
}

int cnn_decoder_logprobs(Seq2SeqModel& m, Graph& g, const CnnEncoderOut& enc,
                         const std::vector<int>& dec_input, bool train) {
  const int T = static_cast<int>(dec_input.size());
  int emb_tok = g.gather_rows(g.param(m.out_embed.weight), dec_input);
  int pos = layers::positions(g, layers::PositionKind::kLearned, T, m.config.embedding,
                              &m.out_positions);
  int e = g.add(emb_tok, pos);
  if (train && m.config.dropout > 0.0) e = g.dropout(e, m.config.dropout);
  int h = g.add(g.matmul(e, g.param(m.dec_fc1_w)), g.param(m.dec_fc1_b));
  for (auto& conv : m.dec_convs) {
    // causal padding: a position sees only itself and earlier ones
    int c = g.conv1d(h, g.param(conv.w), g.param(conv.b), m.config.kernel,
                     m.config.kernel - 1, 0);
    int gated = layers::glu(g, c);
    h = g.scale(g.add(gated, h), kHalfSqrt);
  }
  // single attention after the decoder convolutions
  int q = g.scale(g.add(g.add(g.matmul(h, g.param(m.attn_q_w)), g.param(m.attn_q_b)), e),
                  kHalfSqrt);
  int scores = g.matmul(q, g.transpose(enc.keys));  // [T x Tenc]
  int attn = g.softmax(scores);
  int ctx = g.matmul(attn, enc.values);  // [T x emb]
  // variance rescaling by sqrt(source length)
  ctx = g.scale(ctx, std::sqrt(static_cast<double>(g.rows(enc.keys))));
  int ctx_proj = g.add(g.matmul(ctx, g.param(m.attn_out_w)), g.param(m.attn_out_b));
  h = g.scale(g.add(h, ctx_proj), kHalfSqrt);
  int out = g.add(g.matmul(h, g.param(m.dec_fc2_w)), g.param(m.dec_fc2_b));
  if (train && m.config.dropout > 0.0) out = g.dropout(out, m.config.dropout);
  int logits = g.add(g.matmul(out, g.param(m.out_proj_w)), g.param(m.out_proj_b));
  return g.log_softmax(logits);
}

// ---- Transformer ----

int transformer_embed(Seq2SeqModel& m, Graph& g, EmbeddingTable& table,
                      const std::vector<int>& ids, bool train) {
  const int T = static_cast<int>(ids.size());
  int e = g.scale(g.gather_rows(g.param(table.weight), ids),
                  std::sqrt(static_cast<double>(m.config.embedding)));
  int pos = layers::positions(g, layers::PositionKind::kSinusoidal, T, m.config.embedding);
  e = g.add(e, pos);
  if (train && m.config.dropout > 0.0) e = g.dropout(e, m.config.dropout);
  return e;
}

int residual_block(Seq2SeqModel& m, Graph& g, int x, int sub, LayerNormParams& ln,
                   bool train) {
  if (train && m.config.dropout > 0.0) sub = g.dropout(sub, m.config.dropout);
  return layers::layer_norm(g, g.add(x, sub), ln);
}

int transformer_encode(Seq2SeqModel& m, Graph& g, const std::vector<int>& x, bool train) {
  int h = transformer_embed(m, g, m.in_embed, x, train);
  for (auto& layer : m.enc_layers) {
    auto attn = layers::multi_head_attention(g, h, h, h, layer.self_attn, false,
                                             m.config.dropout, train);
    h = residual_block(m, g, h, attn.output, layer.ln_self, train);
    h = residual_block(m, g, h, layers::feed_forward(g, h, layer.ffn), layer.ln_ffn, train);
  }
  return h;
}

int transformer_decoder_logprobs(Seq2SeqModel& m, Graph& g, int enc_out,
                                 const std::vector<int>& dec_input, bool train) {
  int h = transformer_embed(m, g, m.out_embed, dec_input, train);
  for (auto& layer : m.dec_layers) {
    auto self = layers::multi_head_attention(g, h, h, h, layer.self_attn, true,
                                             m.config.dropout, train);
    h = residual_block(m, g, h, self.output, layer.ln_self, train);
    auto cross = layers::multi_head_attention(g, h, enc_out, enc_out, layer.cross_attn,
                                              false, m.config.dropout, train);
    h = residual_block(m, g, h, cross.output, layer.ln_cross, train);
    h = residual_block(m, g, h, layers::feed_forward(g, h, layer.ffn), layer.ln_ffn, train);
  }
  int logits = g.add(g.matmul(h, g.param(m.out_proj_w)), g.param(m.out_proj_b));
  return g.log_softmax(logits);
}

// ---- joint source-target stack ----

int joint_logprobs(Seq2SeqModel& m, Graph& g, const std::vector<int>& x,
                   const std::vector<int>& dec_input, bool train) {
  const int S = static_cast<int>(x.size());
  const int T = static_cast<int>(dec_input.size());
  int src = transformer_embed(m, g, m.in_embed, x, train);
  int tgt = transformer_embed(m, g, m.out_embed, dec_input, train);  // positions restart
  int h = g.concat_rows(src, tgt);
  // mixed attention mask: source rows see all source; target rows see all
  // source and their causal target prefix
  Mat mask = Mat::Zero(S + T, S + T);
  for (int r = 0; r < S + T; ++r)
    for (int c = S; c < S + T; ++c)
      if (r < S || c > r) mask(r, c) = -1e30;
  for (auto& layer : m.dec_layers) {
    auto attn = layers::multi_head_attention(g, h, h, h, layer.self_attn, false,
                                             m.config.dropout, train, &mask);
    h = residual_block(m, g, h, attn.output, layer.ln_self, train);
    h = residual_block(m, g, h, layers::feed_forward(g, h, layer.ffn), layer.ln_ffn, train);
  }
  int tgt_rows = g.slice_rows(h, S, T);
  int logits = g.add(g.matmul(tgt_rows, g.param(m.out_proj_w)), g.param(m.out_proj_b));
  return g.log_softmax(logits);
}

int build_decoder_logprobs(Seq2SeqModel& m, Graph& g, const std::vector<int>& x,
                           const std::vector<int>& dec_input, bool train) {
  check_tokens(x, m.input_vocab, "input");
  demand(!dec_input.empty(), "decoder input must be nonempty");
  for (int t : dec_input)
    demand(t >= 0 && t <= m.output_vocab.size(), "decoder token outside vocabulary");
  switch (m.config.kind) {
    case LearnerKind::kLstmNoAttention:
    case LearnerKind::kLstmAttention: {
      auto enc = lstm_encode(m, g, x, train);
      return lstm_decoder_logprobs(m, g, enc, dec_input, train);
    }
    case LearnerKind::kCnn: {
      auto enc = cnn_encode(m, g, x, train);
      return cnn_decoder_logprobs(m, g, enc, dec_input, train);
    }
    case LearnerKind::kTransformer: {
      int enc = transformer_encode(m, g, x, train);
      return transformer_decoder_logprobs(m, g, enc, dec_input, train);
    }
    case LearnerKind::kJointSourceTarget:
      return joint_logprobs(m, g, x, dec_input, train);
  }
  throw Error("unreachable");
}

}  // namespace

ForwardNodes build_teacher_forced(Seq2SeqModel& model, Graph& g, const std::vector<int>& x,
                                  const std::vector<int>& y, bool train) {
  check_tokens(y, model.output_vocab, "output");
  demand(y.back() == model.output_vocab.eos(),
         "teacher forcing: target must end with the end-of-sequence token");
  std::vector<int> dec_input;
  dec_input.reserve(y.size());
  dec_input.push_back(model.bos_id());
  dec_input.insert(dec_input.end(), y.begin(), y.end() - 1);
  ForwardNodes out;
  out.log_probs = build_decoder_logprobs(model, g, x, dec_input, train);
  out.nll = g.pick_nll(out.log_probs, y);
  return out;
}

std::vector<double> teacher_forced_logprobs(Seq2SeqModel& model, const std::vector<int>& x,
                                            const std::vector<int>& y) {
  Graph g;
  ForwardNodes nodes = build_teacher_forced(model, g, x, y, /*train=*/false);
  g.forward(false);
  const Mat& lp = g.value(nodes.log_probs);
  std::vector<double> out(y.size());
  for (std::size_t t = 0; t < y.size(); ++t)
    out[t] = lp(static_cast<Eigen::Index>(t), y[t]);
  return out;
}

DecodeResult greedy_decode(Seq2SeqModel& model, const std::vector<int>& x, int max_len) {
  demand(max_len >= 1, "greedy_decode: max_len must be >= 1");
  DecodeResult result;
  std::vector<int> dec_input = {model.bos_id()};
  const int eos = model.output_vocab.eos();
  while (static_cast<int>(result.tokens.size()) < max_len) {
    Graph g;
    int lp = build_decoder_logprobs(model, g, x, dec_input, /*train=*/false);
    g.forward(false);
    const Mat& row = g.value(lp);
    Eigen::Index best = 0;
    row.row(row.rows() - 1).maxCoeff(&best);
    const int token = static_cast<int>(best);
    result.tokens.push_back(token);
    if (token == eos) return result;
    dec_input.push_back(token);
  }
  result.truncated = true;
  return result;
}

// ---- checkpoint io ----

namespace {

constexpr std::uint32_t kMagic = 0x5342434bu;  // "SBCK"
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_str(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
double read_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::string read_str(std::istream& is) {
  std::string s(read_u64(is), '\0');
  is.read(s.data(), static_cast<std::streamsize>(s.size()));
  return s;
}

void write_vocab(std::ostream& os, const tasks::Vocab& v) {
  write_u64(os, v.tokens.size());
  for (const auto& t : v.tokens) write_str(os, t);
}

tasks::Vocab read_vocab(std::istream& is) {
  tasks::Vocab v;
  const std::uint64_t n = read_u64(is);
  v.tokens.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) v.tokens.push_back(read_str(is));
  return v;
}

}  // namespace

void save_model(const Seq2SeqModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  demand(os.good(), "save_model: cannot open " + path);
  write_u32(os, kMagic);
  write_u32(os, kVersion);
  write_str(os, to_string(model.config.kind));
  write_u32(os, static_cast<std::uint32_t>(model.config.layers));
  write_u32(os, static_cast<std::uint32_t>(model.config.hidden));
  write_u32(os, static_cast<std::uint32_t>(model.config.embedding));
  write_u32(os, static_cast<std::uint32_t>(model.config.heads));
  write_u32(os, static_cast<std::uint32_t>(model.config.kernel));
  write_f64(os, model.config.dropout);
  write_vocab(os, model.input_vocab);
  write_vocab(os, model.output_vocab);
  auto params = const_cast<Seq2SeqModel&>(model).params();
  write_u64(os, params.size());
  for (Param* p : params) {
    write_str(os, p->name);
    write_u64(os, static_cast<std::uint64_t>(p->a.value.rows()));
    write_u64(os, static_cast<std::uint64_t>(p->a.value.cols()));
    os.write(reinterpret_cast<const char*>(p->a.value.data()),
             static_cast<std::streamsize>(sizeof(double) * p->a.value.size()));
  }
  demand(os.good(), "save_model: write failed for " + path);
}

Seq2SeqModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  demand(is.good(), "load_model: cannot open " + path);
  demand(read_u32(is) == kMagic, "load_model: not a model checkpoint");
  demand(read_u32(is) == kVersion, "load_model: unsupported checkpoint version");
  LearnerConfig config;
  config.kind = learner_kind_from(read_str(is));
  config.layers = static_cast<int>(read_u32(is));
  config.hidden = static_cast<int>(read_u32(is));
  config.embedding = static_cast<int>(read_u32(is));
  config.heads = static_cast<int>(read_u32(is));
  config.kernel = static_cast<int>(read_u32(is));
  config.dropout = read_f64(is);
  tasks::Vocab in_vocab = read_vocab(is);
  tasks::Vocab out_vocab = read_vocab(is);
  Seq2SeqModel model = init_learner(config, in_vocab, out_vocab, /*seed=*/0);
  auto params = model.params();
  const std::uint64_t count = read_u64(is);
  demand(count == params.size(), "load_model: parameter count mismatch");
  for (Param* p : params) {
    const std::string name = read_str(is);
    demand(name == p->name, "load_model: parameter order mismatch at " + name);
    const auto rows = static_cast<Eigen::Index>(read_u64(is));
    const auto cols = static_cast<Eigen::Index>(read_u64(is));
    demand(rows == p->a.value.rows() && cols == p->a.value.cols(),
           "load_model: shape mismatch for " + name);
    is.read(reinterpret_cast<char*>(p->a.value.data()),
            static_cast<std::streamsize>(sizeof(double) * p->a.value.size()));
  }
  demand(is.good(), "load_model: truncated checkpoint " + path);
  return model;
}

}  // namespace seqbias::learners
