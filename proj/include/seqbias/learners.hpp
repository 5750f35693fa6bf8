#pragma once

#include <memory>
#include <string>
#include <vector>

#include "seqbias/layers.hpp"
#include "seqbias/tasks.hpp"

namespace seqbias::learners {

using layers::AdditiveAttentionParams;
using layers::ConvBlockParams;
using layers::EmbeddingTable;
using layers::FeedForwardParams;
using layers::LayerNormParams;
using layers::LearnedPositions;
using layers::LstmCellParams;
using layers::MultiHeadAttentionParams;
using tensor::Graph;
using tensor::Param;

enum class LearnerKind {
  kLstmNoAttention,
  kLstmAttention,
  kCnn,
  kTransformer,
  kJointSourceTarget,
};

LearnerKind learner_kind_from(const std::string& name);
std::string to_string(LearnerKind kind);

// Defaults follow the reference setup: single layer, hidden size 512,
// embeddings of dimension 16, 8 attention heads, kernel width 3, dropout 0.5.
// `hidden` is the LSTM state size, the CNN filter count, or the transformer
// feed-forward inner dimension depending on the learner.
struct LearnerConfig {
  LearnerKind kind = LearnerKind::kLstmNoAttention;
  int layers = 1;
  int hidden = 512;
  int embedding = 16;
  int heads = 8;
  int kernel = 3;
  double dropout = 0.5;

  void validate() const;
  std::string describe() const;
};

// Learned positional tables cover every task length we generate with margin.
inline constexpr int kMaxPositions = 256;

struct Seq2SeqModel {
  LearnerConfig config;
  tasks::Vocab input_vocab;
  tasks::Vocab output_vocab;

  EmbeddingTable in_embed;
  EmbeddingTable out_embed;  // one extra row embeds the beginning-of-sequence marker

  // lstm
  std::vector<LstmCellParams> enc_cells;
  std::vector<LstmCellParams> dec_cells;
  AdditiveAttentionParams attention;

  // cnn
  LearnedPositions in_positions;
  LearnedPositions out_positions;
  Param enc_fc1_w, enc_fc1_b, enc_fc2_w, enc_fc2_b;
  std::vector<ConvBlockParams> enc_convs;
  Param dec_fc1_w, dec_fc1_b, dec_fc2_w, dec_fc2_b;
  std::vector<ConvBlockParams> dec_convs;
  Param attn_q_w, attn_q_b, attn_out_w, attn_out_b;

  // transformer / joint stack
  struct TransformerLayer {
    MultiHeadAttentionParams self_attn;
    LayerNormParams ln_self;
    MultiHeadAttentionParams cross_attn;
    LayerNormParams ln_cross;
    FeedForwardParams ffn;
    LayerNormParams ln_ffn;
  };
  std::vector<TransformerLayer> enc_layers;
  std::vector<TransformerLayer> dec_layers;   // also the joint learner's stack

  Param out_proj_w, out_proj_b;

  int bos_id() const { return output_vocab.size(); }
  std::vector<Param*> params();
  std::size_t parameter_count();
};

// Builds a model with seed-determined parameters; identical (config, vocabs,
// seed) triples produce bit-identical parameter arrays.
Seq2SeqModel init_learner(const LearnerConfig& config, const tasks::Vocab& input_vocab,
                          const tasks::Vocab& output_vocab, std::uint64_t seed);

// Teacher-forced forward computation for one (x, y) pair. `log_probs` holds
// per-position log-probability rows [|y| x V]; `nll` is their negated sum
// picked at the gold tokens (the training loss term for this example).
struct ForwardNodes {
  int log_probs = -1;
  int nll = -1;
};
ForwardNodes build_teacher_forced(Seq2SeqModel& model, Graph& g,
                                  const std::vector<int>& x, const std::vector<int>& y,
                                  bool train);

// Per-token natural-log probabilities of y given x, conditioning position t
// on x and the gold prefix y_<t. Dropout disabled.
std::vector<double> teacher_forced_logprobs(Seq2SeqModel& model, const std::vector<int>& x,
                                            const std::vector<int>& y);

struct DecodeResult {
  std::vector<int> tokens;  // includes the end-of-sequence token when emitted
  bool truncated = false;   // hit max_len before end-of-sequence
};

// Greedy argmax decoding with dropout disabled; deterministic in (model, x).
DecodeResult greedy_decode(Seq2SeqModel& model, const std::vector<int>& x, int max_len);

// Versioned binary checkpoint (config + vocabularies + named parameters).
void save_model(const Seq2SeqModel& model, const std::string& path);
Seq2SeqModel load_model(const std::string& path);

}  // namespace seqbias::learners
