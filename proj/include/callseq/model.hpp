#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "callseq/matrix.hpp"
#include "callseq/rng.hpp"
#include "callseq/sample.hpp"
#include "callseq/vocab.hpp"

namespace callseq {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d = 128;       // embedding width
  std::size_t heads = 8;
  std::size_t blocks = 1;
  std::size_t d_ff = 512;
  std::size_t l_max = 24;
  std::size_t classes = 24;
  double dropout_rate = 0.1;
  std::size_t nonseq_input = 0;
  std::size_t nonseq_hidden1 = 64;
  std::size_t nonseq_hidden2 = 32;
  double ln_eps = 1e-5;
  bool sequence_branch = true;  // false = nonsequential-only baseline

  std::size_t head_dim() const { return d / heads; }
  std::size_t concat_dim() const { return (sequence_branch ? d : 0) + nonseq_hidden2; }
  void validate() const;  // d % heads == 0, blocks >= 1, classes >= 2, dropout in [0,1)
};

struct BlockParams {
  Matrix wq, wk, wv, wo;  // d x d; wq/wk/wv hold h head projections side by side
  Matrix w1;              // d x d_ff
  std::vector<double> b1; // d_ff
  Matrix w2;              // d_ff x d
  std::vector<double> b2; // d
  std::vector<double> ln1_gain, ln1_bias;  // d, after the attention sublayer
  std::vector<double> ln2_gain, ln2_bias;  // d, after the FFN sublayer
};

// Parameter container; also reused shape-for-shape as a gradient or optimizer
// state accumulator. tensor_refs() fixes a stable enumeration order that the
// optimizer, checkpoints, and the finite-difference harness all share.
struct ModelParams {
  ModelConfig config;
  Matrix embedding;  // V x d
  Matrix positions;  // l_max x d
  std::vector<BlockParams> block;
  Matrix tower_w1;               // nonseq_input x hidden1
  std::vector<double> tower_b1;  // hidden1
  Matrix tower_w2;               // hidden1 x hidden2
  std::vector<double> tower_b2;  // hidden2
  Matrix w_out;                  // concat_dim x classes
  std::vector<double> b_out;     // classes

  // All-zero tensors of the right shapes.
  static ModelParams zeros(const ModelConfig& config);
  // Xavier-uniform weights, zero biases, unit layer-norm gains. The output
  // layer starts at zero so an untrained model scores ln(classes) loss.
  static ModelParams init(const ModelConfig& config, Rng& rng);

  struct TensorRef {
    std::string name;
    double* data;
    std::size_t rows, cols;
    std::size_t size() const { return rows * cols; }
  };
  std::vector<TensorRef> tensor_refs();

  void fill(double value);
};

enum class RunMode { kTrain, kEval };

struct BlockTrace {
  Matrix input;             // l_max x d
  Matrix q, k, v;           // l_max x d
  std::vector<Matrix> attn; // heads matrices, l_max x l_max, padding rows zero
  Matrix head_concat;       // l_max x d, per-head outputs side by side
  Matrix drop1;             // dropout multipliers; empty = identity
  Matrix ln1_xhat;          // normalized pre-gain rows
  std::vector<double> ln1_inv;  // 1/sqrt(var+eps) per row
  Matrix sub1;              // attention sublayer output S
  Matrix ffn_pre;           // l_max x d_ff, before SELU
  Matrix ffn_act;           // l_max x d_ff, after SELU
  Matrix drop2;
  Matrix ln2_xhat;
  std::vector<double> ln2_inv;
  Matrix output;            // l_max x d
};

struct ForwardTrace {
  Matrix x0;  // embedding + position rows, padding rows zero
  std::vector<BlockTrace> blocks;
  std::vector<double> pooled;
  std::vector<double> tower_pre1, tower_act1, tower_pre2, tower_act2;
  std::vector<double> concat;
  std::vector<double> logits, probs;
};

struct ForwardResult {
  std::vector<double> logits;
  std::vector<double> probs;
};

// Token + position embedding; padding rows are zero regardless of the ids
// stored at padded slots. Out-of-range ids on real positions are fatal.
Matrix embed(const Sample& sample, const ModelParams& params);

// A = softmax(Q Kt / sqrt(d_h)) with masked key columns at -inf; masked query
// rows give zero attention and zero output. Returns (A V, A).
struct AttentionResult {
  Matrix output;
  Matrix weights;
};
AttentionResult scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                     std::span<const std::uint8_t> mask);

struct MultiHeadTrace {
  Matrix q, k, v;
  std::vector<Matrix> attn;
  Matrix head_concat;
};
// Per head i over column block i: O_i = attention(I Wq_i, I Wk_i, I Wv_i);
// result = concat(O_1..O_h) Wo.
Matrix multi_head(const Matrix& input, const BlockParams& bp, std::size_t heads,
                  std::span<const std::uint8_t> mask, MultiHeadTrace* trace = nullptr);

// Position-wise selu(x W1 + b1) W2 + b2 over every row.
Matrix ffn(const Matrix& x, const Matrix& w1, const std::vector<double>& b1, const Matrix& w2,
           const std::vector<double>& b2, Matrix* pre = nullptr, Matrix* act = nullptr);

// One encoder layer: LayerNorm(I + Dropout(MultiHead(I))), then
// LayerNorm(S + Dropout(FFN(S))). Padding rows stay zero throughout.
Matrix encoder_block(const Matrix& input, const BlockParams& bp, const ModelConfig& config,
                     std::span<const std::uint8_t> mask, RunMode mode, Rng* rng,
                     BlockTrace* trace = nullptr);

struct TowerTrace {
  std::vector<double> pre1, act1, pre2, act2;
};
// Two affine layers with SELU after each.
std::vector<double> nonseq_tower(std::span<const double> x, const ModelParams& params,
                                 TowerTrace* trace = nullptr);

// Full network: encoder stack, masked mean-pool, tower, concat, output
// softmax. rng is consulted only when mode is kTrain and dropout_rate > 0.
ForwardResult forward(const Sample& sample, const ModelParams& params, RunMode mode,
                      Rng* rng = nullptr, ForwardTrace* trace = nullptr);

// Accumulates d(-log probs[label])/d(theta) for one sample into grads, which
// must be zeros_like(params) shaped. No batch scaling is applied here.
void backward(const Sample& sample, const ModelParams& params, const ForwardTrace& trace,
              int label, ModelParams& grads);

struct AttentionMap {
  std::vector<Matrix> heads;        // len x len, real positions only
  std::vector<std::string> labels;  // behavior tokens in timeline order
};
// Last block's attention restricted to real positions, eval mode.
AttentionMap export_attention(const Sample& sample, const ModelParams& params,
                              const Vocabulary& vocab);

}  // namespace callseq
