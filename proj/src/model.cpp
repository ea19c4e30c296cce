#include "callseq/model.hpp"

#include <cmath>

#include "callseq/errors.hpp"
#include "callseq/ops.hpp"

namespace callseq {

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("model: vocab_size must cover padding and OOV");
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw ConfigError("model: embedding width must be divisible by head count");
  }
  if (blocks < 1) throw ConfigError("model: at least one encoder block");
  if (classes < 2) throw ConfigError("model: at least two classes");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("model: dropout_rate must lie in [0, 1)");
  }
  if (l_max < 1) throw ConfigError("model: l_max must be >= 1");
  if (d_ff < 1) throw ConfigError("model: d_ff must be >= 1");
  if (nonseq_hidden1 < 1 || nonseq_hidden2 < 1) {
    throw ConfigError("model: tower hidden sizes must be >= 1");
  }
  if (!(ln_eps > 0.0)) throw ConfigError("model: ln_eps must be positive");
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  p.embedding = Matrix(config.vocab_size, config.d);
  p.positions = Matrix(config.l_max, config.d);
  p.block.resize(config.blocks);
  for (BlockParams& bp : p.block) {
    bp.wq = Matrix(config.d, config.d);
    bp.wk = Matrix(config.d, config.d);
    bp.wv = Matrix(config.d, config.d);
    bp.wo = Matrix(config.d, config.d);
    bp.w1 = Matrix(config.d, config.d_ff);
    bp.b1.assign(config.d_ff, 0.0);
    bp.w2 = Matrix(config.d_ff, config.d);
    bp.b2.assign(config.d, 0.0);
    bp.ln1_gain.assign(config.d, 0.0);
    bp.ln1_bias.assign(config.d, 0.0);
    bp.ln2_gain.assign(config.d, 0.0);
    bp.ln2_bias.assign(config.d, 0.0);
  }
  p.tower_w1 = Matrix(config.nonseq_input, config.nonseq_hidden1);
  p.tower_b1.assign(config.nonseq_hidden1, 0.0);
  p.tower_w2 = Matrix(config.nonseq_hidden1, config.nonseq_hidden2);
  p.tower_b2.assign(config.nonseq_hidden2, 0.0);
  p.w_out = Matrix(config.concat_dim(), config.classes);
  p.b_out.assign(config.classes, 0.0);
  return p;
}

ModelParams ModelParams::init(const ModelConfig& config, Rng& rng) {
  ModelParams p = zeros(config);
  p.embedding = xavier_uniform(config.vocab_size, config.d, rng);
  p.positions = xavier_uniform(config.l_max, config.d, rng);
  for (BlockParams& bp : p.block) {
    bp.wq = xavier_uniform(config.d, config.d, rng);
    bp.wk = xavier_uniform(config.d, config.d, rng);
    bp.wv = xavier_uniform(config.d, config.d, rng);
    bp.wo = xavier_uniform(config.d, config.d, rng);
    bp.w1 = xavier_uniform(config.d, config.d_ff, rng);
    bp.w2 = xavier_uniform(config.d_ff, config.d, rng);
    bp.ln1_gain.assign(config.d, 1.0);
    bp.ln2_gain.assign(config.d, 1.0);
  }
  if (config.nonseq_input > 0) {
    p.tower_w1 = xavier_uniform(config.nonseq_input, config.nonseq_hidden1, rng);
  }
  p.tower_w2 = xavier_uniform(config.nonseq_hidden1, config.nonseq_hidden2, rng);
  // w_out and b_out stay zero: the untrained model is exactly uniform.
  return p;
}

std::vector<ModelParams::TensorRef> ModelParams::tensor_refs() {
  std::vector<TensorRef> refs;
  auto mat = [&refs](const std::string& name, Matrix& m) {
    refs.push_back({name, m.data().data(), m.rows(), m.cols()});
  };
  auto vec = [&refs](const std::string& name, std::vector<double>& v) {
    refs.push_back({name, v.data(), 1, v.size()});
  };
  mat("embedding", embedding);
  mat("positions", positions);
  for (std::size_t b = 0; b < block.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b) + ".";
    mat(prefix + "wq", block[b].wq);
    mat(prefix + "wk", block[b].wk);
    mat(prefix + "wv", block[b].wv);
    mat(prefix + "wo", block[b].wo);
    mat(prefix + "w1", block[b].w1);
    vec(prefix + "b1", block[b].b1);
    mat(prefix + "w2", block[b].w2);
    vec(prefix + "b2", block[b].b2);
    vec(prefix + "ln1_gain", block[b].ln1_gain);
    vec(prefix + "ln1_bias", block[b].ln1_bias);
    vec(prefix + "ln2_gain", block[b].ln2_gain);
    vec(prefix + "ln2_bias", block[b].ln2_bias);
  }
  mat("tower.w1", tower_w1);
  vec("tower.b1", tower_b1);
  mat("tower.w2", tower_w2);
  vec("tower.b2", tower_b2);
  mat("out.w", w_out);
  vec("out.b", b_out);
  return refs;
}

void ModelParams::fill(double value) {
  for (TensorRef& ref : tensor_refs()) {
    for (std::size_t i = 0; i < ref.size(); ++i) ref.data[i] = value;
  }
}

Matrix embed(const Sample& sample, const ModelParams& params) {
  const ModelConfig& c = params.config;
  if (sample.token_ids.size() != c.l_max || sample.mask.size() != c.l_max ||
      sample.position_ids.size() != c.l_max) {
    throw ShapeError("embed: sample length does not match l_max");
  }
  Matrix x(c.l_max, c.d);
  for (std::size_t i = 0; i < c.l_max; ++i) {
    if (!sample.mask[i]) continue;
    const std::uint32_t id = sample.token_ids[i];
    const std::uint32_t pos = sample.position_ids[i];
    if (id >= c.vocab_size) throw ConfigError("embed: token id out of vocabulary range");
    if (pos >= c.l_max) throw ConfigError("embed: position id out of range");
    const double* e = params.embedding.row(id);
    const double* p = params.positions.row(pos);
    double* out = x.row(i);
    for (std::size_t j = 0; j < c.d; ++j) out[j] = e[j] + p[j];
  }
  return x;
}

AttentionResult scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                     std::span<const std::uint8_t> mask) {
  const std::size_t l = q.rows();
  const std::size_t dh = q.cols();
  if (!k.same_shape(q) || !v.same_shape(q) || mask.size() != l) {
    throw ShapeError("attention: Q/K/V/mask shapes disagree");
  }
  std::size_t real_keys = 0;
  for (std::uint8_t m : mask) real_keys += m;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  AttentionResult res{Matrix(l, dh), Matrix(l, l)};
  std::vector<double> scores(l);
  for (std::size_t i = 0; i < l; ++i) {
    if (!mask[i]) continue;  // masked queries give zero rows
    if (real_keys == 0) throw NumericError("attention: real query with every key masked");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < l; ++j) {
      if (!mask[j]) continue;
      double s = 0.0;
      const double* qi = q.row(i);
      const double* kj = k.row(j);
      for (std::size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
      scores[j] = s * scale;
      if (scores[j] > mx) mx = scores[j];
    }
    double z = 0.0;
    for (std::size_t j = 0; j < l; ++j) {
      if (!mask[j]) continue;
      scores[j] = std::exp(scores[j] - mx);
      z += scores[j];
    }
    double* a = res.weights.row(i);
    for (std::size_t j = 0; j < l; ++j) {
      if (mask[j]) a[j] = scores[j] / z;
    }
    double* out = res.output.row(i);
    for (std::size_t j = 0; j < l; ++j) {
      if (!mask[j]) continue;
      const double* vj = v.row(j);
      for (std::size_t t = 0; t < dh; ++t) out[t] += a[j] * vj[t];
    }
  }
  return res;
}

namespace {

Matrix slice_cols(const Matrix& m, std::size_t begin, std::size_t width) {
  Matrix out(m.rows(), width);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double* src = m.row(i);
    double* dst = out.row(i);
    for (std::size_t j = 0; j < width; ++j) dst[j] = src[begin + j];
  }
  return out;
}

void paste_cols(Matrix& m, const Matrix& part, std::size_t begin) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double* src = part.row(i);
    double* dst = m.row(i);
    for (std::size_t j = 0; j < part.cols(); ++j) dst[begin + j] = src[j];
  }
}

void add_bias_rows(Matrix& m, const std::vector<double>& bias) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double* row = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) row[j] += bias[j];
  }
}

Matrix dropout_multipliers(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
  Matrix m(rows, cols);
  const double keep = 1.0 - rate;
  const double scale = 1.0 / keep;
  for (double& v : m.data()) v = rng.next_unit() < keep ? scale : 0.0;
  return m;
}

void multiply_elementwise(Matrix& m, const Matrix& mult) {
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] *= mult.data()[i];
}

// Row-wise layer norm over real rows; padding rows of out/xhat stay zero.
void layer_norm_rows(const Matrix& in, const std::vector<double>& gain,
                     const std::vector<double>& bias, double eps,
                     std::span<const std::uint8_t> mask, Matrix& out, Matrix& xhat,
                     std::vector<double>& inv) {
  const std::size_t d = in.cols();
  out = Matrix(in.rows(), d);
  xhat = Matrix(in.rows(), d);
  inv.assign(in.rows(), 0.0);
  for (std::size_t i = 0; i < in.rows(); ++i) {
    if (!mask[i]) continue;
    const double* x = in.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(d);
    const double r = 1.0 / std::sqrt(var + eps);
    inv[i] = r;
    double* xh = xhat.row(i);
    double* o = out.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (x[j] - mean) * r;
      o[j] = gain[j] * xh[j] + bias[j];
    }
  }
}

// dL/dx for one layer-norm row given dL/dout, using the stored xhat and inv.
void layer_norm_backward_row(const double* dout, const double* xh, double inv,
                             const std::vector<double>& gain, std::size_t d, double* dx,
                             double* dgain, double* dbias) {
  double m1 = 0.0;
  double m2 = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    dgain[j] += dout[j] * xh[j];
    dbias[j] += dout[j];
    const double dxh = dout[j] * gain[j];
    m1 += dxh;
    m2 += dxh * xh[j];
  }
  m1 /= static_cast<double>(d);
  m2 /= static_cast<double>(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double dxh = dout[j] * gain[j];
    dx[j] = inv * (dxh - m1 - xh[j] * m2);
  }
}

void zero_padding_rows(Matrix& m, std::span<const std::uint8_t> mask) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (mask[i]) continue;
    double* row = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) row[j] = 0.0;
  }
}

}  // namespace

Matrix multi_head(const Matrix& input, const BlockParams& bp, std::size_t heads,
                  std::span<const std::uint8_t> mask, MultiHeadTrace* trace) {
  const std::size_t d = input.cols();
  if (d % heads != 0) throw ShapeError("multi_head: width not divisible by head count");
  const std::size_t dh = d / heads;
  Matrix q = matmul(input, bp.wq);
  Matrix k = matmul(input, bp.wk);
  Matrix v = matmul(input, bp.wv);
  Matrix head_concat(input.rows(), d);
  std::vector<Matrix> attn;
  attn.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    AttentionResult res = scaled_dot_attention(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh),
                                               slice_cols(v, h * dh, dh), mask);
    paste_cols(head_concat, res.output, h * dh);
    attn.push_back(std::move(res.weights));
  }
  Matrix out = matmul(head_concat, bp.wo);
  if (trace != nullptr) {
    trace->q = std::move(q);
    trace->k = std::move(k);
    trace->v = std::move(v);
    trace->attn = std::move(attn);
    trace->head_concat = std::move(head_concat);
  }
  return out;
}

Matrix ffn(const Matrix& x, const Matrix& w1, const std::vector<double>& b1, const Matrix& w2,
           const std::vector<double>& b2, Matrix* pre, Matrix* act) {
  Matrix g = matmul(x, w1);
  add_bias_rows(g, b1);
  Matrix h = g;
  for (double& v : h.data()) v = selu(v);
  Matrix out = matmul(h, w2);
  add_bias_rows(out, b2);
  if (pre != nullptr) *pre = std::move(g);
  if (act != nullptr) *act = std::move(h);
  return out;
}

Matrix encoder_block(const Matrix& input, const BlockParams& bp, const ModelConfig& config,
                     std::span<const std::uint8_t> mask, RunMode mode, Rng* rng,
                     BlockTrace* trace) {
  const bool dropping = mode == RunMode::kTrain && config.dropout_rate > 0.0;
  if (dropping && rng == nullptr) {
    throw ConfigError("encoder_block: training with dropout needs an rng");
  }
  MultiHeadTrace mt;
  Matrix m = multi_head(input, bp, config.heads, mask, trace != nullptr ? &mt : nullptr);
  Matrix drop1;
  if (dropping) {
    drop1 = dropout_multipliers(m.rows(), m.cols(), config.dropout_rate, *rng);
    multiply_elementwise(m, drop1);
  }
  Matrix r1 = input;
  add_inplace(r1, m);
  Matrix sub1, ln1_xhat;
  std::vector<double> ln1_inv;
  layer_norm_rows(r1, bp.ln1_gain, bp.ln1_bias, config.ln_eps, mask, sub1, ln1_xhat, ln1_inv);

  Matrix ffn_pre, ffn_act;
  Matrix f = ffn(sub1, bp.w1, bp.b1, bp.w2, bp.b2, trace != nullptr ? &ffn_pre : nullptr,
                 trace != nullptr ? &ffn_act : nullptr);
  Matrix drop2;
  if (dropping) {
    drop2 = dropout_multipliers(f.rows(), f.cols(), config.dropout_rate, *rng);
    multiply_elementwise(f, drop2);
  }
  Matrix r2 = sub1;
  add_inplace(r2, f);
  Matrix out, ln2_xhat;
  std::vector<double> ln2_inv;
  layer_norm_rows(r2, bp.ln2_gain, bp.ln2_bias, config.ln_eps, mask, out, ln2_xhat, ln2_inv);

  if (trace != nullptr) {
    trace->input = input;
    trace->q = std::move(mt.q);
    trace->k = std::move(mt.k);
    trace->v = std::move(mt.v);
    trace->attn = std::move(mt.attn);
    trace->head_concat = std::move(mt.head_concat);
    trace->drop1 = std::move(drop1);
    trace->ln1_xhat = std::move(ln1_xhat);
    trace->ln1_inv = std::move(ln1_inv);
    trace->sub1 = sub1;
    trace->ffn_pre = std::move(ffn_pre);
    trace->ffn_act = std::move(ffn_act);
    trace->drop2 = std::move(drop2);
    trace->ln2_xhat = std::move(ln2_xhat);
    trace->ln2_inv = std::move(ln2_inv);
    trace->output = out;
  }
  return out;
}

std::vector<double> nonseq_tower(std::span<const double> x, const ModelParams& params,
                                 TowerTrace* trace) {
  const ModelConfig& c = params.config;
  if (x.size() != c.nonseq_input) {
    throw ShapeError("nonseq_tower: input length does not match the configured width");
  }
  std::vector<double> pre1(c.nonseq_hidden1, 0.0);
  for (std::size_t j = 0; j < c.nonseq_hidden1; ++j) {
    double s = params.tower_b1[j];
    for (std::size_t i = 0; i < c.nonseq_input; ++i) s += x[i] * params.tower_w1(i, j);
    pre1[j] = s;
  }
  std::vector<double> act1(c.nonseq_hidden1);
  for (std::size_t j = 0; j < c.nonseq_hidden1; ++j) act1[j] = selu(pre1[j]);
  std::vector<double> pre2(c.nonseq_hidden2, 0.0);
  for (std::size_t j = 0; j < c.nonseq_hidden2; ++j) {
    double s = params.tower_b2[j];
    for (std::size_t i = 0; i < c.nonseq_hidden1; ++i) s += act1[i] * params.tower_w2(i, j);
    pre2[j] = s;
  }
  std::vector<double> act2(c.nonseq_hidden2);
  for (std::size_t j = 0; j < c.nonseq_hidden2; ++j) act2[j] = selu(pre2[j]);
  if (trace != nullptr) {
    trace->pre1 = std::move(pre1);
    trace->act1 = act1;
    trace->pre2 = std::move(pre2);
    trace->act2 = act2;
  }
  return act2;
}

ForwardResult forward(const Sample& sample, const ModelParams& params, RunMode mode, Rng* rng,
                      ForwardTrace* trace) {
  const ModelConfig& c = params.config;
  if (sample.nonseq.size() != c.nonseq_input) {
    throw ShapeError("forward: nonsequential width does not match the model");
  }
  std::span<const std::uint8_t> mask(sample.mask.data(), sample.mask.size());
  std::vector<double> pooled;
  if (c.sequence_branch) {
    Matrix x = embed(sample, params);
    if (trace != nullptr) {
      trace->x0 = x;
      trace->blocks.resize(c.blocks);
    }
    for (std::size_t b = 0; b < c.blocks; ++b) {
      x = encoder_block(x, params.block[b], c, mask, mode, rng,
                        trace != nullptr ? &trace->blocks[b] : nullptr);
    }
    std::size_t n_real = 0;
    for (std::uint8_t m : sample.mask) n_real += m;
    if (n_real == 0) throw ConfigError("forward: sample has no real tokens");
    pooled.assign(c.d, 0.0);
    for (std::size_t i = 0; i < c.l_max; ++i) {
      if (!sample.mask[i]) continue;
      const double* row = x.row(i);
      for (std::size_t j = 0; j < c.d; ++j) pooled[j] += row[j];
    }
    for (double& v : pooled) v /= static_cast<double>(n_real);
  }

  TowerTrace tower;
  std::vector<double> tower_out = nonseq_tower(sample.nonseq, params, &tower);

  std::vector<double> concat;
  concat.reserve(c.concat_dim());
  concat.insert(concat.end(), pooled.begin(), pooled.end());
  concat.insert(concat.end(), tower_out.begin(), tower_out.end());

  ForwardResult res;
  res.logits.assign(c.classes, 0.0);
  for (std::size_t l = 0; l < c.classes; ++l) {
    double s = params.b_out[l];
    for (std::size_t j = 0; j < concat.size(); ++j) s += concat[j] * params.w_out(j, l);
    res.logits[l] = s;
  }
  res.probs = res.logits;
  softmax_row_inplace(res.probs);

  if (trace != nullptr) {
    trace->pooled = std::move(pooled);
    trace->tower_pre1 = std::move(tower.pre1);
    trace->tower_act1 = std::move(tower.act1);
    trace->tower_pre2 = std::move(tower.pre2);
    trace->tower_act2 = std::move(tower.act2);
    trace->concat = std::move(concat);
    trace->logits = res.logits;
    trace->probs = res.probs;
  }
  return res;
}

void backward(const Sample& sample, const ModelParams& params, const ForwardTrace& trace,
              int label, ModelParams& grads) {
  const ModelConfig& c = params.config;
  if (label < 0 || static_cast<std::size_t>(label) >= c.classes) {
    throw ConfigError("backward: label out of range");
  }
  std::span<const std::uint8_t> mask(sample.mask.data(), sample.mask.size());

  // Output layer: d(-log p[label])/dlogits = probs - onehot.
  std::vector<double> dlogits = trace.probs;
  dlogits[static_cast<std::size_t>(label)] -= 1.0;
  const std::vector<double>& concat = trace.concat;
  for (std::size_t l = 0; l < c.classes; ++l) {
    grads.b_out[l] += dlogits[l];
    for (std::size_t j = 0; j < concat.size(); ++j) {
      grads.w_out(j, l) += concat[j] * dlogits[l];
    }
  }
  std::vector<double> dconcat(concat.size(), 0.0);
  for (std::size_t j = 0; j < concat.size(); ++j) {
    double s = 0.0;
    for (std::size_t l = 0; l < c.classes; ++l) s += params.w_out(j, l) * dlogits[l];
    dconcat[j] = s;
  }
  const std::size_t seq_dim = c.sequence_branch ? c.d : 0;

  // Nonsequential tower.
  {
    std::vector<double> dpre2(c.nonseq_hidden2);
    for (std::size_t j = 0; j < c.nonseq_hidden2; ++j) {
      dpre2[j] = dconcat[seq_dim + j] * selu_prime(trace.tower_pre2[j]);
      grads.tower_b2[j] += dpre2[j];
    }
    std::vector<double> dact1(c.nonseq_hidden1, 0.0);
    for (std::size_t i = 0; i < c.nonseq_hidden1; ++i) {
      for (std::size_t j = 0; j < c.nonseq_hidden2; ++j) {
        grads.tower_w2(i, j) += trace.tower_act1[i] * dpre2[j];
        dact1[i] += params.tower_w2(i, j) * dpre2[j];
      }
    }
    for (std::size_t i = 0; i < c.nonseq_hidden1; ++i) {
      const double dpre1 = dact1[i] * selu_prime(trace.tower_pre1[i]);
      grads.tower_b1[i] += dpre1;
      for (std::size_t j = 0; j < c.nonseq_input; ++j) {
        grads.tower_w1(j, i) += sample.nonseq[j] * dpre1;
      }
    }
  }

  if (!c.sequence_branch) return;

  // Mean pool spreads its gradient evenly over real rows.
  std::size_t n_real = 0;
  for (std::uint8_t m : sample.mask) n_real += m;
  Matrix dx(c.l_max, c.d);
  for (std::size_t i = 0; i < c.l_max; ++i) {
    if (!sample.mask[i]) continue;
    double* row = dx.row(i);
    for (std::size_t j = 0; j < c.d; ++j) {
      row[j] = dconcat[j] / static_cast<double>(n_real);
    }
  }

  const std::size_t dh = c.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t b = c.blocks; b-- > 0;) {
    const BlockTrace& bt = trace.blocks[b];
    const BlockParams& bp = params.block[b];
    BlockParams& gb = grads.block[b];

    // FFN sublayer: out = LN2(sub1 + drop2 * ffn(sub1)).
    Matrix dr2(c.l_max, c.d);
    for (std::size_t i = 0; i < c.l_max; ++i) {
      if (!sample.mask[i]) continue;
      layer_norm_backward_row(dx.row(i), bt.ln2_xhat.row(i), bt.ln2_inv[i], bp.ln2_gain, c.d,
                              dr2.row(i), gb.ln2_gain.data(), gb.ln2_bias.data());
    }
    Matrix dsub1 = dr2;  // residual branch
    Matrix df = dr2;
    if (!bt.drop2.empty()) multiply_elementwise(df, bt.drop2);
    zero_padding_rows(df, mask);
    {
      Matrix dact = matmul_nt(df, bp.w2);  // l x d_ff
      Matrix dw2 = matmul_tn(bt.ffn_act, df);
      add_inplace(gb.w2, dw2);
      for (std::size_t i = 0; i < c.l_max; ++i) {
        const double* dfr = df.row(i);
        for (std::size_t j = 0; j < c.d; ++j) gb.b2[j] += dfr[j];
      }
      Matrix dg = dact;
      for (std::size_t i = 0; i < dg.size(); ++i) {
        dg.data()[i] *= selu_prime(bt.ffn_pre.data()[i]);
      }
      Matrix dw1 = matmul_tn(bt.sub1, dg);
      add_inplace(gb.w1, dw1);
      for (std::size_t i = 0; i < c.l_max; ++i) {
        const double* dgr = dg.row(i);
        for (std::size_t j = 0; j < c.d_ff; ++j) gb.b1[j] += dgr[j];
      }
      Matrix ds_from_ffn = matmul_nt(dg, bp.w1);
      add_inplace(dsub1, ds_from_ffn);
    }

    // Attention sublayer: sub1 = LN1(input + drop1 * multi_head(input)).
    Matrix dr1(c.l_max, c.d);
    for (std::size_t i = 0; i < c.l_max; ++i) {
      if (!sample.mask[i]) continue;
      layer_norm_backward_row(dsub1.row(i), bt.ln1_xhat.row(i), bt.ln1_inv[i], bp.ln1_gain, c.d,
                              dr1.row(i), gb.ln1_gain.data(), gb.ln1_bias.data());
    }
    Matrix dinput = dr1;  // residual branch
    Matrix dm = dr1;
    if (!bt.drop1.empty()) multiply_elementwise(dm, bt.drop1);
    zero_padding_rows(dm, mask);

    Matrix dhead = matmul_nt(dm, bp.wo);
    {
      Matrix dwo = matmul_tn(bt.head_concat, dm);
      add_inplace(gb.wo, dwo);
    }
    Matrix dq(c.l_max, c.d), dk(c.l_max, c.d), dv(c.l_max, c.d);
    for (std::size_t h = 0; h < c.heads; ++h) {
      Matrix doh = slice_cols(dhead, h * dh, dh);
      Matrix vh = slice_cols(bt.v, h * dh, dh);
      Matrix qh = slice_cols(bt.q, h * dh, dh);
      Matrix kh = slice_cols(bt.k, h * dh, dh);
      const Matrix& a = bt.attn[h];
      Matrix da = matmul_nt(doh, vh);
      Matrix dvh = matmul_tn(a, doh);
      // Softmax backward per real row; padding rows of A are zero already.
      Matrix ds(c.l_max, c.l_max);
      for (std::size_t i = 0; i < c.l_max; ++i) {
        if (!sample.mask[i]) continue;
        const double* ar = a.row(i);
        const double* dar = da.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < c.l_max; ++j) dot += ar[j] * dar[j];
        double* dsr = ds.row(i);
        for (std::size_t j = 0; j < c.l_max; ++j) dsr[j] = ar[j] * (dar[j] - dot);
      }
      Matrix dqh = matmul(ds, kh);
      scale_inplace(dqh, scale);
      Matrix dkh = matmul_tn(ds, qh);
      scale_inplace(dkh, scale);
      paste_cols(dq, dqh, h * dh);
      paste_cols(dk, dkh, h * dh);
      paste_cols(dv, dvh, h * dh);
    }
    {
      Matrix dwq = matmul_tn(bt.input, dq);
      add_inplace(gb.wq, dwq);
      Matrix dwk = matmul_tn(bt.input, dk);
      add_inplace(gb.wk, dwk);
      Matrix dwv = matmul_tn(bt.input, dv);
      add_inplace(gb.wv, dwv);
      Matrix dq_in = matmul_nt(dq, bp.wq);
      add_inplace(dinput, dq_in);
      Matrix dk_in = matmul_nt(dk, bp.wk);
      add_inplace(dinput, dk_in);
      Matrix dv_in = matmul_nt(dv, bp.wv);
      add_inplace(dinput, dv_in);
    }
    zero_padding_rows(dinput, mask);
    dx = std::move(dinput);
  }

  // Embedding tables.
  for (std::size_t i = 0; i < c.l_max; ++i) {
    if (!sample.mask[i]) continue;
    const double* row = dx.row(i);
    double* de = grads.embedding.row(sample.token_ids[i]);
    double* dp = grads.positions.row(sample.position_ids[i]);
    for (std::size_t j = 0; j < c.d; ++j) {
      de[j] += row[j];
      dp[j] += row[j];
    }
  }
}

AttentionMap export_attention(const Sample& sample, const ModelParams& params,
                              const Vocabulary& vocab) {
  std::vector<std::size_t> real;
  for (std::size_t i = 0; i < sample.mask.size(); ++i) {
    if (sample.mask[i]) real.push_back(i);
  }
  if (real.empty()) throw ConfigError("export_attention: sample has no real tokens");
  if (!params.config.sequence_branch) {
    throw ConfigError("export_attention: model has no sequence branch");
  }
  ForwardTrace trace;
  forward(sample, params, RunMode::kEval, nullptr, &trace);
  const BlockTrace& last = trace.blocks.back();
  AttentionMap map;
  for (const Matrix& a : last.attn) {
    Matrix sliced(real.size(), real.size());
    for (std::size_t i = 0; i < real.size(); ++i) {
      for (std::size_t j = 0; j < real.size(); ++j) {
        sliced(i, j) = a(real[i], real[j]);
      }
    }
    map.heads.push_back(std::move(sliced));
  }
  for (std::size_t i : real) {
    map.labels.push_back(vocab.token_of(sample.token_ids[i]));
  }
  return map;
}

}  // namespace callseq
