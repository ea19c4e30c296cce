#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "callseq/checkpoint.hpp"
#include "callseq/errors.hpp"
#include "callseq/grad_check.hpp"
#include "callseq/model.hpp"
#include "callseq/ops.hpp"
#include "callseq/rng.hpp"
#include "reference_forward.hpp"

using namespace callseq;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 12;
  c.d = 8;
  c.heads = 2;
  c.blocks = 1;
  c.d_ff = 16;
  c.l_max = 6;
  c.classes = 4;
  c.dropout_rate = 0.0;
  c.nonseq_input = 3;
  c.nonseq_hidden1 = 4;
  c.nonseq_hidden2 = 3;
  return c;
}

Sample make_sample(const std::vector<std::uint32_t>& ids, std::size_t l_max,
                   std::vector<double> nonseq) {
  Sample s;
  s.customer_id = "T";
  s.token_ids.assign(l_max, 0);
  s.position_ids.assign(l_max, 0);
  s.mask.assign(l_max, 0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    s.token_ids[i] = ids[i];
    s.position_ids[i] = static_cast<std::uint32_t>(i);
    s.mask[i] = 1;
  }
  s.nonseq = std::move(nonseq);
  return s;
}

ModelParams random_params(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  ModelParams p = ModelParams::init(config, rng);
  // The default output layer is zero; give it mass so logits respond to input.
  p.w_out = xavier_uniform(config.concat_dim(), config.classes, rng);
  for (double& v : p.b_out) v = rng.next_range(-0.1, 0.1);
  return p;
}

Sample random_sample(const ModelConfig& config, Rng& rng, std::size_t len = 0) {
  if (len == 0) len = 1 + rng.next_index(config.l_max);
  std::vector<std::uint32_t> ids(len);
  for (auto& id : ids) id = 2 + static_cast<std::uint32_t>(rng.next_index(config.vocab_size - 2));
  std::vector<double> nonseq(config.nonseq_input);
  for (double& v : nonseq) v = rng.next_range(-1.0, 1.0);
  return make_sample(ids, config.l_max, std::move(nonseq));
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST_CASE("embed: all-padding sample gives a zero matrix") {
  ModelConfig c = small_config();
  ModelParams p = random_params(c, 1);
  Sample s = make_sample({}, c.l_max, std::vector<double>(c.nonseq_input, 0.0));
  Matrix x = embed(s, p);
  for (double v : x.data()) CHECK(v == 0.0);
}

TEST_CASE("embed: rows are token plus position embeddings") {
  ModelConfig c = small_config();
  ModelParams p = random_params(c, 2);
  Sample s = make_sample({5, 5}, c.l_max, std::vector<double>(c.nonseq_input, 0.0));
  Matrix x = embed(s, p);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < c.d; ++j) {
      CHECK(x(i, j) == p.embedding(5, j) + p.positions(i, j));
    }
  }
  // With positions frozen to zero the row is the token embedding bitwise.
  p.positions = Matrix(c.l_max, c.d);
  Matrix x2 = embed(s, p);
  for (std::size_t j = 0; j < c.d; ++j) CHECK(x2(0, j) == p.embedding(5, j));
}

TEST_CASE("embed: out-of-range ids are fatal") {
  ModelConfig c = small_config();
  ModelParams p = random_params(c, 3);
  Sample s = make_sample({static_cast<std::uint32_t>(c.vocab_size + 1)}, c.l_max,
                         std::vector<double>(c.nonseq_input, 0.0));
  CHECK_THROWS_AS(embed(s, p), ConfigError);
}

TEST_CASE("attention: zero queries average the unmasked values") {
  Matrix q(3, 2);
  Rng rng(4);
  Matrix k(3, 2), v(3, 2);
  for (double& x : k.data()) x = rng.next_range(-1.0, 1.0);
  for (double& x : v.data()) x = rng.next_range(-1.0, 1.0);
  std::vector<std::uint8_t> mask{1, 1, 0};
  AttentionResult res = scaled_dot_attention(q, k, v, mask);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::abs(res.weights(i, 0) - 0.5) < 1e-12);
    CHECK(std::abs(res.weights(i, 1) - 0.5) < 1e-12);
    CHECK(res.weights(i, 2) == 0.0);
    for (std::size_t t = 0; t < 2; ++t) {
      CHECK(std::abs(res.output(i, t) - 0.5 * (v(0, t) + v(1, t))) < 1e-12);
    }
  }
  for (std::size_t j = 0; j < 3; ++j) CHECK(res.weights(2, j) == 0.0);
  for (std::size_t t = 0; t < 2; ++t) CHECK(res.output(2, t) == 0.0);
}

TEST_CASE("attention: single position attends to itself") {
  Matrix q = Matrix::from_rows({{0.7}});
  Matrix k = Matrix::from_rows({{-0.3}});
  Matrix v = Matrix::from_rows({{42.0}});
  std::vector<std::uint8_t> mask{1};
  AttentionResult res = scaled_dot_attention(q, k, v, mask);
  CHECK(res.weights(0, 0) == 1.0);
  CHECK(res.output(0, 0) == 42.0);
}

TEST_CASE("attention: two-position scalar case") {
  Matrix q = Matrix::from_rows({{1}, {0}});
  Matrix k = Matrix::from_rows({{1}, {0}});
  Matrix v = Matrix::from_rows({{2}, {4}});
  std::vector<std::uint8_t> mask{1, 1};
  AttentionResult res = scaled_dot_attention(q, k, v, mask);
  CHECK(std::abs(res.weights(0, 0) - 0.73106) < 1e-4);
  CHECK(std::abs(res.weights(0, 1) - 0.26894) < 1e-4);
  CHECK(std::abs(res.output(0, 0) - 2.53788) < 1e-4);
}

TEST_CASE("attention: masked rows carry no weight and no output") {
  Rng rng(90);
  Matrix q(2, 2), k(2, 2), v(2, 2);
  for (double& x : q.data()) x = rng.next_range(-1.0, 1.0);
  for (double& x : k.data()) x = rng.next_range(-1.0, 1.0);
  for (double& x : v.data()) x = rng.next_range(-1.0, 1.0);
  std::vector<std::uint8_t> mask{1, 0};
  AttentionResult res = scaled_dot_attention(q, k, v, mask);
  CHECK(res.weights(0, 0) == 1.0);
  CHECK(res.weights(0, 1) == 0.0);
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(res.weights(1, j) == 0.0);
    CHECK(res.output(1, j) == 0.0);
  }
  std::vector<std::uint8_t> none{0, 0};
  AttentionResult empty = scaled_dot_attention(q, k, v, none);
  for (double x : empty.weights.data()) CHECK(x == 0.0);
  for (double x : empty.output.data()) CHECK(x == 0.0);
}

TEST_CASE("multi_head: one head reduces to plain attention plus projection") {
  ModelConfig c = small_config();
  c.heads = 1;
  ModelParams p = random_params(c, 5);
  Rng rng(6);
  Matrix input(c.l_max, c.d);
  for (double& x : input.data()) x = rng.next_range(-1.0, 1.0);
  std::vector<std::uint8_t> mask{1, 1, 1, 0, 0, 0};
  for (std::size_t i = 3; i < c.l_max; ++i) {
    for (std::size_t j = 0; j < c.d; ++j) input(i, j) = 0.0;
  }
  Matrix out = multi_head(input, p.block[0], 1, mask);
  AttentionResult res = scaled_dot_attention(matmul(input, p.block[0].wq),
                                             matmul(input, p.block[0].wk),
                                             matmul(input, p.block[0].wv), mask);
  Matrix expect = matmul(res.output, p.block[0].wo);
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(std::abs(out.data()[i] - expect.data()[i]) < 1e-12);
  }
}

TEST_CASE("multi_head: matches a naive per-head loop") {
  ModelConfig c = small_config();
  c.d = 4;
  c.heads = 2;
  c.l_max = 3;
  ModelParams p = random_params(c, 7);
  Rng rng(8);
  Matrix input(3, 4);
  for (double& x : input.data()) x = rng.next_range(-1.0, 1.0);
  std::vector<std::uint8_t> mask{1, 1, 1};
  Matrix out = multi_head(input, p.block[0], 2, mask);
  CHECK(out.rows() == 3);
  CHECK(out.cols() == 4);

  const BlockParams& bp = p.block[0];
  const std::size_t dh = 2;
  Matrix concat(3, 4);
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<double> qi(dh, 0.0);
      for (std::size_t t = 0; t < dh; ++t) {
        for (std::size_t u = 0; u < 4; ++u) qi[t] += input(i, u) * bp.wq(u, h * dh + t);
      }
      std::vector<double> scores(3, 0.0);
      for (std::size_t j = 0; j < 3; ++j) {
        std::vector<double> kj(dh, 0.0);
        for (std::size_t t = 0; t < dh; ++t) {
          for (std::size_t u = 0; u < 4; ++u) kj[t] += input(j, u) * bp.wk(u, h * dh + t);
        }
        for (std::size_t t = 0; t < dh; ++t) scores[j] += qi[t] * kj[t];
        scores[j] /= std::sqrt(2.0);
      }
      double mx = std::max({scores[0], scores[1], scores[2]});
      double z = 0.0;
      for (double& sc : scores) {
        sc = std::exp(sc - mx);
        z += sc;
      }
      for (std::size_t j = 0; j < 3; ++j) {
        const double a = scores[j] / z;
        std::vector<double> vj(dh, 0.0);
        for (std::size_t t = 0; t < dh; ++t) {
          for (std::size_t u = 0; u < 4; ++u) vj[t] += input(j, u) * bp.wv(u, h * dh + t);
        }
        for (std::size_t t = 0; t < dh; ++t) concat(i, h * dh + t) += a * vj[t];
      }
    }
  }
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double expect = 0.0;
      for (std::size_t t = 0; t < 4; ++t) expect += concat(i, t) * bp.wo(t, j);
      CHECK(std::abs(out(i, j) - expect) < 1e-10);
    }
  }
}

TEST_CASE("ffn: zero weights broadcast the output bias") {
  Matrix x(3, 2);
  Rng rng(9);
  for (double& v : x.data()) v = rng.next_range(-1.0, 1.0);
  Matrix w1(2, 4), w2(4, 2);
  std::vector<double> b1(4, 0.0), b2{3.5, -1.25};
  Matrix out = ffn(x, w1, b1, w2, b2);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(out(i, 0) == 3.5);
    CHECK(out(i, 1) == -1.25);
  }
}

TEST_CASE("ffn: identical rows map to identical rows") {
  ModelConfig c = small_config();
  ModelParams p = random_params(c, 10);
  Matrix x(4, c.d);
  Rng rng(11);
  for (std::size_t j = 0; j < c.d; ++j) x(0, j) = rng.next_range(-1.0, 1.0);
  for (std::size_t i = 1; i < 4; ++i) {
    for (std::size_t j = 0; j < c.d; ++j) x(i, j) = x(0, j);
  }
  const BlockParams& bp = p.block[0];
  Matrix out = ffn(x, bp.w1, bp.b1, bp.w2, bp.b2);
  for (std::size_t i = 1; i < 4; ++i) {
    for (std::size_t j = 0; j < c.d; ++j) CHECK(out(i, j) == out(0, j));
  }
}

TEST_CASE("ffn: one-dimensional identity case evaluates selu") {
  Matrix x = Matrix::from_rows({{1.0}});
  Matrix w1 = Matrix::from_rows({{1.0}});
  Matrix w2 = Matrix::from_rows({{1.0}});
  std::vector<double> b1{0.0}, b2{0.0};
  Matrix out = ffn(x, w1, b1, w2, b2);
  CHECK(std::abs(out(0, 0) - 1.0507) < 1e-4);
}

TEST_CASE("encoder_block: eval is deterministic and train with dropout 0 matches it") {
  ModelConfig c = small_config();
  ModelParams p = random_params(c, 12);
  Rng rng(13);
  Sample s = random_sample(c, rng, 4);
  Matrix input = embed(s, p);
  std::vector<std::uint8_t> mask(s.mask.begin(), s.mask.end());
  Matrix eval1 = encoder_block(input, p.block[0], c, mask, RunMode::kEval, nullptr);
  Matrix eval2 = encoder_block(input, p.block[0], c, mask, RunMode::kEval, nullptr);
  CHECK(std::memcmp(eval1.data().data(), eval2.data().data(), eval1.size() * sizeof(double)) == 0);
  Rng drop_rng(14);
  Matrix train = encoder_block(input, p.block[0], c, mask, RunMode::kTrain, &drop_rng);
  CHECK(std::memcmp(eval1.data().data(), train.data().data(), eval1.size() * sizeof(double)) == 0);
  CHECK(eval1.rows() == c.l_max);
  CHECK(eval1.cols() == c.d);
}

TEST_CASE("encoder_block: dropout actually drops at high rates") {
  ModelConfig c = small_config();
  c.dropout_rate = 0.5;
  ModelParams p = random_params(c, 15);
  Rng rng(16);
  Sample s = random_sample(c, rng, 4);
  Matrix input = embed(s, p);
  std::vector<std::uint8_t> mask(s.mask.begin(), s.mask.end());
  Matrix eval_out = encoder_block(input, p.block[0], c, mask, RunMode::kEval, nullptr);
  Rng drop_rng(17);
  Matrix train_out = encoder_block(input, p.block[0], c, mask, RunMode::kTrain, &drop_rng);
  double diff = 0.0;
  for (std::size_t i = 0; i < eval_out.size(); ++i) {
    diff = std::max(diff, std::abs(eval_out.data()[i] - train_out.data()[i]));
  }
  CHECK(diff > 1e-6);
}

TEST_CASE("nonseq_tower: zero parameters give a zero vector") {
  ModelConfig c = small_config();
  ModelParams p = ModelParams::zeros(c);
  std::vector<double> x{0.3, -0.7, 1.1};
  auto out = nonseq_tower(x, p);
  REQUIRE(out.size() == c.nonseq_hidden2);
  for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("nonseq_tower: one-dimensional identity chain applies selu twice") {
  ModelConfig c = small_config();
  c.nonseq_input = 1;
  c.nonseq_hidden1 = 1;
  c.nonseq_hidden2 = 1;
  ModelParams p = ModelParams::zeros(c);
  p.tower_w1(0, 0) = 1.0;
  p.tower_w2(0, 0) = 1.0;
  std::vector<double> x{2.0};
  auto out = nonseq_tower(x, p);
  REQUIRE(out.size() == 1);
  CHECK(std::abs(out[0] - 2.2080) < 1e-3);
}

TEST_CASE("nonseq_tower: length mismatch is fatal") {
  ModelConfig c = small_config();
  ModelParams p = ModelParams::zeros(c);
  std::vector<double> wrong{1.0};
  CHECK_THROWS_AS(nonseq_tower(wrong, p), ShapeError);
}

TEST_CASE("forward: probabilities are a proper distribution") {
  ModelConfig c = small_config();
  ModelParams p = random_params(c, 18);
  Rng rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    Sample s = random_sample(c, rng);
    ForwardResult res = forward(s, p, RunMode::kEval);
    double sum = 0.0;
    for (double v : res.probs) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("forward: zero output layer predicts the uniform distribution") {
  ModelConfig c = small_config();
  Rng rng(20);
  ModelParams p = ModelParams::init(c, rng);  // w_out/b_out are zero by default
  Sample s = random_sample(c, rng, 3);
  ForwardResult res = forward(s, p, RunMode::kEval);
  for (double v : res.probs) CHECK(std::abs(v - 1.0 / static_cast<double>(c.classes)) < 1e-12);
}

TEST_CASE("forward: duplicated token with zero positions pools to the same point") {
  ModelConfig c = small_config();
  ModelParams p = random_params(c, 21);
  p.positions = Matrix(c.l_max, c.d);
  std::vector<double> nonseq{0.1, 0.2, 0.3};
  Sample one = make_sample({5}, c.l_max, nonseq);
  Sample two = make_sample({5, 5}, c.l_max, nonseq);
  ForwardTrace t1, t2;
  ForwardResult r1 = forward(one, p, RunMode::kEval, nullptr, &t1);
  ForwardResult r2 = forward(two, p, RunMode::kEval, nullptr, &t2);
  CHECK(max_abs_diff(t1.pooled, t2.pooled) < 1e-12);
  CHECK(max_abs_diff(r1.logits, r2.logits) < 1e-12);
}

TEST_CASE("forward: eval logits ignore token ids parked on padding slots") {
  ModelConfig c = small_config();
  ModelParams p = random_params(c, 22);
  Rng rng(23);
  Sample s = random_sample(c, rng, 3);
  ForwardResult before = forward(s, p, RunMode::kEval);
  s.token_ids[4] = 9;  // padded slot: mask stays 0
  s.position_ids[4] = 2;
  ForwardResult after = forward(s, p, RunMode::kEval);
  CHECK(bitwise_equal(before.logits, after.logits));
}

TEST_CASE("forward: permutation invariance with zero positions, sensitivity with real ones") {
  ModelConfig c = small_config();
  ModelParams p = random_params(c, 24);
  std::vector<double> nonseq{0.5, -0.5, 0.25};
  Sample base = make_sample({2, 3, 4, 5}, c.l_max, nonseq);
  Sample permuted = make_sample({5, 3, 2, 4}, c.l_max, nonseq);

  Matrix saved_positions = p.positions;
  p.positions = Matrix(c.l_max, c.d);
  ForwardResult flat_a = forward(base, p, RunMode::kEval);
  ForwardResult flat_b = forward(permuted, p, RunMode::kEval);
  CHECK(max_abs_diff(flat_a.logits, flat_b.logits) < 1e-9);

  p.positions = saved_positions;
  Rng rng(25);
  int changed = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Sample s = random_sample(c, rng, 4);
    std::size_t i = rng.next_index(4);
    std::size_t j = rng.next_index(4);
    while (s.token_ids[j] == s.token_ids[i]) {
      j = rng.next_index(4);
      s.token_ids[j] = 2 + static_cast<std::uint32_t>(rng.next_index(c.vocab_size - 2));
    }
    ForwardResult before = forward(s, p, RunMode::kEval);
    std::swap(s.token_ids[i], s.token_ids[j]);
    ForwardResult after = forward(s, p, RunMode::kEval);
    if (max_abs_diff(before.logits, after.logits) > 1e-6) ++changed;
  }
  CHECK(changed >= 95);
}

TEST_CASE("forward: attention rows sum to one at every block and head") {
  ModelConfig c = small_config();
  c.blocks = 2;
  ModelParams p = random_params(c, 26);
  Rng rng(27);
  for (int trial = 0; trial < 5; ++trial) {
    Sample s = random_sample(c, rng);
    ForwardTrace trace;
    forward(s, p, RunMode::kEval, nullptr, &trace);
    for (const BlockTrace& bt : trace.blocks) {
      REQUIRE(bt.attn.size() == c.heads);
      for (const Matrix& a : bt.attn) {
        for (std::size_t i = 0; i < c.l_max; ++i) {
          double sum = 0.0;
          for (std::size_t j = 0; j < c.l_max; ++j) sum += a(i, j);
          if (s.mask[i]) {
            CHECK(std::abs(sum - 1.0) < 1e-9);
          } else {
            CHECK(sum == 0.0);
          }
        }
      }
    }
  }
}

TEST_CASE("forward: agrees with the straight-line scalar reference") {
  Rng seed_rng(28);
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig c;
    c.vocab_size = 9;
    c.d = 4;
    c.heads = trial % 2 == 0 ? 2 : 1;
    c.blocks = trial % 3 == 0 ? 2 : 1;
    c.d_ff = 6;
    c.l_max = 3;
    c.classes = 3;
    c.dropout_rate = 0.0;
    c.nonseq_input = 2;
    c.nonseq_hidden1 = 3;
    c.nonseq_hidden2 = 2;
    ModelParams p = random_params(c, 100 + static_cast<std::uint64_t>(trial));
    Rng rng(seed_rng.next_u64());
    Sample s = random_sample(c, rng);
    ForwardResult res = forward(s, p, RunMode::kEval);
    std::vector<double> ref = reference::ref_forward_logits(s, p);
    CHECK(max_abs_diff(res.logits, ref) < 1e-10);
  }
}

TEST_CASE("export_attention: row-stochastic maps with timeline labels") {
  ModelConfig c = small_config();
  c.heads = 8;
  c.d = 16;
  ModelParams p = random_params(c, 29);
  Vocabulary vocab = build_vocabulary({"alpha", "alpha", "beta", "gamma", "delta", "epsilon",
                                       "zeta", "eta", "theta", "iota"},
                                      1);
  Sample s = make_sample({2, 3, 4}, c.l_max, {0.1, 0.2, 0.3});
  AttentionMap map = export_attention(s, p, vocab);
  REQUIRE(map.heads.size() == 8);
  REQUIRE(map.labels.size() == 3);
  CHECK(map.labels[0] == vocab.token_of(2));
  CHECK(map.labels[1] == vocab.token_of(3));
  CHECK(map.labels[2] == vocab.token_of(4));
  for (const Matrix& head : map.heads) {
    REQUIRE(head.rows() == 3);
    REQUIRE(head.cols() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 3; ++j) sum += head(i, j);
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("export_attention: single-token sequence gives identity maps") {
  ModelConfig c = small_config();
  ModelParams p = random_params(c, 30);
  Vocabulary vocab = build_vocabulary({"solo"}, 1);
  Sample s = make_sample({2}, c.l_max, {0.1, 0.2, 0.3});
  AttentionMap map = export_attention(s, p, vocab);
  for (const Matrix& head : map.heads) {
    REQUIRE(head.rows() == 1);
    CHECK(head(0, 0) == 1.0);
  }
}

TEST_CASE("backward: analytic gradients match central differences on every tensor") {
  ModelConfig c;
  c.vocab_size = 10;
  c.d = 8;
  c.heads = 2;
  c.blocks = 1;
  c.d_ff = 16;
  c.l_max = 5;
  c.classes = 3;
  c.dropout_rate = 0.0;
  c.nonseq_input = 3;
  c.nonseq_hidden1 = 4;
  c.nonseq_hidden2 = 3;
  ModelParams params = random_params(c, 31);
  Rng rng(32);
  Sample s = random_sample(c, rng, 3);
  const int label = 1;

  ForwardTrace trace;
  forward(s, params, RunMode::kTrain, nullptr, &trace);
  ModelParams grads = ModelParams::zeros(c);
  backward(s, params, trace, label, grads);

  auto prefs = params.tensor_refs();
  auto grefs = grads.tensor_refs();
  REQUIRE(prefs.size() == grefs.size());
  for (std::size_t t = 0; t < prefs.size(); ++t) {
    auto& pref = prefs[t];
    std::vector<double> saved(pref.data, pref.data + pref.size());
    auto f = [&](std::span<const double> x) {
      std::copy(x.begin(), x.end(), pref.data);
      ForwardResult res = forward(s, params, RunMode::kEval);
      return -std::log(res.probs[static_cast<std::size_t>(label)]);
    };
    std::vector<double> numeric = finite_difference_gradient(f, saved, 1e-5);
    std::copy(saved.begin(), saved.end(), pref.data);
    for (std::size_t i = 0; i < pref.size(); ++i) {
      const double a = grefs[t].data[i];
      const double n = numeric[i];
      const double mag = std::max(std::abs(a), std::abs(n));
      if (mag <= 1e-8) continue;
      INFO(pref.name, " entry ", i);
      CHECK(std::abs(a - n) / mag < 1e-4);
    }
  }
}

TEST_CASE("checkpoint: save, load, forward is bitwise stable") {
  ModelConfig c = small_config();
  c.blocks = 2;
  ModelParams p = random_params(c, 33);
  auto dir = std::filesystem::temp_directory_path() / "callseq_tests";
  std::filesystem::create_directories(dir);
  auto path = (dir / "roundtrip_model.bin").string();
  save_checkpoint(path, p);
  ModelParams q = load_checkpoint(path);
  auto pr = p.tensor_refs();
  auto qr = q.tensor_refs();
  REQUIRE(pr.size() == qr.size());
  for (std::size_t t = 0; t < pr.size(); ++t) {
    CHECK(pr[t].name == qr[t].name);
    REQUIRE(pr[t].size() == qr[t].size());
    CHECK(std::memcmp(pr[t].data, qr[t].data, pr[t].size() * sizeof(double)) == 0);
  }
  Rng rng(34);
  Sample s = random_sample(c, rng, 4);
  ForwardResult a = forward(s, p, RunMode::kEval);
  ForwardResult b = forward(s, q, RunMode::kEval);
  CHECK(bitwise_equal(a.logits, b.logits));
  std::filesystem::remove(path);
}

TEST_CASE("baseline config: sequence branch off uses the tower alone") {
  ModelConfig c = small_config();
  c.sequence_branch = false;
  ModelParams p = random_params(c, 35);
  Rng rng(36);
  Sample s = random_sample(c, rng, 3);
  ForwardResult res = forward(s, p, RunMode::kEval);
  double sum = 0.0;
  for (double v : res.probs) sum += v;
  CHECK(std::abs(sum - 1.0) < 1e-9);
  // Sequence content is invisible to the baseline.
  Sample other = s;
  other.token_ids[0] = 7;
  ForwardResult res2 = forward(other, p, RunMode::kEval);
  CHECK(bitwise_equal(res.logits, res2.logits));
  // Gradients flow through the tower path.
  ForwardTrace trace;
  forward(s, p, RunMode::kTrain, nullptr, &trace);
  ModelParams grads = ModelParams::zeros(c);
  backward(s, p, trace, 1, grads);
  double tower_grad = 0.0;
  for (double v : grads.tower_b2) tower_grad += std::abs(v);
  CHECK(tower_grad > 0.0);
}
