#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "distil/error.hpp"
#include "distil/student.hpp"
#include "support.hpp"

namespace distil {
namespace {

using testing::micro_config;
using testing::random_encoded;

// Scalar reference implementation of one eval-mode forward pass over a
// single sequence, written against the raw parameter arrays.
struct ReferenceOutput {
  std::vector<double> pooled;  // [2L]
  std::vector<double> probs;
  std::vector<double> scores;
  std::vector<double> projected;
};

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<std::vector<double>> reference_direction(const StudentParams& p, const LstmWeights& w,
                                                     const Encoded& e, bool reverse) {
  const std::size_t K = p.config.embed_dim, L = p.config.lstm_hidden;
  const auto E = p.embedding.values();
  const auto Wx = w.input.values();
  const auto Wh = w.recurrent.values();
  const auto bias = w.bias.values();
  std::vector<double> h(L, 0.0), c(L, 0.0);
  std::vector<std::vector<double>> states(e.length);
  for (std::size_t i = 0; i < e.length; ++i) {
    const std::size_t t = reverse ? e.length - 1 - i : i;
    const std::size_t id = e.ids[t];
    std::vector<double> gates(4 * L);
    for (std::size_t j = 0; j < 4 * L; ++j) {
      double g = bias[j];
      for (std::size_t k = 0; k < K; ++k) g += E[id * K + k] * Wx[k * 4 * L + j];
      for (std::size_t m = 0; m < L; ++m) g += h[m] * Wh[m * 4 * L + j];
      gates[j] = g;
    }
    for (std::size_t m = 0; m < L; ++m) {
      const double ig = sigmoid_ref(gates[m]);
      const double fg = sigmoid_ref(gates[L + m]);
      const double og = sigmoid_ref(gates[2 * L + m]);
      const double cand = std::tanh(gates[3 * L + m]);
      c[m] = fg * c[m] + ig * cand;
      h[m] = og * std::tanh(c[m]);
    }
    states[t] = h;
  }
  return states;
}

ReferenceOutput reference_forward(const StudentParams& p, const Encoded& e) {
  const std::size_t L = p.config.lstm_hidden, C = p.config.num_classes, H = p.config.teacher_hidden;
  const auto fwd = reference_direction(p, p.forward_lstm, e, false);
  const auto bwd = reference_direction(p, p.backward_lstm, e, true);
  ReferenceOutput out;
  out.pooled.assign(2 * L, -INFINITY);
  for (std::size_t t = 0; t < e.length; ++t) {
    for (std::size_t m = 0; m < L; ++m) {
      out.pooled[m] = std::max(out.pooled[m], fwd[t][m]);
      out.pooled[L + m] = std::max(out.pooled[L + m], bwd[t][m]);
    }
  }
  const std::size_t D = 2 * L;
  const auto Ws = p.classifier.values();
  std::vector<double> a(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t d = 0; d < D; ++d) a[c] += out.pooled[d] * Ws[d * C + c];
  }
  double top = a[0];
  for (double x : a) top = std::max(top, x);
  double total = 0.0;
  for (double& x : a) total += x = std::exp(x - top);
  for (double& x : a) x /= total;
  out.probs = a;

  const auto Wr = p.regressor_weight.values();
  const auto br = p.regressor_bias.values();
  out.scores.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    out.scores[c] = br[c];
    for (std::size_t d = 0; d < D; ++d) out.scores[c] += Wr[c * D + d] * out.pooled[d];
  }
  const auto Wf = p.projector_weight.values();
  const auto bf = p.projector_bias.values();
  out.projected.assign(H, 0.0);
  for (std::size_t h = 0; h < H; ++h) {
    double x = bf[h];
    for (std::size_t d = 0; d < D; ++d) x += Wf[h * D + d] * out.pooled[d];
    out.projected[h] = x * 0.5 * std::erfc(-x / std::sqrt(2.0));
  }
  return out;
}

// Gives the heads' biases non-zero values so their paths are exercised.
void perturb_biases(StudentParams& p, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (Tensor* t : {&p.regressor_bias, &p.projector_bias}) {
    for (double& v : t->mutable_values()) v = u(rng);
  }
}

TEST(StudentInit, ShapesAndInitialValues) {
  StudentConfig cfg = micro_config();
  const StudentParams p = StudentParams::initialize(cfg, 7);
  EXPECT_EQ(p.embedding.shape(), (Shape{20, 4}));
  EXPECT_EQ(p.forward_lstm.input.shape(), (Shape{4, 12}));
  EXPECT_EQ(p.forward_lstm.recurrent.shape(), (Shape{3, 12}));
  EXPECT_EQ(p.classifier.shape(), (Shape{6, 3}));
  EXPECT_EQ(p.regressor_weight.shape(), (Shape{3, 6}));
  EXPECT_EQ(p.projector_weight.shape(), (Shape{6, 6}));
  for (const NamedTensor& nt : p.named()) {
    if (nt.name.ends_with(".bias") && nt.group == ParamGroup::bilstm) {
      for (std::size_t j = 0; j < 12; ++j) EXPECT_EQ(nt.tensor.values()[j], (j >= 3 && j < 6) ? 1.0 : 0.0);
    } else if (nt.name.ends_with(".bias")) {
      for (double v : nt.tensor.values()) EXPECT_EQ(v, 0.0);
    } else {
      for (double v : nt.tensor.values()) EXPECT_LE(std::abs(v), 0.1);
    }
    EXPECT_TRUE(nt.tensor.requires_grad()) << nt.name;
  }
}

TEST(StudentInit, InvalidConfigRejected) {
  StudentConfig cfg = micro_config();
  cfg.num_classes = 1;
  EXPECT_THROW(StudentParams::initialize(cfg, 0), ConfigError);
  cfg = micro_config();
  cfg.dropout_rate = 1.0;
  EXPECT_THROW(StudentParams::initialize(cfg, 0), ConfigError);
}

TEST(StudentForward, MatchesScalarRecurrence) {
  Rng rng(3);
  StudentParams p = StudentParams::initialize(micro_config(), 11);
  perturb_biases(p, rng);
  std::vector<Encoded> batch{random_encoded(20, 5, 5, rng), random_encoded(20, 5, 3, rng),
                             random_encoded(20, 5, 4, rng)};
  Rng unused(0);
  const EncoderOutput enc = encode(p, std::span<const Encoded>(batch), false, unused);
  const Tensor probs = classify(p, enc.pooled);
  const Tensor scores = regress_logits(p, enc.pooled);
  const Tensor proj = project(p, enc.pooled);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const ReferenceOutput ref = reference_forward(p, batch[b]);
    for (std::size_t d = 0; d < 6; ++d) EXPECT_NEAR(enc.pooled.at(b, d), ref.pooled[d], 1e-12);
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_NEAR(probs.at(b, c), ref.probs[c], 1e-12);
      EXPECT_NEAR(scores.at(b, c), ref.scores[c], 1e-12);
    }
    for (std::size_t h = 0; h < 6; ++h) EXPECT_NEAR(proj.at(b, h), ref.projected[h], 1e-12);
  }
}

TEST(StudentForward, SingleTokenSequenceUsesOneStep) {
  StudentParams p = StudentParams::initialize(micro_config(), 5);
  Encoded e;
  e.ids = {7, 0, 0, 0, 0};
  e.length = 1;
  e.max_len = 5;
  Rng unused(0);
  const EncoderOutput enc = encode(p, std::span<const Encoded>(&e, 1), false, unused);
  const ReferenceOutput ref = reference_forward(p, e);
  for (std::size_t d = 0; d < 6; ++d) EXPECT_NEAR(enc.pooled.at(0, d), ref.pooled[d], 1e-12);
}

TEST(StudentForward, PooledIsChannelMaxOfStates) {
  Rng rng(8);
  const StudentParams p = StudentParams::initialize(micro_config(), 2);
  std::vector<Encoded> batch{random_encoded(20, 5, 5, rng), random_encoded(20, 5, 2, rng)};
  Rng unused(0);
  const EncoderOutput enc = encode(p, std::span<const Encoded>(batch), false, unused);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t m = 0; m < 3; ++m) {
      double fmax = -INFINITY, bmax = -INFINITY;
      for (std::size_t t = 0; t < enc.lengths[b]; ++t) {
        fmax = std::max(fmax, enc.forward_states[t].at(b, m));
        bmax = std::max(bmax, enc.backward_states[t].at(b, m));
      }
      EXPECT_EQ(enc.pooled.at(b, m), fmax);
      EXPECT_EQ(enc.pooled.at(b, 3 + m), bmax);
    }
  }
}

TEST(StudentForward, PaddingContentAndBatchCompanionsDoNotMatter) {
  Rng rng(21);
  const StudentParams p = StudentParams::initialize(micro_config(), 4);
  const Encoded base = random_encoded(20, 5, 3, rng);
  Encoded noisy = base;
  noisy.ids[3] = 9;
  noisy.ids[4] = 17;
  Rng unused(0);
  const Tensor alone = encode(p, std::span<const Encoded>(&base, 1), false, unused).pooled;
  std::vector<Encoded> batch{random_encoded(20, 5, 5, rng), noisy};
  const Tensor mixed = encode(p, std::span<const Encoded>(batch), false, unused).pooled;
  for (std::size_t d = 0; d < 6; ++d) EXPECT_EQ(alone.at(0, d), mixed.at(1, d));
}

TEST(StudentForward, ProbabilitiesAreDistributions) {
  Rng rng(1);
  const StudentParams p = StudentParams::initialize(micro_config(), 9);
  std::vector<Encoded> batch;
  for (int i = 0; i < 16; ++i) batch.push_back(random_encoded(20, 5, 2 + rng() % 4, rng));
  Rng unused(0);
  const Tensor probs = classify(p, encode(p, std::span<const Encoded>(batch), false, unused).pooled);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    double total = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_GT(probs.at(b, c), 0.0);
      total += probs.at(b, c);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(StudentForward, InvalidInputsRejected) {
  const StudentParams p = StudentParams::initialize(micro_config(), 9);
  Rng unused(0);
  Encoded e;
  e.ids = {2, 25, 3, 0, 0};
  e.length = 3;
  e.max_len = 5;
  EXPECT_THROW(encode(p, std::span<const Encoded>(&e, 1), false, unused), ContractError);
  e.ids[1] = 5;
  e.length = 0;
  EXPECT_THROW(encode(p, std::span<const Encoded>(&e, 1), false, unused), ContractError);
  EXPECT_THROW(encode(p, std::span<const Encoded>(), false, unused), ContractError);
}

TEST(StudentForward, EvalModeIsDeterministicAndTrainModeIsSeeded) {
  Rng rng(13);
  StudentConfig cfg = micro_config();
  cfg.dropout_rate = 0.4;
  cfg.recurrent_dropout_rate = 0.2;
  const StudentParams p = StudentParams::initialize(cfg, 1);
  std::vector<Encoded> batch{random_encoded(20, 5, 5, rng), random_encoded(20, 5, 4, rng)};
  Rng r1(100), r2(100), r3(200);
  const auto v1 = encode(p, std::span<const Encoded>(batch), true, r1).pooled;
  const auto v2 = encode(p, std::span<const Encoded>(batch), true, r2).pooled;
  const auto v3 = encode(p, std::span<const Encoded>(batch), true, r3).pooled;
  EXPECT_TRUE(std::equal(v1.values().begin(), v1.values().end(), v2.values().begin()));
  EXPECT_FALSE(std::equal(v1.values().begin(), v1.values().end(), v3.values().begin()));
  Rng e1(1), e2(2);
  const auto a = encode(p, std::span<const Encoded>(batch), false, e1).pooled;
  const auto b = encode(p, std::span<const Encoded>(batch), false, e2).pooled;
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST(StudentForward, PredictMatchesClassifyArgmaxAcrossChunks) {
  Rng rng(17);
  const StudentParams p = StudentParams::initialize(micro_config(), 6);
  std::vector<Encoded> inputs;
  for (int i = 0; i < 23; ++i) inputs.push_back(random_encoded(20, 5, 2 + rng() % 4, rng));
  const auto whole = predict(p, inputs, 64);
  const auto chunked = predict(p, inputs, 5);
  EXPECT_EQ(whole, chunked);
  Rng unused(0);
  const Tensor probs = classify(p, encode(p, std::span<const Encoded>(inputs), false, unused).pooled);
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < 3; ++c) best = probs.at(b, c) > probs.at(b, best) ? c : best;
    EXPECT_EQ(whole[b], best);
  }
}

// Sum of all three heads, so every parameter receives a gradient.
Tensor all_heads_objective(const StudentParams& p, const std::vector<Encoded>& batch) {
  Rng unused(0);
  const Tensor z = encode(p, std::span<const Encoded>(batch), false, unused).pooled;
  const Tensor w3 = Tensor({3}, {0.3, -1.1, 0.7});
  const Tensor w6 = Tensor({6}, {0.5, -0.2, 0.9, -0.6, 0.1, 0.4});
  return add(add(sum(log(classify(p, z))), sum(mul(regress_logits(p, z), add_bias(Tensor::zeros({batch.size(), 3}), w3)))),
             sum(mul(project(p, z), add_bias(Tensor::zeros({batch.size(), 6}), w6))));
}

TEST(StudentGradients, EveryParameterMatchesFiniteDifferences) {
  const double eps = 1e-4;
  StudentParams p = StudentParams::initialize(micro_config(), 12);
  std::vector<Encoded> batch;
  Rng unused(0);
  // First seed whose pooled channels have clear maxima, so the finite
  // differences never straddle a max-pool switch.
  for (std::uint64_t seed = 31;; ++seed) {
    Rng rng(seed);
    testing::randomize_params(p, rng, 1.0);
    batch = {random_encoded(20, 5, 5, rng), random_encoded(20, 5, 3, rng)};
    if (testing::pooling_margin(encode(p, std::span<const Encoded>(batch), false, unused)) > 100 * eps) break;
    ASSERT_LT(seed, 1000u);
  }
  const auto check = testing::check_gradients([&] { return all_heads_objective(p, batch); }, testing::named_pairs(p),
                                              eps);
  EXPECT_LT(check.max_relative_error, 1e-5) << check.worst;
  EXPECT_GT(check.checked, 300u);
}

TEST(StudentGradients, FrozenGroupsReceiveNoGradient) {
  Rng rng(4);
  StudentParams p = StudentParams::initialize(micro_config(), 3);
  const std::vector<Encoded> batch{random_encoded(20, 5, 5, rng), random_encoded(20, 5, 4, rng)};
  p.set_frozen(ParamGroup::embeddings, true);
  p.set_frozen(ParamGroup::bilstm, true);
  EXPECT_TRUE(p.is_frozen(ParamGroup::bilstm));
  all_heads_objective(p, batch).backward();
  for (const NamedTensor& nt : p.named()) {
    if (nt.group == ParamGroup::heads) {
      EXPECT_TRUE(nt.tensor.has_grad()) << nt.name;
    } else {
      EXPECT_FALSE(nt.tensor.has_grad()) << nt.name;
    }
  }
  p.set_frozen(ParamGroup::bilstm, false);
  p.zero_grad();
  all_heads_objective(p, batch).backward();
  EXPECT_TRUE(p.forward_lstm.input.has_grad());
  EXPECT_FALSE(p.embedding.has_grad());
}

TEST(StudentGradients, EmbeddingGradientTouchesOnlyUsedRows) {
  Rng rng(4);
  StudentParams p = StudentParams::initialize(micro_config(), 3);
  const Encoded e = random_encoded(20, 5, 4, rng);
  all_heads_objective(p, {e}).backward();
  std::vector<bool> used(20, false);
  for (std::size_t t = 0; t < e.length; ++t) used[e.ids[t]] = true;
  const auto g = p.embedding.grad();
  for (std::size_t v = 0; v < 20; ++v) {
    double norm = 0.0;
    for (std::size_t k = 0; k < 4; ++k) norm += std::abs(g[v * 4 + k]);
    EXPECT_EQ(norm > 0.0, used[v]) << "row " << v;
  }
}

TEST(StudentParamsTest, InitializationIsSeeded) {
  const StudentParams a = StudentParams::initialize(micro_config(), 42);
  const StudentParams b = StudentParams::initialize(micro_config(), 42);
  const StudentParams c = StudentParams::initialize(micro_config(), 43);
  EXPECT_TRUE(a.identical_to(b));
  EXPECT_FALSE(a.identical_to(c));
}

TEST(StudentParamsTest, CloneSharesNoStorage) {
  StudentParams a = StudentParams::initialize(micro_config(), 42);
  StudentParams b = a.clone();
  EXPECT_TRUE(a.identical_to(b));
  b.classifier.mutable_values()[0] += 1.0;
  EXPECT_FALSE(a.identical_to(b));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  testing::TempDir dir;
  Rng rng(2);
  StudentParams p = StudentParams::initialize(micro_config(), 77);
  perturb_biases(p, rng);
  p.set_frozen(ParamGroup::embeddings, true);
  save_checkpoint(p, dir / "model.bin");
  const StudentParams q = load_checkpoint(dir / "model.bin");
  EXPECT_TRUE(p.identical_to(q));
  EXPECT_TRUE(q.is_frozen(ParamGroup::embeddings));
  EXPECT_FALSE(q.embedding.requires_grad());
}

TEST(Checkpoint, CorruptFilesRejected) {
  testing::TempDir dir;
  const StudentParams p = StudentParams::initialize(micro_config(), 77);
  save_checkpoint(p, dir / "model.bin");
  std::ifstream in(dir / "model.bin", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::ofstream(dir / "short.bin", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  EXPECT_THROW(load_checkpoint(dir / "short.bin"), FormatError);
  std::string garbled = bytes;
  garbled[0] ^= 0x5a;
  std::ofstream(dir / "magic.bin", std::ios::binary) << garbled;
  EXPECT_THROW(load_checkpoint(dir / "magic.bin"), FormatError);
  EXPECT_THROW(load_checkpoint(dir / "absent.bin"), IoError);
}

TEST(PretrainedEmbeddings, ReplacesKnownRowsOnly) {
  testing::TempDir dir;
  const Vocab vocab = testing::micro_vocab(20);
  StudentParams p = StudentParams::initialize(micro_config(), 1);
  const std::vector<double> before(p.embedding.values().begin(), p.embedding.values().end());
  std::ofstream(dir / "glove.txt") << "w0 1 2 3 4\nnotintable 5 6 7 8\nw3 -1 -2 -3 -4\n";
  EXPECT_EQ(load_pretrained_embeddings(p, vocab, dir / "glove.txt"), 2u);
  const auto after = p.embedding.values();
  const std::size_t w0 = vocab.id("w0"), w3 = vocab.id("w3");
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(after[w0 * 4 + k], static_cast<double>(k + 1));
    EXPECT_EQ(after[w3 * 4 + k], -static_cast<double>(k + 1));
    EXPECT_EQ(after[5 * 4 + k], before[5 * 4 + k]);
  }
  std::ofstream(dir / "bad.txt") << "w0 1 2 3\n";
  EXPECT_THROW(load_pretrained_embeddings(p, vocab, dir / "bad.txt"), FormatError);
}

}  // namespace
}  // namespace distil
