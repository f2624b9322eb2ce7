#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "peg/encoder.hpp"
#include "peg/tokenizer.hpp"

namespace peg {
namespace {

TokenSequence seq(std::initializer_list<TokenId> ids) { return TokenSequence{ids}; }

TEST(Tokenizer, SplitsLowercasesAndStripsPunctuation) {
  const auto words = split_words("  Hello, World!  (tiny) test.");
  const std::vector<std::string> expected{"hello", "world", "tiny", "test"};
  EXPECT_EQ(words, expected);
}

TEST(Vocabulary, ReservedIdsAndFirstSeenOrder) {
  const auto v = Vocabulary::build({"b a", "c a"});
  EXPECT_EQ(v.size(), 6u);
  EXPECT_EQ(v.id("<pad>"), kPadId);
  EXPECT_EQ(v.id("<mask>"), kMaskId);
  EXPECT_EQ(v.id("b"), 3);
  EXPECT_EQ(v.id("a"), 4);
  EXPECT_EQ(v.id("zzz"), kUnknownId);
}

TEST(Vocabulary, MaxSizeAndTruncation) {
  const auto v = Vocabulary::build({"a b c d e"}, 5);
  EXPECT_EQ(v.size(), 5u);
  EXPECT_EQ(v.encode("a b c d", 2).size(), 2u);
  EXPECT_EQ(v.encode("c").tokens.front(), kUnknownId);
}

TEST(Vocabulary, FromTokensValidates) {
  EXPECT_THROW(Vocabulary::from_tokens({"x", "<mask>", "<unk>"}), ValidationError);
  EXPECT_THROW(Vocabulary::from_tokens({"<pad>", "<mask>", "<unk>", "a", "a"}), ValidationError);
  const auto v = Vocabulary::from_tokens({"<pad>", "<mask>", "<unk>", "a"});
  EXPECT_EQ(v, Vocabulary::build({"a"}));
}

TEST(Encoder, EmbeddingIsUnitLength) {
  const auto enc = ToyEncoder::random(10, 6, 1);
  const Vector e = encode(enc, seq({3, 4, 4, 9}));
  EXPECT_NEAR(l2_norm(e), 1.0, 1e-14);
}

TEST(Encoder, OrderInvariantBag) {
  const auto enc = ToyEncoder::random(10, 6, 1);
  const Vector a = encode(enc, seq({3, 4, 9}));
  const Vector b = encode(enc, seq({9, 3, 4}));
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-15);
}

TEST(Encoder, RejectsBadTokens) {
  const auto enc = ToyEncoder::random(5, 4, 1);
  EXPECT_THROW(encode(enc, seq({})), DomainError);
  EXPECT_THROW(encode(enc, seq({5})), DomainError);
  EXPECT_THROW(encode(enc, seq({-1})), DomainError);
}

TEST(Encoder, DeterministicForSeed) {
  EXPECT_EQ(ToyEncoder::random(8, 4, 77), ToyEncoder::random(8, 4, 77));
  EXPECT_FALSE(ToyEncoder::random(8, 4, 77) == ToyEncoder::random(8, 4, 78));
}

// Finite-difference check of an arbitrary parameter block against an
// accumulated analytic gradient.
void expect_gradient(Matrix& param, const Matrix& analytic, const std::function<double()>& f, double tol) {
  const double h = 1e-6;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double orig = param.values()[i];
    param.values()[i] = orig + h;
    const double up = f();
    param.values()[i] = orig - h;
    const double down = f();
    param.values()[i] = orig;
    EXPECT_NEAR((up - down) / (2 * h), analytic.values()[i], tol) << "index " << i;
  }
}

TEST(Encoder, BackpropMatchesFiniteDifferences) {
  auto enc = ToyEncoder::random(7, 4, 5);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& x : enc.projection().values()) x += 0.3 * n(rng);
  const Vector c{0.3, -1.2, 0.5, 2.0};
  const TokenSequence s = seq({3, 5, 5, 6});
  auto f = [&] { return dot(encode(enc, s), c); };
  EncoderGrads g(enc);
  backprop_encode(enc, s, encode_cached(enc, s), c, g);
  expect_gradient(enc.token_table(), g.token_table, f, 1e-7);
  expect_gradient(enc.projection(), g.projection, f, 1e-7);
}

TEST(Corrupt, MasksCeilOfRatio) {
  const TokenSequence s = seq({3, 4, 5, 6, 7, 8, 9});
  const auto c = corrupt(s, 0.3, 11);
  EXPECT_EQ(std::count(c.tokens.begin(), c.tokens.end(), kMaskId), 3);  // ceil(2.1)
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_TRUE(c.tokens[i] == s.tokens[i] || c.tokens[i] == kMaskId);
  }
  EXPECT_EQ(c, corrupt(s, 0.3, 11));
  EXPECT_EQ(corrupt(s, 0.0, 11), s);
}

TEST(Corrupt, RejectsRatioOutsideRange) {
  EXPECT_THROW(corrupt(seq({3}), 1.0, 0), DomainError);
  EXPECT_THROW(corrupt(seq({3}), -0.1, 0), DomainError);
}

TEST(Mae, GradientsMatchFiniteDifferences) {
  auto enc = ToyEncoder::random(9, 4, 3);
  auto dec = MaeDecoder::random(6, 4, 9, 4);
  const TokenSequence clean = seq({3, 4, 5, 8});
  const TokenSequence masked = corrupt(clean, 0.5, 1);
  EncoderGrads eg(enc);
  DecoderGrads dg(dec);
  const double loss = mae_loss_and_grad(enc, dec, clean, masked, eg, dg);
  auto f = [&] { return mae_loss(enc, dec, clean, masked); };
  EXPECT_NEAR(loss, f(), 1e-12);
  expect_gradient(enc.token_table(), eg.token_table, f, 1e-6);
  expect_gradient(enc.projection(), eg.projection, f, 1e-6);
  expect_gradient(dec.position_table(), dg.position_table, f, 1e-6);
  expect_gradient(dec.output(), dg.output, f, 1e-6);
}

TEST(Mae, UniformDecoderGivesLogVocabPerPosition) {
  const auto enc = ToyEncoder::random(9, 4, 3);
  const MaeDecoder dec(6, 4, 9);
  const TokenSequence clean = seq({3, 4, 5});
  EXPECT_NEAR(mae_loss(enc, dec, clean, clean), 3.0 * std::log(9.0), 1e-12);
}

TEST(Mae, RejectsTooLongSequence) {
  const auto enc = ToyEncoder::random(9, 4, 3);
  const MaeDecoder dec(2, 4, 9);
  const TokenSequence clean = seq({3, 4, 5});
  EXPECT_THROW(mae_loss(enc, dec, clean, clean), DomainError);
}

}  // namespace
}  // namespace peg
