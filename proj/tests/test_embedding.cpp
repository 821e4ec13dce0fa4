#include <gtest/gtest.h>

#include <sstream>

#include "spi/embedding.hpp"
#include "synthetic.hpp"
#include "test_util.hpp"

using namespace spi;
using testutil::code_of;

namespace {

std::vector<TokenSequence> topic_corpus(std::size_t sentences, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < sentences; ++i) {
    const auto& topic = synth::topics()[rng.below(synth::topics().size())];
    TokenSequence s;
    for (int j = 0; j < 8; ++j) s.push_back(synth::pick(topic, rng));
    out.push_back(std::move(s));
  }
  return out;
}

Word2VecConfig small_config(std::uint64_t seed = 3) {
  Word2VecConfig c;
  c.dim = 12;
  c.window = 3;
  c.negatives = 4;
  c.epochs = 10;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Vocabulary, ReservedRowsThenFrequencyThenLexicographic) {
  const auto v = build_vocabulary({{"b", "a", "c", "b"}, {"c", "d"}}, 1);
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"<pad>", "<oov>", "b", "c", "a", "d"}));
  EXPECT_EQ(v.index_of("zzz"), Vocabulary::kOov);
  const auto pruned = build_vocabulary({{"b", "a", "c", "b"}, {"c", "d"}}, 2);
  EXPECT_EQ(pruned.tokens(), (std::vector<std::string>{"<pad>", "<oov>", "b", "c"}));
  EXPECT_EQ(code_of([] { build_vocabulary({}, 0); }), "invalid_config");
}

TEST(Encoding, TruncatesPadsAndMapsUnknownsToOov) {
  EmbeddingMatrix emb;
  emb.vocabulary = build_vocabulary({{"x", "y"}});
  emb.table = nn::Tensor::matrix(emb.vocabulary.size(), 2);
  for (std::size_t r = 1; r < emb.size(); ++r) {
    emb.table(r, 0) = static_cast<double>(r);
    emb.table(r, 1) = -static_cast<double>(r);
  }
  const auto enc = encode_sequence({"y", "q", "x"}, emb, 5);
  EXPECT_EQ(enc.true_length, 3u);
  EXPECT_EQ(enc.indices, (std::vector<std::size_t>{emb.vocabulary.index_of("y"), Vocabulary::kOov,
                                                   emb.vocabulary.index_of("x")}));
  EXPECT_EQ(enc.matrix(1, 0), 1.0);
  EXPECT_EQ(enc.matrix(3, 0), 0.0);
  EXPECT_EQ(enc.matrix(4, 1), 0.0);
  const auto cut = encode_sequence({"x", "x", "x", "x"}, emb, 2);
  EXPECT_EQ(cut.true_length, 2u);
  EXPECT_EQ(cut.matrix.rows(), 2u);
  EXPECT_EQ(code_of([&] { encode_sequence({"x"}, emb, 0); }), "invalid_config");
}

TEST(Word2Vec, SameSeedIsBitIdentical) {
  const auto corpus = topic_corpus(60, 1);
  const auto vocab = build_vocabulary(corpus);
  const auto a = train_word2vec(corpus, vocab, small_config(5));
  const auto b = train_word2vec(corpus, vocab, small_config(5));
  const auto c = train_word2vec(corpus, vocab, small_config(6));
  EXPECT_EQ(a.embedding, b.embedding);
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  EXPECT_NE(a.embedding.table, c.embedding.table);
}

TEST(Word2Vec, PadRowIsZeroAndLossFalls) {
  const auto corpus = topic_corpus(80, 2);
  const auto r = train_word2vec(corpus, build_vocabulary(corpus), small_config());
  for (double x : r.embedding.row(Vocabulary::kPad)) EXPECT_EQ(x, 0.0);
  ASSERT_EQ(r.epoch_losses.size(), 10u);
  EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front());
  EXPECT_TRUE(r.embedding.table.all_finite());
}

TEST(Word2Vec, CoOccurringWordsEndUpCloser) {
  const auto corpus = topic_corpus(300, 3);
  auto config = small_config();
  config.epochs = 20;
  const auto r = train_word2vec(corpus, build_vocabulary(corpus), config);
  const auto& emb = r.embedding;
  double within = 0, across = 0;
  std::size_t nw = 0, na = 0;
  const auto& topics = synth::topics();
  for (std::size_t t = 0; t < topics.size(); ++t) {
    for (std::size_t u = 0; u < topics.size(); ++u) {
      for (const auto& a : topics[t]) {
        for (const auto& b : topics[u]) {
          if (a == b) continue;
          const auto ia = emb.vocabulary.find(a), ib = emb.vocabulary.find(b);
          if (!ia || !ib) continue;
          const double cs = cosine_similarity(emb.row(*ia), emb.row(*ib));
          if (t == u) {
            within += cs;
            ++nw;
          } else {
            across += cs;
            ++na;
          }
        }
      }
    }
  }
  ASSERT_GT(nw, 0u);
  ASSERT_GT(na, 0u);
  EXPECT_GT(within / static_cast<double>(nw), across / static_cast<double>(na) + 0.2);
}

TEST(Word2Vec, CbowTrainsToo) {
  const auto corpus = topic_corpus(60, 4);
  auto config = small_config();
  config.variant = Word2VecVariant::Cbow;
  config.epochs = 40;
  const auto r = train_word2vec(corpus, build_vocabulary(corpus), config);
  EXPECT_LT(r.epoch_losses.back(), 0.75 * r.epoch_losses.front());
}

TEST(Word2Vec, RejectsDegenerateInput) {
  EXPECT_EQ(code_of([] { train_word2vec({{"a", "a"}}, build_vocabulary({{"a", "a"}}), small_config()); }),
            "insufficient_corpus");
  EXPECT_EQ(code_of([] { train_word2vec({}, Vocabulary{}, small_config()); }), "insufficient_corpus");
  auto bad = small_config();
  bad.dim = 0;
  EXPECT_EQ(code_of([&] { train_word2vec({{"a", "b"}}, build_vocabulary({{"a", "b"}}), bad); }), "invalid_config");
}

TEST(EmbeddingFile, RoundTripIsExact) {
  const auto corpus = topic_corpus(40, 5);
  const auto r = train_word2vec(corpus, build_vocabulary(corpus), small_config());
  std::stringstream ss;
  write_embedding(ss, r.embedding, {corpus_digest(corpus), 3});
  const auto [emb, header] = read_embedding(ss);
  EXPECT_EQ(emb, r.embedding);
  EXPECT_EQ(header.corpus_digest, corpus_digest(corpus));
  EXPECT_EQ(header.seed, 3u);
}

TEST(EmbeddingFile, CorruptInputIsSchemaViolation) {
  std::stringstream no_header("not json\n");
  EXPECT_EQ(code_of([&] { read_embedding(no_header); }), "schema_violation");
  std::stringstream missing(R"({"format_version":1,"V":2,"k":1,"corpus_digest":"x"})" "\n");
  EXPECT_EQ(code_of([&] { read_embedding(missing); }), "schema_violation");
  std::stringstream truncated(R"({"format_version":1,"V":3,"k":1,"corpus_digest":"x","seed":1})" "\n<pad>\t0\n");
  EXPECT_EQ(code_of([&] { read_embedding(truncated); }), "schema_violation");

  EmbeddingMatrix emb;
  emb.vocabulary.add("a\tb");
  emb.table = nn::Tensor::matrix(emb.vocabulary.size(), 1);
  std::stringstream out;
  EXPECT_EQ(code_of([&] { write_embedding(out, emb, {}); }), "schema_violation");
}

TEST(EmbeddingFile, ShortTableIsRejected) {
  EmbeddingMatrix emb;
  emb.table = nn::Tensor::matrix(emb.vocabulary.size(), 2);
  std::stringstream ss;
  write_embedding(ss, emb, {"d", 1});
  std::string bytes = ss.str();
  bytes.resize(bytes.size() - 3);
  std::stringstream cut(bytes);
  EXPECT_FALSE(code_of([&] { read_embedding(cut); }).empty());
}

TEST(Digest, SeparatesTokenBoundaries) {
  EXPECT_NE(corpus_digest({{"ab", "c"}}), corpus_digest({{"a", "bc"}}));
  EXPECT_NE(corpus_digest({{"a"}, {"b"}}), corpus_digest({{"a", "b"}}));
  EXPECT_EQ(corpus_digest({{"a", "b"}}), corpus_digest({{"a", "b"}}));
}

TEST(Cosine, ZeroVectorsAndMismatch) {
  const std::vector<double> u{1, 0}, v{0, 1}, z{0, 0}, w{1};
  EXPECT_DOUBLE_EQ(cosine_similarity(u, u), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(u, v), 0.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(u, z), 0.0);
  EXPECT_EQ(code_of([&] { cosine_similarity(u, w); }), "shape_mismatch");
}
