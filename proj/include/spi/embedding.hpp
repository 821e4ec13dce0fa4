#pragma once

// Vocabularies, word2vec (skip-gram or CBOW with negative sampling), sequence
// encoding, and the embedding checkpoint format.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "spi/common.hpp"
#include "spi/nn/tensor.hpp"
#include "spi/tokenize.hpp"

namespace spi {

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kOov = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kOovToken = "<oov>";

  Vocabulary() {
    add(std::string(kPadToken));
    add(std::string(kOovToken));
  }

  std::size_t size() const { return tokens_.size(); }

  std::optional<std::size_t> find(const std::string& token) const {
    const auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Index of `token`, or `<oov>` when unknown.
  std::size_t index_of(const std::string& token) const { return find(token).value_or(kOov); }

  const std::string& token(std::size_t index) const { return tokens_.at(index); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::size_t add(const std::string& token) {
    if (const auto it = index_.find(token); it != index_.end()) return it->second;
    index_.emplace(token, tokens_.size());
    tokens_.push_back(token);
    return tokens_.size() - 1;
  }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Tokens with count >= min_count, most frequent first, ties lexicographic.
inline Vocabulary build_vocabulary(const std::vector<TokenSequence>& corpus, std::size_t min_count = 1) {
  if (min_count < 1) throw Error("invalid_config", "min_count must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& seq : corpus) {
    for (const auto& t : seq) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> entries;
  for (auto& [token, n] : counts) {
    if (n >= min_count && token != Vocabulary::kPadToken && token != Vocabulary::kOovToken) {
      entries.emplace_back(token, n);
    }
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (const auto& [token, n] : entries) vocab.add(token);
  return vocab;
}

struct EmbeddingMatrix {
  Vocabulary vocabulary;
  nn::Tensor table;  // V x k; row 0 is padding and stays zero

  std::size_t dim() const { return table.cols(); }
  std::size_t size() const { return table.rows(); }
  std::span<const double> row(std::size_t index) const { return {table.row(index), dim()}; }

  bool operator==(const EmbeddingMatrix&) const = default;
};

inline std::string corpus_digest(const std::vector<TokenSequence>& corpus) {
  Digest d;
  for (const auto& seq : corpus) {
    for (const auto& t : seq) {
      d.update(t);
      d.update_separator();
    }
    d.update("\n");
  }
  return d.hex();
}

enum class Word2VecVariant { SkipGram, Cbow };

struct Word2VecConfig {
  std::size_t dim = 300;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double learning_rate = 0.025;
  Word2VecVariant variant = Word2VecVariant::SkipGram;
  std::uint64_t seed = 1;
};

struct Word2VecResult {
  EmbeddingMatrix embedding;
  std::vector<double> epoch_losses;  // mean negative-sampling loss per epoch
};

namespace detail {

inline double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

}  // namespace detail

/// Trains input vectors with negative sampling. Single-threaded and fully
/// determined by (corpus, vocabulary, config).
inline Word2VecResult train_word2vec(const std::vector<TokenSequence>& corpus, const Vocabulary& vocab,
                                     const Word2VecConfig& config) {
  if (config.dim < 1 || config.window < 1 || config.negatives < 1) {
    throw Error("invalid_config", "word2vec dim, window and negatives must be >= 1");
  }
  const std::size_t v = vocab.size();
  const std::size_t k = config.dim;

  std::vector<std::vector<std::size_t>> sentences;
  std::vector<double> counts(v, 0.0);
  std::size_t total_words = 0;
  for (const auto& seq : corpus) {
    std::vector<std::size_t> ids;
    for (const auto& t : seq) {
      const auto id = vocab.find(t);
      if (!id || *id < 2) continue;
      ids.push_back(*id);
      counts[*id] += 1.0;
    }
    total_words += ids.size();
    if (ids.size() >= 2) sentences.push_back(std::move(ids));
  }
  const auto distinct = static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0; }));
  if (distinct < 2 || sentences.empty()) {
    throw Error("insufficient_corpus", "word2vec needs at least two distinct in-vocabulary tokens in one sequence");
  }

  // Unigram^0.75 noise distribution as a cumulative table.
  std::vector<double> cumulative(v, 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < v; ++i) {
    acc += counts[i] > 0 ? std::pow(counts[i], 0.75) : 0.0;
    cumulative[i] = acc;
  }
  Rng rng(config.seed);
  const auto draw_negative = [&]() {
    const double u = rng.uniform() * acc;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    return static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cumulative.begin(), static_cast<std::ptrdiff_t>(v - 1)));
  };

  Word2VecResult result;
  result.embedding.vocabulary = vocab;
  nn::Tensor& in = result.embedding.table;
  in = nn::Tensor::matrix(v, k);
  for (std::size_t r = 1; r < v; ++r) {
    for (std::size_t c = 0; c < k; ++c) in(r, c) = rng.uniform(-0.5, 0.5) / static_cast<double>(k);
  }
  nn::Tensor out = nn::Tensor::matrix(v, k);

  std::vector<double> grad(k);
  std::vector<double> hidden(k);
  const double planned = static_cast<double>(config.epochs * total_words) + 1.0;
  double processed = 0.0;

  // One positive target plus negatives against the hidden vector; returns
  // the pair loss and accumulates dLoss/dhidden into `grad`.
  const auto train_pair = [&](const double* h, std::size_t target, double lr) {
    double loss = 0.0;
    for (std::size_t n = 0; n <= config.negatives; ++n) {
      std::size_t word = target;
      double label = 1.0;
      if (n > 0) {
        word = draw_negative();
        if (word == target) continue;
        label = 0.0;
      }
      double* o = out.row(word);
      double dot = 0.0;
      for (std::size_t c = 0; c < k; ++c) dot += h[c] * o[c];
      loss -= label > 0 ? detail::log_sigmoid(dot) : detail::log_sigmoid(-dot);
      const double g = (label - nn::sigmoid(dot)) * lr;
      for (std::size_t c = 0; c < k; ++c) {
        grad[c] += g * o[c];
        o[c] += g * h[c];
      }
    }
    return loss;
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::size_t pairs = 0;
    for (const auto& ids : sentences) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const double lr = config.learning_rate * std::max(1e-4, 1.0 - processed / planned);
        processed += 1.0;
        const std::size_t reduced = static_cast<std::size_t>(rng.below(config.window));
        const std::size_t win = config.window - reduced;
        const std::size_t lo = i >= win ? i - win : 0;
        const std::size_t hi = std::min(ids.size() - 1, i + win);
        if (config.variant == Word2VecVariant::SkipGram) {
          double* center = in.row(ids[i]);
          for (std::size_t j = lo; j <= hi; ++j) {
            if (j == i) continue;
            std::fill(grad.begin(), grad.end(), 0.0);
            epoch_loss += train_pair(center, ids[j], lr);
            ++pairs;
            for (std::size_t c = 0; c < k; ++c) center[c] += grad[c];
          }
        } else {
          std::fill(hidden.begin(), hidden.end(), 0.0);
          std::size_t context = 0;
          for (std::size_t j = lo; j <= hi; ++j) {
            if (j == i) continue;
            const double* cv = in.row(ids[j]);
            for (std::size_t c = 0; c < k; ++c) hidden[c] += cv[c];
            ++context;
          }
          if (context == 0) continue;
          for (auto& h : hidden) h /= static_cast<double>(context);
          std::fill(grad.begin(), grad.end(), 0.0);
          epoch_loss += train_pair(hidden.data(), ids[i], lr);
          ++pairs;
          for (std::size_t j = lo; j <= hi; ++j) {
            if (j == i) continue;
            double* cv = in.row(ids[j]);
            for (std::size_t c = 0; c < k; ++c) cv[c] += grad[c];
          }
        }
      }
    }
    result.epoch_losses.push_back(pairs == 0 ? 0.0 : epoch_loss / static_cast<double>(pairs));
  }
  for (std::size_t c = 0; c < k; ++c) in(Vocabulary::kPad, c) = 0.0;
  return result;
}

struct EncodedSequence {
  nn::Tensor matrix;                 // L x k
  std::size_t true_length = 0;       // rows past this are zero
  std::vector<std::size_t> indices;  // vocabulary rows of the first true_length tokens

  bool operator==(const EncodedSequence&) const = default;
};

/// Embeds the first min(|tokens|, L) tokens; unknown tokens use the `<oov>` row.
inline EncodedSequence encode_sequence(const TokenSequence& tokens, const EmbeddingMatrix& emb, std::size_t max_length) {
  if (max_length < 1) throw Error("invalid_config", "max length must be >= 1");
  EncodedSequence enc{nn::Tensor::matrix(max_length, emb.dim()), std::min(tokens.size(), max_length), {}};
  enc.indices.reserve(enc.true_length);
  for (std::size_t t = 0; t < enc.true_length; ++t) {
    const std::size_t id = emb.vocabulary.index_of(tokens[t]);
    enc.indices.push_back(id);
    std::copy_n(emb.table.row(id), emb.dim(), enc.matrix.row(t));
  }
  return enc;
}

/// dot(u, v) / (|u| |v|); zero when either vector is zero.
inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw Error("shape_mismatch", concat("cosine_similarity: sizes ", u.size(), " and ", v.size()));
  }
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Binary helpers shared by the checkpoint formats.

namespace io {

inline void write_f64(std::ostream& out, double value) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(value);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

inline double read_f64(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (in.gcount() != 8) throw Error("schema_violation", "checkpoint truncated inside a float blob");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline nlohmann::json read_header_line(std::istream& in, std::string_view what) {
  std::string line;
  if (!std::getline(in, line)) throw Error("schema_violation", concat(what, ": missing JSON header line"));
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("schema_violation", concat(what, ": header is not JSON (", e.what(), ")"));
  }
}

}  // namespace io

struct EmbeddingHeader {
  std::string corpus_digest;
  std::uint64_t seed = 0;
};

/// JSON header line, `token<TAB>index` per vocabulary entry, then V*k
/// little-endian doubles row-major.
inline void write_embedding(std::ostream& out, const EmbeddingMatrix& emb, const EmbeddingHeader& header) {
  const nlohmann::json j = {{"format_version", kFormatVersion}, {"V", emb.size()}, {"k", emb.dim()},
                            {"corpus_digest", header.corpus_digest}, {"seed", header.seed}};
  out << j.dump() << '\n';
  for (std::size_t i = 0; i < emb.vocabulary.size(); ++i) {
    const auto& t = emb.vocabulary.token(i);
    if (t.find_first_of("\t\n") != std::string::npos) {
      throw Error("schema_violation", concat("token at index ", i, " contains a tab or newline"));
    }
    out << t << '\t' << i << '\n';
  }
  for (double v : emb.table.values()) io::write_f64(out, v);
}

inline std::pair<EmbeddingMatrix, EmbeddingHeader> read_embedding(std::istream& in) {
  const auto j = io::read_header_line(in, "embedding checkpoint");
  for (const char* key : {"format_version", "V", "k", "corpus_digest", "seed"}) {
    if (!j.contains(key)) throw Error("schema_violation", concat("embedding checkpoint: header lacks '", key, "'"));
  }
  if (j["format_version"].get<int>() != kFormatVersion) {
    throw Error("schema_violation", "embedding checkpoint: unsupported format_version");
  }
  const auto v = j["V"].get<std::size_t>();
  const auto k = j["k"].get<std::size_t>();
  EmbeddingMatrix emb;
  std::string line;
  for (std::size_t i = 0; i < v; ++i) {
    if (!std::getline(in, line)) throw Error("schema_violation", "embedding checkpoint: vocabulary truncated");
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos || line.substr(tab + 1) != std::to_string(i)) {
      throw Error("schema_violation", concat("embedding checkpoint: bad vocabulary line ", i));
    }
    if (emb.vocabulary.add(line.substr(0, tab)) != i) {
      throw Error("schema_violation", concat("embedding checkpoint: vocabulary line ", i, " out of order"));
    }
  }
  emb.table = nn::Tensor::matrix(v, k);
  for (auto& x : emb.table.values()) x = io::read_f64(in);
  return {std::move(emb), EmbeddingHeader{j["corpus_digest"].get<std::string>(), j["seed"].get<std::uint64_t>()}};
}

}  // namespace spi
