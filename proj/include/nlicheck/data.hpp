#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "nlicheck/encoding.hpp"
#include "nlicheck/tensor.hpp"

namespace nli {

// Lowercase, whitespace split, punctuation characters as separate tokens.
// No stemming, no stop-word removal.
std::vector<std::string> tokenize(const std::string& text);

class Vocabulary {
  public:
    static constexpr std::int32_t kPadId = 0;
    static constexpr std::int32_t kOovId = 1;

    Vocabulary();

    // Returns the id, inserting in first-occurrence order (ids from 2).
    std::int32_t add(const std::string& token);
    // kOovId for unknown tokens.
    std::int32_t lookup(const std::string& token) const;
    bool contains(const std::string& token) const;

    std::size_t size() const { return id_to_token_.size(); }
    const std::vector<std::string>& tokens() const { return id_to_token_; }

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    std::string serialize() const;  // "<token>\t<id>" lines
    std::uint64_t hash() const;     // FNV-1a over serialize()

  private:
    std::unordered_map<std::string, std::int32_t> token_to_id_;
    std::vector<std::string> id_to_token_;
};

struct NliExample {
    std::string premise;
    std::string hypothesis;
    std::vector<std::string> premise_tokens;
    std::vector<std::string> hypothesis_tokens;
    int label = -1;  // index into class_order()
    std::string genre;
};

struct LoadResult {
    std::vector<NliExample> examples;
    std::size_t total_lines = 0;
    std::size_t skipped_unlabeled = 0;  // gold_label "-"
    std::size_t malformed = 0;
};

LoadResult load_snli(const std::string& path);
LoadResult load_mnli(const std::string& path,
                     const std::optional<std::string>& genre_filter = std::nullopt);

Vocabulary build_vocabulary(const std::vector<NliExample>& training_examples);

struct EmbeddingMatrix {
    Tensor<float> matrix;       // V×dim, row 0 all-zero
    double coverage = 0.0;      // fraction of vocabulary found in the file
    std::size_t file_vectors = 0;
};

// Pretrained text format: "<token> <f1> ... <fdim>" per line. Vocabulary
// words found in the file get the file vectors exactly; missing words get
// uniform(-0.05, 0.05) when the embedding will be trained and zero rows when
// it stays frozen.
EmbeddingMatrix load_embeddings(const std::string& path, const Vocabulary& vocab,
                                bool trainable, std::size_t dim = 300,
                                std::uint64_t seed = 7);

// Random matrix for runs without a pretrained file.
EmbeddingMatrix random_embeddings(const Vocabulary& vocab, std::size_t dim,
                                  std::uint64_t seed);

EncodedPair encode_example(const NliExample& ex, const Vocabulary& vocab,
                           std::size_t max_len);

// Deterministic shuffle from the seed, sentences padded/truncated to
// max_len, final partial batch included.
std::vector<PairBatch> make_batches(const std::vector<NliExample>& examples,
                                    const Vocabulary& vocab, std::size_t batch_size,
                                    std::size_t max_len, std::uint64_t shuffle_seed);

}  // namespace nli
