#include "nlicheck/data.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "nlicheck/errors.hpp"
#include "nlicheck/rng.hpp"

namespace nli {

using json = nlohmann::json;

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    auto flush = [&]() {
        if (!cur.empty()) {
            tokens.push_back(cur);
            cur.clear();
        }
    };
    for (unsigned char ch : text) {
        if (std::isspace(ch)) {
            flush();
        } else if (std::isalnum(ch) || ch >= 0x80) {
            // Multibyte UTF-8 sequences stay inside the current token.
            cur.push_back(static_cast<char>(std::tolower(ch)));
        } else {
            flush();
            tokens.push_back(std::string(1, static_cast<char>(ch)));
        }
    }
    flush();
    return tokens;
}

Vocabulary::Vocabulary() {
    id_to_token_ = {"<pad>", "<oov>"};
    token_to_id_["<pad>"] = kPadId;
    token_to_id_["<oov>"] = kOovId;
}

std::int32_t Vocabulary::add(const std::string& token) {
    auto it = token_to_id_.find(token);
    if (it != token_to_id_.end()) return it->second;
    const std::int32_t id = static_cast<std::int32_t>(id_to_token_.size());
    token_to_id_[token] = id;
    id_to_token_.push_back(token);
    return id;
}

std::int32_t Vocabulary::lookup(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kOovId : it->second;
}

bool Vocabulary::contains(const std::string& token) const {
    return token_to_id_.count(token) != 0;
}

std::string Vocabulary::serialize() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < id_to_token_.size(); ++i)
        os << id_to_token_[i] << '\t' << i << '\n';
    return os.str();
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write vocabulary to " + path);
    f << serialize();
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read vocabulary from " + path);
    Vocabulary v;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        const auto tab = line.rfind('\t');
        if (tab == std::string::npos)
            throw FormatError("vocabulary line " + std::to_string(line_no) +
                              ": missing tab");
        const std::string token = line.substr(0, tab);
        const long id = std::strtol(line.c_str() + tab + 1, nullptr, 10);
        if (id <= 1) continue;  // reserved rows are implicit
        const std::int32_t got = v.add(token);
        if (got != id)
            throw FormatError("vocabulary line " + std::to_string(line_no) +
                              ": non-contiguous id " + std::to_string(id));
    }
    return v;
}

std::uint64_t Vocabulary::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : serialize()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

const std::set<std::string>& known_mnli_genres() {
    static const std::set<std::string> k = {
        "government", "fiction", "slate",      "telephone", "travel", "facetoface",
        "letters",    "nineeleven", "oup",     "verbatim",  "state"};
    return k;
}

LoadResult load_nli_file(const std::string& path, bool mnli,
                         const std::optional<std::string>& genre_filter) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open dataset file " + path);
    LoadResult out;
    std::set<std::string> genres_seen;
    std::string line;
    std::size_t first_bad_line = 0;
    std::string first_bad_reason;
    while (std::getline(f, line)) {
        ++out.total_lines;
        if (line.empty()) continue;
        std::string premise, hypothesis, gold, genre;
        try {
            json j = json::parse(line);
            premise = j.at("sentence1").get<std::string>();
            hypothesis = j.at("sentence2").get<std::string>();
            gold = j.at("gold_label").get<std::string>();
            if (mnli && j.contains("genre")) genre = j["genre"].get<std::string>();
        } catch (const json::exception& e) {
            ++out.malformed;
            if (!first_bad_line) {
                first_bad_line = out.total_lines;
                first_bad_reason = e.what();
            }
            continue;
        }
        if (gold == "-") {
            ++out.skipped_unlabeled;
            continue;
        }
        int label;
        try {
            label = label_index(gold);
        } catch (const DataError&) {
            ++out.malformed;
            if (!first_bad_line) {
                first_bad_line = out.total_lines;
                first_bad_reason = "unknown gold_label '" + gold + "'";
            }
            continue;
        }
        if (!genre.empty()) genres_seen.insert(genre);
        if (genre_filter && genre != *genre_filter) continue;
        NliExample ex;
        ex.premise = premise;
        ex.hypothesis = hypothesis;
        ex.premise_tokens = tokenize(premise);
        ex.hypothesis_tokens = tokenize(hypothesis);
        ex.label = label;
        ex.genre = genre;
        out.examples.push_back(std::move(ex));
    }
    if (out.malformed > 0) {
        const double frac = static_cast<double>(out.malformed) /
                            static_cast<double>(std::max<std::size_t>(out.total_lines, 1));
        if (frac > 0.001)
            throw DataError(path + ": " + std::to_string(out.malformed) +
                            " malformed lines (first at line " +
                            std::to_string(first_bad_line) + ": " + first_bad_reason +
                            ")");
        std::cerr << "warning: " << path << ": skipped " << out.malformed
                  << " malformed lines (first at line " << first_bad_line << ")\n";
    }
    if (genre_filter) {
        if (!genres_seen.count(*genre_filter) &&
            !known_mnli_genres().count(*genre_filter)) {
            std::string avail;
            for (const auto& g : genres_seen) avail += (avail.empty() ? "" : ", ") + g;
            throw ConfigError("unknown genre filter '" + *genre_filter +
                              "'; available genres: " + avail);
        }
        if (out.examples.empty())
            std::cerr << "warning: genre filter '" << *genre_filter
                      << "' matched no examples in " << path << "\n";
    }
    return out;
}

}  // namespace

LoadResult load_snli(const std::string& path) {
    return load_nli_file(path, false, std::nullopt);
}

LoadResult load_mnli(const std::string& path,
                     const std::optional<std::string>& genre_filter) {
    return load_nli_file(path, true, genre_filter);
}

Vocabulary build_vocabulary(const std::vector<NliExample>& training_examples) {
    if (training_examples.empty())
        throw DataError("build_vocabulary: empty corpus");
    Vocabulary v;
    for (const NliExample& ex : training_examples) {
        for (const std::string& t : ex.premise_tokens) v.add(t);
        for (const std::string& t : ex.hypothesis_tokens) v.add(t);
    }
    return v;
}

EmbeddingMatrix load_embeddings(const std::string& path, const Vocabulary& vocab,
                                bool trainable, std::size_t dim, std::uint64_t seed) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open embedding file " + path);
    EmbeddingMatrix out;
    out.matrix = Tensor<float>({vocab.size(), dim});
    std::vector<bool> found(vocab.size(), false);
    std::string line;
    std::size_t line_no = 0;
    std::size_t vocab_hits = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto sp = line.find(' ');
        if (sp == std::string::npos)
            throw DataError(path + " line " + std::to_string(line_no) +
                            ": expected token plus " + std::to_string(dim) + " floats");
        const std::string token = line.substr(0, sp);
        const bool wanted = vocab.contains(token);
        // parse (and count fields) even for unwanted tokens to validate format
        const char* p = line.c_str() + sp;
        std::size_t nfields = 0;
        const std::int32_t id = wanted ? vocab.lookup(token) : -1;
        while (*p) {
            while (*p == ' ') ++p;
            if (!*p) break;
            char* end = nullptr;
            const float v = std::strtof(p, &end);
            if (end == p)
                throw DataError(path + " line " + std::to_string(line_no) +
                                ": bad float field");
            if (wanted && nfields < dim)
                out.matrix.at(static_cast<std::size_t>(id), nfields) = v;
            ++nfields;
            p = end;
        }
        if (nfields != dim)
            throw DataError(path + " line " + std::to_string(line_no) + ": " +
                            std::to_string(nfields + 1) + " fields, expected " +
                            std::to_string(dim + 1));
        ++out.file_vectors;
        if (wanted && !found[static_cast<std::size_t>(id)]) {
            found[static_cast<std::size_t>(id)] = true;
            ++vocab_hits;
        }
    }
    SeededRng rng(seed);
    for (std::size_t i = 2; i < vocab.size(); ++i) {
        if (found[i]) continue;
        if (trainable)
            for (std::size_t k = 0; k < dim; ++k)
                out.matrix.at(i, k) = static_cast<float>(rng.uniform(-0.05, 0.05));
        // frozen mode: stays zero
    }
    // oov row follows the same rule as unfound words
    if (trainable)
        for (std::size_t k = 0; k < dim; ++k)
            out.matrix.at(1, k) = static_cast<float>(rng.uniform(-0.05, 0.05));
    const std::size_t real_vocab = vocab.size() > 2 ? vocab.size() - 2 : 0;
    out.coverage = real_vocab ? static_cast<double>(vocab_hits) /
                                    static_cast<double>(real_vocab)
                              : 0.0;
    return out;
}

EmbeddingMatrix random_embeddings(const Vocabulary& vocab, std::size_t dim,
                                  std::uint64_t seed) {
    EmbeddingMatrix out;
    out.matrix = Tensor<float>({vocab.size(), dim});
    SeededRng rng(seed);
    for (std::size_t i = 1; i < vocab.size(); ++i)
        for (std::size_t k = 0; k < dim; ++k)
            out.matrix.at(i, k) = static_cast<float>(rng.uniform(-0.05, 0.05));
    out.coverage = 0.0;
    return out;
}

EncodedPair encode_example(const NliExample& ex, const Vocabulary& vocab,
                           std::size_t max_len) {
    EncodedPair p;
    auto enc = [&](const std::vector<std::string>& toks,
                   std::vector<std::int32_t>& out) {
        // truncate right: keep the sentence start
        const std::size_t n = std::min(toks.size(), max_len);
        for (std::size_t i = 0; i < n; ++i) out.push_back(vocab.lookup(toks[i]));
        return n;
    };
    p.premise_len = enc(ex.premise_tokens, p.premise_ids);
    p.hypothesis_len = enc(ex.hypothesis_tokens, p.hypothesis_ids);
    if (p.premise_len == 0 || p.hypothesis_len == 0)
        throw DataError("example with empty sentence cannot be encoded");
    return p;
}

std::vector<PairBatch> make_batches(const std::vector<NliExample>& examples,
                                    const Vocabulary& vocab, std::size_t batch_size,
                                    std::size_t max_len, std::uint64_t shuffle_seed) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    SeededRng rng(shuffle_seed);
    rng.shuffle(order);
    std::vector<PairBatch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, order.size() - start);
        std::vector<EncodedPair> pairs;
        pairs.reserve(n);
        std::vector<int> labels;
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t idx = order[start + i];
            pairs.push_back(encode_example(examples[idx], vocab, max_len));
            labels.push_back(examples[idx].label);
            ids.push_back(idx);
        }
        PairBatch b = PairBatch::from_pairs(pairs, max_len);
        b.labels = std::move(labels);
        b.example_ids = std::move(ids);
        batches.push_back(std::move(b));
    }
    return batches;
}

}  // namespace nli
