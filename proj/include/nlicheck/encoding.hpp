#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nlicheck/errors.hpp"

namespace nli {

// Fixed output class order, matching the order predictions are reported in.
inline const std::array<std::string, 3>& class_order() {
    static const std::array<std::string, 3> k = {"contradiction", "neutral",
                                                 "entailment"};
    return k;
}

inline int label_index(const std::string& label) {
    for (int i = 0; i < 3; ++i)
        if (class_order()[i] == label) return i;
    throw DataError("unknown label: " + label);
}

// One tokenized premise/hypothesis pair, ids padded to max_len.
struct EncodedPair {
    std::vector<std::int32_t> premise_ids;
    std::vector<std::int32_t> hypothesis_ids;
    std::size_t premise_len = 0;
    std::size_t hypothesis_len = 0;
};

// Column-packed batch of pairs. ids are [b * t] row-major, padded with id 0.
struct PairBatch {
    std::size_t size = 0;
    std::size_t max_len = 0;
    std::vector<std::int32_t> premise_ids;
    std::vector<std::int32_t> hypothesis_ids;
    std::vector<std::size_t> premise_lens;
    std::vector<std::size_t> hypothesis_lens;
    std::vector<int> labels;               // empty when unlabeled
    std::vector<std::size_t> example_ids;  // indices into the source dataset

    static PairBatch from_pairs(const std::vector<EncodedPair>& pairs,
                                std::size_t max_len) {
        PairBatch b;
        b.size = pairs.size();
        b.max_len = max_len;
        b.premise_ids.assign(b.size * max_len, 0);
        b.hypothesis_ids.assign(b.size * max_len, 0);
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const EncodedPair& p = pairs[i];
            if (p.premise_len == 0 || p.hypothesis_len == 0)
                throw DataError("encoded pair has an empty sentence");
            if (p.premise_len > max_len || p.hypothesis_len > max_len)
                throw DataError("encoded pair exceeds max_len");
            b.premise_lens.push_back(p.premise_len);
            b.hypothesis_lens.push_back(p.hypothesis_len);
            for (std::size_t t = 0; t < p.premise_len; ++t)
                b.premise_ids[i * max_len + t] = p.premise_ids[t];
            for (std::size_t t = 0; t < p.hypothesis_len; ++t)
                b.hypothesis_ids[i * max_len + t] = p.hypothesis_ids[t];
        }
        return b;
    }
};

}  // namespace nli
