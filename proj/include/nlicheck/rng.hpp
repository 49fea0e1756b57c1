#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace nli {

// Deterministic generator (splitmix64). The same seed yields the same draw
// sequence on every platform; std::uniform_real_distribution is unspecified
// across standard libraries, so all distributions are derived by hand.
class SeededRng {
  public:
    explicit SeededRng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    bool bernoulli(double p) { return next_double() < p; }

    // Uniform in [0, n)
    std::uint64_t next_below(std::uint64_t n) {
        // Modulo bias is negligible for n << 2^64 (dataset-scale draws).
        return next_u64() % n;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t fork(std::uint64_t stream) {
        // Derive an independent child seed without advancing this generator.
        SeededRng child(state_ ^ (0xd1342543de82ef95ULL * (stream + 1)));
        return child.next_u64();
    }

  private:
    std::uint64_t state_;
};

}  // namespace nli
