#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

namespace milpool {

// Counter-based random stream built on the SplitMix64 finalizer: the k-th
// output is a fixed bijective hash of (key, k), so the sequence depends only
// on the key and never on call history outside this stream. Child streams are
// derived by hashing (key, index), which keeps per-fold / per-epoch streams
// independent and reproducible across platforms. The std::random
// distributions are deliberately not used: their output is not specified
// bit-for-bit, this generator is.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : key_(mix(seed ^ kStreamTag)) {}

    // Deterministic sub-stream for (this stream, index); counter starts at 0.
    RngStream child(std::uint64_t index) const {
        return RngStream(key_ ^ mix(index + kChildTag), 0);
    }

    std::uint64_t next_u64() {
        return mix(key_ + kGamma * ++counter_);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    // Gaussian via Box-Muller; consumes two uniforms per call.
    double normal(double mean, double stddev) {
        double u1 = 1.0 - uniform01();  // (0, 1], keeps the log finite
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * kPi * u2);
    }

    // Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("RngStream::below: n must be positive");
        std::uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    std::uint64_t key() const { return key_; }

private:
    RngStream(std::uint64_t key, int) : key_(key) {}

    static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ull;
    static constexpr std::uint64_t kStreamTag = 0x5851f42d4c957f2dull;
    static constexpr std::uint64_t kChildTag = 0xd1342543de82ef95ull;
    static constexpr double kPi = 3.14159265358979323846;

    static std::uint64_t mix(std::uint64_t z) {
        z += kGamma;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace milpool
