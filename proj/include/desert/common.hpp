#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace desert {

// All recoverable failures carry a short machine-checkable code plus a
// human-readable message.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

    const std::string& code() const { return code_; }

private:
    std::string code_;
};

// Deterministic RNG handle. Streams derived from a master seed via
// split(i) are independent for practical purposes (splitmix64 mixing),
// which is the documented stream-splitting rule for parallel work items.
class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }

    // inclusive bounds
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }

    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

    std::mt19937_64& engine() { return engine_; }

    std::uint64_t seed() const { return seed_; }

    RandomSource split(std::uint64_t stream) const {
        return RandomSource(mix(seed_ ^ mix(stream + 0x9e3779b97f4a7c15ULL)));
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::mt19937_64 engine_;
    std::uint64_t seed_;
};

} // namespace desert
