#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dtmx {

// Error categories map 1:1 onto CLI exit codes: config/usage = 1,
// data/format = 2, numeric failure = 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Counter-based seeded RNG with portable draw semantics (no reliance on
/// libstdc++ distribution internals, so streams are stable across platforms).
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ull) {
        // warm up so that small seeds diverge immediately
        next();
        next();
    }

    uint64_t next() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform integer in [0, n), unbiased via rejection.
    uint64_t below(uint64_t n) {
        if (n == 0) throw NumericError("Rng::below: empty range");
        uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
        for (;;) {
            uint64_t r = next();
            if (r >= threshold) return r % n;
        }
    }

    /// Standard normal via Box-Muller (deterministic draw order).
    double normal() {
        if (haveSpare_) {
            haveSpare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        haveSpare_ = true;
        return u * f;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    bool haveSpare_ = false;
    double spare_ = 0.0;
};

/// Overflow-free logistic function, exact at 0.5 for x = 0.
inline double stableSigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

/// Derives an independent stream from (seed, tags); used to give folds,
/// members and records their own reproducible streams.
inline uint64_t mixSeed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    auto mix = [](uint64_t h, uint64_t k) {
        h ^= k + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        return h;
    };
    return mix(mix(mix(seed, a + 1), b + 2), c + 3);
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results must be
/// written to pre-sized slots; no ordering guarantees during execution.
/// The first exception thrown by any task is rethrown on the caller.
void parallelFor(int64_t n, int jobs, const std::function<void(int64_t)>& fn);

/// Linear-interpolation percentile over a copy of `values`; q in [0, 1].
double percentile(std::vector<double> values, double q);

std::string readFileOrThrow(const std::string& path);
void writeFileOrThrow(const std::string& path, const std::string& bytes);

std::string base64Encode(const std::string& bytes);

/// Shortest round-trippable decimal rendering of a double.
std::string formatG17(double v);

}  // namespace dtmx
