#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace condbisim {

// SplitMix64 step; used to derive independent per-component seeds from one
// master seed. The scheme is documented behaviour: every run seeds exactly
// derive(master, tag) for a fixed set of tags, so reruns are byte-identical.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, const std::string& tag) {
  return splitmix64(master ^ fnv1a64(tag.data(), tag.size()));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

// Deterministic RNG. All variates are produced from raw mt19937_64 output
// (whose bit stream the standard fixes); std::*_distribution is deliberately
// avoided because its output is implementation-defined.
class SplitRng {
 public:
  explicit SplitRng(std::uint64_t seed) : gen_(seed) {}

  SplitRng split(const std::string& tag) { return SplitRng(derive_seed(base_draw(), tag)); }
  SplitRng split(std::uint64_t index) { return SplitRng(derive_seed(base_draw(), index)); }

  std::uint64_t bits() { return gen_(); }

  // Uniform in [0,1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n). Rejection-free modulo bias is negligible for
  // desk-scale n, but use rejection anyway to keep the stream well-defined.
  int uniform_int(int n) {
    const std::uint64_t bound = ~0ULL - ~0ULL % static_cast<std::uint64_t>(n);
    std::uint64_t x = gen_();
    while (x >= bound) x = gen_();
    return static_cast<int>(x % static_cast<std::uint64_t>(n));
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(), u2 = uniform01();
    while (u1 <= 1e-300) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform point on the probability simplex (Dirichlet(1,...,1)).
  std::vector<double> simplex(int n) {
    std::vector<double> w(n);
    double total = 0.0;
    for (auto& x : w) {
      double u = uniform01();
      while (u <= 1e-300) u = uniform01();
      x = -std::log(u);
      total += x;
    }
    for (auto& x : w) x /= total;
    return w;
  }

  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(p[i], p[uniform_int(i + 1)]);
    return p;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i)
      std::swap(v[i], v[uniform_int(i + 1)]);
  }

  // Sample k distinct indices from [0, n) (uniform without replacement).
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_int(n - i)]);
    idx.resize(k);
    return idx;
  }

  // Draw from a finite distribution given as probabilities summing to one.
  int categorical(const std::vector<double>& probs) {
    double u = uniform01();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
  }

 private:
  std::uint64_t base_draw() { return gen_(); }
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace condbisim
