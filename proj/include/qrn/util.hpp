// Shared utilities: deterministic RNG, seed derivation, content hashing.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qrn {

// Runtime contract violations (bad inputs, malformed files, degenerate math)
// are reported as exceptions carrying a human-readable message.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

template <typename... Args>
[[noreturn]] inline void fail(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  throw Error(os.str());
}

template <typename... Args>
inline void require(bool cond, Args&&... args) {
  if (!cond) fail(std::forward<Args>(args)...);
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent child seed from a parent seed and a string tag.
// Used so every pipeline stage gets its own stream from one master seed.
inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag) {
  std::uint64_t s = parent;
  for (char c : tag) {
    s ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    (void)splitmix64(s);
  }
  return splitmix64(s);
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag,
                                 std::uint64_t index) {
  std::uint64_t s = derive_seed(parent, tag);
  s ^= index * 0x9e3779b97f4a7c15ULL;
  return splitmix64(s);
}

// mt19937_64 is bit-exact across platforms; the std distributions are not,
// so uniform/normal draws are implemented here explicitly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double next_double() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // uniform integer in [0, n)
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) fail("Rng::next_below: n must be positive");
    // rejection sampling keeps the draw unbiased
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  int next_int(int lo, int hi_exclusive) {
    return lo + static_cast<int>(
                    next_below(static_cast<std::uint64_t>(hi_exclusive - lo)));
  }

  // standard normal via Box-Muller
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// FNV-1a, used for input/output coupling checks in run manifests.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  return fnv1a64(s.data(), s.size());
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open file: ", path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "cannot open file for writing: ", path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  require(out.good(), "write failed: ", path);
}

inline std::string file_hash_hex(const std::string& path) {
  const std::string bytes = read_file(path);
  return hash_hex(fnv1a64(bytes.data(), bytes.size()));
}

// Fixed-format double for text exports: round-trips exactly and is
// byte-stable across runs.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return std::string(buf);
}

}  // namespace qrn
