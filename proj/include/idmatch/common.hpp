#ifndef IDMATCH_COMMON_HPP_
#define IDMATCH_COMMON_HPP_

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

#include <Eigen/Dense>

namespace idmatch {

inline constexpr const char* kToolVersion = "0.1.0";

using Rng = std::mt19937_64;

// Preconditions and bad user input.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed files; carries a human-readable position in the message.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numeric-domain violations (zero vectors where a direction is required,
// non-finite values).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by the training loop; remembers where the run died.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"),
        step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

// Derives an independent stream seed so that, e.g., changing the number of
// training steps does not perturb parameter initialization.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Eigen::VectorXd l2_normalize(const Eigen::VectorXd& v,
                                    const std::string& what = "vector") {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw NumericError("cannot L2-normalize " + what + ": norm is " +
                       std::to_string(n));
  }
  return v / n;
}

// Backward pass of f = u / ||u||: maps a gradient w.r.t. f to a gradient
// w.r.t. u via (I - f f^T) / ||u||.
inline Eigen::VectorXd l2_normalize_backprop(const Eigen::VectorXd& raw,
                                             const Eigen::VectorXd& grad_normalized) {
  const double n = raw.norm();
  if (!(n > 0.0)) {
    throw NumericError("cannot backprop through normalization of a zero vector");
  }
  const Eigen::VectorXd f = raw / n;
  return (grad_normalized - f * f.dot(grad_normalized)) / n;
}

// Shortest decimal representation that round-trips the exact double.
inline std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text, const std::string& context) {
  double value = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw FormatError(std::string("bad number '") + std::string(text) + "' in " +
                      context);
  }
  return value;
}

inline long long parse_int(std::string_view text, const std::string& context) {
  long long value = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw FormatError(std::string("bad integer '") + std::string(text) + "' in " +
                      context);
  }
  return value;
}

// FNV-1a, used to fingerprint dataset files inside checkpoints/manifests.
inline std::uint64_t fnv1a_hash(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  return content;
}

// All artifact emission goes through here: write to a temp file in the same
// directory, then rename into place.
inline void write_file_atomic(const std::filesystem::path& path,
                              std::string_view content) {
  namespace fs = std::filesystem;
  fs::path dir = path.parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open file for writing: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " +
                  ec.message());
  }
}

}  // namespace idmatch

#endif  // IDMATCH_COMMON_HPP_
