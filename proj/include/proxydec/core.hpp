#ifndef PROXYDEC_CORE_HPP
#define PROXYDEC_CORE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace proxydec {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

// Error hierarchy. Every error the library raises derives from Error so the
// CLI can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidLogits : public Error {
 public:
  using Error::Error;
};

class VocabularyMismatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class Vocabulary {
 public:
  Vocabulary() = default;

  Vocabulary(std::size_t size, std::set<TokenId> eos_ids, std::string name,
             std::vector<std::string> pieces = {})
      : size_(size), eos_ids_(std::move(eos_ids)), name_(std::move(name)), pieces_(std::move(pieces)) {
    if (size_ < 2) {
      throw ConfigError("vocabulary '" + name_ + "': size must be >= 2");
    }
    for (TokenId id : eos_ids_) {
      if (id >= size_) {
        throw ConfigError("vocabulary '" + name_ + "': eos id " + std::to_string(id) + " out of range");
      }
    }
    if (!pieces_.empty() && pieces_.size() != size_) {
      throw ConfigError("vocabulary '" + name_ + "': pieces length differs from size");
    }
  }

  std::size_t size() const { return size_; }
  const std::set<TokenId>& eos_ids() const { return eos_ids_; }
  const std::string& name() const { return name_; }

  bool is_eos(TokenId id) const { return eos_ids_.contains(id); }
  bool contains(TokenId id) const { return id < size_; }

  // Optional detokenizer: one text piece per id.
  bool has_pieces() const { return !pieces_.empty(); }
  const std::vector<std::string>& pieces() const { return pieces_; }

  std::string render(std::span<const TokenId> ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (has_pieces()) {
        out += pieces_.at(ids[i]);
      } else {
        if (i) out += ' ';
        out += std::to_string(ids[i]);
      }
    }
    return out;
  }

  // Greedy longest-match over the piece table. Empty pieces never match.
  TokenSeq encode(std::string_view text) const {
    if (!has_pieces()) {
      throw ConfigError("vocabulary '" + name_ + "' has no pieces; text prompts need a piece table");
    }
    TokenSeq ids;
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t best_len = 0;
      TokenId best = 0;
      for (TokenId id = 0; id < pieces_.size(); ++id) {
        const auto& p = pieces_[id];
        if (p.size() > best_len && text.substr(pos, p.size()) == p) {
          best_len = p.size();
          best = id;
        }
      }
      if (best_len == 0) {
        throw ConfigError("cannot tokenize text at offset " + std::to_string(pos));
      }
      ids.push_back(best);
      pos += best_len;
    }
    return ids;
  }

  void check(std::span<const TokenId> ids) const {
    for (TokenId id : ids) {
      if (!contains(id)) {
        throw VocabularyMismatch("token id " + std::to_string(id) + " outside vocabulary '" + name_ +
                                 "' of size " + std::to_string(size_));
      }
    }
  }

 private:
  std::size_t size_ = 0;
  std::set<TokenId> eos_ids_;
  std::string name_;
  std::vector<std::string> pieces_;
};

// Dense finite next-token scores in 64-bit floating point.
class LogitVector {
 public:
  LogitVector() = default;

  explicit LogitVector(std::vector<double> values) : values_(std::move(values)) {
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i])) {
        throw InvalidLogits("non-finite logit at index " + std::to_string(i));
      }
    }
  }

  // Widens lower-precision producer output at the boundary.
  static LogitVector widen(std::span<const float> values) {
    return LogitVector(std::vector<double>(values.begin(), values.end()));
  }

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  friend bool operator==(const LogitVector&, const LogitVector&) = default;

 private:
  std::vector<double> values_;
};

class ProbVector {
 public:
  ProbVector() = default;
  explicit ProbVector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

 private:
  std::vector<double> values_;
};

// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> values) {
  if (values.empty()) {
    throw DomainError("argmax of empty vector");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

inline std::size_t argmax(const LogitVector& z) { return argmax(z.values()); }

inline ProbVector stable_softmax(std::span<const double> z) {
  if (z.empty()) {
    throw InvalidLogits("softmax of empty vector");
  }
  for (double v : z) {
    if (!std::isfinite(v)) throw InvalidLogits("non-finite logit passed to softmax");
  }
  const double peak = z[argmax(z)];
  std::vector<double> p(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - peak);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return ProbVector(std::move(p));
}

inline ProbVector stable_softmax(const LogitVector& z) { return stable_softmax(z.values()); }

// Vocabulary compatibility across the three roles. An empty optional means
// compatible; otherwise the string names the first mismatching field.
inline std::optional<std::string> validate_vocab_compat(const Vocabulary& a, const Vocabulary& b,
                                                        const Vocabulary& c) {
  if (b.size() != a.size()) return "size mismatch b";
  if (c.size() != a.size()) return "size mismatch c";
  if (b.eos_ids() != a.eos_ids() || c.eos_ids() != a.eos_ids()) return "eos mismatch";
  return std::nullopt;
}

}  // namespace proxydec

#endif  // PROXYDEC_CORE_HPP
