#ifndef PROXYDEC_STEERING_HPP
#define PROXYDEC_STEERING_HPP

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "proxydec/core.hpp"

namespace proxydec {

inline constexpr double kDefaultAlpha = 0.5;
inline constexpr double kMaxAlpha = 16.0;

struct SteeringRoles {
  std::string base = "base";
  std::string expert = "expert";
  std::string amateur = "amateur";
};

// Guidance strength plus role assignment. alpha is limited to [0, 16] unless
// allow_large_alpha is set.
struct SteeringSpec {
  double alpha = kDefaultAlpha;
  SteeringRoles roles;

  static SteeringSpec make(double alpha, SteeringRoles roles = {}, bool allow_large_alpha = false) {
    if (!std::isfinite(alpha) || alpha < 0.0) {
      throw ConfigError("alpha must be finite and non-negative, got " + std::to_string(alpha));
    }
    if (alpha > kMaxAlpha && !allow_large_alpha) {
      throw ConfigError("alpha " + std::to_string(alpha) + " exceeds 16; pass the large-alpha override to use it");
    }
    return SteeringSpec{alpha, std::move(roles)};
  }
};

// z_base + alpha * (z_expert - z_amateur), elementwise.
inline LogitVector proxy_combine(const LogitVector& z_base, const LogitVector& z_expert, const LogitVector& z_amateur,
                                 double alpha) {
  if (z_expert.size() != z_base.size() || z_amateur.size() != z_base.size()) {
    throw VocabularyMismatch("logit lengths differ: base " + std::to_string(z_base.size()) + ", expert " +
                             std::to_string(z_expert.size()) + ", amateur " + std::to_string(z_amateur.size()));
  }
  if (!std::isfinite(alpha) || alpha < 0.0) {
    throw ConfigError("alpha must be finite and non-negative");
  }
  std::vector<double> out(z_base.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = z_base[i] + alpha * (z_expert[i] - z_amateur[i]);
  }
  return LogitVector(std::move(out));
}

struct EnsembleTerm {
  double weight = 1.0;
  std::string source;
};

struct LogitEnsemble {
  std::vector<EnsembleTerm> terms;

  static LogitEnsemble proxy(const SteeringSpec& s) {
    return LogitEnsemble{{{1.0, s.roles.base}, {s.alpha, s.roles.expert}, {-s.alpha, s.roles.amateur}}};
  }

  // Expert-minus-amateur only; the limit that large alpha approaches.
  static LogitEnsemble delta(const SteeringRoles& r) {
    return LogitEnsemble{{{1.0, r.expert}, {-1.0, r.amateur}}};
  }
};

// Sum of weight_i * z_i. Adjacent terms with opposite weights (w, -w) are
// folded into w * (z_i - z_j) and unit weights are added without a multiply,
// so the proxy normal form evaluates exactly like proxy_combine.
inline LogitVector combine_ensemble(std::span<const LogitVector> logits, const LogitEnsemble& ensemble) {
  const auto& terms = ensemble.terms;
  if (terms.empty()) throw ConfigError("ensemble has no terms");
  if (logits.size() != terms.size()) {
    throw ConfigError("ensemble has " + std::to_string(terms.size()) + " terms but " +
                      std::to_string(logits.size()) + " logit vectors were supplied");
  }
  const std::size_t n = logits[0].size();
  for (std::size_t t = 0; t < terms.size(); ++t) {
    if (!std::isfinite(terms[t].weight)) throw ConfigError("non-finite ensemble weight");
    if (logits[t].size() != n) throw VocabularyMismatch("ensemble logit lengths differ");
  }

  std::vector<double> acc(n, 0.0);
  bool first = true;
  for (std::size_t t = 0; t < terms.size();) {
    const double w = terms[t].weight;
    const auto& z = logits[t];
    if (t + 1 < terms.size() && terms[t + 1].weight == -w) {
      const auto& zn = logits[t + 1];
      for (std::size_t i = 0; i < n; ++i) {
        const double v = w * (z[i] - zn[i]);
        acc[i] = first ? v : acc[i] + v;
      }
      t += 2;
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        const double v = w == 1.0 ? z[i] : w * z[i];
        acc[i] = first ? v : acc[i] + v;
      }
      t += 1;
    }
    first = false;
  }
  return LogitVector(std::move(acc));
}

class UndefinedBound : public DomainError {
 public:
  using DomainError::DomainError;
};

// Smallest alpha* >= 0 such that every alpha > alpha* makes
// argmax(z_base + alpha * delta) == argmax(delta). Requires a unique delta
// argmax.
inline double dominance_bound(const LogitVector& z_base, const LogitVector& delta) {
  if (z_base.size() != delta.size()) throw VocabularyMismatch("dominance_bound: length mismatch");
  const std::size_t m = argmax(delta);
  for (std::size_t j = 0; j < delta.size(); ++j) {
    if (j != m && delta[j] == delta[m]) {
      throw UndefinedBound("delta argmax is not unique (tokens " + std::to_string(m) + " and " +
                           std::to_string(j) + ")");
    }
  }
  double bound = 0.0;
  for (std::size_t j = 0; j < delta.size(); ++j) {
    if (j == m) continue;
    bound = std::max(bound, (z_base[j] - z_base[m]) / (delta[m] - delta[j]));
  }
  return bound;
}

inline LogitVector logit_delta(const LogitVector& z_expert, const LogitVector& z_amateur) {
  if (z_expert.size() != z_amateur.size()) throw VocabularyMismatch("logit_delta: length mismatch");
  std::vector<double> d(z_expert.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = z_expert[i] - z_amateur[i];
  return LogitVector(std::move(d));
}

}  // namespace proxydec

#endif  // PROXYDEC_STEERING_HPP
