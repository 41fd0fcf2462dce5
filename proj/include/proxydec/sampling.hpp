#ifndef PROXYDEC_SAMPLING_HPP
#define PROXYDEC_SAMPLING_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxydec/backends.hpp"
#include "proxydec/codec.hpp"
#include "proxydec/core.hpp"
#include "proxydec/rng.hpp"
#include "proxydec/scheduler.hpp"
#include "proxydec/steering.hpp"

namespace proxydec {

enum class SamplerKind { greedy, temperature, top_p };

inline SamplerKind parse_sampler_kind(const std::string& s) {
  if (s == "greedy") return SamplerKind::greedy;
  if (s == "temperature") return SamplerKind::temperature;
  if (s == "top_p" || s == "top-p") return SamplerKind::top_p;
  throw ConfigError("unknown sampler '" + s + "' (expected greedy|temperature|top_p)");
}

inline const char* to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::greedy: return "greedy";
    case SamplerKind::temperature: return "temperature";
    case SamplerKind::top_p: return "top_p";
  }
  return "?";
}

struct SamplerSpec {
  SamplerKind kind = SamplerKind::greedy;
  double temperature = 1.0;
  double top_p = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (kind == SamplerKind::greedy) return;
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be positive");
    if (kind == SamplerKind::top_p && !(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]");
  }
};

inline TokenId select_greedy(const LogitVector& z) { return static_cast<TokenId>(argmax(z)); }

// Temperature, then nucleus truncation (smallest descending-probability prefix
// whose mass reaches top_p, boundary token kept, ties ordered by id), then an
// inverse-CDF draw over the renormalized nucleus. Consumes one draw.
inline TokenId select_top_p(const LogitVector& z, double top_p, double temperature, PortableRng& rng) {
  std::vector<double> scaled(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) scaled[i] = z[i] / temperature;
  const ProbVector p = stable_softmax(scaled);

  std::vector<TokenId> order(p.size());
  std::iota(order.begin(), order.end(), TokenId{0});
  std::sort(order.begin(), order.end(), [&](TokenId a, TokenId b) { return p[a] > p[b] || (p[a] == p[b] && a < b); });

  std::size_t kept = 0;
  double mass = 0.0;
  while (kept < order.size()) {
    mass += p[order[kept++]];
    if (mass >= top_p) break;
  }

  const double u = rng.next_unit() * mass;
  double cum = 0.0;
  for (std::size_t i = 0; i < kept; ++i) {
    cum += p[order[i]];
    if (u < cum) return order[i];
  }
  return order[kept - 1];
}

inline TokenId select_token(const LogitVector& z, const SamplerSpec& spec, PortableRng& rng) {
  switch (spec.kind) {
    case SamplerKind::greedy: return select_greedy(z);
    case SamplerKind::temperature: return select_top_p(z, 1.0, spec.temperature, rng);
    case SamplerKind::top_p: return select_top_p(z, spec.top_p, spec.temperature, rng);
  }
  return select_greedy(z);
}

inline constexpr std::size_t kDefaultMaxNewTokens = 4096;

struct DecodeConfig {
  SteeringSpec steering;
  SamplerSpec sampler;
  std::size_t max_new_tokens = kDefaultMaxNewTokens;
  bool stop_on_eos = true;
  bool record_trace = false;

  void validate() const {
    if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
    sampler.validate();
    SteeringSpec::make(steering.alpha, steering.roles, true);
  }
};

enum class StopReason { eos, length };

inline const char* to_string(StopReason r) { return r == StopReason::eos ? "eos" : "length"; }

struct StepRecord {
  std::size_t step = 0;
  std::vector<LogitVector> inputs;  // one per ensemble term, role order
  LogitVector combined;
  TokenId chosen = 0;
  double prob = 0.0;
};

struct DecodeResult {
  TokenSeq tokens;  // raw, including a terminating EOS when one was emitted
  std::vector<double> per_step_chosen_prob;
  StopReason stop_reason = StopReason::length;
  std::vector<StepRecord> trace;

  TokenSeq trimmed(const Vocabulary& vocab) const {
    TokenSeq out = tokens;
    if (stop_reason == StopReason::eos && !out.empty() && vocab.is_eos(out.back())) out.pop_back();
    return out;
  }

  friend bool operator==(const DecodeResult& a, const DecodeResult& b) {
    return a.tokens == b.tokens && a.per_step_chosen_prob == b.per_step_chosen_prob && a.stop_reason == b.stop_reason;
  }
};

// Decode stopped early; the tokens generated so far are attached.
class DecodeAborted : public Error {
 public:
  DecodeAborted(const BackendUnavailable& cause, TokenSeq partial)
      : Error(std::string("decode aborted: ") + cause.what()),
        backend_(cause.backend()),
        step_(cause.step()),
        partial_(std::move(partial)) {}

  const std::string& backend() const { return backend_; }
  std::size_t step() const { return step_; }
  const TokenSeq& partial() const { return partial_; }

 private:
  std::string backend_;
  std::size_t step_;
  TokenSeq partial_;
};

// Shared autoregressive loop: score every session on the pending token,
// combine, select, feed the choice back. The chosen token is appended to the
// sessions at the start of the next step, so the final token is never scored.
template <typename Combine>
DecodeResult decode_loop(StepRunner& runner, const Vocabulary& vocab, const DecodeConfig& config, std::uint64_t stream,
                         Combine&& combine) {
  config.validate();
  PortableRng rng(config.sampler.seed, stream);
  DecodeResult result;
  TokenSeq pending;
  for (std::size_t step = 0; step < config.max_new_tokens; ++step) {
    std::vector<LogitVector> z;
    try {
      z = runner.run(pending);
    } catch (const BackendUnavailable& e) {
      throw DecodeAborted(e, result.tokens);
    }
    LogitVector combined = combine(z);
    const TokenId chosen = select_token(combined, config.sampler, rng);
    const double prob = stable_softmax(combined)[chosen];
    result.tokens.push_back(chosen);
    result.per_step_chosen_prob.push_back(prob);
    if (config.record_trace) {
      result.trace.push_back(StepRecord{step, std::move(z), std::move(combined), chosen, prob});
    }
    if (config.stop_on_eos && vocab.is_eos(chosen)) {
      result.stop_reason = StopReason::eos;
      return result;
    }
    pending.assign(1, chosen);
  }
  result.stop_reason = StopReason::length;
  return result;
}

struct RoleSessions {
  Session& base;
  Session& expert;
  Session& amateur;
};

inline DecodeResult decode(RoleSessions sessions, const DecodeConfig& config, const StepScheduler& scheduler,
                           std::uint64_t stream = 0) {
  const auto& vb = sessions.base.descriptor().vocabulary;
  if (auto bad = validate_vocab_compat(vb, sessions.expert.descriptor().vocabulary,
                                       sessions.amateur.descriptor().vocabulary)) {
    throw VocabularyMismatch("incompatible vocabularies: " + *bad);
  }
  const auto& roles = config.steering.roles;
  StepRunner runner(scheduler, {&sessions.base, &sessions.expert, &sessions.amateur},
                    {roles.base, roles.expert, roles.amateur});
  const double alpha = config.steering.alpha;
  return decode_loop(runner, vb, config, stream,
                     [alpha](const std::vector<LogitVector>& z) { return proxy_combine(z[0], z[1], z[2], alpha); });
}

// Generic ensemble decode; sessions are listed in term order.
inline DecodeResult decode_ensemble(std::vector<Session*> sessions, const LogitEnsemble& ensemble,
                                    const DecodeConfig& config, const StepScheduler& scheduler,
                                    std::uint64_t stream = 0) {
  if (sessions.size() != ensemble.terms.size()) throw ConfigError("one session per ensemble term required");
  const auto& v0 = sessions[0]->descriptor().vocabulary;
  for (auto* s : sessions) {
    if (auto bad = validate_vocab_compat(v0, s->descriptor().vocabulary, v0)) {
      throw VocabularyMismatch("incompatible vocabularies: " + *bad);
    }
  }
  std::vector<std::string> roles;
  for (const auto& t : ensemble.terms) roles.push_back(t.source);
  StepRunner runner(scheduler, std::move(sessions), std::move(roles));
  return decode_loop(runner, v0, config, stream,
                     [&](const std::vector<LogitVector>& z) { return combine_ensemble(z, ensemble); });
}

// One JSON object per line; floats as 17-digit decimal strings.
inline void write_step_trace(std::ostream& out, const DecodeResult& result) {
  static const char* kNames[] = {"z_base", "z_expert", "z_amateur"};
  for (const auto& r : result.trace) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    for (std::size_t i = 0; i < r.inputs.size(); ++i) {
      const std::string key = i < 3 ? kNames[i] : "z_" + std::to_string(i);
      j[key] = codec::encode_logits(r.inputs[i].values());
    }
    j["combined"] = codec::encode_logits(r.combined.values());
    j["chosen"] = r.chosen;
    j["prob"] = codec::encode_double(r.prob);
    out << j.dump() << '\n';
  }
}

}  // namespace proxydec

#endif  // PROXYDEC_SAMPLING_HPP
