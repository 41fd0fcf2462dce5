#ifndef PROXYDEC_ENGINE_HPP
#define PROXYDEC_ENGINE_HPP

#include <memory>
#include <string>

#include "proxydec/backends.hpp"
#include "proxydec/sampling.hpp"
#include "proxydec/scheduler.hpp"

namespace proxydec {

// Optional per-role token prefixes placed before the shared prompt, e.g. an
// expert's own chat template.
struct RolePrefixes {
  TokenSeq base;
  TokenSeq expert;
  TokenSeq amateur;
};

inline TokenSeq concat(const TokenSeq& a, const TokenSeq& b) {
  TokenSeq out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// Three producers bound to roles plus the decode configuration. Immutable;
// every decode call opens fresh sessions, so one engine serves many requests
// concurrently.
class ProxyDecoder {
 public:
  ProxyDecoder(std::shared_ptr<const Backend> base, std::shared_ptr<const Backend> expert,
               std::shared_ptr<const Backend> amateur, DecodeConfig config, StepScheduler scheduler = {})
      : base_(std::move(base)),
        expert_(std::move(expert)),
        amateur_(std::move(amateur)),
        config_(std::move(config)),
        scheduler_(std::move(scheduler)) {
    if (auto bad = validate_vocab_compat(base_->descriptor().vocabulary, expert_->descriptor().vocabulary,
                                         amateur_->descriptor().vocabulary)) {
      throw VocabularyMismatch("base/expert/amateur vocabularies are incompatible: " + *bad);
    }
    config_.validate();
  }

  const DecodeConfig& config() const { return config_; }
  const StepScheduler& scheduler() const { return scheduler_; }
  const Vocabulary& vocabulary() const { return base_->descriptor().vocabulary; }

  ProxyDecoder with_alpha(double alpha) const {
    DecodeConfig c = config_;
    c.steering.alpha = alpha;
    return with_config(std::move(c));
  }

  ProxyDecoder with_config(DecodeConfig c) const {
    ProxyDecoder d = *this;
    c.validate();
    d.config_ = std::move(c);
    return d;
  }

  ProxyDecoder with_scheduler(StepScheduler s) const {
    ProxyDecoder d = *this;
    d.scheduler_ = std::move(s);
    return d;
  }

  ProxyDecoder with_prefixes(RolePrefixes p) const {
    ProxyDecoder d = *this;
    d.prefixes_ = std::move(p);
    return d;
  }

  DecodeResult decode(const TokenSeq& prompt, const std::string& conditioning, std::uint64_t stream = 0) const {
    auto b = base_->open_session(concat(prefixes_.base, prompt), conditioning);
    auto e = expert_->open_session(concat(prefixes_.expert, prompt), conditioning);
    auto a = amateur_->open_session(concat(prefixes_.amateur, prompt), conditioning);
    return proxydec::decode(RoleSessions{*b, *e, *a}, config_, scheduler_, stream);
  }

  // Decoder driven by the expert-minus-amateur delta alone, the limit of
  // increasing alpha.
  DecodeResult decode_delta_only(const TokenSeq& prompt, const std::string& conditioning,
                                 std::uint64_t stream = 0) const {
    auto e = expert_->open_session(concat(prefixes_.expert, prompt), conditioning);
    auto a = amateur_->open_session(concat(prefixes_.amateur, prompt), conditioning);
    return decode_ensemble({e.get(), a.get()}, LogitEnsemble::delta(config_.steering.roles), config_, scheduler_,
                           stream);
  }

 private:
  std::shared_ptr<const Backend> base_;
  std::shared_ptr<const Backend> expert_;
  std::shared_ptr<const Backend> amateur_;
  DecodeConfig config_;
  StepScheduler scheduler_;
  RolePrefixes prefixes_;
};

}  // namespace proxydec

#endif  // PROXYDEC_ENGINE_HPP
