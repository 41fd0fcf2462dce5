#ifndef PROXYDEC_EVAL_HPP
#define PROXYDEC_EVAL_HPP

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <functional>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <json.hpp>

#include "proxydec/codec.hpp"
#include "proxydec/core.hpp"
#include "proxydec/engine.hpp"
#include "proxydec/rng.hpp"

namespace proxydec {

enum class ProblemKind { multiple_choice, numeric, free_text };

inline ProblemKind parse_problem_kind(const std::string& s) {
  if (s == "multiple_choice") return ProblemKind::multiple_choice;
  if (s == "numeric") return ProblemKind::numeric;
  if (s == "free_text") return ProblemKind::free_text;
  throw ConfigError("unknown problem kind '" + s + "'");
}

inline const char* to_string(ProblemKind k) {
  switch (k) {
    case ProblemKind::multiple_choice: return "multiple_choice";
    case ProblemKind::numeric: return "numeric";
    case ProblemKind::free_text: return "free_text";
  }
  return "?";
}

struct ProblemRecord {
  std::string id;
  std::optional<TokenSeq> prompt_ids;
  std::optional<std::string> prompt_text;
  std::string conditioning;  // decoded bytes
  std::string gold;
  ProblemKind kind = ProblemKind::free_text;
  std::vector<std::string> choices;

  TokenSeq prompt(const Vocabulary& vocab) const {
    if (prompt_ids) return *prompt_ids;
    return vocab.encode(prompt_text.value_or(""));
  }

  // Choice labels are A, B, C, ... by position.
  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < choices.size(); ++i) out.emplace_back(1, static_cast<char>('A' + i));
    return out;
  }
};

class DatasetError : public Error {
 public:
  DatasetError(std::size_t line, const std::string& what)
      : Error("dataset line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Decimal ("-3.5", "1e3") or fraction ("7/2") with optional surrounding
// whitespace.
inline std::optional<double> parse_number(std::string_view text) {
  auto trim = [](std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  };
  auto decimal = [&](std::string_view s) -> std::optional<double> {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    std::string buf(s);
    static const std::regex kDecimal(R"([+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?)");
    if (!std::regex_match(buf, kDecimal)) return std::nullopt;
    const double v = std::strtod(buf.c_str(), nullptr);
    if (!std::isfinite(v)) return std::nullopt;
    return v;
  };
  text = trim(text);
  if (const auto slash = text.find('/'); slash != std::string_view::npos) {
    const auto num = decimal(text.substr(0, slash));
    const auto den = decimal(text.substr(slash + 1));
    if (!num || !den || *den == 0.0) return std::nullopt;
    return *num / *den;
  }
  return decimal(text);
}

inline std::vector<ProblemRecord> parse_dataset(const std::string& text) {
  std::vector<ProblemRecord> out;
  std::set<std::string> ids;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ProblemRecord r;
    try {
      const auto j = nlohmann::json::parse(line);
      r.id = j.at("id").get<std::string>();
      const auto& prompt = j.at("prompt");
      if (prompt.is_string()) {
        r.prompt_text = prompt.get<std::string>();
      } else {
        r.prompt_ids = prompt.get<TokenSeq>();
      }
      r.conditioning = codec::base64_decode(j.value("conditioning", std::string{}));
      r.gold = j.at("gold").get<std::string>();
      r.kind = parse_problem_kind(j.at("kind").get<std::string>());
      if (j.contains("choices") && !j["choices"].is_null()) r.choices = j["choices"].get<std::vector<std::string>>();
    } catch (const DatasetError&) {
      throw;
    } catch (const std::exception& e) {
      throw DatasetError(lineno, e.what());
    }
    if (!ids.insert(r.id).second) throw DatasetError(lineno, "duplicate problem id '" + r.id + "'");
    if (r.kind == ProblemKind::multiple_choice) {
      if (r.choices.size() < 2) throw DatasetError(lineno, "multiple_choice problem needs at least 2 choices");
      if (r.choices.size() > 26) throw DatasetError(lineno, "at most 26 choices are supported");
    }
    if (r.kind == ProblemKind::numeric && !parse_number(r.gold)) {
      throw DatasetError(lineno, "numeric gold '" + r.gold + "' does not parse as a number");
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<ProblemRecord> without_multiple_choice(std::vector<ProblemRecord> records) {
  std::erase_if(records, [](const ProblemRecord& r) { return r.kind == ProblemKind::multiple_choice; });
  return records;
}

// Rule set:
//   multiple_choice: last standalone capital letter that is a choice label
//   numeric: contents of the last \boxed{...}, else the last decimal number
//   free_text: the final non-empty line, trimmed
inline std::optional<std::string> extract_answer(const std::string& text, ProblemKind kind,
                                                 std::size_t num_choices = 0) {
  switch (kind) {
    case ProblemKind::multiple_choice: {
      for (std::size_t i = text.size(); i-- > 0;) {
        const char c = text[i];
        if (c < 'A' || c >= static_cast<char>('A' + std::min<std::size_t>(num_choices, 26))) continue;
        const bool left_ok = i == 0 || !std::isalnum(static_cast<unsigned char>(text[i - 1]));
        const bool right_ok = i + 1 == text.size() || !std::isalnum(static_cast<unsigned char>(text[i + 1]));
        if (left_ok && right_ok) return std::string(1, c);
      }
      return std::nullopt;
    }
    case ProblemKind::numeric: {
      static const std::string kBoxed = "\\boxed{";
      if (const auto pos = text.rfind(kBoxed); pos != std::string::npos) {
        std::size_t depth = 1;
        const std::size_t begin = pos + kBoxed.size();
        for (std::size_t i = begin; i < text.size(); ++i) {
          if (text[i] == '{') ++depth;
          if (text[i] == '}' && --depth == 0) return text.substr(begin, i - begin);
        }
      }
      static const std::regex kNumber(R"([+-]?\d+(\.\d+)?)");
      std::optional<std::string> last;
      for (auto it = std::sregex_iterator(text.begin(), text.end(), kNumber); it != std::sregex_iterator(); ++it) {
        last = it->str();
      }
      return last;
    }
    case ProblemKind::free_text: {
      std::istringstream in(text);
      std::string line;
      std::optional<std::string> last;
      while (std::getline(in, line)) {
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        last = line.substr(b, e - b + 1);
      }
      return last;
    }
  }
  return std::nullopt;
}

inline std::string normalize_whitespace(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out += ' ';
      pending_space = false;
      out += c;
    }
  }
  return out;
}

inline constexpr double kNumericTolerance = 1e-6;

inline bool grade(const std::optional<std::string>& pred, const std::string& gold, ProblemKind kind,
                  double rel_tol = kNumericTolerance) {
  if (!pred) return false;
  switch (kind) {
    case ProblemKind::multiple_choice: {
      const auto a = normalize_whitespace(*pred);
      const auto b = normalize_whitespace(gold);
      return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::toupper(static_cast<unsigned char>(x)) == std::toupper(static_cast<unsigned char>(y));
             });
    }
    case ProblemKind::numeric: {
      const auto a = parse_number(*pred);
      const auto b = parse_number(gold);
      if (!a || !b) return false;
      return std::abs(*a - *b) <= rel_tol * std::max(std::abs(*a), std::abs(*b));
    }
    case ProblemKind::free_text: return normalize_whitespace(*pred) == normalize_whitespace(gold);
  }
  return false;
}

// A grader sees the generated text and the problem; the rule-based grader is
// the default, and an external judge can be plugged in here.
using Grader = std::function<bool(const std::string& text, const ProblemRecord& problem)>;

inline bool rule_grader(const std::string& text, const ProblemRecord& p) {
  return grade(extract_answer(text, p.kind, p.choices.size()), p.gold, p.kind);
}

// ---------------------------------------------------------------------------
// pass@k

using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

inline void check_pass_at_k_domain(std::size_t n, std::size_t c, std::size_t k) {
  if (n < 1) throw DomainError("pass@k needs n >= 1");
  if (c > n) throw DomainError("pass@k needs c <= n");
  if (k < 1 || k > n) throw DomainError("pass@k needs 1 <= k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
}

// 1 - C(n-c, k) / C(n, k) exactly, via C(n-c,k)/C(n,k) = prod_{i=n-c+1}^{n} (i-k)/i.
inline Rational pass_at_k_exact(std::size_t n, std::size_t c, std::size_t k) {
  check_pass_at_k_domain(n, c, k);
  if (c == 0) return Rational(0);
  if (n - c < k) return Rational(1);
  BigInt num = 1;
  BigInt den = 1;
  for (std::size_t i = n - c + 1; i <= n; ++i) {
    num *= BigInt(i - k);
    den *= BigInt(i);
  }
  return Rational(1) - Rational(num, den);
}

// Rounds a non-negative rational to double by scaling to a 64-bit quotient.
inline double rational_to_double(const Rational& q) {
  BigInt num = boost::multiprecision::numerator(q);
  BigInt den = boost::multiprecision::denominator(q);
  if (num == 0) return 0.0;
  const bool negative = num < 0;
  if (negative) num = -num;
  const long shift = static_cast<long>(boost::multiprecision::msb(den)) - static_cast<long>(boost::multiprecision::msb(num)) + 64;
  BigInt scaled;
  if (shift >= 0) {
    scaled = (num << shift) / den;
  } else {
    scaled = num / (den << -shift);
  }
  const double v = std::ldexp(scaled.convert_to<double>(), static_cast<int>(-shift));
  return negative ? -v : v;
}

inline double pass_at_k(std::size_t n, std::size_t c, std::size_t k) { return rational_to_double(pass_at_k_exact(n, c, k)); }

struct PassKRecord {
  std::string problem_id;
  std::size_t n = 0;
  std::size_t c = 0;
};

inline std::vector<double> pass_at_k_curve(const std::vector<PassKRecord>& records, const std::vector<std::size_t>& ks) {
  std::vector<double> out;
  for (std::size_t k : ks) {
    Rational sum = 0;
    for (const auto& r : records) {
      if (k > r.n) {
        throw DomainError("k=" + std::to_string(k) + " exceeds n=" + std::to_string(r.n) + " for problem '" +
                          r.problem_id + "'");
      }
      sum += pass_at_k_exact(r.n, r.c, k);
    }
    out.push_back(records.empty() ? 0.0 : rational_to_double(sum / Rational(records.size())));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark runs

struct Transcript {
  std::string problem_id;
  std::size_t sample = 0;
  TokenSeq tokens;
  std::string text;
  std::optional<std::string> answer;
  bool correct = false;
  std::string stop_reason;
  std::optional<std::string> error;
};

struct BenchmarkResult {
  std::size_t total = 0;
  std::size_t graded = 0;
  std::size_t correct = 0;
  std::size_t errored = 0;
  double accuracy = 0.0;  // correct / graded over first samples
  std::vector<PassKRecord> passk;
  std::vector<Transcript> transcripts;  // dataset order, then sample order
  std::vector<std::string> errored_ids;
};

// Decode function: (prompt, conditioning, rng stream) -> result.
using DecodeFn = std::function<DecodeResult(const TokenSeq&, const std::string&, std::uint64_t)>;

inline std::uint64_t sample_stream(const std::string& problem_id, std::size_t sample) {
  return PortableRng::mix(codec::fnv1a64(problem_id) + PortableRng::kGamma * (sample + 1));
}

struct BenchmarkOptions {
  std::size_t samples = 1;
  std::size_t jobs = 1;
  Grader grader = rule_grader;
};

inline BenchmarkResult run_benchmark(const std::vector<ProblemRecord>& dataset, const Vocabulary& vocab,
                                     const DecodeFn& decode_fn, const BenchmarkOptions& options) {
  if (options.samples < 1) throw ConfigError("samples per problem must be >= 1");
  struct ProblemOutcome {
    std::vector<Transcript> transcripts;
    bool errored = false;
    std::size_t passed = 0;
  };
  std::vector<ProblemOutcome> outcomes(dataset.size());

  auto solve = [&](std::size_t idx) {
    const auto& p = dataset[idx];
    auto& out = outcomes[idx];
    for (std::size_t s = 0; s < options.samples; ++s) {
      Transcript t;
      t.problem_id = p.id;
      t.sample = s;
      try {
        const DecodeResult r = decode_fn(p.prompt(vocab), p.conditioning, sample_stream(p.id, s));
        t.tokens = r.tokens;
        t.text = vocab.render(r.trimmed(vocab));
        t.answer = extract_answer(t.text, p.kind, p.choices.size());
        t.correct = options.grader(t.text, p);
        t.stop_reason = to_string(r.stop_reason);
        out.passed += t.correct ? 1 : 0;
      } catch (const Error& e) {
        t.error = e.what();
        if (const auto* aborted = dynamic_cast<const DecodeAborted*>(&e)) t.tokens = aborted->partial();
        out.errored = true;
      }
      out.transcripts.push_back(std::move(t));
      if (out.errored) break;
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, dataset.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < dataset.size(); ++i) solve(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < dataset.size(); i = next++) solve(i);
      });
    }
  }

  BenchmarkResult result;
  result.total = dataset.size();
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto& o = outcomes[i];
    if (o.errored) {
      ++result.errored;
      result.errored_ids.push_back(dataset[i].id);
    } else {
      ++result.graded;
      result.correct += o.transcripts.front().correct ? 1 : 0;
      result.passk.push_back(PassKRecord{dataset[i].id, options.samples, o.passed});
    }
    for (auto& t : o.transcripts) result.transcripts.push_back(std::move(t));
  }
  result.accuracy = result.graded ? static_cast<double>(result.correct) / static_cast<double>(result.graded) : 0.0;
  return result;
}

inline BenchmarkResult run_benchmark(const std::vector<ProblemRecord>& dataset, const ProxyDecoder& decoder,
                                     const BenchmarkOptions& options) {
  return run_benchmark(
      dataset, decoder.vocabulary(),
      [&](const TokenSeq& prompt, const std::string& cond, std::uint64_t stream) { return decoder.decode(prompt, cond, stream); },
      options);
}

struct SweepReport {
  std::vector<double> alphas;
  std::vector<double> accuracy;
  std::vector<std::size_t> errored;
  double best_alpha = 0.0;

  std::string to_csv() const {
    std::string out = "alpha,accuracy,errored\n";
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      out += codec::encode_double(alphas[i]) + "," + codec::encode_double(accuracy[i]) + "," +
             std::to_string(errored[i]) + "\n";
    }
    return out;
  }
};

// One benchmark per alpha with everything else (seeds included) fixed. Ties
// for the best accuracy go to the smallest alpha.
inline SweepReport alpha_sweep(const std::vector<ProblemRecord>& dataset, const std::vector<double>& alphas,
                               const ProxyDecoder& decoder, const BenchmarkOptions& options,
                               bool include_baseline = false) {
  if (alphas.empty()) throw ConfigError("alpha sweep needs at least one alpha");
  std::vector<double> grid = alphas;
  if (include_baseline && std::find(grid.begin(), grid.end(), 0.0) == grid.end()) grid.insert(grid.begin(), 0.0);
  SweepReport report;
  for (double a : grid) {
    if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError("sweep alphas must be finite and non-negative");
    const auto r = run_benchmark(dataset, decoder.with_alpha(a), options);
    report.alphas.push_back(a);
    report.accuracy.push_back(r.accuracy);
    report.errored.push_back(r.errored);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < report.alphas.size(); ++i) {
    const bool better = report.accuracy[i] > report.accuracy[best] ||
                        (report.accuracy[i] == report.accuracy[best] && report.alphas[i] < report.alphas[best]);
    if (better) best = i;
  }
  report.best_alpha = report.alphas[best];
  return report;
}

inline nlohmann::ordered_json transcript_to_json(const Transcript& t) {
  nlohmann::ordered_json j;
  j["id"] = t.problem_id;
  j["sample"] = t.sample;
  j["tokens"] = t.tokens;
  j["text"] = t.text;
  j["answer"] = t.answer ? nlohmann::ordered_json(*t.answer) : nlohmann::ordered_json(nullptr);
  j["correct"] = t.correct;
  j["stop_reason"] = t.stop_reason;
  if (t.error) j["error"] = *t.error;
  return j;
}

}  // namespace proxydec

#endif  // PROXYDEC_EVAL_HPP
