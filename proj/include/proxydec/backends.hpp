#ifndef PROXYDEC_BACKENDS_HPP
#define PROXYDEC_BACKENDS_HPP

#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "proxydec/core.hpp"

namespace proxydec {

enum class BackendKind { table, ngram, remote };

inline const char* to_string(BackendKind k) {
  switch (k) {
    case BackendKind::table: return "table";
    case BackendKind::ngram: return "ngram";
    case BackendKind::remote: return "remote";
  }
  return "?";
}

struct BackendDescriptor {
  std::string name;
  BackendKind kind = BackendKind::table;
  Vocabulary vocabulary;
};

class SessionInitError : public Error {
 public:
  using Error::Error;
};

// A producer failed while scoring; carries which backend and which extension.
class BackendUnavailable : public Error {
 public:
  BackendUnavailable(std::string backend, std::size_t step, const std::string& what)
      : Error("backend '" + backend + "' unavailable at step " + std::to_string(step) + ": " + what),
        backend_(std::move(backend)),
        step_(step) {}

  const std::string& backend() const { return backend_; }
  std::size_t step() const { return step_; }

 private:
  std::string backend_;
  std::size_t step_;
};

// Append-only token context held by one producer. Single owner: callers must
// not drive one session from two threads at once.
class Session {
 public:
  Session(BackendDescriptor descriptor, TokenSeq prompt, std::string conditioning)
      : descriptor_(std::move(descriptor)), context_(std::move(prompt)), conditioning_(std::move(conditioning)) {
    descriptor_.vocabulary.check(context_);
  }
  virtual ~Session() = default;

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  // Appends new_tokens and returns the logits for the next position.
  LogitVector extend_and_score(std::span<const TokenId> new_tokens) {
    descriptor_.vocabulary.check(new_tokens);
    const std::size_t step = steps_;
    context_.insert(context_.end(), new_tokens.begin(), new_tokens.end());
    ++steps_;
    LogitVector z;
    try {
      z = score(new_tokens);
    } catch (const BackendUnavailable&) {
      throw;
    } catch (const InvalidLogits&) {
      throw;
    } catch (const std::exception& e) {
      throw BackendUnavailable(descriptor_.name, step, e.what());
    }
    if (z.size() != descriptor_.vocabulary.size()) {
      throw VocabularyMismatch("backend '" + descriptor_.name + "' produced " + std::to_string(z.size()) +
                               " logits for a vocabulary of " + std::to_string(descriptor_.vocabulary.size()));
    }
    return z;
  }

  const BackendDescriptor& descriptor() const { return descriptor_; }
  const TokenSeq& context() const { return context_; }
  const std::string& conditioning() const { return conditioning_; }
  std::size_t steps() const { return steps_; }

 protected:
  // Called with context() already extended by new_tokens.
  virtual LogitVector score(std::span<const TokenId> new_tokens) = 0;

 private:
  BackendDescriptor descriptor_;
  TokenSeq context_;
  std::string conditioning_;
  std::size_t steps_ = 0;
};

// Immutable and shareable across threads; each open_session result is
// independent.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual const BackendDescriptor& descriptor() const = 0;
  virtual std::unique_ptr<Session> open_session(const TokenSeq& prompt, std::string conditioning) const = 0;
};

// ---------------------------------------------------------------------------
// Table backend: longest-suffix lookup into a fixed logit table.

class TableModel {
 public:
  TableModel(Vocabulary vocab, LogitVector fallback, std::map<TokenSeq, LogitVector> entries)
      : vocab_(std::move(vocab)), default_(std::move(fallback)), entries_(std::move(entries)) {
    check_row(default_, "default");
    for (const auto& [suffix, z] : entries_) {
      vocab_.check(suffix);
      check_row(z, "entry");
      max_suffix_ = std::max(max_suffix_, suffix.size());
    }
  }

  const Vocabulary& vocabulary() const { return vocab_; }
  std::size_t max_suffix() const { return max_suffix_; }
  const std::map<TokenSeq, LogitVector>& entries() const { return entries_; }
  const LogitVector& fallback() const { return default_; }

  const LogitVector& lookup(std::span<const TokenId> context) const {
    const std::size_t longest = std::min(max_suffix_, context.size());
    TokenSeq key;
    for (std::size_t len = longest + 1; len-- > 0;) {
      key.assign(context.end() - static_cast<std::ptrdiff_t>(len), context.end());
      if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    }
    return default_;
  }

 private:
  void check_row(const LogitVector& z, const char* what) const {
    if (z.size() != vocab_.size()) {
      throw ConfigError(std::string("table ") + what + " has " + std::to_string(z.size()) +
                        " logits, vocabulary has " + std::to_string(vocab_.size()));
    }
  }

  Vocabulary vocab_;
  LogitVector default_;
  std::map<TokenSeq, LogitVector> entries_;
  std::size_t max_suffix_ = 0;
};

inline TokenSeq parse_suffix_key(const std::string& key) {
  TokenSeq ids;
  if (key.empty()) return ids;
  std::stringstream ss(key);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("malformed table suffix key '" + key + "'");
    }
    ids.push_back(static_cast<TokenId>(std::stoul(item)));
  }
  return ids;
}

inline std::string format_suffix_key(std::span<const TokenId> ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(ids[i]);
  }
  return out;
}

inline Vocabulary vocabulary_from_json(const nlohmann::json& j, const std::string& fallback_name) {
  std::set<TokenId> eos;
  for (const auto& e : j.value("eos", nlohmann::json::array())) eos.insert(e.get<TokenId>());
  std::vector<std::string> pieces;
  if (j.contains("pieces")) pieces = j.at("pieces").get<std::vector<std::string>>();
  return Vocabulary(j.at("size").get<std::size_t>(), std::move(eos), j.value("name", fallback_name),
                    std::move(pieces));
}

inline nlohmann::json vocabulary_to_json(const Vocabulary& v) {
  nlohmann::json j{{"size", v.size()}, {"eos", std::vector<TokenId>(v.eos_ids().begin(), v.eos_ids().end())},
                   {"name", v.name()}};
  if (v.has_pieces()) j["pieces"] = v.pieces();
  return j;
}

// Table file: {"vocab": {...}, "default": [...], "i,j,k": [...], ...}.
inline TableModel table_model_from_json(const nlohmann::json& j, const std::string& fallback_name) {
  try {
    Vocabulary vocab = vocabulary_from_json(j.at("vocab"), fallback_name);
    LogitVector fallback(j.at("default").get<std::vector<double>>());
    std::map<TokenSeq, LogitVector> entries;
    for (const auto& [key, value] : j.items()) {
      if (key == "vocab" || key == "default") continue;
      entries.emplace(parse_suffix_key(key), LogitVector(value.get<std::vector<double>>()));
    }
    return TableModel(std::move(vocab), std::move(fallback), std::move(entries));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed table model: ") + e.what());
  }
}

inline nlohmann::json table_model_to_json(const TableModel& m) {
  nlohmann::json j;
  j["vocab"] = vocabulary_to_json(m.vocabulary());
  j["default"] = std::vector<double>(m.fallback().begin(), m.fallback().end());
  for (const auto& [suffix, z] : m.entries()) {
    j[format_suffix_key(suffix)] = std::vector<double>(z.begin(), z.end());
  }
  return j;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline TableModel load_table_model(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("table model '" + path + "': " + e.what());
  }
  return table_model_from_json(j, path);
}

class TableBackend final : public Backend {
 public:
  TableBackend(std::string name, std::shared_ptr<const TableModel> model)
      : descriptor_{std::move(name), BackendKind::table, model->vocabulary()}, model_(std::move(model)) {}

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  const TableModel& model() const { return *model_; }

  std::unique_ptr<Session> open_session(const TokenSeq& prompt, std::string conditioning) const override {
    return std::make_unique<TableSession>(descriptor_, prompt, std::move(conditioning), model_);
  }

 private:
  class TableSession final : public Session {
   public:
    TableSession(const BackendDescriptor& d, const TokenSeq& prompt, std::string cond,
                 std::shared_ptr<const TableModel> model)
        : Session(d, prompt, std::move(cond)), model_(std::move(model)) {}

   protected:
    LogitVector score(std::span<const TokenId>) override { return model_->lookup(context()); }

   private:
    std::shared_ptr<const TableModel> model_;
  };

  BackendDescriptor descriptor_;
  std::shared_ptr<const TableModel> model_;
};

// ---------------------------------------------------------------------------
// N-gram backend with add-k smoothing.

class NGramModel {
 public:
  struct Row {
    std::map<TokenId, std::uint64_t> counts;
    std::uint64_t total = 0;
  };

  NGramModel(Vocabulary vocab, std::size_t order, double smoothing_k) : vocab_(std::move(vocab)), order_(order), k_(smoothing_k) {
    if (order_ < 1) throw ConfigError("n-gram order must be >= 1");
    if (!(k_ > 0.0) || !std::isfinite(k_)) throw ConfigError("n-gram smoothing_k must be positive and finite");
  }

  void add(std::span<const TokenId> context, TokenId next) {
    Row& row = rows_[TokenSeq(context.begin(), context.end())];
    ++row.counts[next];
    ++row.total;
  }

  const Vocabulary& vocabulary() const { return vocab_; }
  std::size_t order() const { return order_; }
  double smoothing_k() const { return k_; }
  const std::map<TokenSeq, Row>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }
  const std::vector<std::string>& warnings() const { return warnings_; }
  void warn(std::string w) { warnings_.push_back(std::move(w)); }

  // log((count + k) / (total + k|V|)); contexts shorter than order-1 or never
  // seen fall back to zero counts, i.e. the uniform distribution.
  LogitVector logits(std::span<const TokenId> context) const {
    const std::size_t n = order_ - 1;
    const Row* row = nullptr;
    if (context.size() >= n) {
      auto it = rows_.find(TokenSeq(context.end() - static_cast<std::ptrdiff_t>(n), context.end()));
      if (it != rows_.end()) row = &it->second;
    }
    const double vocab_size = static_cast<double>(vocab_.size());
    const double total = row ? static_cast<double>(row->total) : 0.0;
    const double denom = total + k_ * vocab_size;
    std::vector<double> z(vocab_.size());
    for (TokenId t = 0; t < z.size(); ++t) {
      double count = 0.0;
      if (row) {
        if (auto it = row->counts.find(t); it != row->counts.end()) count = static_cast<double>(it->second);
      }
      z[t] = std::log((count + k_) / denom);
    }
    return LogitVector(std::move(z));
  }

 private:
  Vocabulary vocab_;
  std::size_t order_;
  double k_;
  std::map<TokenSeq, Row> rows_;
  std::vector<std::string> warnings_;
};

inline NGramModel train_ngram(const std::vector<TokenSeq>& corpus, std::size_t order, double smoothing_k,
                              Vocabulary vocab) {
  NGramModel model(std::move(vocab), order, smoothing_k);
  if (corpus.empty()) throw ConfigError("n-gram corpus is empty");
  for (const auto& seq : corpus) {
    model.vocabulary().check(seq);
    if (seq.size() < order) continue;
    for (std::size_t end = order; end <= seq.size(); ++end) {
      std::span<const TokenId> window(seq.data() + end - order, order);
      model.add(window.first(order - 1), window.back());
    }
  }
  if (model.empty()) {
    model.warn("order " + std::to_string(order) + " exceeds every corpus sequence; model has no counts");
  }
  return model;
}

// Newline-delimited sequences of whitespace-separated ids; '#' lines skipped.
inline std::vector<TokenSeq> parse_corpus(const std::string& text) {
  std::vector<TokenSeq> corpus;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.starts_with('#')) continue;
    std::istringstream ls(line);
    std::string tok;
    TokenSeq seq;
    while (ls >> tok) {
      if (tok.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError("corpus line " + std::to_string(lineno) + ": bad token '" + tok + "'");
      }
      seq.push_back(static_cast<TokenId>(std::stoul(tok)));
    }
    if (!seq.empty()) corpus.push_back(std::move(seq));
  }
  return corpus;
}

inline std::vector<TokenSeq> load_corpus(const std::string& path) { return parse_corpus(read_file(path)); }

class NGramBackend final : public Backend {
 public:
  NGramBackend(std::string name, std::shared_ptr<const NGramModel> model)
      : descriptor_{std::move(name), BackendKind::ngram, model->vocabulary()}, model_(std::move(model)) {}

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  const NGramModel& model() const { return *model_; }

  std::unique_ptr<Session> open_session(const TokenSeq& prompt, std::string conditioning) const override {
    return std::make_unique<NGramSession>(descriptor_, prompt, std::move(conditioning), model_);
  }

 private:
  class NGramSession final : public Session {
   public:
    NGramSession(const BackendDescriptor& d, const TokenSeq& prompt, std::string cond,
                 std::shared_ptr<const NGramModel> model)
        : Session(d, prompt, std::move(cond)), model_(std::move(model)) {}

   protected:
    LogitVector score(std::span<const TokenId>) override { return model_->logits(context()); }

   private:
    std::shared_ptr<const NGramModel> model_;
  };

  BackendDescriptor descriptor_;
  std::shared_ptr<const NGramModel> model_;
};

}  // namespace proxydec

#endif  // PROXYDEC_BACKENDS_HPP
