#ifndef PROXYDEC_FACTORY_HPP
#define PROXYDEC_FACTORY_HPP

#include <map>
#include <memory>
#include <sstream>
#include <string>

#include "proxydec/backends.hpp"
#include "proxydec/codec.hpp"
#include "proxydec/remote.hpp"

namespace proxydec {

struct LoadedBackend {
  std::shared_ptr<const Backend> backend;
  std::string spec;
  std::string content_sha1;  // of the model file, or of the url for remote
  std::vector<std::string> warnings;
};

inline std::map<std::string, std::string> parse_query(const std::string& q) {
  std::map<std::string, std::string> out;
  std::stringstream ss(q);
  std::string item;
  while (std::getline(ss, item, '&')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("backend option '" + item + "' needs key=value");
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

// Backend spec strings:
//   table:<model.json>
//   ngram:<corpus.txt>?vocab=<size>[&order=<n>][&k=<smoothing>][&eos=<id,id>]
//   remote:http://<host>:<port>/<model>
inline LoadedBackend load_backend(const std::string& spec, const std::string& name) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) throw ConfigError("backend spec '" + spec + "' must look like kind:path");
  const std::string kind = spec.substr(0, colon);
  std::string rest = spec.substr(colon + 1);

  LoadedBackend out;
  out.spec = spec;
  if (kind == "table") {
    const std::string text = read_file(rest);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("table model '" + rest + "': " + e.what());
    }
    out.content_sha1 = codec::git_blob_sha1(text);
    out.backend = std::make_shared<TableBackend>(name, std::make_shared<TableModel>(table_model_from_json(j, name)));
  } else if (kind == "ngram") {
    std::map<std::string, std::string> opts;
    if (const auto q = rest.find('?'); q != std::string::npos) {
      opts = parse_query(rest.substr(q + 1));
      rest.resize(q);
    }
    const std::string text = read_file(rest);
    out.content_sha1 = codec::git_blob_sha1(text);
    if (!opts.contains("vocab")) throw ConfigError("ngram backend '" + spec + "' needs vocab=<size>");
    std::set<TokenId> eos;
    if (opts.contains("eos")) {
      std::stringstream es(opts["eos"]);
      std::string id;
      while (std::getline(es, id, ',')) eos.insert(static_cast<TokenId>(std::stoul(id)));
    }
    try {
      Vocabulary vocab(std::stoul(opts["vocab"]), eos, name);
      const std::size_t order = opts.contains("order") ? std::stoul(opts["order"]) : 2;
      const double k = opts.contains("k") ? std::stod(opts["k"]) : 1.0;
      auto model = std::make_shared<NGramModel>(train_ngram(parse_corpus(text), order, k, std::move(vocab)));
      out.warnings = model->warnings();
      out.backend = std::make_shared<NGramBackend>(name, std::move(model));
    } catch (const std::invalid_argument&) {
      throw ConfigError("ngram backend '" + spec + "' has a non-numeric option");
    }
  } else if (kind == "remote") {
    out.content_sha1 = codec::git_blob_sha1(rest);
    out.backend = std::make_shared<RemoteBackend>(name, parse_remote_url(rest));
  } else {
    throw ConfigError("unknown backend kind '" + kind + "' (expected table|ngram|remote)");
  }
  return out;
}

}  // namespace proxydec

#endif  // PROXYDEC_FACTORY_HPP
