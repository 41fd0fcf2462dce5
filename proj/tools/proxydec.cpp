// proxydec: steer a base model with an expert/amateur logit delta, evaluate
// the resulting decoder, and simulate multi-model step scheduling.

#include <chrono>
#include <csignal>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <pthread.h>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "proxydec/proxydec.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace proxydec;

namespace {

enum ExitCode : int { kOk = 0, kConfigError = 2, kBackendFailure = 3, kDatasetError = 4, kPortInUse = 5 };

void init_logging() {
  auto logger = spdlog::stderr_color_mt("proxydec");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("PROXYDEC_LOG")) {
    spdlog::set_level(spdlog::level::from_str(env));
  }
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// The timestamp lives only in "header"; everything else is a pure function of
// the inputs.
ordered_json header() { return ordered_json{{"tool", "proxydec"}, {"generated_at", utc_timestamp()}}; }

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << content;
}

TokenSeq parse_ids(const std::string& text) {
  TokenSeq ids;
  std::string s = text;
  for (char& c : s) {
    if (c == ',') c = ' ';
  }
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) {
    if (tok.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("token id list contains '" + tok + "'");
    }
    ids.push_back(static_cast<TokenId>(std::stoul(tok)));
  }
  return ids;
}

std::vector<double> parse_alphas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("malformed alpha '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("--alphas is empty");
  return out;
}

std::vector<std::size_t> parse_ks(const std::string& text, std::size_t n) {
  std::vector<std::size_t> ks;
  if (text.empty()) {
    for (std::size_t k = 1; k <= n; ++k) ks.push_back(k);
    return ks;
  }
  for (TokenId k : parse_ids(text)) ks.push_back(k);
  return ks;
}

std::string default_alpha_grid() {
  std::string out;
  for (int i = 1; i <= 15; ++i) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "%.1f", i / 10.0);
    out += (i > 1 ? "," : "") + std::string(buf);
  }
  return out;
}

struct DecodeFlags {
  std::string base;
  std::string expert;
  std::string amateur;
  double alpha = kDefaultAlpha;
  bool allow_large_alpha = false;
  std::string sampler = "greedy";
  double temperature = 1.0;
  double top_p = 1.0;
  std::uint64_t seed = 0;
  std::size_t max_new_tokens = kDefaultMaxNewTokens;
  bool no_stop_on_eos = false;
  std::string strategy = "sequential";
  std::string groups;
  std::string base_prefix;
  std::string expert_prefix;
  std::string amateur_prefix;
};

void add_decode_flags(CLI::App* cmd, DecodeFlags& f) {
  cmd->add_option("--base", f.base, "Base backend (table:PATH | ngram:PATH?vocab=N[&order=N][&k=K][&eos=I,J] | remote:URL)")
      ->required();
  cmd->add_option("--expert", f.expert, "Expert backend spec")->required();
  cmd->add_option("--amateur", f.amateur, "Amateur backend spec")->required();
  cmd->add_option("--alpha", f.alpha, "Guidance strength on the expert-amateur logit delta")->capture_default_str();
  cmd->add_flag("--allow-large-alpha", f.allow_large_alpha, "Permit alpha above 16");
  cmd->add_option("--sampler", f.sampler, "greedy | temperature | top_p")->capture_default_str();
  cmd->add_option("--temperature", f.temperature, "Sampling temperature")->capture_default_str();
  cmd->add_option("--top-p", f.top_p, "Nucleus mass for the top_p sampler")->capture_default_str();
  cmd->add_option("--seed", f.seed, "Global seed for sampling streams")->capture_default_str();
  cmd->add_option("--max-new-tokens", f.max_new_tokens, "Generation ceiling")->capture_default_str();
  cmd->add_flag("--no-stop-on-eos", f.no_stop_on_eos, "Keep generating past EOS tokens");
  cmd->add_option("--strategy", f.strategy, "Step scheduling: sequential | concurrent")->capture_default_str();
  cmd->add_option("--groups", f.groups, "Device groups, e.g. base:0,expert:1,amateur:1");
  cmd->add_option("--base-prefix", f.base_prefix, "Token ids prepended to the base prompt");
  cmd->add_option("--expert-prefix", f.expert_prefix, "Token ids prepended to the expert prompt");
  cmd->add_option("--amateur-prefix", f.amateur_prefix, "Token ids prepended to the amateur prompt");
}

struct Engine {
  std::vector<LoadedBackend> loaded;  // base, expert, amateur
  std::unique_ptr<ProxyDecoder> decoder;
  ordered_json echo;
};

Engine build_engine(const DecodeFlags& f) {
  Engine e;
  const std::pair<const char*, const std::string*> roles[] = {{"base", &f.base}, {"expert", &f.expert}, {"amateur", &f.amateur}};
  for (const auto& [role, spec] : roles) {
    e.loaded.push_back(load_backend(*spec, role));
    for (const auto& w : e.loaded.back().warnings) spdlog::warn("{}: {}", role, w);
    spdlog::info("loaded {} backend from {}", role, *spec);
  }

  DecodeConfig config;
  config.steering = SteeringSpec::make(f.alpha, {}, f.allow_large_alpha);
  config.sampler = SamplerSpec{parse_sampler_kind(f.sampler), f.temperature, f.top_p, f.seed};
  config.max_new_tokens = f.max_new_tokens;
  config.stop_on_eos = !f.no_stop_on_eos;
  config.validate();

  StepScheduler scheduler{parse_strategy(f.strategy), parse_groups(f.groups)};
  RolePrefixes prefixes{parse_ids(f.base_prefix), parse_ids(f.expert_prefix), parse_ids(f.amateur_prefix)};
  e.decoder = std::make_unique<ProxyDecoder>(
      ProxyDecoder(e.loaded[0].backend, e.loaded[1].backend, e.loaded[2].backend, config, scheduler).with_prefixes(prefixes));

  ordered_json backends;
  for (std::size_t i = 0; i < 3; ++i) {
    backends[roles[i].first] = {{"spec", e.loaded[i].spec}, {"sha1", e.loaded[i].content_sha1}};
  }
  e.echo["backends"] = backends;
  e.echo["alpha"] = config.steering.alpha;
  e.echo["sampler"] = {{"kind", to_string(config.sampler.kind)},
                       {"temperature", config.sampler.temperature},
                       {"top_p", config.sampler.top_p},
                       {"seed", config.sampler.seed}};
  e.echo["max_new_tokens"] = config.max_new_tokens;
  e.echo["stop_on_eos"] = config.stop_on_eos;
  e.echo["strategy"] = to_string(scheduler.strategy);
  e.echo["groups"] = scheduler.groups;
  e.echo["prefixes"] = {{"base", prefixes.base}, {"expert", prefixes.expert}, {"amateur", prefixes.amateur}};
  return e;
}

struct DatasetInput {
  std::vector<ProblemRecord> records;
  ordered_json echo;
};

DatasetInput load_dataset(const std::string& path, bool filter_mc) {
  const std::string text = read_file(path);
  DatasetInput d;
  d.records = parse_dataset(text);
  const std::size_t before = d.records.size();
  if (filter_mc) d.records = without_multiple_choice(std::move(d.records));
  d.echo = {{"path", path},
            {"sha1", codec::git_blob_sha1(text)},
            {"records", before},
            {"filter_multiple_choice", filter_mc},
            {"used", d.records.size()}};
  if (!filter_mc) {
    const auto mc = std::count_if(d.records.begin(), d.records.end(),
                                  [](const ProblemRecord& r) { return r.kind == ProblemKind::multiple_choice; });
    if (mc > 0) spdlog::info("{} multiple-choice problems included; they inflate pass@k", mc);
  }
  return d;
}

std::string transcripts_jsonl(const BenchmarkResult& r) {
  std::string out;
  for (const auto& t : r.transcripts) out += transcript_to_json(t).dump() + "\n";
  return out;
}

ordered_json counts_json(const BenchmarkResult& r) {
  return {{"total", r.total}, {"graded", r.graded}, {"correct", r.correct}, {"errored", r.errored},
          {"errored_ids", r.errored_ids}};
}

int cmd_decode(const DecodeFlags& f, const std::string& prompt, const std::string& prompt_text,
               const std::string& conditioning_file, const std::string& trace_path) {
  Engine e = build_engine(f);
  const auto& vocab = e.decoder->vocabulary();
  TokenSeq ids = prompt_text.empty() ? parse_ids(prompt) : vocab.encode(prompt_text);
  const std::string conditioning = conditioning_file.empty() ? std::string{} : read_file(conditioning_file);

  ProxyDecoder decoder = *e.decoder;
  if (!trace_path.empty()) {
    DecodeConfig c = decoder.config();
    c.record_trace = true;
    decoder = decoder.with_config(c);
  }
  const DecodeResult r = decoder.decode(ids, conditioning);
  std::cout << "tokens:";
  for (TokenId t : r.tokens) std::cout << ' ' << t;
  std::cout << '\n';
  if (vocab.has_pieces()) std::cout << "text: " << vocab.render(r.trimmed(vocab)) << '\n';
  std::cout << "stop_reason: " << to_string(r.stop_reason) << '\n';
  if (!trace_path.empty()) {
    std::ostringstream out;
    write_step_trace(out, r);
    write_file(trace_path, out.str());
  }
  return kOk;
}

int cmd_eval(const DecodeFlags& f, const std::string& dataset_path, const fs::path& out_dir, std::size_t n,
             std::size_t jobs, bool filter_mc) {
  Engine e = build_engine(f);
  DatasetInput d = load_dataset(dataset_path, filter_mc);
  const auto r = run_benchmark(d.records, *e.decoder, BenchmarkOptions{n, jobs, rule_grader});

  ordered_json summary;
  summary["header"] = header();
  summary["command"] = "eval";
  summary["config"] = e.echo;
  summary["config"]["n"] = n;
  summary["dataset"] = d.echo;
  summary["accuracy"] = r.accuracy;
  summary["counts"] = counts_json(r);
  write_file(out_dir / "summary.json", summary.dump(2) + "\n");
  write_file(out_dir / "transcripts.jsonl", transcripts_jsonl(r));

  std::printf("accuracy: %.6f (%zu/%zu graded, %zu errored)\n", r.accuracy, r.correct, r.graded, r.errored);
  return kOk;
}

int cmd_sweep(const DecodeFlags& f, const std::string& dataset_path, const fs::path& out_dir,
              const std::string& alphas_text, bool include_baseline, std::size_t jobs, bool filter_mc) {
  Engine e = build_engine(f);
  DatasetInput d = load_dataset(dataset_path, filter_mc);
  std::vector<double> alphas = parse_alphas(alphas_text);
  for (double a : alphas) SteeringSpec::make(a, {}, f.allow_large_alpha);
  const SweepReport report = alpha_sweep(d.records, alphas, *e.decoder, BenchmarkOptions{1, jobs, rule_grader}, include_baseline);

  ordered_json j;
  j["header"] = header();
  j["command"] = "sweep";
  j["config"] = e.echo;
  j["config"].erase("alpha");
  j["config"]["alphas"] = alphas;
  j["config"]["include_baseline"] = include_baseline;
  j["dataset"] = d.echo;
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < report.alphas.size(); ++i) {
    rows.push_back({{"alpha", report.alphas[i]}, {"accuracy", report.accuracy[i]}, {"errored", report.errored[i]}});
  }
  j["results"] = rows;
  j["best_alpha"] = report.best_alpha;
  write_file(out_dir / "sweep.json", j.dump(2) + "\n");
  write_file(out_dir / "sweep.csv", report.to_csv());

  std::printf("alpha     accuracy\n");
  for (std::size_t i = 0; i < report.alphas.size(); ++i) {
    std::printf("%-9.4g %.6f\n", report.alphas[i], report.accuracy[i]);
  }
  std::printf("best alpha: %g\n", report.best_alpha);
  return kOk;
}

int cmd_passk(const DecodeFlags& f, const std::string& dataset_path, const fs::path& out_dir, std::size_t n,
              const std::string& ks_text, std::size_t jobs, bool filter_mc) {
  Engine e = build_engine(f);
  DatasetInput d = load_dataset(dataset_path, filter_mc);
  const std::vector<std::size_t> ks = parse_ks(ks_text, n);
  for (std::size_t k : ks) {
    if (k < 1 || k > n) throw ConfigError("every k must lie in [1, n]; got k=" + std::to_string(k));
  }
  if (n > 1 && e.decoder->config().sampler.kind == SamplerKind::greedy) {
    throw ConfigError("--n > 1 needs a stochastic sampler");
  }
  const auto r = run_benchmark(d.records, *e.decoder, BenchmarkOptions{n, jobs, rule_grader});
  const auto curve = pass_at_k_curve(r.passk, ks);

  ordered_json j;
  j["header"] = header();
  j["command"] = "passk";
  j["config"] = e.echo;
  j["config"]["n"] = n;
  j["config"]["ks"] = ks;
  j["dataset"] = d.echo;
  j["counts"] = counts_json(r);
  ordered_json records = ordered_json::array();
  for (const auto& p : r.passk) records.push_back({{"id", p.problem_id}, {"n", p.n}, {"c", p.c}});
  j["records"] = records;
  ordered_json rows = ordered_json::array();
  std::string csv = "k,pass_at_k\n";
  for (std::size_t i = 0; i < ks.size(); ++i) {
    rows.push_back({{"k", ks[i]}, {"pass_at_k", curve[i]}});
    csv += std::to_string(ks[i]) + "," + codec::encode_double(curve[i]) + "\n";
  }
  j["curve"] = rows;
  write_file(out_dir / "passk.json", j.dump(2) + "\n");
  write_file(out_dir / "passk_curve.csv", csv);
  write_file(out_dir / "transcripts.jsonl", transcripts_jsonl(r));

  for (std::size_t i = 0; i < ks.size(); ++i) std::printf("pass@%zu: %.6f\n", ks[i], curve[i]);
  return kOk;
}

int cmd_simulate(const std::string& latency_path, const std::string& groups_text, std::size_t prompt_len,
                 std::size_t steps, const std::string& out_dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(latency_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("latency model '" + latency_path + "': " + e.what());
  }
  const LatencyModel model = latency_model_from_json(j);
  std::map<std::string, int> groups;
  if (!groups_text.empty()) {
    groups = parse_groups(groups_text);
  } else if (j.contains("groups")) {
    groups = j.at("groups").get<std::map<std::string, int>>();
  }

  const auto seq = simulate_timeline(model, StepScheduler{Strategy::sequential, groups}, prompt_len, steps);
  const auto conc = simulate_timeline(model, StepScheduler{Strategy::concurrent, groups}, prompt_len, steps);
  const double speedup = conc.makespan_ms > 0.0 ? seq.makespan_ms / conc.makespan_ms : 1.0;

  std::printf("sequential makespan: %.3f ms\n", seq.makespan_ms);
  std::printf("concurrent makespan: %.3f ms\n", conc.makespan_ms);
  std::printf("speedup: %.2f×\n", speedup);

  if (!out_dir.empty()) {
    ordered_json out;
    out["header"] = header();
    out["command"] = "simulate";
    out["config"] = {{"latency", latency_path},
                     {"sha1", codec::git_blob_sha1(j.dump())},
                     {"groups", groups},
                     {"prompt_len", prompt_len},
                     {"steps", steps}};
    out["sequential"] = trace_to_json(seq);
    out["concurrent"] = trace_to_json(conc);
    out["speedup"] = speedup;
    write_file(fs::path(out_dir) / "timeline.json", out.dump(2) + "\n");
    std::string csv = "strategy,group,busy_ms,makespan_ms,idle_fraction\n";
    for (const auto* t : {&seq, &conc}) {
      const std::string body = idle_report(*t).to_csv();
      std::istringstream in(body.substr(body.find('\n') + 1));
      std::string line;
      while (std::getline(in, line)) csv += std::string(to_string(t->strategy)) + "," + line + "\n";
    }
    write_file(fs::path(out_dir) / "utilization.csv", csv);
  }
  return kOk;
}

int cmd_serve_fixture(const std::string& model_spec, const std::string& name, const std::string& host, int port,
                      std::size_t max_prompt_tokens) {
  if (model_spec.starts_with("remote:")) throw ConfigError("the fixture server needs a local table or ngram model");
  LoadedBackend loaded = load_backend(model_spec, name);
  for (const auto& w : loaded.warnings) spdlog::warn("{}", w);

  // Block termination signals before any server thread starts so only the
  // sigwait below receives them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  FixtureServer server({{name, loaded.backend}}, [](const std::string& msg) { spdlog::info("{}", msg); },
                       max_prompt_tokens);
  const int bound = server.start(host, port);
  std::cout << "listening on " << host << ":" << bound << " model " << name << std::endl;
  spdlog::info("serving model '{}' on {}:{}", name, host, bound);

  int sig = 0;
  sigwait(&signals, &sig);
  spdlog::info("signal {} received, shutting down", sig);
  server.stop();
  return kOk;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const DatasetError& e) {
    spdlog::error("{}", e.what());
    return kDatasetError;
  } catch (const PortInUse& e) {
    spdlog::error("{}", e.what());
    return kPortInUse;
  } catch (const BackendUnavailable& e) {
    spdlog::error("{}", e.what());
    return kBackendFailure;
  } catch (const SessionInitError& e) {
    spdlog::error("{}", e.what());
    return kBackendFailure;
  } catch (const DecodeAborted& e) {
    spdlog::error("{} ({} tokens generated before the failure)", e.what(), e.partial().size());
    return kBackendFailure;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kConfigError;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("{}", e.what());
    return kConfigError;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return kConfigError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();

  CLI::App app{"proxydec: expert/amateur logit steering of a base model, with evaluation and scheduling tools"};
  app.set_config("--config", "", "TOML config file; flags take precedence over it");
  app.require_subcommand(1);

  // decode
  DecodeFlags decode_flags;
  std::string prompt, prompt_text, conditioning_file, trace_path;
  auto* decode = app.add_subcommand("decode", "Generate from one prompt");
  add_decode_flags(decode, decode_flags);
  decode->add_option("--prompt", prompt, "Prompt token ids, comma or space separated");
  decode->add_option("--prompt-text", prompt_text, "Prompt text (needs a vocabulary with pieces)");
  decode->add_option("--conditioning", conditioning_file, "File whose bytes are forwarded as conditioning");
  decode->add_option("--trace", trace_path, "Write a per-step logit trace (JSONL)");

  // eval
  DecodeFlags eval_flags;
  std::string eval_dataset, eval_out = "out";
  std::size_t eval_n = 1, eval_jobs = 1;
  bool eval_filter = false;
  auto* eval = app.add_subcommand("eval", "Pass@1 accuracy over a dataset");
  add_decode_flags(eval, eval_flags);
  eval->add_option("--dataset", eval_dataset, "Dataset JSONL")->required();
  eval->add_option("--out", eval_out, "Output directory")->capture_default_str();
  eval->add_option("--n", eval_n, "Samples per problem")->capture_default_str();
  eval->add_option("--jobs", eval_jobs, "Problems decoded in parallel")->capture_default_str();
  eval->add_flag("--filter-multiple-choice", eval_filter, "Drop multiple-choice problems");

  // sweep
  DecodeFlags sweep_flags;
  std::string sweep_dataset, sweep_out = "out", sweep_alphas = default_alpha_grid();
  std::size_t sweep_jobs = 1;
  bool sweep_baseline = false, sweep_filter = false;
  auto* sweep = app.add_subcommand("sweep", "Accuracy across guidance strengths");
  add_decode_flags(sweep, sweep_flags);
  sweep->add_option("--dataset", sweep_dataset, "Dataset JSONL")->required();
  sweep->add_option("--out", sweep_out, "Output directory")->capture_default_str();
  sweep->add_option("--alphas", sweep_alphas, "Comma-separated alphas")->capture_default_str();
  sweep->add_flag("--include-baseline", sweep_baseline, "Add an alpha=0 row");
  sweep->add_option("--jobs", sweep_jobs, "Problems decoded in parallel")->capture_default_str();
  sweep->add_flag("--filter-multiple-choice", sweep_filter, "Drop multiple-choice problems");

  // passk
  DecodeFlags passk_flags;
  passk_flags.sampler = "top_p";
  passk_flags.temperature = 0.6;
  passk_flags.top_p = 0.95;
  std::string passk_dataset, passk_out = "out", passk_ks;
  std::size_t passk_n = 8, passk_jobs = 1;
  bool passk_filter = false;
  auto* passk = app.add_subcommand("passk", "Unbiased pass@k curve from n samples per problem");
  add_decode_flags(passk, passk_flags);
  passk->add_option("--dataset", passk_dataset, "Dataset JSONL")->required();
  passk->add_option("--out", passk_out, "Output directory")->capture_default_str();
  passk->add_option("--n", passk_n, "Samples per problem")->capture_default_str()->check(CLI::PositiveNumber);
  passk->add_option("--ks", passk_ks, "Comma-separated k values (default 1..n)");
  passk->add_option("--jobs", passk_jobs, "Problems decoded in parallel")->capture_default_str();
  passk->add_flag("--filter-multiple-choice", passk_filter, "Drop multiple-choice problems");

  // simulate
  std::string sim_latency, sim_groups, sim_out;
  std::size_t sim_prompt_len = 0, sim_steps = 100;
  auto* simulate = app.add_subcommand("simulate", "Cost-model timeline of sequential vs concurrent steps");
  simulate->add_option("--latency", sim_latency, "Latency model JSON")->required();
  simulate->add_option("--groups", sim_groups, "Device groups, e.g. base:0,expert:1,amateur:1");
  simulate->add_option("--prompt-len", sim_prompt_len, "Prompt length for prefill cost")->capture_default_str();
  simulate->add_option("--steps", sim_steps, "Decode steps")->capture_default_str()->check(CLI::PositiveNumber);
  simulate->add_option("--out", sim_out, "Directory for timeline.json and utilization.csv");

  // serve-fixture
  std::string serve_model, serve_name = "fixture", serve_host = "127.0.0.1";
  int serve_port = 8080;
  std::size_t serve_max_prompt = 1 << 20;
  auto* serve = app.add_subcommand("serve-fixture", "Serve a local model over the remote logits protocol");
  serve->add_option("--model", serve_model, "Model spec (table:PATH or ngram:PATH?...)")->required();
  serve->add_option("--name", serve_name, "Model name clients ask for")->capture_default_str();
  serve->add_option("--host", serve_host, "Bind address")->capture_default_str();
  serve->add_option("--port", serve_port, "Port (0 picks a free one)")->capture_default_str();
  serve->add_option("--max-prompt-tokens", serve_max_prompt, "Reject longer prompts with 413")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  if (*decode) return guarded([&] { return cmd_decode(decode_flags, prompt, prompt_text, conditioning_file, trace_path); });
  if (*eval) return guarded([&] { return cmd_eval(eval_flags, eval_dataset, eval_out, eval_n, eval_jobs, eval_filter); });
  if (*sweep) {
    return guarded(
        [&] { return cmd_sweep(sweep_flags, sweep_dataset, sweep_out, sweep_alphas, sweep_baseline, sweep_jobs, sweep_filter); });
  }
  if (*passk) {
    return guarded([&] { return cmd_passk(passk_flags, passk_dataset, passk_out, passk_n, passk_ks, passk_jobs, passk_filter); });
  }
  if (*simulate) return guarded([&] { return cmd_simulate(sim_latency, sim_groups, sim_prompt_len, sim_steps, sim_out); });
  if (*serve) {
    return guarded([&] { return cmd_serve_fixture(serve_model, serve_name, serve_host, serve_port, serve_max_prompt); });
  }
  return kConfigError;
}
