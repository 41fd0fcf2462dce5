// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <json.hpp>

#include "proxydec/proxydec.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace proxydec;
using support::fixture;

namespace {

// Collects the first failed check of a criterion.
struct Check {
  std::string failure;
  void expect(bool ok, const std::string& what) {
    if (!ok && failure.empty()) failure = what;
  }
  bool ok() const { return failure.empty(); }
};

LogitVector lv(std::vector<double> v) { return LogitVector(std::move(v)); }

bool softmax_close(const LogitVector& a, const LogitVector& b, double tol) {
  const auto p = stable_softmax(a), q = stable_softmax(b);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (std::abs(p[i] - q[i]) > tol) return false;
  }
  return true;
}

void algebra(Check& c) {
  std::mt19937_64 gen(101);
  std::uniform_real_distribution<double> alpha(0.0, 16.0);
  for (int trial = 0; trial < 10000 && c.ok(); ++trial) {
    const std::size_t n = 2 + gen() % 63;
    const LogitVector zb(support::random_logits(gen, n, 20.0)), ze(support::random_logits(gen, n, 20.0)),
        za(support::random_logits(gen, n, 20.0));
    const auto zero_alpha = proxy_combine(zb, ze, za, 0.0);
    const auto zero_delta = proxy_combine(zb, ze, ze, alpha(gen));
    c.expect(zero_alpha == zb, "alpha=0 identity not bitwise");
    c.expect(zero_delta == zb, "zero-delta identity not bitwise");
    c.expect(softmax_close(zero_alpha, zb, 1e-12) && softmax_close(zero_delta, zb, 1e-12), "distribution drift");
  }
  const auto p = stable_softmax(proxy_combine(lv({1, 0, 0}), lv({0, 2, 0}), lv({0, 0, 0}), 0.5));
  c.expect(std::abs(p[0] - 0.4223188) < 1e-6 && std::abs(p[1] - 0.4223188) < 1e-6 && std::abs(p[2] - 0.1553624) < 1e-6,
           "three-token example");
}

void dominance(Check& c) {
  std::mt19937_64 gen(202);
  int tested = 0;
  while (tested < 1000 && c.ok()) {
    const std::size_t n = 2 + gen() % 31;
    const LogitVector zb(support::random_logits(gen, n)), ze(support::random_logits(gen, n)),
        za(support::random_logits(gen, n));
    const auto delta = logit_delta(ze, za);
    double bound;
    try {
      bound = dominance_bound(zb, delta);
    } catch (const UndefinedBound&) {
      continue;
    }
    ++tested;
    const std::size_t m = argmax(delta);
    for (double f : {1.0 + 1e-6, 1.001, 1.1, 2.0, 10.0, 1000.0}) {
      const double a = bound > 0 ? bound * f : f - 1.0 + 1e-6;
      c.expect(argmax(proxy_combine(zb, ze, za, a)) == m, "argmax above bound differs from delta argmax");
    }
    if (bound > 0) {
      c.expect(argmax(proxy_combine(zb, ze, za, bound * 0.999)) != m, "bound is not tight");
    }
  }
}

void scheduler_equivalence(Check& c) {
  std::mt19937_64 gen(303);
  for (int trial = 0; trial < 100 && c.ok(); ++trial) {
    const std::size_t v = 6 + gen() % 20;
    std::vector<TokenSeq> corpus;
    for (int i = 0; i < 8; ++i) corpus.push_back(support::random_tokens(gen, 50, v));
    std::shared_ptr<const Backend> ngram = std::make_shared<NGramBackend>(
        "ngram", std::make_shared<NGramModel>(train_ngram(corpus, 1 + gen() % 3, 0.5, Vocabulary(v, {0}, "n"))));
    auto t1 = support::table_backend("t1", support::random_table(gen, v, 100, 3));
    auto t2 = support::table_backend("t2", support::random_table(gen, v, 100, 3));
    std::shared_ptr<const Backend> roles[3] = {t1, ngram, t2};
    std::shuffle(std::begin(roles), std::end(roles), gen);

    DecodeConfig cfg;
    cfg.steering = SteeringSpec::make(0.125 * static_cast<double>(gen() % 17));
    cfg.max_new_tokens = 24;
    if (trial % 2) cfg.sampler = SamplerSpec{SamplerKind::top_p, 0.6, 0.95, gen()};
    const auto prompt = support::random_tokens(gen, 1 + gen() % 4, v);
    ProxyDecoder seq(roles[0], roles[1], roles[2], cfg, StepScheduler{Strategy::sequential, {}});
    const auto con = seq.with_scheduler(StepScheduler{Strategy::concurrent, {}});
    const auto r = seq.decode(prompt, "", trial);
    c.expect(r == con.decode(prompt, "", trial), "decode differs between strategies at trial " + std::to_string(trial));
  }
}

void pass_at_k_oracle(Check& c) {
  for (unsigned n = 1; n <= 8; ++n) {
    for (unsigned k = 1; k <= n; ++k) {
      for (unsigned cc = 0; cc <= n; ++cc) {
        const auto oracle = support::pass_at_k_by_enumeration(n, cc, k);
        c.expect(pass_at_k_exact(n, cc, k) == oracle, "rational mismatch");
        c.expect(std::abs(pass_at_k(n, cc, k) - oracle.convert_to<double>()) <= 1e-12, "float mismatch");
      }
    }
  }
  c.expect(pass_at_k(5, 2, 2) == 0.7, "(5,2,2) != 0.7");
  std::mt19937_64 gen(404);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<PassKRecord> recs;
    const std::size_t n = 1 + gen() % 8;
    for (int i = 0; i < 4; ++i) recs.push_back({"p" + std::to_string(i), n, gen() % (n + 1)});
    std::vector<std::size_t> ks;
    for (std::size_t k = 1; k <= n; ++k) ks.push_back(k);
    const auto curve = pass_at_k_curve(recs, ks);
    for (std::size_t i = 1; i < curve.size(); ++i) c.expect(curve[i - 1] <= curve[i], "curve decreases");
  }
}

std::string models() {
  return " --base table:" + fixture("reflect_base.json") + " --expert table:" + fixture("reflect_expert.json") +
         " --amateur table:" + fixture("reflect_amateur.json");
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("proxydec_acceptance_" + std::to_string(getpid()) + "_" + name);
  fs::remove_all(p);
  return p;
}

void passk_defaults(Check& c) {
  const auto dir = scratch("passk");
  const auto r = support::run_cli("passk --dataset " + fixture("passk_dataset.jsonl") + " --n 2 --out " + dir.string() + models());
  c.expect(r.exit_code == 0, "passk exited " + std::to_string(r.exit_code));
  if (!c.ok()) return;
  const auto j = nlohmann::json::parse(support::slurp(dir / "passk.json"));
  const auto& s = j.at("config").at("sampler");
  c.expect(s.at("kind") == "top_p", "sampler kind");
  c.expect(s.at("temperature").get<double>() == 0.6, "temperature");
  c.expect(s.at("top_p").get<double>() == 0.95, "top_p");
  c.expect(j.at("config").at("max_new_tokens").get<std::size_t>() == 4096, "max_new_tokens");
  fs::remove_all(dir);
}

void reflection(Check& c) {
  DecodeConfig cfg;
  cfg.max_new_tokens = 16;
  const ProxyDecoder d(support::load_table("base", "reflect_base.json"), support::load_table("expert", "reflect_expert.json"),
                       support::load_table("amateur", "reflect_amateur.json"), cfg);
  const auto ds = parse_dataset(read_file(fixture("reflect_dataset.jsonl")));
  const auto s = alpha_sweep(ds, {0.0, 0.5, 8.0}, d, {});
  const auto delta = run_benchmark(ds, d.vocabulary(),
                                   [&](const TokenSeq& p, const std::string& cond, std::uint64_t st) {
                                     return d.decode_delta_only(p, cond, st);
                                   },
                                   {});
  c.expect(s.accuracy[1] > s.accuracy[0], "accuracy at 0.5 does not exceed accuracy at 0");
  c.expect(s.accuracy[2] == delta.accuracy, "alpha=8 accuracy differs from the delta-only decoder");
}

void simulation(Check& c) {
  const LatencyModel m{{{"base", 0.0, 10.0}, {"expert", 0.0, 3.0}, {"amateur", 0.0, 2.0}}, 0.0};
  const auto seq = simulate_timeline(m, StepScheduler{Strategy::sequential, {}}, 0, 100);
  const auto con = simulate_timeline(m, StepScheduler{Strategy::concurrent, {}}, 0, 100);
  c.expect(seq.makespan_ms == 1500.0 && con.makespan_ms == 1000.0, "closed-form makespans");
  char speed[32];
  std::snprintf(speed, sizeof(speed), "%.2f", seq.makespan_ms / con.makespan_ms);
  c.expect(std::string(speed) == "1.50", "speedup");
  const auto cli = support::run_cli("simulate --latency " + fixture("latency_10_3_2.json"));
  c.expect(cli.out.find("speedup: 1.50×") != std::string::npos, "CLI speedup line");

  std::mt19937_64 gen(707);
  std::uniform_real_distribution<double> cost(0.0, 25.0);
  for (int trial = 0; trial < 1000; ++trial) {
    LatencyModel r;
    std::map<std::string, int> groups;
    const std::size_t n = 1 + gen() % 6;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string name = "b" + std::to_string(i);
      r.backends.push_back({name, cost(gen) / 25.0, cost(gen)});
      if (gen() % 2) groups[name] = static_cast<int>(gen() % 3);
    }
    if (groups.size() != n) groups.clear();
    r.barrier_ms = gen() % 2 ? cost(gen) / 5.0 : 0.0;
    const std::size_t prompt = gen() % 64, steps = 1 + gen() % 50;
    const auto s = simulate_timeline(r, StepScheduler{Strategy::sequential, groups}, prompt, steps);
    const auto k = simulate_timeline(r, StepScheduler{Strategy::concurrent, groups}, prompt, steps);
    c.expect(k.makespan_ms <= s.makespan_ms, "concurrent slower than sequential");
    for (const auto* t : {&s, &k}) {
      for (const auto& [g, f] : t->idle_fraction) c.expect(f >= 0.0 && f <= 1.0, "idle fraction out of range");
    }
  }
}

void wire_round_trip(Check& c) {
  std::mt19937_64 gen(808);
  auto model = support::random_table(gen, 40, 400, 3);
  const auto path = scratch("model.json");
  {
    std::ofstream(path) << table_model_to_json(*model).dump();
  }
  const auto local = load_backend("table:" + path.string(), "local");
  FixtureServer server({{"m", local.backend}});
  const int port = server.start("127.0.0.1", 0);
  RemoteBackend remote("remote", parse_remote_url("http://127.0.0.1:" + std::to_string(port) + "/m"));

  for (int trial = 0; trial < 1000 && c.ok(); ++trial) {
    const auto ctx = support::random_tokens(gen, 1 + gen() % 6, 40);
    const auto a = local.backend->open_session(ctx, "")->extend_and_score({});
    const auto b = remote.open_session(ctx, "")->extend_and_score({});
    c.expect(a == b, "remote logits differ at trial " + std::to_string(trial));
    for (double v : a) c.expect(codec::decode_double(codec::encode_double(v)) == v, "17-digit encoding lossy");
  }
  server.stop();
  fs::remove(path);
}

// JSON files are compared with the "header" object removed; everything else
// byte for byte.
std::string content_hash(const fs::path& p) {
  std::string text = support::slurp(p);
  if (p.extension() == ".json") {
    auto j = nlohmann::ordered_json::parse(text);
    j.erase("header");
    text = j.dump(2);
  }
  return codec::git_blob_sha1(text);
}

void reproducibility(Check& c) {
  const std::string ds = fixture("reflect_dataset.jsonl");
  const std::vector<std::string> commands{
      "decode --prompt 6 --sampler top_p --temperature 0.8 --top-p 0.9 --seed 3 --trace {out}/trace.jsonl" + models(),
      "eval --dataset " + ds + " --out {out}/eval --jobs 2" + models(),
      "sweep --dataset " + ds + " --alphas 0,0.5,1,8 --include-baseline --out {out}/sweep" + models(),
      "passk --dataset " + ds + " --n 4 --seed 11 --max-new-tokens 12 --jobs 3 --out {out}/passk" + models(),
      "simulate --latency " + fixture("latency_10_3_2.json") + " --prompt-len 20 --out {out}/sim",
  };
  std::map<std::string, std::string> first;
  for (int run = 0; run < 2; ++run) {
    const auto dir = scratch("repro" + std::to_string(run));
    fs::create_directories(dir);
    for (auto cmd : commands) {
      for (auto pos = cmd.find("{out}"); pos != std::string::npos; pos = cmd.find("{out}")) cmd.replace(pos, 5, dir.string());
      const auto r = support::run_cli(cmd);
      c.expect(r.exit_code == 0, "command failed: " + cmd);
    }
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (!e.is_regular_file()) continue;
      ++files;
      const auto rel = fs::relative(e.path(), dir).string();
      const auto h = content_hash(e.path());
      if (run == 0) {
        first[rel] = h;
      } else {
        c.expect(first.count(rel) && first[rel] == h, "output differs: " + rel);
      }
    }
    c.expect(files > 0 && files == first.size(), "different or empty set of output files");
    fs::remove_all(dir);
  }
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<void(Check&)> run;
  };
  const std::vector<Criterion> criteria{
      {1, "steering algebra identities and three-token example", 5, algebra},
      {2, "dominance bound decides the argmax", 5, dominance},
      {3, "sequential and concurrent decodes are bitwise identical", 30, scheduler_equivalence},
      {4, "pass@k matches exhaustive enumeration", 5, pass_at_k_oracle},
      {5, "passk defaults to T=0.6, top-p 0.95, 4096 tokens", 60, passk_defaults},
      {6, "reflection sweep beats baseline and converges to the delta decoder", 10, reflection},
      {7, "timeline simulator closed form and randomized bounds", 5, simulation},
      {8, "remote and local logits agree bitwise", 30, wire_round_trip},
      {9, "reruns produce byte-identical outputs", 120, reproducibility},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    Check check;
    const auto start = std::chrono::steady_clock::now();
    try {
      cr.run(check);
    } catch (const std::exception& e) {
      check.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (check.ok() && secs > cr.budget_s) check.expect(false, "exceeded time budget");
    if (!check.ok()) ++failed;
    std::printf("%s %d: %s (%.2fs)%s%s\n", check.ok() ? "PASS" : "FAIL", cr.id, cr.name, secs,
                check.ok() ? "" : " - ", check.failure.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
