#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "proxydec/engine.hpp"
#include "proxydec/eval.hpp"
#include "test_support.hpp"

using namespace proxydec;

namespace {

ProxyDecoder reflect_decoder(double alpha) {
  DecodeConfig c;
  c.steering = SteeringSpec::make(alpha, {}, true);
  c.max_new_tokens = 16;
  return ProxyDecoder(support::load_table("base", "reflect_base.json"), support::load_table("expert", "reflect_expert.json"),
                      support::load_table("amateur", "reflect_amateur.json"), c);
}

std::vector<ProblemRecord> load_dataset(const std::string& name) { return parse_dataset(read_file(support::fixture(name))); }

}  // namespace

TEST(ExtractAnswer, MultipleChoice) {
  EXPECT_EQ(extract_answer("The answer is (C).", ProblemKind::multiple_choice, 4), "C");
  EXPECT_EQ(extract_answer("A or maybe B", ProblemKind::multiple_choice, 4), "B");
  EXPECT_EQ(extract_answer("Answer: E", ProblemKind::multiple_choice, 4), std::nullopt);
  EXPECT_EQ(extract_answer("ABC", ProblemKind::multiple_choice, 4), std::nullopt);
}

TEST(ExtractAnswer, Numeric) {
  EXPECT_EQ(extract_answer("first 12 then \\boxed{7/2}", ProblemKind::numeric), "7/2");
  EXPECT_EQ(extract_answer("\\boxed{3} and later 99", ProblemKind::numeric), "3");
  EXPECT_EQ(extract_answer("\\boxed{\\frac{1}{2}}", ProblemKind::numeric), "\\frac{1}{2}");
  EXPECT_EQ(extract_answer("got -4.25 then 8", ProblemKind::numeric), "8");
  EXPECT_EQ(extract_answer("no digits", ProblemKind::numeric), std::nullopt);
}

TEST(ExtractAnswer, FreeText) {
  EXPECT_EQ(extract_answer("thinking\n  final  answer \n\n", ProblemKind::free_text), "final  answer");
  EXPECT_EQ(extract_answer("  \n", ProblemKind::free_text), std::nullopt);
}

TEST(Grade, Rules) {
  EXPECT_TRUE(grade("7/2", "3.5", ProblemKind::numeric));
  EXPECT_TRUE(grade("3.5000001", "3.5", ProblemKind::numeric));
  EXPECT_FALSE(grade("3.6", "3.5", ProblemKind::numeric));
  EXPECT_FALSE(grade("x", "3.5", ProblemKind::numeric));
  EXPECT_TRUE(grade("c", "C", ProblemKind::multiple_choice));
  EXPECT_FALSE(grade(std::nullopt, "C", ProblemKind::multiple_choice));
  EXPECT_TRUE(grade("a  b", " a b ", ProblemKind::free_text));
  EXPECT_EQ(parse_number("7/2"), 3.5);
  EXPECT_EQ(parse_number("1/0"), std::nullopt);
}

TEST(Dataset, ParsingAndErrors) {
  const auto d = load_dataset("reflect_dataset.jsonl");
  ASSERT_EQ(d.size(), 5u);
  EXPECT_EQ(d[0].id, "r1");
  EXPECT_EQ(d[0].labels(), (std::vector<std::string>{"A", "B", "C", "D"}));
  EXPECT_TRUE(without_multiple_choice(d).empty());

  EXPECT_THROW(parse_dataset("{\"id\":\"a\",\"prompt\":[1],\"gold\":\"1\",\"kind\":\"numeric\"}\n"
                             "{\"id\":\"a\",\"prompt\":[1],\"gold\":\"1\",\"kind\":\"numeric\"}\n"),
               DatasetError);
  EXPECT_THROW(parse_dataset("{\"id\":\"a\",\"prompt\":[1],\"gold\":\"x\",\"kind\":\"numeric\"}\n"), DatasetError);
  EXPECT_THROW(parse_dataset("{\"id\":\"a\",\"prompt\":[1],\"gold\":\"A\",\"kind\":\"multiple_choice\",\"choices\":[\"x\"]}\n"),
               DatasetError);
  try {
    parse_dataset("{\"id\":\"a\",\"prompt\":[1],\"gold\":\"1\",\"kind\":\"numeric\"}\nnot json\n");
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(PassAtK, MatchesEnumeration) {
  for (unsigned n = 1; n <= 8; ++n) {
    for (unsigned c = 0; c <= n; ++c) {
      for (unsigned k = 1; k <= n; ++k) {
        const auto exact = pass_at_k_exact(n, c, k);
        const auto oracle = support::pass_at_k_by_enumeration(n, c, k);
        EXPECT_EQ(exact, oracle) << n << " " << c << " " << k;
        EXPECT_NEAR(pass_at_k(n, c, k), oracle.convert_to<double>(), 1e-12);
      }
    }
  }
  EXPECT_EQ(pass_at_k(5, 2, 2), 0.7);
  EXPECT_EQ(pass_at_k(4, 1, 2), 0.5);
  EXPECT_EQ(pass_at_k(3, 0, 2), 0.0);
  EXPECT_EQ(pass_at_k(3, 3, 1), 1.0);
  EXPECT_THROW(pass_at_k(3, 1, 4), DomainError);
  EXPECT_THROW(pass_at_k(3, 4, 1), DomainError);
  EXPECT_THROW(pass_at_k(3, 1, 0), DomainError);
}

TEST(PassAtK, CurveExample) {
  const auto curve = pass_at_k_curve({{"p", 5, 2}}, {1, 2, 3, 4, 5});
  const std::vector<double> expected{0.4, 0.7, 0.9, 1.0, 1.0};
  ASSERT_EQ(curve.size(), expected.size());
  for (std::size_t i = 0; i < curve.size(); ++i) EXPECT_DOUBLE_EQ(curve[i], expected[i]);
  try {
    pass_at_k_curve({{"p", 5, 2}, {"short", 2, 1}}, {3});
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("short"), std::string::npos);
  }
}

TEST(PassAtK, CurvesNonDecreasing) {
  std::mt19937_64 gen(6);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<PassKRecord> recs;
    const std::size_t n = 1 + gen() % 16;
    for (int i = 0; i < 5; ++i) recs.push_back({"p" + std::to_string(i), n, gen() % (n + 1)});
    std::vector<std::size_t> ks;
    for (std::size_t k = 1; k <= n; ++k) ks.push_back(k);
    const auto curve = pass_at_k_curve(recs, ks);
    for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_LE(curve[i - 1], curve[i]);
  }
}

TEST(Benchmark, ToyAccuracyAtBaseline) {
  const auto r = run_benchmark(load_dataset("toy_dataset.jsonl"), reflect_decoder(0.0), {});
  EXPECT_EQ(r.graded, 3u);
  EXPECT_EQ(r.correct, 2u);
  EXPECT_DOUBLE_EQ(r.accuracy, 2.0 / 3.0);
}

// A decoder that emits the correct letter with probability one half: pass@1
// over many samples tracks the binomial mean.
TEST(Benchmark, SampledPassRateMatchesBinomial) {
  std::vector<ProblemRecord> ds;
  for (int i = 0; i < 400; ++i) {
    ProblemRecord p;
    p.id = "q" + std::to_string(i);
    p.prompt_ids = TokenSeq{1};
    p.gold = "A";
    p.kind = ProblemKind::multiple_choice;
    p.choices = {"x", "y"};
    ds.push_back(p);
  }
  Vocabulary vocab(3, {0}, "coin", {"</s>", " A", " B"});
  DecodeFn coin = [](const TokenSeq&, const std::string&, std::uint64_t stream) {
    PortableRng rng(99, stream);
    DecodeResult r;
    r.tokens = {rng.next_unit() < 0.5 ? TokenId{1} : TokenId{2}};
    r.per_step_chosen_prob = {0.5};
    return r;
  };
  const auto r = run_benchmark(ds, vocab, coin, BenchmarkOptions{8, 4});
  const auto p1 = pass_at_k_curve(r.passk, {1, 8});
  EXPECT_NEAR(p1[0], 0.5, 0.03);
  EXPECT_NEAR(p1[1], 1.0 - std::pow(0.5, 8), 0.01);
}

TEST(Benchmark, DeterministicAndOrderInvariant) {
  DecodeConfig c;
  c.steering = SteeringSpec::make(0.5);
  c.sampler = SamplerSpec{SamplerKind::top_p, 0.9, 0.95, 42};
  c.max_new_tokens = 8;
  const ProxyDecoder d(support::load_table("base", "reflect_base.json"), support::load_table("expert", "reflect_expert.json"),
                       support::load_table("amateur", "reflect_amateur.json"), c);
  auto ds = load_dataset("reflect_dataset.jsonl");
  const auto a = run_benchmark(ds, d, BenchmarkOptions{4, 1});
  const auto b = run_benchmark(ds, d, BenchmarkOptions{4, 3});
  std::reverse(ds.begin(), ds.end());
  const auto rev = run_benchmark(ds, d, BenchmarkOptions{4, 2});
  ASSERT_EQ(a.transcripts.size(), b.transcripts.size());
  for (std::size_t i = 0; i < a.transcripts.size(); ++i) {
    EXPECT_EQ(a.transcripts[i].tokens, b.transcripts[i].tokens);
  }
  for (const auto& t : rev.transcripts) {
    const auto it = std::find_if(a.transcripts.begin(), a.transcripts.end(), [&](const Transcript& x) {
      return x.problem_id == t.problem_id && x.sample == t.sample;
    });
    ASSERT_NE(it, a.transcripts.end());
    EXPECT_EQ(it->tokens, t.tokens);
  }
}

TEST(Benchmark, ErroredProblemsExcluded) {
  auto ds = load_dataset("reflect_dataset.jsonl");
  const auto d = reflect_decoder(0.5);
  DecodeFn flaky = [&](const TokenSeq& prompt, const std::string& cond, std::uint64_t stream) {
    if (prompt == TokenSeq{7}) {
      throw DecodeAborted(BackendUnavailable("expert", 1, "down"), {5});
    }
    return d.decode(prompt, cond, stream);
  };
  const auto r = run_benchmark(ds, d.vocabulary(), flaky, {});
  EXPECT_EQ(r.errored, 1u);
  EXPECT_EQ(r.errored_ids, (std::vector<std::string>{"r2"}));
  EXPECT_EQ(r.graded, 4u);
  EXPECT_EQ(r.correct, 4u);
  EXPECT_EQ(r.transcripts[1].tokens, (TokenSeq{5}));
  EXPECT_TRUE(r.transcripts[1].error.has_value());
}

TEST(Sweep, ReflectionShape) {
  const auto ds = load_dataset("reflect_dataset.jsonl");
  const auto d = reflect_decoder(0.5);
  const auto s = alpha_sweep(ds, {0.5, 8.0}, d, {}, true);
  ASSERT_EQ(s.alphas, (std::vector<double>{0.0, 0.5, 8.0}));
  EXPECT_DOUBLE_EQ(s.accuracy[0], 0.4);
  EXPECT_DOUBLE_EQ(s.accuracy[1], 1.0);
  EXPECT_DOUBLE_EQ(s.accuracy[2], 0.8);
  EXPECT_EQ(s.best_alpha, 0.5);

  const auto delta = run_benchmark(ds, d.vocabulary(),
                                   [&](const TokenSeq& p, const std::string& c, std::uint64_t st) {
                                     return d.decode_delta_only(p, c, st);
                                   },
                                   {});
  EXPECT_DOUBLE_EQ(delta.accuracy, s.accuracy[2]);
  EXPECT_EQ(s.to_csv().substr(0, 23), "alpha,accuracy,errored\n");
}

TEST(Sweep, TiesGoToSmallestAlpha) {
  const auto ds = load_dataset("reflect_dataset.jsonl");
  const auto s = alpha_sweep(ds, {1.0, 0.5, 0.75}, reflect_decoder(0.5), {});
  EXPECT_EQ(s.best_alpha, 0.5);
  EXPECT_THROW(alpha_sweep(ds, {}, reflect_decoder(0.5), {}), ConfigError);
}
