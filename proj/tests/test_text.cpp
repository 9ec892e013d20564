#include <catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <sstream>

#include "tagbd/text.hpp"

using namespace tagbd;
using Catch::Approx;

namespace {
Vocabulary vocab_of(std::vector<std::string> corpus, std::size_t max_size = kDefaultVocabSize) {
  return build_vocab(corpus, max_size);
}
}  // namespace

TEST_CASE("tokenize lowercases and splits on punctuation") {
  CHECK(tokenize("Hello, World! a-b") == std::vector<std::string>{"hello", "world", "a", "b"});
  CHECK(tokenize("  ").empty());
  CHECK(tokenize("caf\xc3\xa9 ok") == std::vector<std::string>{"caf\xc3\xa9", "ok"});
}

TEST_CASE("build_vocab orders by frequency then lexicographically") {
  auto v = vocab_of({"a b", "a c"}, 2);
  REQUIRE(v.size() == 2);
  CHECK(v.token(0) == "a");
  CHECK(v.token(1) == "b");
  CHECK(v.frequency(0) == 2);
  CHECK(v.find("c") == v.size());

  CHECK(vocab_of({"a b", "a c"}, 100).size() == 3);
  CHECK(vocab_of({"x x x"}).size() == 1);
  CHECK(vocab_of({}).empty());
}

TEST_CASE("export_vocab writes index token frequency") {
  std::ostringstream out;
  export_vocab(vocab_of({"b a a"}), out);
  CHECK(out.str() == "0\ta\t2\n1\tb\t1\n");
}

TEST_CASE("encode gives normalized term frequencies") {
  auto v = vocab_of({"a a a b b c"});
  auto x = encode("a b a", v);
  CHECK(x[0] == Approx(2.0 / std::sqrt(5.0)).epsilon(1e-15));
  CHECK(x[1] == Approx(1.0 / std::sqrt(5.0)).epsilon(1e-15));
  CHECK(x[2] == 0.0);
  CHECK(encode("zzz", v) == std::vector<double>(3, 0.0));
  CHECK(encode("b a a", v) == encode("a a b", v));
}

TEST_CASE("decode sorts by weight and truncates") {
  auto v = vocab_of({"a a a b b c"});
  std::vector<double> w{0.9, 0.0, 0.4};
  CHECK(decode(w, v, 10) == "a c");
  CHECK(decode(w, v, 1) == "a");
  CHECK(decode(std::vector<double>(3, 0.0), v, 10).empty());
  std::vector<double> neg{-1.0, 0.5, 0.5};
  CHECK(decode(neg, v, 10) == "b c");
  CHECK_THROWS_AS(decode(std::vector<double>(2, 1.0), v, 10), ShapeError);
}

TEST_CASE("decode of encode recovers the distinct in-vocab tokens") {
  auto v = vocab_of({"red green blue red yellow", "green cyan"});
  const std::string text = "blue red red unknown cyan red";
  auto out = tokenize(decode(encode(text, v), v, 10));
  CHECK(std::set<std::string>(out.begin(), out.end()) == std::set<std::string>{"blue", "red", "cyan"});
  CHECK(out.size() == 3);
  CHECK(out.front() == "red");
}

TEST_CASE("bigram LM smoothing identities") {
  std::vector<std::string> corpus{"a b"};
  auto tiny = train_bigram_lm(corpus, 1e-12);
  CHECK(tiny.probability("a", "b") == Approx(1.0).epsilon(1e-9));

  auto lm = train_bigram_lm(corpus, 1.0);
  // "b" never precedes anything: uniform over observed tokens + UNK
  CHECK(lm.probability("b", "a") == Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(lm.probability("zzz", "a") == Approx(1.0 / 3.0).epsilon(1e-15));
  for (const std::string ctx : {"a", "b", "<s>", "never"}) CHECK(std::abs(lm.total_probability(ctx) - 1.0) < 1e-12);

  CHECK_THROWS_AS(train_bigram_lm(corpus, 0.0), ConfigError);
  CHECK_THROWS_AS(train_bigram_lm(std::vector<std::string>{"", " "}, 1.0), UndefinedMetricError);
}

TEST_CASE("perplexity closed forms") {
  std::vector<std::string> corpus{"a b a b"};
  auto lm = train_bigram_lm(corpus, 1.0);
  // counts: (a,b)=2, (b,a)=1; context total of a = 2; outcomes {a, b, UNK}
  // p(b|a) = (2 + 1) / (2 + 3) = 3/5  ->  PPL("a b") = 5/3
  CHECK(std::abs(perplexity(lm, "a b") - 5.0 / 3.0) < 1e-9);
  // p(a|b) = (1 + 1) / (1 + 3) = 1/2;  PPL("a b a") = exp(-(ln .6 + ln .5)/2)
  CHECK(std::abs(perplexity(lm, "a b a") - 1.0 / std::sqrt(0.3)) < 1e-9);

  auto flat = train_bigram_lm(corpus, 1e12);
  CHECK(perplexity(flat, "b b a x") == Approx(static_cast<double>(flat.outcome_count())).epsilon(1e-9));

  auto det = train_bigram_lm(std::vector<std::string>{"a b c"}, 1e-12);
  CHECK(perplexity(det, "a b c") == Approx(1.0).epsilon(1e-9));

  CHECK_THROWS_AS(perplexity(lm, "a"), UndefinedMetricError);
}
