#include <doctest.h>

#include "genbench/bitcore.hpp"
#include "genbench/errors.hpp"
#include "genbench/tasks.hpp"

using namespace genbench;

namespace {

Bitstring b(const char* text) { return Bitstring::from_text(text); }

SpaceParams cardinality(int n, int k) { return {SpaceKind::cardinality, n, k, Parity::even, 0, 0}; }

}  // namespace

TEST_CASE("hamming weight") {
  CHECK(hamming_weight(Bitstring(4, 0b0000)) == 0);
  CHECK(hamming_weight(Bitstring(4, 0b1111)) == 4);
  CHECK(hamming_weight(Bitstring(20, 0b10101010101010101010)) == 10);
}

TEST_CASE("bitstring encoding") {
  CHECK(b("0001").bits() == 1u);
  CHECK(b("1000").bits() == 8u);
  CHECK(b("1000").bit(3));
  CHECK_FALSE(b("1000").bit(0));
  CHECK(Bitstring(5, 6).to_text() == "00110");
  CHECK_THROWS_AS(Bitstring(3, 8), ConfigError);
  CHECK_THROWS_AS(Bitstring(0, 0), ConfigError);
  CHECK_THROWS_AS(Bitstring(31, 0), ConfigError);
  CHECK_THROWS_AS(b("01x"), ConfigError);
  CHECK_NOTHROW(Bitstring(30, (1u << 30) - 1));
}

TEST_CASE("text round trip over all strings up to N=12") {
  for (int n = 1; n <= 12; ++n) {
    for (std::uint32_t x = 0; x < (1u << n); ++x) {
      const Bitstring s(n, x);
      REQUIRE(Bitstring::from_text(s.to_text()) == s);
    }
  }
}

TEST_CASE("multiset_from_samples") {
  SUBCASE("empty") {
    const auto m = multiset_from_samples({}, 3);
    CHECK(m.total() == 0);
    CHECK(m.empty());
    CHECK(m.unique_size() == 0);
  }
  SUBCASE("direct count") {
    const std::vector<Bitstring> xs{b("01"), b("01"), b("10")};
    const auto m = multiset_from_samples(xs);
    CHECK(m.count(b("01")) == 2);
    CHECK(m.count(b("10")) == 1);
    CHECK(m.total() == 3);
  }
  SUBCASE("duplicates collapse to unique keys") {
    const std::vector<Bitstring> xs{b("00"), b("00"), b("11")};
    const auto m = multiset_from_samples(xs);
    CHECK(m.unique_size() == 2);
    CHECK(m.contains(0b00));
    CHECK(m.contains(0b11));
  }
  SUBCASE("mixed widths") {
    const std::vector<Bitstring> xs{b("01"), b("010")};
    CHECK_THROWS_AS(multiset_from_samples(xs), WidthMismatchError);
  }
}

TEST_CASE("multiset bookkeeping") {
  SampleMultiset m(3);
  m.add(b("101"), 2);
  m.add(b("101"), 0);
  m.add(b("001"));
  CHECK(m.total() == 3);
  CHECK(m.unique_size() == 2);
  SampleMultiset other(3);
  other.add(b("001"), 4);
  m.merge(other);
  CHECK(m.count(b("001")) == 5);
  CHECK(m.total() == 7);
  std::uint64_t sum = 0;
  for (const auto& [bits, c] : m.counts()) {
    CHECK(c > 0);
    sum += c;
  }
  CHECK(sum == m.total());
  CHECK_THROWS_AS(m.merge(SampleMultiset(4)), WidthMismatchError);
  CHECK_THROWS_AS(m.add(b("0001")), WidthMismatchError);
}

TEST_CASE("partition_queries hand example") {
  const SolutionSpace space(cardinality(4, 2));
  SampleMultiset train(4);
  train.add(b("0011"));
  train.add(b("0101"));
  SampleMultiset q(4);
  q.add(b("0011"), 2);
  q.add(b("0110"), 3);
  q.add(b("1010"), 1);
  q.add(b("1111"), 2);
  q.add(b("0000"), 2);
  const auto p = partition_queries(q, train, space);
  CHECK(p.g_new.total() == 8);
  CHECK(p.g_sol.total() == 4);
  CHECK(p.g_sol.unique_size() == 2);
  CHECK(p.g_sol.count(b("0110")) == 3);
  CHECK(p.g_sol.count(b("1010")) == 1);
}

TEST_CASE("partition_queries edge cases") {
  const SolutionSpace space(cardinality(4, 2));
  SampleMultiset train(4);
  train.add(b("0011"));
  train.add(b("1100"));

  SUBCASE("queries equal to train") {
    SampleMultiset q(4);
    q.add(b("0011"), 5);
    q.add(b("1100"), 1);
    const auto p = partition_queries(q, train, space);
    CHECK(p.g_new.empty());
    CHECK(p.g_sol.empty());
  }
  SUBCASE("empty train") {
    SampleMultiset q(4);
    q.add(b("0011"), 2);
    q.add(b("1111"), 1);
    const auto p = partition_queries(q, SampleMultiset(4), space);
    CHECK(p.g_new == q);
    CHECK(p.g_sol.total() == 2);
  }
  SUBCASE("invalid train") {
    SampleMultiset bad(4);
    bad.add(b("0111"));
    CHECK_THROWS_AS(partition_queries(SampleMultiset(4), bad, space), InvalidTrainingSetError);
  }
  SUBCASE("width mismatch") {
    CHECK_THROWS_AS(partition_queries(SampleMultiset(5), train, space), WidthMismatchError);
  }
}

TEST_CASE("partition properties hold exhaustively at N=8") {
  const SolutionSpace space(cardinality(8, 3));
  SampleMultiset train(8);
  for (std::uint32_t x : {0b00000111u, 0b10100001u, 0b01010100u}) train.add(Bitstring(8, x));
  SampleMultiset q(8);
  for (std::uint32_t x = 0; x < 256; ++x) q.add(Bitstring(8, x), 1 + x % 3);
  const auto p = partition_queries(q, train, space);
  CHECK(p.g_sol.total() <= p.g_new.total());
  CHECK(p.g_new.total() <= q.total());
  for (const auto& [bits, c] : p.g_sol.counts()) {
    CHECK(space.contains(bits));
    CHECK_FALSE(train.contains(bits));
    CHECK(c == q.count(bits));
  }
  for (const auto& [bits, c] : p.g_new.counts()) CHECK_FALSE(train.contains(bits));
}
