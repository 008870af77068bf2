#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <map>
#include <string>
#include <vector>

#include "adat/bleu.hpp"
#include "adat/rng.hpp"

using namespace adat;

namespace {

// Brute-force reference written independently: string-keyed n-gram maps and
// direct formula evaluation, no shared code with the implementation.
struct ReferenceBleu {
  std::array<double, 4> bleu{};
  double bp = 1.0;
};

ReferenceBleu reference_bleu(const std::vector<std::vector<int>>& cands,
                             const std::vector<std::vector<int>>& refs, int max_n) {
  auto grams = [](const std::vector<int>& seq, int n) {
    std::map<std::string, int> out;
    for (int i = 0; i + n <= static_cast<int>(seq.size()); ++i) {
      std::string key;
      for (int j = i; j < i + n; ++j) key += std::to_string(seq[static_cast<std::size_t>(j)]) + ",";
      ++out[key];
    }
    return out;
  };
  double c = 0, r = 0;
  std::array<double, 4> matched{}, total{};
  for (std::size_t i = 0; i < cands.size(); ++i) {
    c += static_cast<double>(cands[i].size());
    r += static_cast<double>(refs[i].size());
    for (int n = 1; n <= max_n; ++n) {
      auto cg = grams(cands[i], n);
      auto rg = grams(refs[i], n);
      for (const auto& [key, count] : cg) {
        auto it = rg.find(key);
        matched[static_cast<std::size_t>(n - 1)] +=
            it == rg.end() ? 0 : std::min(count, it->second);
      }
      if (static_cast<int>(cands[i].size()) >= n)
        total[static_cast<std::size_t>(n - 1)] += static_cast<double>(cands[i].size()) - n + 1;
    }
  }
  ReferenceBleu out;
  out.bp = c > r ? 1.0 : std::exp(1.0 - r / std::max(c, 1.0));
  for (int k = 1; k <= max_n; ++k) {
    double acc = 0.0;
    bool zero = c == 0;
    for (int n = 1; n <= k && !zero; ++n) {
      const double p = total[static_cast<std::size_t>(n - 1)] == 0
                           ? 0.0
                           : matched[static_cast<std::size_t>(n - 1)] /
                                 total[static_cast<std::size_t>(n - 1)];
      if (p <= 0.0) zero = true;
      else acc += std::log(p) / k;
    }
    out.bleu[static_cast<std::size_t>(k - 1)] = zero ? 0.0 : out.bp * std::exp(acc);
  }
  return out;
}

}  // namespace

TEST_CASE("perfect candidates score one at every order") {
  const std::vector<std::vector<int>> corpus = {{1, 2, 3, 4, 5}, {9, 8, 7, 6}};
  BleuReport report = bleu(corpus, corpus, 4);
  for (double b : report.bleu) CHECK(b == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(report.brevity_penalty == 1.0);
}

TEST_CASE("brevity penalty follows the published formula exactly") {
  // candidate length 2, reference length 4: BP = e^(1-2) = e^-1
  BleuReport report = bleu(std::vector<std::vector<int>>{{1, 2}},
                           std::vector<std::vector<int>>{{1, 2, 3, 4}}, 4);
  CHECK(std::fabs(report.brevity_penalty - std::exp(-1.0)) <= 1e-12);
  CHECK(report.candidate_length == 2);
  CHECK(report.reference_length == 4);

  // candidate longer than reference: no penalty
  BleuReport longer = bleu(std::vector<std::vector<int>>{{1, 2, 3}},
                           std::vector<std::vector<int>>{{1, 2}}, 2);
  CHECK(longer.brevity_penalty == 1.0);
}

TEST_CASE("zero higher-order precision zeroes the corresponding scores") {
  // "a b x d" vs "a b c d": p1 = 3/4, p2 = 1/3, p3 = 0
  BleuReport report = bleu(std::vector<std::string>{"a b x d"},
                           std::vector<std::string>{"a b c d"}, 4);
  CHECK(report.precisions[0] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(report.precisions[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(report.precisions[2] == 0.0);
  CHECK(report.bleu[2] == 0.0);
  CHECK(report.bleu[3] == 0.0);
  CHECK(report.bleu[0] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(report.bleu[1] == doctest::Approx(std::sqrt(0.25)).epsilon(1e-12));
}

TEST_CASE("candidate n-grams are clipped by reference counts") {
  BleuReport report = bleu(std::vector<std::string>{"the the the"},
                           std::vector<std::string>{"the cat"}, 1);
  CHECK(report.precisions[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("empty candidates score zero, empty corpora are rejected") {
  BleuReport report = bleu(std::vector<std::vector<int>>{{}},
                           std::vector<std::vector<int>>{{1, 2}}, 4);
  for (double b : report.bleu) CHECK(b == 0.0);
  CHECK(report.brevity_penalty > 0.0);
  CHECK(report.brevity_penalty <= 1.0);
  CHECK_THROWS_AS(bleu(std::vector<std::vector<int>>{}, std::vector<std::vector<int>>{}, 4),
                  std::invalid_argument);
  CHECK_THROWS_AS(bleu(std::vector<std::vector<int>>{{1}},
                       std::vector<std::vector<int>>{{1}, {2}}, 4),
                  std::invalid_argument);
}

TEST_CASE("corpus scores match the brute-force reference on 100 random corpora") {
  Rng rng(8128);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t pairs = 1 + rng.index(6);
    std::vector<std::vector<int>> cands, refs;
    for (std::size_t i = 0; i < pairs; ++i) {
      std::vector<int> cand(1 + rng.index(20)), ref(1 + rng.index(20));
      for (int& t : cand) t = static_cast<int>(rng.index(5));
      for (int& t : ref) t = static_cast<int>(rng.index(5));
      cands.push_back(std::move(cand));
      refs.push_back(std::move(ref));
    }
    const BleuReport mine = bleu(cands, refs, 4);
    const ReferenceBleu expect = reference_bleu(cands, refs, 4);
    CHECK(std::fabs(mine.brevity_penalty - expect.bp) <= 1e-9);
    for (int k = 0; k < 4; ++k) {
      CAPTURE(trial);
      CAPTURE(k);
      CHECK(std::fabs(mine.bleu[static_cast<std::size_t>(k)] -
                      expect.bleu[static_cast<std::size_t>(k)]) <= 1e-9);
      CHECK(mine.bleu[static_cast<std::size_t>(k)] >= 0.0);
      CHECK(mine.bleu[static_cast<std::size_t>(k)] <= 1.0);
    }
  }
}

TEST_CASE("appending an exactly matched pair never lowers any score") {
  Rng rng(4242);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<int>> cands, refs;
    for (std::size_t i = 0; i < 1 + rng.index(4); ++i) {
      std::vector<int> cand(1 + rng.index(10)), ref(1 + rng.index(10));
      for (int& t : cand) t = static_cast<int>(rng.index(4));
      for (int& t : ref) t = static_cast<int>(rng.index(4));
      cands.push_back(std::move(cand));
      refs.push_back(std::move(ref));
    }
    const BleuReport before = bleu(cands, refs, 4);
    std::vector<int> exact(4 + rng.index(6));
    for (int& t : exact) t = static_cast<int>(rng.index(4));
    cands.push_back(exact);
    refs.push_back(exact);
    const BleuReport after = bleu(cands, refs, 4);
    for (int k = 0; k < 4; ++k)
      CHECK(after.bleu[static_cast<std::size_t>(k)] >=
            before.bleu[static_cast<std::size_t>(k)] - 1e-12);
  }
}

TEST_CASE("report serializes to a two-line table") {
  BleuReport report = bleu(std::vector<std::vector<int>>{{1, 2, 3, 4, 5}},
                           std::vector<std::vector<int>>{{1, 2, 3, 4, 5}}, 4);
  const std::string csv = report.to_csv();
  CHECK(csv.find("bleu1,bleu2,bleu3,bleu4") == 0);
  CHECK(csv.find("\n1,1,1,1,") != std::string::npos);
}
