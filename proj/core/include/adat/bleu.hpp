#pragma once

#include <array>
#include <string>
#include <vector>

namespace adat {

// Corpus-level n-gram precision scores on the [0,1] scale.
struct BleuReport {
  std::array<double, 4> bleu{};        // BLEU-1 .. BLEU-4
  std::array<double, 4> precisions{};  // clipped p_1 .. p_4
  double brevity_penalty = 1.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;

  std::string to_csv() const;  // header row plus one data row
};

// Clipped n-gram precisions pooled over the corpus, uniform weights 1/k for
// BLEU-k, brevity penalty exp(1 - r/c) when c <= r. A zero precision at any
// order n makes BLEU-k zero for every k >= n (no smoothing). An empty
// candidate corpus is an error; zero total candidate length scores 0.
BleuReport bleu(const std::vector<std::vector<int>>& candidates,
                const std::vector<std::vector<int>>& references, int max_n = 4);

// Convenience overload for whitespace-separated token strings.
BleuReport bleu(const std::vector<std::string>& candidates,
                const std::vector<std::string>& references, int max_n = 4);

}  // namespace adat
