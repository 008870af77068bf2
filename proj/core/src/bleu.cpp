#include "adat/bleu.hpp"

#include <charconv>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace adat {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

using NgramCounts = std::map<std::vector<int>, std::size_t>;

NgramCounts count_ngrams(const std::vector<int>& seq, std::size_t n) {
  NgramCounts counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i)
    ++counts[std::vector<int>(seq.begin() + static_cast<std::ptrdiff_t>(i),
                              seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

}  // namespace

BleuReport bleu(const std::vector<std::vector<int>>& candidates,
                const std::vector<std::vector<int>>& references, int max_n) {
  if (candidates.empty()) throw std::invalid_argument("bleu: empty candidate corpus");
  if (candidates.size() != references.size())
    throw std::invalid_argument("bleu: " + std::to_string(candidates.size()) +
                                " candidates vs " + std::to_string(references.size()) +
                                " references");
  if (max_n < 1 || max_n > 4) throw std::invalid_argument("bleu: max_n must be in 1..4");

  BleuReport report;
  std::array<std::size_t, 4> matched{};
  std::array<std::size_t, 4> total{};
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    report.candidate_length += candidates[i].size();
    report.reference_length += references[i].size();
    for (int n = 1; n <= max_n; ++n) {
      const NgramCounts cand = count_ngrams(candidates[i], static_cast<std::size_t>(n));
      const NgramCounts ref = count_ngrams(references[i], static_cast<std::size_t>(n));
      for (const auto& [gram, c] : cand) {
        auto it = ref.find(gram);
        const std::size_t clip = it == ref.end() ? 0 : std::min(c, it->second);
        matched[static_cast<std::size_t>(n - 1)] += clip;
      }
      if (candidates[i].size() >= static_cast<std::size_t>(n))
        total[static_cast<std::size_t>(n - 1)] +=
            candidates[i].size() - static_cast<std::size_t>(n) + 1;
    }
  }

  for (int n = 0; n < max_n; ++n) {
    report.precisions[static_cast<std::size_t>(n)] =
        total[static_cast<std::size_t>(n)] == 0
            ? 0.0
            : static_cast<double>(matched[static_cast<std::size_t>(n)]) /
                  static_cast<double>(total[static_cast<std::size_t>(n)]);
  }

  const double c = static_cast<double>(report.candidate_length);
  const double r = static_cast<double>(report.reference_length);
  report.brevity_penalty = c > r ? 1.0 : std::exp(1.0 - r / std::max(c, 1.0));

  for (int k = 1; k <= max_n; ++k) {
    double log_sum = 0.0;
    bool zero = report.candidate_length == 0;
    for (int n = 1; n <= k; ++n) {
      const double p = report.precisions[static_cast<std::size_t>(n - 1)];
      if (p <= 0.0) {
        zero = true;
        break;
      }
      log_sum += std::log(p) / static_cast<double>(k);
    }
    report.bleu[static_cast<std::size_t>(k - 1)] =
        zero ? 0.0 : report.brevity_penalty * std::exp(log_sum);
  }
  return report;
}

BleuReport bleu(const std::vector<std::string>& candidates,
                const std::vector<std::string>& references, int max_n) {
  // Map whitespace tokens to ids shared across the corpus.
  std::map<std::string, int> ids;
  auto tokenize = [&ids](const std::string& s) {
    std::vector<int> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) out.push_back(ids.emplace(tok, static_cast<int>(ids.size())).first->second);
    return out;
  };
  std::vector<std::vector<int>> cand, ref;
  cand.reserve(candidates.size());
  ref.reserve(references.size());
  for (const auto& s : candidates) cand.push_back(tokenize(s));
  for (const auto& s : references) ref.push_back(tokenize(s));
  return bleu(cand, ref, max_n);
}

std::string BleuReport::to_csv() const {
  std::ostringstream os;
  os << "bleu1,bleu2,bleu3,bleu4,p1,p2,p3,p4,brevity_penalty,candidate_length,reference_length\n";
  for (int i = 0; i < 4; ++i) os << format_double(bleu[static_cast<std::size_t>(i)]) << ',';
  for (int i = 0; i < 4; ++i) os << format_double(precisions[static_cast<std::size_t>(i)]) << ',';
  os << format_double(brevity_penalty) << ',' << candidate_length << ',' << reference_length
     << '\n';
  return os.str();
}

}  // namespace adat
