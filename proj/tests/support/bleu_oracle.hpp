#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

// Reference corpus BLEU-4 written in the style of multi-bleu: n-grams are
// space-joined strings, statistics are accumulated as flat counters, and
// the score is assembled from log precisions at the end. Orders above one
// with no matches use (matches + 1) / (total + 1).
namespace bleu_oracle {

using Sentence = std::vector<std::string>;

inline std::unordered_map<std::string, int> ngram_counts(const Sentence& s, int n) {
  std::unordered_map<std::string, int> counts;
  if (static_cast<int>(s.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    std::string key = s[i];
    for (int k = 1; k < n; ++k) key += " " + s[i + k];
    counts[key] += 1;
  }
  return counts;
}

inline double corpus_bleu(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs) {
  double stats[10] = {0};  // [0..3] matches, [4..7] totals, [8] hyp length, [9] ref length
  for (std::size_t k = 0; k < hyps.size(); ++k) {
    stats[8] += hyps[k].size();
    stats[9] += refs[k].size();
    for (int n = 1; n <= 4; ++n) {
      auto h = ngram_counts(hyps[k], n);
      auto r = ngram_counts(refs[k], n);
      for (const auto& [gram, c] : h) {
        stats[n - 1] += std::min(c, r.count(gram) ? r[gram] : 0);
        stats[4 + n - 1] += c;
      }
    }
  }
  if (stats[8] == 0 || stats[0] == 0) return 0.0;
  double log_p = 0.0;
  for (int n = 0; n < 4; ++n) {
    double m = stats[n], t = stats[4 + n];
    if (n > 0 && m == 0) {
      m += 1;
      t += 1;
    }
    log_p += 0.25 * std::log(m / t);
  }
  const double ratio = stats[8] / stats[9];
  const double log_bp = ratio < 1.0 ? 1.0 - 1.0 / ratio : 0.0;
  return std::exp(log_bp + log_p);
}

}  // namespace bleu_oracle
