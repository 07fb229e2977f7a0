#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace strlab::metrics {

/// Levenshtein distance over codepoints with unit costs.
std::size_t edit_distance(std::u32string_view a, std::u32string_view b);
/// UTF-8 convenience overload.
std::size_t edit_distance(std::string_view a, std::string_view b);

enum class CrrPooling {
  Corpus,   // (sum |gt| - sum ED) / sum |gt|, floored at 0
  PerWord,  // mean over words of max(0, 1 - ED / |gt|)
};

struct SampleResult {
  std::string gt;
  std::string pred;
  std::size_t edit_distance = 0;
};

struct EvalReport {
  std::vector<SampleResult> samples;
  double crr = 0;  // percent
  double wrr = 0;  // percent
  std::size_t exact = 0;

  std::size_t count() const { return samples.size(); }
  /// "N<TAB>CRR<TAB>WRR" with two decimals, newline terminated.
  std::string summary_line() const;
  /// Header plus one "gt<TAB>pred<TAB>edit_distance" row per sample.
  std::string samples_tsv() const;
};

/// Throws EmptySet for no pairs. Pairs are (ground truth, prediction).
EvalReport evaluate(const std::vector<std::pair<std::string, std::string>>& pairs,
                    CrrPooling pooling = CrrPooling::Corpus);

}  // namespace strlab::metrics
