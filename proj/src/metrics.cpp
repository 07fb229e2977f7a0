#include "strlab/metrics.hpp"

#include <algorithm>
#include <cstdio>

#include "strlab/error.hpp"
#include "strlab/textcodec.hpp"

namespace strlab::metrics {

std::size_t edit_distance(std::u32string_view a, std::u32string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diagonal = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t above = row[j];
      row[j] = std::min({above + 1, row[j - 1] + 1, diagonal + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diagonal = above;
    }
  }
  return row[b.size()];
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
  return edit_distance(text::to_u32(a), text::to_u32(b));
}

EvalReport evaluate(const std::vector<std::pair<std::string, std::string>>& pairs, CrrPooling pooling) {
  if (pairs.empty()) throw Error(ErrorCode::EmptySet, "nothing to evaluate");
  EvalReport report;
  report.samples.reserve(pairs.size());
  std::size_t total_chars = 0, total_errors = 0;
  double per_word = 0;
  for (const auto& [gt, pred] : pairs) {
    auto gt32 = text::to_u32(gt);
    std::size_t ed = edit_distance(gt32, text::to_u32(pred));
    report.samples.push_back({gt, pred, ed});
    if (gt == pred) ++report.exact;
    total_chars += gt32.size();
    total_errors += ed;
    if (!gt32.empty()) {
      per_word += std::max(0.0, 1.0 - static_cast<double>(ed) / static_cast<double>(gt32.size()));
    } else if (ed == 0) {
      per_word += 1.0;
    }
  }
  report.wrr = 100.0 * static_cast<double>(report.exact) / static_cast<double>(pairs.size());
  if (pooling == CrrPooling::Corpus) {
    if (total_chars == 0) {
      report.crr = total_errors == 0 ? 100.0 : 0.0;
    } else {
      double correct = total_errors >= total_chars ? 0.0 : static_cast<double>(total_chars - total_errors);
      report.crr = 100.0 * correct / static_cast<double>(total_chars);
    }
  } else {
    report.crr = 100.0 * per_word / static_cast<double>(pairs.size());
  }
  return report;
}

std::string EvalReport::summary_line() const {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%zu\t%.2f\t%.2f\n", count(), crr, wrr);
  return buf;
}

std::string EvalReport::samples_tsv() const {
  std::string out = "gt\tpred\tedit_distance\n";
  for (const auto& s : samples) {
    out += s.gt + '\t' + s.pred + '\t' + std::to_string(s.edit_distance) + '\n';
  }
  return out;
}

}  // namespace strlab::metrics
