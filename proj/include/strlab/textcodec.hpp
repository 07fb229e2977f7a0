#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

// Text handling for recognition labels: UTF-8 decoding, cleaning of zero-width
// and unassigned codepoints, the class vocabulary, label encoding, and corpus
// statistics. Everything here works at codepoint granularity.
namespace strlab::text {

/// Decodes UTF-8; throws InvalidEncoding on malformed input.
std::u32string to_u32(std::string_view utf8);
std::string to_utf8(std::u32string_view codepoints);

/// U+200B..U+200D and U+FEFF.
bool is_zero_width(char32_t cp);
/// Codepoints stripped by clean_text: zero-width, unassigned, private use.
bool is_removed(char32_t cp);

/// Drops removed codepoints, then applies NFC. Idempotent.
std::u32string clean_text(std::u32string_view s);
std::string clean_text(std::string_view utf8);

/// Class sequence of a label. Class 0 is the CTC blank and never appears.
struct LabelSeq {
  std::vector<int> ids;
  std::string text;
};

/// Ordered codepoint inventory. Class i (1-based) is codepoints()[i-1];
/// class 0 is reserved for the CTC blank.
class Vocabulary {
 public:
  Vocabulary() = default;
  /// Sorts and dedupes; throws EmptyCorpus when empty and InvalidEncoding for
  /// removed codepoints.
  static Vocabulary from_codepoints(std::vector<char32_t> codepoints);

  const std::vector<char32_t>& codepoints() const { return codepoints_; }
  /// Number of symbols C, excluding the blank.
  int size() const { return static_cast<int>(codepoints_.size()); }
  /// C + 1 output classes.
  int classes() const { return size() + 1; }

  std::optional<int> class_of(char32_t cp) const;
  char32_t codepoint(int cls) const { return codepoints_.at(static_cast<std::size_t>(cls - 1)); }

  /// FNV-1a over the little-endian codepoint list.
  std::uint64_t hash() const;
  std::string hash_hex() const;

  bool operator==(const Vocabulary&) const = default;

 private:
  std::vector<char32_t> codepoints_;
};

/// Sorted unique inventory of every cleaned codepoint in the corpus.
Vocabulary build_vocab(std::span<const std::string> corpus);

/// Encodes clean_text(s); throws OovCodepoint naming the first offender.
LabelSeq encode(std::string_view utf8, const Vocabulary& vocab);
std::string decode(std::span<const int> ids, const Vocabulary& vocab);

std::string hex_codepoint(char32_t cp);

// ---------------------------------------------------------------------------
// Corpus statistics
// ---------------------------------------------------------------------------

struct NgramTable {
  int order = 1;
  std::map<std::u32string, std::uint64_t> counts;

  std::uint64_t total() const;
};

/// Within-word sliding windows over cleaned words; 1 <= n <= 5 (BadOrder).
NgramTable ngram_table(std::span<const std::string> corpus, int n);

/// Ranked by count descending, then codepoint sequence ascending.
std::vector<std::pair<std::u32string, std::uint64_t>> top_k(const NgramTable& table, std::size_t k);

/// Moving-average width used when plotting the ranked distribution of order n
/// (10, 100, 1000, 1000, 1000 for n = 1..5).
std::size_t smoothing_window(int order);

/// Trailing moving average; the first window-1 entries average what exists.
std::vector<double> moving_average(std::span<const double> values, std::size_t window);

/// "ngram<TAB>count" lines in top_k order.
std::string ngram_tsv(const NgramTable& table, std::size_t k);

struct CorpusStats {
  std::size_t words = 0;
  double mean = 0;    // codepoints per cleaned word
  double stddev = 0;  // population standard deviation
};

/// Throws EmptyCorpus when no nonempty cleaned word remains.
CorpusStats corpus_stats(std::span<const std::string> corpus);

/// "words<TAB>mean<TAB>stddev" with two decimals.
std::string stats_tsv(const CorpusStats& stats);

/// Splits text into whitespace-separated words.
std::vector<std::string> split_words(std::string_view text);

}  // namespace strlab::text
