#include "strlab/textcodec.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "strlab/error.hpp"
#include "strlab/random.hpp"

namespace strlab::text {

std::u32string to_u32(std::string_view utf8) {
  std::u32string out;
  out.reserve(utf8.size());
  const auto* bytes = reinterpret_cast<const uint8_t*>(utf8.data());
  int32_t length = static_cast<int32_t>(utf8.size());
  int32_t i = 0;
  while (i < length) {
    UChar32 c;
    int32_t start = i;
    U8_NEXT(bytes, i, length, c);
    if (c < 0) throw Error(ErrorCode::InvalidEncoding, "malformed UTF-8 at byte " + std::to_string(start));
    out.push_back(static_cast<char32_t>(c));
  }
  return out;
}

std::string to_utf8(std::u32string_view codepoints) {
  std::string out;
  out.reserve(codepoints.size() * 3);
  for (char32_t cp : codepoints) {
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      throw Error(ErrorCode::InvalidEncoding, "not a scalar value: " + hex_codepoint(cp));
    }
    uint8_t buf[4];
    int32_t len = 0;
    U8_APPEND_UNSAFE(buf, len, static_cast<UChar32>(cp));
    out.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(len));
  }
  return out;
}

bool is_zero_width(char32_t cp) {
  return (cp >= 0x200B && cp <= 0x200D) || cp == 0xFEFF;
}

bool is_removed(char32_t cp) {
  if (is_zero_width(cp)) return true;
  auto category = u_charType(static_cast<UChar32>(cp));
  return category == U_UNASSIGNED || category == U_PRIVATE_USE_CHAR;
}

std::u32string clean_text(std::u32string_view s) {
  std::u32string kept;
  kept.reserve(s.size());
  for (char32_t cp : s) {
    if (!is_removed(cp)) kept.push_back(cp);
  }
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error(ErrorCode::InvalidEncoding, "NFC normalizer unavailable");
  icu::UnicodeString source = icu::UnicodeString::fromUTF32(
      reinterpret_cast<const UChar32*>(kept.data()), static_cast<int32_t>(kept.size()));
  if (nfc->isNormalized(source, status) && U_SUCCESS(status)) return kept;
  status = U_ZERO_ERROR;
  icu::UnicodeString normalized = nfc->normalize(source, status);
  if (U_FAILURE(status)) throw Error(ErrorCode::InvalidEncoding, "NFC normalization failed");
  std::u32string out(static_cast<std::size_t>(normalized.countChar32()), U'\0');
  status = U_ZERO_ERROR;
  normalized.toUTF32(reinterpret_cast<UChar32*>(out.data()), static_cast<int32_t>(out.size()), status);
  return out;
}

std::string clean_text(std::string_view utf8) {
  return to_utf8(clean_text(to_u32(utf8)));
}

std::string hex_codepoint(char32_t cp) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "U+%04X", static_cast<unsigned>(cp));
  return buf;
}

Vocabulary Vocabulary::from_codepoints(std::vector<char32_t> codepoints) {
  if (codepoints.empty()) throw Error(ErrorCode::EmptyCorpus, "vocabulary has no symbols");
  for (char32_t cp : codepoints) {
    if (is_removed(cp)) throw Error(ErrorCode::InvalidEncoding, "vocabulary contains " + hex_codepoint(cp));
  }
  std::sort(codepoints.begin(), codepoints.end());
  codepoints.erase(std::unique(codepoints.begin(), codepoints.end()), codepoints.end());
  Vocabulary v;
  v.codepoints_ = std::move(codepoints);
  return v;
}

std::optional<int> Vocabulary::class_of(char32_t cp) const {
  auto it = std::lower_bound(codepoints_.begin(), codepoints_.end(), cp);
  if (it == codepoints_.end() || *it != cp) return std::nullopt;
  return static_cast<int>(it - codepoints_.begin()) + 1;
}

std::uint64_t Vocabulary::hash() const {
  std::string bytes;
  bytes.reserve(codepoints_.size() * 4);
  for (char32_t cp : codepoints_) {
    for (int shift = 0; shift < 32; shift += 8) bytes.push_back(static_cast<char>((cp >> shift) & 0xFF));
  }
  return fnv1a(bytes);
}

std::string Vocabulary::hash_hex() const {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

Vocabulary build_vocab(std::span<const std::string> corpus) {
  std::vector<char32_t> all;
  for (const auto& word : corpus) {
    auto cleaned = clean_text(to_u32(word));
    all.insert(all.end(), cleaned.begin(), cleaned.end());
  }
  if (all.empty()) throw Error(ErrorCode::EmptyCorpus, "corpus has no codepoints after cleaning");
  return Vocabulary::from_codepoints(std::move(all));
}

LabelSeq encode(std::string_view utf8, const Vocabulary& vocab) {
  auto cleaned = clean_text(to_u32(utf8));
  LabelSeq seq;
  seq.ids.reserve(cleaned.size());
  for (char32_t cp : cleaned) {
    auto cls = vocab.class_of(cp);
    if (!cls) throw Error(ErrorCode::OovCodepoint, hex_codepoint(cp) + " is not in the vocabulary");
    seq.ids.push_back(*cls);
  }
  seq.text = to_utf8(cleaned);
  return seq;
}

std::string decode(std::span<const int> ids, const Vocabulary& vocab) {
  std::u32string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 1 || id > vocab.size()) {
      throw Error(ErrorCode::VocabMismatch, "class " + std::to_string(id) + " outside vocabulary");
    }
    out.push_back(vocab.codepoint(id));
  }
  return to_utf8(out);
}

std::uint64_t NgramTable::total() const {
  std::uint64_t n = 0;
  for (const auto& [gram, count] : counts) n += count;
  return n;
}

NgramTable ngram_table(std::span<const std::string> corpus, int n) {
  if (n < 1 || n > 5) throw Error(ErrorCode::BadOrder, "n-gram order " + std::to_string(n));
  NgramTable table;
  table.order = n;
  for (const auto& word : corpus) {
    auto cleaned = clean_text(to_u32(word));
    if (cleaned.size() < static_cast<std::size_t>(n)) continue;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= cleaned.size(); ++i) {
      ++table.counts[cleaned.substr(i, static_cast<std::size_t>(n))];
    }
  }
  return table;
}

std::vector<std::pair<std::u32string, std::uint64_t>> top_k(const NgramTable& table, std::size_t k) {
  std::vector<std::pair<std::u32string, std::uint64_t>> ranked(table.counts.begin(), table.counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > k) ranked.resize(k);
  return ranked;
}

std::size_t smoothing_window(int order) {
  static constexpr std::size_t kWindows[] = {10, 100, 1000, 1000, 1000};
  if (order < 1 || order > 5) throw Error(ErrorCode::BadOrder, "n-gram order " + std::to_string(order));
  return kWindows[order - 1];
}

std::vector<double> moving_average(std::span<const double> values, std::size_t window) {
  std::vector<double> out(values.size());
  double running = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    running += values[i];
    if (i >= window) running -= values[i - window];
    out[i] = running / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

std::string ngram_tsv(const NgramTable& table, std::size_t k) {
  std::string out;
  for (const auto& [gram, count] : top_k(table, k)) {
    out += to_utf8(gram);
    out += '\t';
    out += std::to_string(count);
    out += '\n';
  }
  return out;
}

CorpusStats corpus_stats(std::span<const std::string> corpus) {
  std::vector<double> lengths;
  lengths.reserve(corpus.size());
  for (const auto& word : corpus) {
    auto cleaned = clean_text(to_u32(word));
    if (!cleaned.empty()) lengths.push_back(static_cast<double>(cleaned.size()));
  }
  if (lengths.empty()) throw Error(ErrorCode::EmptyCorpus, "no words to summarize");
  // Welford's update, single pass.
  double mean = 0, m2 = 0;
  std::size_t n = 0;
  for (double x : lengths) {
    ++n;
    double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  return {n, mean, std::sqrt(m2 / static_cast<double>(n))};
}

std::string stats_tsv(const CorpusStats& stats) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%zu\t%.2f\t%.2f\n", stats.words, stats.mean, stats.stddev);
  return buf;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) words.emplace_back(text.substr(start, i - start));
  }
  return words;
}

}  // namespace strlab::text
