#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "strlab/textcodec.hpp"

// Procedural word-image generator. Toy scripts are bitmap atlases; words are
// composited left to right, degraded (scale, rotation, contrast, noise) and
// written as 8-bit PGM images with a TSV manifest.
namespace strlab::synth {

inline constexpr int kGlyphRows = 7;
inline constexpr int kGlyphCols = 5;
/// Blank cells around the glyph band and between glyphs, in glyph cells.
inline constexpr int kBandPad = 1;
inline constexpr int kGlyphGap = 1;

using GlyphBitmap = Eigen::Array<std::uint8_t, kGlyphRows, kGlyphCols, Eigen::RowMajor>;
using Image = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct GlyphAtlas {
  std::string script;
  bool connector = false;  // horizontal line joining the tops of glyphs
  std::map<char32_t, GlyphBitmap> glyphs;
  /// Symbols given the highest frequencies by make_lexicon.
  std::vector<char32_t> vowel_like;

  text::Vocabulary vocabulary() const;
  bool covers(char32_t cp) const { return glyphs.count(cp) != 0; }
};

struct BuiltinScripts {
  GlyphAtlas a;  // 10 glyphs, no connector
  GlyphAtlas b;  // 12 glyphs, connector; 6 shapes shared with a
  GlyphAtlas c;  // 12 glyphs, connector; no shapes shared with a or b
};

const BuiltinScripts& builtin_scripts();
/// "A", "B" or "C"; throws BadConfig otherwise.
const GlyphAtlas& builtin_atlas(std::string_view name);

/// Number of distinct bitmaps present in both atlases.
std::size_t shared_shapes(const GlyphAtlas& x, const GlyphAtlas& y);

struct RenderConfig {
  int height = 32;
  int width = 100;
  double scale_jitter = 0.1;   // scale drawn from [1 - j, 1] of the fitted scale
  double rotation_deg = 3.0;   // uniform in [-r, r]
  double noise = 0.03;         // gaussian sigma
  double contrast_min = 0.6;
  double contrast_max = 1.0;
  std::uint64_t seed = 1;

  /// Canvas for a model input; widths follow the heights (32 -> 100, 18 -> 150).
  static RenderConfig for_height(int height);
  /// No jitter, no noise, full contrast: ink renders as exactly 1 on 0.
  RenderConfig without_degradation() const;
  void validate() const;
};

struct WordSample {
  Image image;  // values are multiples of 1/255 in [0, 1]
  std::string label;
  std::string script;
  std::uint64_t seed = 0;
};

/// Throws MissingGlyph for codepoints the atlas lacks. Deterministic in
/// (word, cfg).
WordSample render_word(std::string_view word, const GlyphAtlas& atlas, const RenderConfig& cfg);

/// Unique words over the atlas symbols with Zipf-like symbol frequencies
/// (vowel-like symbols ranked first), lengths uniform in [min_len, max_len].
std::vector<std::string> make_lexicon(const GlyphAtlas& atlas, std::size_t words, std::uint64_t seed,
                                      int min_len, int max_len);
/// Lexicon with the default length range of a builtin script.
std::vector<std::string> builtin_lexicon(const GlyphAtlas& atlas, std::size_t words, std::uint64_t seed);

struct Dataset {
  std::vector<WordSample> train;
  std::vector<WordSample> test;  // empty unless a split ratio was given
};

/// Samples lexicon words uniformly with replacement and renders them. With a
/// split ratio r, the word list is first partitioned so that train and test
/// labels are disjoint; round(count * r) samples go to train.
Dataset generate_dataset(const std::vector<std::string>& lexicon, const GlyphAtlas& atlas,
                         const RenderConfig& cfg, std::size_t count,
                         std::optional<double> split = std::nullopt);

/// Writes images/NNNNNN.pgm and manifest.tsv ("path<TAB>label<TAB>script").
void write_dataset(const std::filesystem::path& dir, const std::vector<WordSample>& samples);
/// Reads a directory written by write_dataset.
std::vector<WordSample> read_dataset(const std::filesystem::path& dir);
/// FNV-1a over the manifest and every referenced image file.
std::uint64_t dataset_hash(const std::filesystem::path& dir);

void write_pgm(const std::filesystem::path& path, const Image& image);
Image read_pgm(const std::filesystem::path& path);

/// Bilinear, corner-aligned resize.
Image resize(const Image& image, int height, int width);

}  // namespace strlab::synth
