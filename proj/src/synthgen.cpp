#include "strlab/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "strlab/error.hpp"
#include "strlab/parallel.hpp"
#include "strlab/random.hpp"

namespace strlab::synth {

namespace {

// Candidate strokes on the 5x7 glyph grid; glyphs are unions of a few.
std::vector<GlyphBitmap> stroke_library() {
  std::vector<GlyphBitmap> strokes;
  auto blank = [] { return GlyphBitmap::Zero().eval(); };
  for (int row : {0, 3, 6}) {
    for (auto [c0, c1] : {std::pair{0, 4}, std::pair{0, 2}, std::pair{2, 4}}) {
      auto g = blank();
      for (int c = c0; c <= c1; ++c) g(row, c) = 1;
      strokes.push_back(g);
    }
  }
  for (int col : {0, 2, 4}) {
    for (auto [r0, r1] : {std::pair{0, 6}, std::pair{0, 3}, std::pair{3, 6}}) {
      auto g = blank();
      for (int r = r0; r <= r1; ++r) g(r, col) = 1;
      strokes.push_back(g);
    }
  }
  {
    auto down = blank(), up = blank();
    for (int r = 0; r < kGlyphRows; ++r) {
      int c = (r * (kGlyphCols - 1) + 3) / (kGlyphRows - 1);
      down(r, std::min(c, kGlyphCols - 1)) = 1;
      up(r, std::max(kGlyphCols - 1 - c, 0)) = 1;
    }
    strokes.push_back(down);
    strokes.push_back(up);
  }
  for (auto [r, c] : {std::pair{1, 1}, std::pair{1, 3}, std::pair{4, 1}, std::pair{4, 3}}) {
    auto g = blank();
    g(r, c) = g(r + 1, c) = g(r, c - 1) = g(r + 1, c - 1) = 1;
    strokes.push_back(g);
  }
  {
    auto ring = blank();
    for (int c = 1; c <= 3; ++c) ring(2, c) = ring(5, c) = 1;
    for (int r = 2; r <= 5; ++r) ring(r, 1) = ring(r, 3) = 1;
    strokes.push_back(ring);
  }
  return strokes;
}

// Deterministic pool of mutually distinct glyph shapes.
std::vector<GlyphBitmap> shape_pool(std::size_t count) {
  const auto strokes = stroke_library();
  Rng rng(0x5eed'61f0);
  std::vector<GlyphBitmap> pool;
  while (pool.size() < count) {
    GlyphBitmap g = GlyphBitmap::Zero();
    int pieces = 3 + static_cast<int>(rng.below(2));
    for (int k = 0; k < pieces; ++k) g = g.max(strokes[rng.below(strokes.size())]);
    int ink = g.cast<int>().sum();
    if (ink < 10 || ink > 24) continue;
    // Every column touched keeps glyph widths uniform.
    if ((g.colwise().maxCoeff() == 0).any()) continue;
    bool distinct = std::all_of(pool.begin(), pool.end(), [&](const GlyphBitmap& other) {
      return (g != other).cast<int>().sum() >= 6;
    });
    if (distinct) pool.push_back(g);
  }
  return pool;
}

GlyphAtlas make_atlas(std::string name, bool connector, const std::vector<char32_t>& consonants,
                      const std::vector<char32_t>& vowels, const std::vector<GlyphBitmap>& shapes) {
  GlyphAtlas atlas;
  atlas.script = std::move(name);
  atlas.connector = connector;
  std::size_t k = 0;
  for (char32_t cp : consonants) atlas.glyphs.emplace(cp, shapes.at(k++));
  for (char32_t cp : vowels) atlas.glyphs.emplace(cp, shapes.at(k++));
  atlas.vowel_like = vowels;
  return atlas;
}

std::vector<char32_t> range(char32_t first, int n) {
  std::vector<char32_t> out;
  for (int i = 0; i < n; ++i) out.push_back(first + static_cast<char32_t>(i));
  return out;
}

// Binary ink map of a word: band of glyph cells with padding and gaps.
Image compose(const std::u32string& word, const GlyphAtlas& atlas) {
  const int n = static_cast<int>(word.size());
  const int rows = kGlyphRows + 2 * kBandPad;
  const int cols = std::max(1, n * kGlyphCols + (n - 1) * kGlyphGap) + 2 * kBandPad;
  Image strip = Image::Zero(rows, cols);
  for (int i = 0; i < n; ++i) {
    const auto& glyph = atlas.glyphs.at(word[static_cast<std::size_t>(i)]);
    strip.block(kBandPad, kBandPad + i * (kGlyphCols + kGlyphGap), kGlyphRows, kGlyphCols) =
        glyph.cast<float>();
  }
  if (atlas.connector && n > 0) {
    strip.block(kBandPad, kBandPad, 1, n * kGlyphCols + (n - 1) * kGlyphGap).setOnes();
  }
  return strip;
}

float quantize(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::lround(v * 255.0)) / 255.0f;
}

}  // namespace

text::Vocabulary GlyphAtlas::vocabulary() const {
  std::vector<char32_t> cps;
  for (const auto& [cp, glyph] : glyphs) cps.push_back(cp);
  return text::Vocabulary::from_codepoints(std::move(cps));
}

const BuiltinScripts& builtin_scripts() {
  static const BuiltinScripts scripts = [] {
    auto shapes = shape_pool(28);
    std::vector<GlyphBitmap> a(shapes.begin(), shapes.begin() + 10);
    // B reuses the six consonant shapes of A.
    std::vector<GlyphBitmap> b(shapes.begin(), shapes.begin() + 6);
    b.insert(b.end(), shapes.begin() + 10, shapes.begin() + 16);
    std::vector<GlyphBitmap> c(shapes.begin() + 16, shapes.begin() + 28);
    BuiltinScripts s;
    // Gujarati, Devanagari and Bengali consonants and dependent vowel signs.
    s.a = make_atlas("A", false, range(U'ક', 6), range(U'ા', 4), a);
    s.b = make_atlas("B", true, range(U'क', 8), range(U'ा', 4), b);
    s.c = make_atlas("C", true, range(U'ক', 8), range(U'া', 4), c);
    return s;
  }();
  return scripts;
}

const GlyphAtlas& builtin_atlas(std::string_view name) {
  const auto& s = builtin_scripts();
  if (name == "A") return s.a;
  if (name == "B") return s.b;
  if (name == "C") return s.c;
  throw Error(ErrorCode::BadConfig, "unknown script '" + std::string(name) + "'");
}

std::size_t shared_shapes(const GlyphAtlas& x, const GlyphAtlas& y) {
  std::size_t shared = 0;
  std::vector<GlyphBitmap> seen;
  for (const auto& [cp, gx] : x.glyphs) {
    bool duplicate = std::any_of(seen.begin(), seen.end(), [&](const auto& s) { return (s == gx).all(); });
    if (duplicate) continue;
    seen.push_back(gx);
    for (const auto& [cq, gy] : y.glyphs) {
      if ((gx == gy).all()) {
        ++shared;
        break;
      }
    }
  }
  return shared;
}

RenderConfig RenderConfig::for_height(int height) {
  RenderConfig cfg;
  cfg.height = height;
  if (height == 32) {
    cfg.width = 100;
  } else if (height == 18) {
    cfg.width = 150;
  } else {
    throw Error(ErrorCode::BadConfig, "canvas height must be 32 or 18, got " + std::to_string(height));
  }
  return cfg;
}

RenderConfig RenderConfig::without_degradation() const {
  RenderConfig cfg = *this;
  cfg.scale_jitter = 0;
  cfg.rotation_deg = 0;
  cfg.noise = 0;
  cfg.contrast_min = cfg.contrast_max = 1.0;
  return cfg;
}

void RenderConfig::validate() const {
  bool ok = height >= 1 && width >= 1 && std::isfinite(scale_jitter) && scale_jitter >= 0 &&
            scale_jitter < 1 && std::isfinite(rotation_deg) && rotation_deg >= 0 &&
            std::isfinite(noise) && noise >= 0 && std::isfinite(contrast_min) &&
            std::isfinite(contrast_max) && contrast_min > 0 && contrast_min <= contrast_max &&
            contrast_max <= 1;
  if (!ok) throw Error(ErrorCode::BadConfig, "invalid render configuration");
}

WordSample render_word(std::string_view word, const GlyphAtlas& atlas, const RenderConfig& cfg) {
  cfg.validate();
  auto cps = text::clean_text(text::to_u32(word));
  if (cps.empty()) throw Error(ErrorCode::BadConfig, "cannot render an empty word");
  for (char32_t cp : cps) {
    if (!atlas.covers(cp)) {
      throw Error(ErrorCode::MissingGlyph, "script " + atlas.script + " has no glyph for " + text::hex_codepoint(cp));
    }
  }
  const Image strip = compose(cps, atlas);
  Rng rng(mix_seed(cfg.seed, fnv1a(word)));
  const double fit = std::min(static_cast<double>(cfg.height) / static_cast<double>(strip.rows()),
                              static_cast<double>(cfg.width) / static_cast<double>(strip.cols()));
  const double scale = fit * (1.0 - rng.uniform(0.0, cfg.scale_jitter));
  const double angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg) * 3.14159265358979323846 / 180.0;
  const double contrast = rng.uniform(cfg.contrast_min, cfg.contrast_max);
  const double background = rng.uniform(0.0, 1.0 - contrast) * 0.5;
  const double cos_a = std::cos(angle), sin_a = std::sin(angle);

  WordSample sample;
  sample.label = text::to_utf8(cps);
  sample.script = atlas.script;
  sample.seed = cfg.seed;
  sample.image.resize(cfg.height, cfg.width);
  for (int y = 0; y < cfg.height; ++y) {
    for (int x = 0; x < cfg.width; ++x) {
      // Inverse map from the canvas centre to the strip centre.
      double dx = x + 0.5 - cfg.width / 2.0;
      double dy = y + 0.5 - cfg.height / 2.0;
      double u = (cos_a * dx + sin_a * dy) / scale + static_cast<double>(strip.cols()) / 2.0;
      double v = (-sin_a * dx + cos_a * dy) / scale + static_cast<double>(strip.rows()) / 2.0;
      auto iu = static_cast<Eigen::Index>(std::floor(u));
      auto iv = static_cast<Eigen::Index>(std::floor(v));
      double ink = (iu >= 0 && iu < strip.cols() && iv >= 0 && iv < strip.rows()) ? strip(iv, iu) : 0.0;
      double noise = rng.normal() * cfg.noise;
      sample.image(y, x) = quantize(background + contrast * ink + noise);
    }
  }
  return sample;
}

std::vector<std::string> make_lexicon(const GlyphAtlas& atlas, std::size_t words, std::uint64_t seed,
                                      int min_len, int max_len) {
  if (min_len < 1 || max_len < min_len) throw Error(ErrorCode::BadConfig, "invalid word length range");
  std::vector<char32_t> ranked = atlas.vowel_like;
  for (const auto& [cp, glyph] : atlas.glyphs) {
    if (std::find(ranked.begin(), ranked.end(), cp) == ranked.end()) ranked.push_back(cp);
  }
  if (ranked.empty()) throw Error(ErrorCode::EmptyLexicon, "atlas has no glyphs");
  std::vector<double> cumulative;
  double total = 0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    total += 1.0 / static_cast<double>(r + 1);
    cumulative.push_back(total);
  }
  Rng rng(seed);
  std::set<std::string> unique;
  std::vector<std::string> out;
  std::size_t attempts = 0;
  while (out.size() < words && attempts++ < words * 200 + 1000) {
    int len = min_len + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len - min_len + 1)));
    std::u32string w;
    for (int i = 0; i < len; ++i) {
      double u = rng.uniform() * total;
      auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
      w.push_back(ranked[std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), ranked.size() - 1)]);
    }
    auto utf8 = text::to_utf8(w);
    if (unique.insert(utf8).second) out.push_back(std::move(utf8));
  }
  return out;
}

std::vector<std::string> builtin_lexicon(const GlyphAtlas& atlas, std::size_t words, std::uint64_t seed) {
  // Script A stands in for the short-word script; B and C for longer words.
  if (atlas.script == "A") return make_lexicon(atlas, words, seed, 2, 5);
  return make_lexicon(atlas, words, seed, 3, 6);
}

Dataset generate_dataset(const std::vector<std::string>& lexicon, const GlyphAtlas& atlas,
                         const RenderConfig& cfg, std::size_t count, std::optional<double> split) {
  cfg.validate();
  if (count < 1) throw Error(ErrorCode::BadConfig, "count must be at least 1");
  std::vector<std::string> words;
  for (const auto& w : lexicon) {
    auto cleaned = text::clean_text(std::string_view(w));
    if (!cleaned.empty()) words.push_back(std::move(cleaned));
  }
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  if (words.empty()) throw Error(ErrorCode::EmptyLexicon, "lexicon has no usable words");

  Rng picker(mix_seed(cfg.seed, 0x11));
  std::vector<std::string> train_words = words, test_words;
  std::size_t train_count = count;
  if (split) {
    double ratio = *split;
    if (!(ratio > 0 && ratio < 1)) throw Error(ErrorCode::BadConfig, "split ratio must be in (0, 1)");
    if (words.size() < 2) throw Error(ErrorCode::EmptyLexicon, "a split needs at least two distinct words");
    picker.shuffle(words.begin(), words.end());
    auto cut = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(words.size())));
    cut = std::clamp<std::size_t>(cut, 1, words.size() - 1);
    train_words.assign(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(cut));
    test_words.assign(words.begin() + static_cast<std::ptrdiff_t>(cut), words.end());
    train_count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(count)));
  }

  struct Job {
    const std::string* word;
    bool test;
  };
  std::vector<Job> jobs;
  jobs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    bool test = i >= train_count;
    const auto& pool = test ? test_words : train_words;
    jobs.push_back({&pool[picker.below(pool.size())], test});
  }
  std::vector<WordSample> rendered(count);
  parallel_for(count, [&](std::size_t i) {
    RenderConfig sample_cfg = cfg;
    sample_cfg.seed = mix_seed(cfg.seed, i);
    rendered[i] = render_word(*jobs[i].word, atlas, sample_cfg);
  });
  Dataset out;
  for (std::size_t i = 0; i < count; ++i) {
    (jobs[i].test ? out.test : out.train).push_back(std::move(rendered[i]));
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
  std::string bytes(static_cast<std::size_t>(image.size()), '\0');
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    bytes[static_cast<std::size_t>(i)] =
        static_cast<char>(std::lround(std::clamp(image.data()[i], 0.0f, 1.0f) * 255.0f));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string comment;
        std::getline(in, comment);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  if (token() != "P5") throw Error(ErrorCode::Io, path.string() + " is not a binary PGM");
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(token());
    height = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw Error(ErrorCode::Io, "malformed PGM header in " + path.string());
  }
  if (width < 1 || height < 1 || maxval != 255) {
    throw Error(ErrorCode::Io, "unsupported PGM geometry in " + path.string());
  }
  std::string bytes(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw Error(ErrorCode::Io, "truncated PGM " + path.string());
  }
  Image image(height, width);
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    image.data()[i] = static_cast<float>(static_cast<unsigned char>(bytes[static_cast<std::size_t>(i)])) / 255.0f;
  }
  return image;
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct ManifestRow {
  std::string path, label, script;
};

std::vector<ManifestRow> read_manifest(const std::filesystem::path& dir) {
  std::istringstream lines(read_file(dir / "manifest.tsv"));
  std::vector<ManifestRow> rows;
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    auto tab1 = line.find('\t');
    auto tab2 = tab1 == std::string::npos ? tab1 : line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos) throw Error(ErrorCode::Io, "malformed manifest row: " + line);
    rows.push_back({line.substr(0, tab1), line.substr(tab1 + 1, tab2 - tab1 - 1), line.substr(tab2 + 1)});
  }
  return rows;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const std::vector<WordSample>& samples) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + (dir / "images").string());
  std::string manifest;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "images/%06zu.pgm", i);
    write_pgm(dir / name, samples[i].image);
    manifest += std::string(name) + '\t' + samples[i].label + '\t' + samples[i].script + '\n';
  }
  std::ofstream out(dir / "manifest.tsv", std::ios::binary);
  out << manifest;
  if (!out) throw Error(ErrorCode::Io, "cannot write manifest in " + dir.string());
}

std::vector<WordSample> read_dataset(const std::filesystem::path& dir) {
  auto rows = read_manifest(dir);
  std::vector<WordSample> samples(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    samples[i].image = read_pgm(dir / rows[i].path);
    samples[i].label = rows[i].label;
    samples[i].script = rows[i].script;
  });
  return samples;
}

std::uint64_t dataset_hash(const std::filesystem::path& dir) {
  std::string manifest = read_file(dir / "manifest.tsv");
  std::uint64_t h = fnv1a(manifest);
  for (const auto& row : read_manifest(dir)) h = fnv1a(read_file(dir / row.path), h);
  return h;
}

Image resize(const Image& image, int height, int width) {
  if (image.rows() == height && image.cols() == width) return image;
  Image out(height, width);
  for (int oy = 0; oy < height; ++oy) {
    double py = height > 1 ? oy * static_cast<double>(image.rows() - 1) / (height - 1) : 0.0;
    auto y0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(py), image.rows() - 1);
    auto y1 = std::min<Eigen::Index>(y0 + 1, image.rows() - 1);
    double wy = py - static_cast<double>(y0);
    for (int ox = 0; ox < width; ++ox) {
      double px = width > 1 ? ox * static_cast<double>(image.cols() - 1) / (width - 1) : 0.0;
      auto x0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(px), image.cols() - 1);
      auto x1 = std::min<Eigen::Index>(x0 + 1, image.cols() - 1);
      double wx = px - static_cast<double>(x0);
      double top = (1 - wx) * image(y0, x0) + wx * image(y0, x1);
      double bottom = (1 - wx) * image(y1, x0) + wx * image(y1, x1);
      out(oy, ox) = static_cast<float>((1 - wy) * top + wy * bottom);
    }
  }
  return out;
}

}  // namespace strlab::synth
