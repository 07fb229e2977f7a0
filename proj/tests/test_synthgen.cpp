#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "strlab/synthgen.hpp"
#include "support.hpp"

using namespace strlab;
using namespace strlab::synth;
using strlab::testing::code_of;
using strlab::testing::TempDir;

namespace {

// Reference strip: one blank cell around the band, one blank column between
// glyphs, connector across the first glyph row.
Image reference_strip(const std::u32string& word, const GlyphAtlas& atlas) {
  const int n = static_cast<int>(word.size());
  Image strip = Image::Zero(9, n * 6 - 1 + 2);
  for (int i = 0; i < n; ++i) {
    const auto& g = atlas.glyphs.at(word[static_cast<std::size_t>(i)]);
    for (int r = 0; r < 7; ++r)
      for (int c = 0; c < 5; ++c) strip(1 + r, 1 + i * 6 + c) = g(r, c);
  }
  if (atlas.connector)
    for (int c = 1; c < strip.cols() - 1; ++c) strip(1, c) = 1;
  return strip;
}

std::u32string first_two(const GlyphAtlas& atlas) {
  auto it = atlas.glyphs.begin();
  std::u32string w{it->first};
  w.push_back(std::next(it)->first);
  return w;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(RenderWord, ExactScaleMatchesComposition) {
  for (const char* name : {"A", "B"}) {
    const auto& atlas = builtin_atlas(name);
    auto word = first_two(atlas);
    auto cfg = RenderConfig{}.without_degradation();
    cfg.height = 18;
    cfg.width = 26;
    auto sample = render_word(text::to_utf8(word), atlas, cfg);
    auto strip = reference_strip(word, atlas);
    for (int y = 0; y < 18; ++y)
      for (int x = 0; x < 26; ++x) ASSERT_EQ(sample.image(y, x), strip(y / 2, x / 2)) << name << " " << y << "," << x;
  }
}

TEST(RenderWord, FittedCanvasMatchesComposition) {
  const auto& atlas = builtin_atlas("C");
  auto word = first_two(atlas);
  auto cfg = RenderConfig::for_height(32).without_degradation();
  auto sample = render_word(text::to_utf8(word), atlas, cfg);
  auto strip = reference_strip(word, atlas);
  double scale = std::min(32.0 / 9, 100.0 / 13);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 100; ++x) {
      double u = (x + 0.5 - 50) / scale + 6.5, v = (y + 0.5 - 16) / scale + 4.5;
      int iu = static_cast<int>(std::floor(u)), iv = static_cast<int>(std::floor(v));
      float want = (iu >= 0 && iu < 13 && iv >= 0 && iv < 9) ? strip(iv, iu) : 0.0f;
      ASSERT_EQ(sample.image(y, x), want) << y << "," << x;
    }
}

TEST(RenderWord, DeterministicAndQuantized) {
  const auto& atlas = builtin_atlas("B");
  auto word = text::to_utf8(first_two(atlas) + first_two(atlas));
  auto cfg = RenderConfig::for_height(32);
  cfg.seed = 9;
  auto a = render_word(word, atlas, cfg), b = render_word(word, atlas, cfg);
  EXPECT_TRUE((a.image == b.image).all());
  EXPECT_EQ(a.label, word);
  EXPECT_EQ(text::clean_text(a.label), a.label);
  for (Eigen::Index i = 0; i < a.image.size(); ++i) {
    float v = a.image.data()[i];
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
    EXPECT_EQ(v, static_cast<float>(std::lround(v * 255.0f)) / 255.0f);
  }
  cfg.seed = 10;
  EXPECT_FALSE((render_word(word, atlas, cfg).image == a.image).all());
}

TEST(RenderWord, Errors) {
  const auto& atlas = builtin_atlas("A");
  EXPECT_EQ(code_of([&] { render_word("x", atlas, RenderConfig{}); }), ErrorCode::MissingGlyph);
  RenderConfig bad;
  bad.contrast_min = 0;
  EXPECT_EQ(code_of([&] { render_word(text::to_utf8(first_two(atlas)), atlas, bad); }), ErrorCode::BadConfig);
  EXPECT_EQ(code_of([] { RenderConfig::for_height(20); }), ErrorCode::BadConfig);
  EXPECT_EQ(RenderConfig::for_height(18).width, 150);
  EXPECT_EQ(RenderConfig::for_height(32).width, 100);
}

TEST(BuiltinScripts, Sharing) {
  const auto& s = builtin_scripts();
  EXPECT_EQ(s.a.glyphs.size(), 10u);
  EXPECT_EQ(s.b.glyphs.size(), 12u);
  EXPECT_EQ(s.c.glyphs.size(), 12u);
  EXPECT_EQ(shared_shapes(s.a, s.b), 6u);
  EXPECT_EQ(shared_shapes(s.a, s.c), 0u);
  EXPECT_EQ(shared_shapes(s.b, s.c), 0u);
  EXPECT_FALSE(s.a.connector);
  EXPECT_TRUE(s.b.connector);
  EXPECT_EQ(code_of([] { builtin_atlas("Z"); }), ErrorCode::BadConfig);
}

TEST(BuiltinScripts, RenderFullVocabulary) {
  for (const auto* atlas : {&builtin_scripts().a, &builtin_scripts().b, &builtin_scripts().c}) {
    for (const auto& [cp, glyph] : atlas->glyphs) {
      EXPECT_GT(glyph.cast<int>().sum(), 0);
      EXPECT_NO_THROW(render_word(text::to_utf8(std::u32string(1, cp)), *atlas, RenderConfig{}));
    }
    EXPECT_EQ(atlas->vocabulary().size(), static_cast<int>(atlas->glyphs.size()));
  }
}

TEST(Lexicon, UniqueWordsWithinLengths) {
  const auto& atlas = builtin_atlas("B");
  auto lex = make_lexicon(atlas, 300, 4, 3, 6);
  EXPECT_EQ(lex.size(), 300u);
  EXPECT_EQ(std::set<std::string>(lex.begin(), lex.end()).size(), lex.size());
  for (const auto& w : lex) {
    auto n = text::to_u32(w).size();
    EXPECT_GE(n, 3u);
    EXPECT_LE(n, 6u);
  }
  EXPECT_EQ(lex, make_lexicon(atlas, 300, 4, 3, 6));
}

TEST(Dataset, ManifestAndFiles) {
  TempDir dir("ds");
  const auto& atlas = builtin_atlas("A");
  auto data = generate_dataset(builtin_lexicon(atlas, 50, 1), atlas, RenderConfig{}, 100);
  ASSERT_EQ(data.train.size(), 100u);
  EXPECT_TRUE(data.test.empty());
  write_dataset(dir.path(), data.train);
  auto manifest = read_file(dir / "manifest.tsv");
  EXPECT_EQ(std::count(manifest.begin(), manifest.end(), '\n'), 100);
  EXPECT_EQ(manifest.find('\r'), std::string::npos);
  std::istringstream rows(manifest);
  std::string line;
  std::size_t i = 0;
  while (std::getline(rows, line)) {
    auto tab = line.find('\t');
    auto path = line.substr(0, tab);
    EXPECT_TRUE(std::filesystem::exists(dir / path)) << path;
    EXPECT_EQ(line.substr(tab + 1), data.train[i].label + "\tA");
    ++i;
  }
  auto back = read_dataset(dir.path());
  ASSERT_EQ(back.size(), 100u);
  for (std::size_t k = 0; k < back.size(); ++k) {
    EXPECT_EQ(back[k].label, data.train[k].label);
    EXPECT_TRUE((back[k].image == data.train[k].image).all());
  }
}

TEST(Dataset, SplitIsDisjoint) {
  const auto& atlas = builtin_atlas("C");
  auto lex = builtin_lexicon(atlas, 40, 2);
  for (double ratio : {0.05, 0.5, 0.8, 0.95}) {
    auto data = generate_dataset(lex, atlas, RenderConfig{}, 60, ratio);
    EXPECT_EQ(data.train.size(), static_cast<std::size_t>(std::lround(60 * ratio)));
    EXPECT_EQ(data.train.size() + data.test.size(), 60u);
    std::set<std::string> train;
    for (const auto& s : data.train) train.insert(s.label);
    for (const auto& s : data.test) EXPECT_EQ(train.count(s.label), 0u) << ratio;
  }
}

TEST(Dataset, RegenerationHashStable) {
  TempDir a("hash_a"), b("hash_b");
  const auto& atlas = builtin_atlas("B");
  auto lex = builtin_lexicon(atlas, 30, 3);
  auto cfg = RenderConfig::for_height(18);
  cfg.seed = 77;
  write_dataset(a.path(), generate_dataset(lex, atlas, cfg, 40).train);
  setenv("STR_LAB_THREADS", "3", 1);
  write_dataset(b.path(), generate_dataset(lex, atlas, cfg, 40).train);
  unsetenv("STR_LAB_THREADS");
  EXPECT_EQ(dataset_hash(a.path()), dataset_hash(b.path()));
  EXPECT_EQ(read_file(a / "manifest.tsv"), read_file(b / "manifest.tsv"));
  cfg.seed = 78;
  TempDir c("hash_c");
  write_dataset(c.path(), generate_dataset(lex, atlas, cfg, 40).train);
  EXPECT_NE(dataset_hash(a.path()), dataset_hash(c.path()));
}

TEST(Dataset, Errors) {
  const auto& atlas = builtin_atlas("A");
  EXPECT_EQ(code_of([&] { generate_dataset({}, atlas, RenderConfig{}, 10); }), ErrorCode::EmptyLexicon);
  EXPECT_EQ(code_of([&] { generate_dataset({"", "​"}, atlas, RenderConfig{}, 10); }), ErrorCode::EmptyLexicon);
  EXPECT_EQ(code_of([&] { generate_dataset(builtin_lexicon(atlas, 5, 1), atlas, RenderConfig{}, 0); }), ErrorCode::BadConfig);
  EXPECT_EQ(code_of([] { read_dataset("/nonexistent/strlab"); }), ErrorCode::Io);
}

TEST(Pgm, RoundTripAndFormat) {
  TempDir dir("pgm");
  Image img(3, 4);
  for (int i = 0; i < 12; ++i) img.data()[i] = static_cast<float>(i * 20) / 255.0f;
  write_pgm(dir / "x.pgm", img);
  auto bytes = read_file(dir / "x.pgm");
  EXPECT_EQ(bytes.substr(0, 11), "P5\n4 3\n255\n");
  EXPECT_EQ(bytes.size(), 11u + 12u);
  EXPECT_TRUE((read_pgm(dir / "x.pgm") == img).all());
  std::ofstream(dir / "bad.pgm") << "P2\n1 1\n255\n0\n";
  EXPECT_EQ(code_of([&] { read_pgm(dir / "bad.pgm"); }), ErrorCode::Io);
}

TEST(Resize, CornerAligned) {
  Image img(2, 2);
  img << 0, 1, 2, 3;
  auto out = resize(img, 3, 3);
  EXPECT_FLOAT_EQ(out(0, 0), 0);
  EXPECT_FLOAT_EQ(out(2, 2), 3);
  EXPECT_FLOAT_EQ(out(1, 1), 1.5);
  EXPECT_FLOAT_EQ(out(0, 1), 0.5);
}
