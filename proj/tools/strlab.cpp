// strlab: command-line entry point. Exit codes: 0 success, 1 runtime error,
// 2 usage error.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "strlab/error.hpp"
#include "strlab/gradcheck.hpp"
#include "strlab/metrics.hpp"
#include "strlab/models.hpp"
#include "strlab/parallel.hpp"
#include "strlab/synthgen.hpp"
#include "strlab/textcodec.hpp"
#include "strlab/trainkit.hpp"

namespace fs = std::filesystem;
using namespace strlab;
using models::Json;

namespace {

constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

void print_config(const std::string& command, Json config) {
  config["threads"] = worker_count();
  std::fprintf(stderr, "strlab %s %s\n", command.c_str(), config.dump().c_str());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// A dataset directory, or a split root holding train/ and test/.
struct DataDirs {
  fs::path train;
  fs::path heldout;
};

DataDirs resolve_data(const fs::path& dir) {
  if (fs::exists(dir / "manifest.tsv")) return {dir, {}};
  if (fs::exists(dir / "train" / "manifest.tsv")) {
    return {dir / "train", fs::exists(dir / "test" / "manifest.tsv") ? dir / "test" : fs::path()};
  }
  throw Error(ErrorCode::Io, "no manifest.tsv under " + dir.string());
}

models::ArchConfig arch_for(const std::string& model, const std::string& preset) {
  if (model == "crnn") return preset == "full" ? models::CrnnConfig{} : models::CrnnConfig::desk();
  return preset == "full" ? models::StarNetConfig{} : models::StarNetConfig::desk();
}

struct GenArgs {
  std::string script;
  std::size_t count = 0;
  std::string out;
  std::uint64_t seed = 1;
  double split = 0;
  int height = 32;
  std::size_t lexicon = 400;
};

int run_gen(const GenArgs& a) {
  const auto& atlas = synth::builtin_atlas(a.script);
  auto cfg = synth::RenderConfig::for_height(a.height);
  cfg.seed = a.seed;
  Json config{{"script", a.script}, {"count", a.count}, {"out", a.out}, {"seed", a.seed},
              {"height", cfg.height}, {"width", cfg.width}, {"lexicon", a.lexicon}};
  if (a.split > 0) config["split"] = a.split;
  print_config("gen", config);
  auto lexicon = synth::builtin_lexicon(atlas, a.lexicon, mix_seed(a.seed, 1));
  std::optional<double> split;
  if (a.split > 0) split = a.split;
  auto data = synth::generate_dataset(lexicon, atlas, cfg, a.count, split);
  fs::path out(a.out);
  if (split) {
    synth::write_dataset(out / "train", data.train);
    synth::write_dataset(out / "test", data.test);
    std::printf("train\t%zu\t%s\n", data.train.size(), hex64(synth::dataset_hash(out / "train")).c_str());
    std::printf("test\t%zu\t%s\n", data.test.size(), hex64(synth::dataset_hash(out / "test")).c_str());
  } else {
    synth::write_dataset(out, data.train);
    std::printf("all\t%zu\t%s\n", data.train.size(), hex64(synth::dataset_hash(out)).c_str());
  }
  return 0;
}

struct TrainArgs {
  std::string model = "crnn";
  std::string preset = "desk";
  std::string data;
  std::string heldout;
  std::string out;
  std::string from;
  std::string resume;
  std::string last;
  std::string loss_curve;
  std::string dump_filters;
  bool correction = false;
  int epochs = 15;
  std::size_t batch = 16;
  std::uint64_t seed = 1;
  double lr = 1.0;
  double localizer_lr = 0.1;
  bool no_clip = false;
};

int run_train(const TrainArgs& a) {
  auto dirs = resolve_data(a.data);
  if (!a.heldout.empty()) dirs.heldout = a.heldout;
  train::TrainPlan plan;
  plan.batch_size = a.batch;
  plan.epochs = a.epochs;
  plan.seed = a.seed;
  plan.optimizer.lr = a.lr;
  plan.optimizer.localizer_lr = a.localizer_lr;
  plan.clip_norm = a.no_clip ? 0.0 : 5.0;
  plan.best_path = a.out;
  plan.last_path = a.last;
  plan.verbose = true;
  plan.validate();
  Json config{{"model", a.model},   {"preset", a.preset}, {"data", dirs.train.string()},
              {"heldout", dirs.heldout.string()}, {"out", a.out}, {"from", a.from},
              {"resume", a.resume}, {"correction", a.correction}, {"epochs", a.epochs},
              {"batch", a.batch},   {"seed", a.seed},     {"lr", a.lr},
              {"localizer_lr", a.localizer_lr}, {"clip_norm", plan.clip_norm}};
  print_config("train", config);

  auto data = synth::read_dataset(dirs.train);
  std::vector<synth::WordSample> heldout;
  if (!dirs.heldout.empty()) heldout = synth::read_dataset(dirs.heldout);

  std::optional<models::Recognizer<float>> model;
  std::optional<models::Checkpoint> resume;
  if (!a.resume.empty()) {
    resume = models::Checkpoint::load(a.resume);
    model.emplace(models::load_model<float>(*resume));
  } else {
    std::vector<std::string> labels;
    for (const auto& s : data) labels.push_back(s.label);
    for (const auto& s : heldout) labels.push_back(s.label);
    auto vocab = text::build_vocab(labels);
    model.emplace(models::Recognizer<float>::build(arch_for(a.model, a.preset), vocab, mix_seed(a.seed, 3)));
    if (!a.from.empty()) {
      auto src = models::Checkpoint::load(a.from);
      auto report = models::transfer_weights(src, *model);
      std::fprintf(stderr, "transfer: %zu copied, %zu reinitialized\n", report.copied.size(),
                   report.reinitialized.size());
    }
    if (a.correction) model->attach_correction(mix_seed(a.seed, 4), std::visit([](const auto& c) { return c.hidden; }, model->config()));
  }
  auto result = train::train(*model, data, heldout.empty() ? nullptr : &heldout, plan, resume ? &*resume : nullptr);
  if (!a.loss_curve.empty()) write_text(a.loss_curve, result.loss_tsv());
  if (!a.dump_filters.empty()) models::dump_filters(*model, a.dump_filters);
  std::printf("model\t%s\nparameters\t%ld\ncorrection\t%s\nbest_epoch\t%d\n", models::to_string(model->kind()).c_str(),
              static_cast<long>(model->parameter_count()), model->has_correction() ? "present" : "absent",
              result.best_epoch);
  if (result.best_wrr >= 0) std::printf("best_wrr\t%.2f\n", result.best_wrr);
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& pooling_name) {
  print_config("eval", {{"ckpt", ckpt_path}, {"data", data_dir}, {"pooling", pooling_name}});
  auto ckpt = models::Checkpoint::load(ckpt_path);
  auto model = models::load_model<float>(ckpt);
  auto samples = synth::read_dataset(resolve_data(data_dir).train);
  auto pooling = pooling_name == "per-word" ? metrics::CrrPooling::PerWord : metrics::CrrPooling::Corpus;
  auto report = train::evaluate_model(model, samples, pooling);
  std::fputs(report.summary_line().c_str(), stdout);
  std::fputs(report.samples_tsv().c_str(), stdout);
  return 0;
}

int run_decode(const std::string& ckpt_path, const std::string& image) {
  print_config("decode", {{"ckpt", ckpt_path}, {"image", image}});
  auto model = models::load_model<float>(models::Checkpoint::load(ckpt_path));
  auto text = model.predict({synth::read_pgm(image)});
  std::printf("%s\n", text.front().c_str());
  return 0;
}

int run_ngrams(const std::string& corpus, int n, std::size_t top) {
  print_config("ngrams", {{"corpus", corpus}, {"n", n}, {"top", top}});
  auto words = text::split_words(read_text(corpus));
  std::fputs(text::ngram_tsv(text::ngram_table(words, n), top).c_str(), stdout);
  return 0;
}

int run_stats(const std::string& corpus) {
  print_config("stats", {{"corpus", corpus}});
  auto words = text::split_words(read_text(corpus));
  std::fputs(text::stats_tsv(text::corpus_stats(words)).c_str(), stdout);
  return 0;
}

int run_gradcheck(std::uint64_t seed, int seeds) {
  print_config("gradcheck", {{"seed", seed}, {"seeds", seeds}, {"tolerance", 1e-4}});
  auto results = gradcheck::run_suite(seed, seeds);
  std::fputs(gradcheck::suite_tsv(results).c_str(), stdout);
  bool ok = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.failures == 0; });
  return ok ? 0 : kRuntimeError;
}

struct TransferArgs {
  std::string src = "A";
  std::string dst = "B";
  std::string model = "crnn";
  std::string preset = "desk";
  std::string from;
  std::size_t src_count = 2000;
  std::size_t dst_count = 400;
  std::size_t test_count = 200;
  int epochs = 15;
  std::uint64_t seed = 1;
  double threshold = 80;
};

int run_transfer(const TransferArgs& a) {
  train::TransferSetup setup;
  setup.arch = arch_for(a.model, a.preset);
  setup.src_script = a.src;
  setup.dst_script = a.dst;
  setup.src_count = a.src_count;
  setup.dst_count = a.dst_count;
  setup.test_count = a.test_count;
  setup.src_plan.epochs = a.epochs;
  setup.src_plan.seed = a.seed;
  setup.dst_plan.epochs = a.epochs;
  setup.dst_plan.seed = a.seed;
  setup.threshold = a.threshold;
  setup.seed = a.seed;
  print_config("transfer", {{"src", a.src}, {"dst", a.dst}, {"model", a.model}, {"preset", a.preset},
                            {"from", a.from}, {"src_count", a.src_count}, {"dst_count", a.dst_count},
                            {"test_count", a.test_count}, {"epochs", a.epochs}, {"seed", a.seed},
                            {"threshold", a.threshold}});
  std::optional<models::Checkpoint> pretrained;
  if (!a.from.empty()) pretrained = models::Checkpoint::load(a.from);
  auto report = train::transfer_experiment<float>(setup, pretrained ? &*pretrained : nullptr);
  std::fputs(report.tsv().c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scene-text recognition laboratory"};
  app.require_subcommand(1);
  const std::vector<std::string> scripts{"A", "B", "C"};
  const std::vector<std::string> kinds{"crnn", "starnet"};
  const std::vector<std::string> presets{"desk", "full"};
  std::function<int()> action;

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Render a synthetic word-image dataset");
  g->add_option("--script", gen.script, "Toy script")->required()->check(CLI::IsMember(scripts));
  g->add_option("--count", gen.count, "Number of images")->required()->check(CLI::PositiveNumber);
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Seed")->capture_default_str();
  g->add_option("--split", gen.split, "Train fraction; writes train/ and test/")->check(CLI::Range(0.0, 1.0));
  g->add_option("--height", gen.height, "Canvas height (32 -> 100 wide, 18 -> 150 wide)")
      ->check(CLI::IsMember({32, 18}))
      ->capture_default_str();
  g->add_option("--lexicon", gen.lexicon, "Distinct words to draw from")->capture_default_str();
  g->callback([&] { action = [&] { return run_gen(gen); }; });

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a recognizer");
  t->add_option("--model", tr.model, "Architecture")->check(CLI::IsMember(kinds))->capture_default_str();
  t->add_option("--preset", tr.preset, "Layer widths")->check(CLI::IsMember(presets))->capture_default_str();
  t->add_option("--data", tr.data, "Dataset directory or split root")->required();
  t->add_option("--heldout", tr.heldout, "Held-out dataset for model selection");
  t->add_option("--out", tr.out, "Best checkpoint path")->required();
  t->add_option("--from", tr.from, "Initialize all layers from this checkpoint");
  t->add_option("--resume", tr.resume, "Continue from a checkpoint written by --last");
  t->add_option("--last", tr.last, "Resumable end-of-epoch checkpoint path");
  t->add_option("--loss-curve", tr.loss_curve, "Write step<TAB>loss TSV");
  t->add_option("--dump-filters", tr.dump_filters, "Write first-layer filters as PGM");
  t->add_flag("--correction", tr.correction, "Attach the correction BiLSTM before training");
  t->add_option("--epochs", tr.epochs, "Epochs")->check(CLI::PositiveNumber)->capture_default_str();
  t->add_option("--batch", tr.batch, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
  t->add_option("--seed", tr.seed, "Seed")->capture_default_str();
  t->add_option("--lr", tr.lr, "ADADELTA update multiplier")->check(CLI::PositiveNumber)->capture_default_str();
  t->add_option("--localizer-lr", tr.localizer_lr, "Extra multiplier on STAR-Net localizer updates")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  t->add_flag("--no-clip", tr.no_clip, "Disable gradient clipping at norm 5");
  t->callback([&] { action = [&] { return run_train(tr); }; });

  std::string ckpt, data, image, pooling = "corpus";
  auto* e = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  e->add_option("--ckpt", ckpt, "Checkpoint")->required();
  e->add_option("--data", data, "Dataset directory")->required();
  e->add_option("--pooling", pooling, "CRR pooling")->check(CLI::IsMember({"corpus", "per-word"}))->capture_default_str();
  e->callback([&] { action = [&] { return run_eval(ckpt, data, pooling); }; });

  auto* d = app.add_subcommand("decode", "Transcribe one PGM image");
  d->add_option("--ckpt", ckpt, "Checkpoint")->required();
  d->add_option("--image", image, "PGM image")->required();
  d->callback([&] { action = [&] { return run_decode(ckpt, image); }; });

  std::string corpus;
  int order = 1;
  std::size_t top = 5;
  auto* n = app.add_subcommand("ngrams", "Top character n-grams of a corpus");
  n->add_option("--corpus", corpus, "UTF-8 text file")->required();
  n->add_option("--n", order, "Order")->required();
  n->add_option("--top", top, "Rows")->capture_default_str();
  n->callback([&] { action = [&] { return run_ngrams(corpus, order, top); }; });

  auto* s = app.add_subcommand("stats", "Word-length statistics of a corpus");
  s->add_option("--corpus", corpus, "UTF-8 text file")->required();
  s->callback([&] { action = [&] { return run_stats(corpus); }; });

  std::uint64_t seed = 1;
  int seeds = 20;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc->add_option("--seed", seed, "Seed")->capture_default_str();
  gc->add_option("--seeds", seeds, "Seeds per case")->check(CLI::PositiveNumber)->capture_default_str();
  gc->callback([&] { action = [&] { return run_gradcheck(seed, seeds); }; });

  TransferArgs xf;
  auto* x = app.add_subcommand("transfer", "Scratch versus transferred training on a destination script");
  x->add_option("--src", xf.src, "Source script")->check(CLI::IsMember(scripts))->capture_default_str();
  x->add_option("--dst", xf.dst, "Destination script")->check(CLI::IsMember(scripts))->capture_default_str();
  x->add_option("--model", xf.model, "Architecture")->check(CLI::IsMember(kinds))->capture_default_str();
  x->add_option("--preset", xf.preset, "Layer widths")->check(CLI::IsMember(presets))->capture_default_str();
  x->add_option("--from", xf.from, "Pretrained source checkpoint");
  x->add_option("--src-count", xf.src_count, "Source training images")->capture_default_str();
  x->add_option("--dst-count", xf.dst_count, "Destination training images")->capture_default_str();
  x->add_option("--test-count", xf.test_count, "Held-out images per script")->capture_default_str();
  x->add_option("--epochs", xf.epochs, "Epochs per training run")->check(CLI::PositiveNumber)->capture_default_str();
  x->add_option("--seed", xf.seed, "Seed")->capture_default_str();
  x->add_option("--threshold", xf.threshold, "WRR for epochs-to-threshold")->capture_default_str();
  x->callback([&] { action = [&] { return run_transfer(xf); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "strlab: " << e.what() << "\n" << app.help();
    return kUsageError;
  }
  try {
    return action();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "strlab: %s\n", e.what());
    return kRuntimeError;
  }
}
