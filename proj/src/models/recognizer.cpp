#include <algorithm>
#include <cstdio>

#include "strlab/ctc.hpp"
#include "strlab/models.hpp"

namespace strlab::models {

namespace {

constexpr Pair kSquare{2, 2};
constexpr Pair kTall{2, 1};  // halves height, keeps width
constexpr Pair kOne{1, 1};
constexpr Pair k3x3{3, 3};
constexpr Pair kCollapse{2, 3};
constexpr Pair kCollapsePad{0, 1};

// Residual blocks per extractor stage.
constexpr std::array<int, 3> kStageBlocks{2, 3, 3};

const char* mode_name(nn::SampleMode mode) {
  return mode == nn::SampleMode::Bilinear ? "bilinear" : "nearest";
}

template <std::size_t N>
bool positive(const std::array<Index, N>& widths) {
  return std::all_of(widths.begin(), widths.end(), [](Index w) { return w >= 1; });
}

std::string conv_line(const char* name, Index in, Index out, Pair k, Pair p, const char* tail) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s conv %ld->%ld k%ldx%ld p%ldx%ld%s", name, static_cast<long>(in),
                static_cast<long>(out), static_cast<long>(k[0]), static_cast<long>(k[1]),
                static_cast<long>(p[0]), static_cast<long>(p[1]), tail);
  return buf;
}

}  // namespace

std::string to_string(ModelKind kind) { return kind == ModelKind::Crnn ? "crnn" : "starnet"; }

CrnnConfig CrnnConfig::desk() {
  CrnnConfig cfg;
  cfg.channels = {16, 32, 64, 64, 96, 96, 64};
  cfg.hidden = 64;
  return cfg;
}

void CrnnConfig::validate() const {
  if (!positive(channels) || hidden < 1 || lstm_layers < 1) {
    throw Error(ErrorCode::BadConfig, "CRNN widths and layer counts must be positive");
  }
}

StarNetConfig StarNetConfig::desk() {
  StarNetConfig cfg;
  cfg.localizer = {4, 8, 16, 32};
  cfg.localizer_fc = 64;
  cfg.extractor = {16, 32, 48, 48, 64};
  cfg.hidden = 64;
  return cfg;
}

void StarNetConfig::validate() const {
  if (!positive(localizer) || localizer_fc < 1 || !positive(extractor) || hidden < 1) {
    throw Error(ErrorCode::BadConfig, "STAR-Net widths must be positive");
  }
}

Json config_to_json(const ArchConfig& config) {
  if (const auto* c = std::get_if<CrnnConfig>(&config)) {
    return {{"channels", c->channels}, {"hidden", c->hidden}, {"lstm_layers", c->lstm_layers}};
  }
  const auto& s = std::get<StarNetConfig>(config);
  return {{"localizer", s.localizer},
          {"localizer_fc", s.localizer_fc},
          {"extractor", s.extractor},
          {"hidden", s.hidden},
          {"sampler", mode_name(s.sampler)}};
}

ArchConfig config_from_json(const Json& j) {
  try {
    if (j.contains("channels")) {
      CrnnConfig c;
      c.channels = j.at("channels").get<std::array<Index, 7>>();
      c.hidden = j.at("hidden").get<Index>();
      c.lstm_layers = j.at("lstm_layers").get<Index>();
      c.validate();
      return c;
    }
    StarNetConfig s;
    s.localizer = j.at("localizer").get<std::array<Index, 4>>();
    s.localizer_fc = j.at("localizer_fc").get<Index>();
    s.extractor = j.at("extractor").get<std::array<Index, 5>>();
    s.hidden = j.at("hidden").get<Index>();
    auto mode = j.at("sampler").get<std::string>();
    if (mode != "bilinear" && mode != "nearest") throw Error(ErrorCode::BadConfig, "unknown sampler " + mode);
    s.sampler = mode == "bilinear" ? nn::SampleMode::Bilinear : nn::SampleMode::Nearest;
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadConfig, std::string("malformed model config: ") + e.what());
  }
}

std::vector<std::string> layer_plan(const ArchConfig& config) {
  std::vector<std::string> plan;
  if (const auto* c = std::get_if<CrnnConfig>(&config)) {
    const auto& ch = c->channels;
    Index in = 1;
    const char* tails[7] = {" relu pool2x2", " relu pool2x2", " relu", " relu pool(h2,w1)",
                            " bn relu", " bn relu pool(h2,w1)", " relu"};
    for (int i = 0; i < 7; ++i) {
      std::string name = "cnn.conv" + std::to_string(i + 1);
      plan.push_back(conv_line(name.c_str(), in, ch[static_cast<std::size_t>(i)], i == 6 ? kCollapse : k3x3,
                               i == 6 ? kCollapsePad : kOne, tails[i]));
      in = ch[static_cast<std::size_t>(i)];
    }
    Index width = in;
    for (Index l = 0; l < c->lstm_layers; ++l) {
      plan.push_back("rnn." + std::to_string(l) + " bilstm " + std::to_string(width) + "->2x" +
                     std::to_string(c->hidden));
      width = 2 * c->hidden;
    }
    plan.push_back("head linear " + std::to_string(width) + "->classes log_softmax");
    return plan;
  }
  const auto& s = std::get<StarNetConfig>(config);
  Index in = 1;
  for (std::size_t i = 0; i < 4; ++i) {
    std::string name = "localizer.conv" + std::to_string(i + 1);
    plan.push_back(conv_line(name.c_str(), in, s.localizer[i], k3x3, kOne, " relu pool2x2"));
    in = s.localizer[i];
  }
  plan.push_back("localizer.fc1 linear " + std::to_string(in * 9) + "->" + std::to_string(s.localizer_fc) + " relu");
  plan.push_back("localizer.fc2 linear " + std::to_string(s.localizer_fc) + "->6 zero weight, identity bias");
  plan.push_back(std::string("sampler affine ") + mode_name(s.sampler) + " 18x150->32x100");
  const auto& e = s.extractor;
  int k = 1;
  auto conv = [&](Index from, Index to, const char* tail, Pair kernel = k3x3, Pair pad = kOne) {
    std::string name = "extractor.conv" + std::to_string(k++);
    plan.push_back(conv_line(name.c_str(), from, to, kernel, pad, tail));
  };
  conv(1, e[0], " bn relu pool2x2");
  conv(e[0], e[1], " bn relu pool2x2");
  Index width = e[1];
  for (std::size_t stage = 0; stage < 3; ++stage) {
    if (stage > 0) {
      conv(width, e[stage + 1], " bn relu pool(h2,w1)");
      width = e[stage + 1];
    }
    for (int b = 0; b < kStageBlocks[stage]; ++b) {
      conv(width, width, " bn relu");
      conv(width, width, " bn +skip relu");
    }
  }
  conv(width, width, " bn relu");
  conv(width, e[4], " bn relu", kCollapse, kCollapsePad);
  plan.push_back("rnn.0 bilstm " + std::to_string(e[4]) + "->2x" + std::to_string(s.hidden));
  plan.push_back("head linear " + std::to_string(2 * s.hidden) + "->classes log_softmax");
  return plan;
}

template <typename S>
Recognizer<S> Recognizer<S>::build(const ArchConfig& config, const Vocabulary& vocab, std::uint64_t seed) {
  if (vocab.size() < 1) throw Error(ErrorCode::BadConfig, "vocabulary is empty");
  std::visit([](const auto& c) { c.validate(); }, config);
  Recognizer m;
  m.config_ = config;
  m.vocab_ = vocab;
  m.seed_ = seed;
  Rng rng(seed);
  Index seq_width = 0;
  if (const auto* c = std::get_if<CrnnConfig>(&config)) {
    Index in = 1;
    for (std::size_t i = 0; i < 7; ++i) {
      bool last = i == 6;
      m.convs_.push_back(nn::Conv2d<S>::create(in, c->channels[i], last ? kCollapse : k3x3, kOne,
                                               last ? kCollapsePad : kOne, rng));
      m.norms_.emplace_back();
      if (i == 4 || i == 5) m.norms_.back() = nn::BatchNorm2d<S>::create(c->channels[i]);
      in = c->channels[i];
    }
    seq_width = in;
    for (Index l = 0; l < c->lstm_layers; ++l) {
      m.decoder_.push_back(nn::BiLstm<S>::create(seq_width, c->hidden, rng));
      seq_width = 2 * c->hidden;
    }
  } else {
    const auto& s = std::get<StarNetConfig>(config);
    Index in = 1;
    for (Index width : s.localizer) {
      m.loc_convs_.push_back(nn::Conv2d<S>::create(in, width, k3x3, kOne, kOne, rng));
      in = width;
    }
    m.loc_fc1_ = nn::Linear<S>::create(in * 9, s.localizer_fc, rng);
    m.loc_fc2_ = nn::Linear<S>::create(s.localizer_fc, 6, rng);
    m.loc_fc2_.weight.mutable_value().set_zero();
    m.loc_fc2_.bias.mutable_value() = Tensor<S>({6}, {1, 0, 0, 0, 1, 0});

    const auto& e = s.extractor;
    auto add = [&](Index from, Index to, Pair kernel = k3x3, Pair pad = kOne) {
      m.convs_.push_back(nn::Conv2d<S>::create(from, to, kernel, kOne, pad, rng));
      m.norms_.emplace_back(nn::BatchNorm2d<S>::create(to));
    };
    add(1, e[0]);
    add(e[0], e[1]);
    Index width = e[1];
    for (std::size_t stage = 0; stage < 3; ++stage) {
      if (stage > 0) {
        add(width, e[stage + 1]);
        width = e[stage + 1];
      }
      for (int b = 0; b < 2 * kStageBlocks[stage]; ++b) add(width, width);
    }
    add(width, width);
    add(width, e[4], kCollapse, kCollapsePad);
    m.decoder_.push_back(nn::BiLstm<S>::create(e[4], s.hidden, rng));
    seq_width = 2 * s.hidden;
  }
  m.head_ = nn::Linear<S>::create(seq_width, vocab.classes(), rng);
  return m;
}

template <typename S>
Pair Recognizer<S>::input_size() const {
  return kind() == ModelKind::Crnn ? kRecognizerInput : kStarNetRawInput;
}

template <typename S>
Index Recognizer<S>::feature_size() const {
  return convs_.back().out_channels;
}

template <typename S>
Variable<S> Recognizer<S>::conv_bn_relu(std::size_t k, const Variable<S>& x, bool training, bool relu_after) {
  auto y = convs_[k].forward(x);
  if (norms_[k]) y = norms_[k]->forward(y, training);
  return relu_after ? relu(y) : y;
}

template <typename S>
Variable<S> Recognizer<S>::crnn_features(Variable<S> x, bool training) {
  x = nn::max_pool2d(conv_bn_relu(0, x, training), kSquare, kSquare);
  x = nn::max_pool2d(conv_bn_relu(1, x, training), kSquare, kSquare);
  x = conv_bn_relu(2, x, training);
  x = nn::max_pool2d(conv_bn_relu(3, x, training), kTall, kTall);
  x = conv_bn_relu(4, x, training);
  x = nn::max_pool2d(conv_bn_relu(5, x, training), kTall, kTall);
  return conv_bn_relu(6, x, training);
}

template <typename S>
Variable<S> Recognizer<S>::starnet_features(Variable<S> x, bool training) {
  std::size_t k = 0;
  x = nn::max_pool2d(conv_bn_relu(k++, x, training), kSquare, kSquare);
  x = nn::max_pool2d(conv_bn_relu(k++, x, training), kSquare, kSquare);
  for (std::size_t stage = 0; stage < 3; ++stage) {
    if (stage > 0) x = nn::max_pool2d(conv_bn_relu(k++, x, training), kTall, kTall);
    for (int b = 0; b < kStageBlocks[stage]; ++b) {
      auto y = conv_bn_relu(k++, x, training);
      y = conv_bn_relu(k++, y, training, false);
      x = relu(add(x, y));
    }
  }
  x = conv_bn_relu(k++, x, training);
  return conv_bn_relu(k++, x, training);
}

template <typename S>
Variable<S> Recognizer<S>::localize(const Variable<S>& images) const {
  if (kind() != ModelKind::StarNet) throw Error(ErrorCode::BadConfig, "only STAR-Net has a localizer");
  Variable<S> x = images;
  for (const auto& conv : loc_convs_) x = nn::max_pool2d(relu(conv.forward(x)), kSquare, kSquare);
  x = reshape(x, {x.shape()[0], shape_size(x.shape()) / x.shape()[0]});
  return loc_fc2_.forward(relu(loc_fc1_.forward(x)));
}

template <typename S>
Variable<S> Recognizer<S>::rectify(const Variable<S>& images) const {
  const auto& s = std::get<StarNetConfig>(config_);
  return nn::affine_grid_sample(images, localize(images), kRecognizerInput[0], kRecognizerInput[1], s.sampler);
}

template <typename S>
Variable<S> Recognizer<S>::features(const Variable<S>& images, bool training) {
  Pair in = input_size();
  const Shape& shape = images.shape();
  if (shape.size() != 4 || shape[1] != 1 || shape[2] != in[0] || shape[3] != in[1]) {
    throw Error(ErrorCode::ShapeMismatch, to_string(kind()) + " expects [N,1," + std::to_string(in[0]) + "," +
                                              std::to_string(in[1]) + "], got " + shape_string(shape));
  }
  auto maps = kind() == ModelKind::Crnn ? crnn_features(images, training)
                                        : starnet_features(rectify(images), training);
  // [N,F,1,25] -> [25,N,F]
  const Index n = shape[0], f = maps.shape()[1];
  return permute(reshape(maps, {n, f, maps.shape()[3]}), {2, 0, 1});
}

template <typename S>
Variable<S> Recognizer<S>::forward(const Variable<S>& images, bool training) {
  auto seq = features(images, training);
  for (const auto& layer : decoder_) seq = layer.forward(seq);
  const nn::Linear<S>* head = &head_;
  if (correction_) {
    seq = correction_->forward(seq);
    head = &correction_head_;
  }
  const Index steps = seq.shape()[0], n = seq.shape()[1];
  auto logits = head->forward(reshape(seq, {steps * n, seq.shape()[2]}));
  return reshape(log_softmax(logits), {steps, n, vocab_.classes()});
}

template <typename S>
void Recognizer<S>::attach_correction(std::uint64_t seed, Index hidden) {
  if (correction_) throw Error(ErrorCode::AlreadyAttached, "correction BiLSTM is already attached");
  Rng rng(mix_seed(seed, 0xc0ec));
  correction_ = nn::BiLstm<S>::create(decoder_width(), hidden, rng);
  correction_head_ = nn::Linear<S>::create(2 * hidden, vocab_.classes(), rng);
}

template <typename S>
nn::StateList<S> Recognizer<S>::state() {
  nn::StateList<S> out;
  if (kind() == ModelKind::Crnn) {
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].collect(out, "cnn.conv" + std::to_string(i + 1));
      if (norms_[i]) norms_[i]->collect(out, "cnn.bn" + std::to_string(i + 1));
    }
  } else {
    for (std::size_t i = 0; i < loc_convs_.size(); ++i) {
      loc_convs_[i].collect(out, "localizer.conv" + std::to_string(i + 1));
    }
    loc_fc1_.collect(out, "localizer.fc1");
    loc_fc2_.collect(out, "localizer.fc2");
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].collect(out, "extractor.conv" + std::to_string(i + 1));
      norms_[i]->collect(out, "extractor.bn" + std::to_string(i + 1));
    }
  }
  for (std::size_t l = 0; l < decoder_.size(); ++l) decoder_[l].collect(out, "rnn." + std::to_string(l));
  head_.collect(out, "head");
  if (correction_) {
    correction_->collect(out, "correction.rnn");
    correction_head_.collect(out, "correction.head");
  }
  return out;
}

template <typename S>
std::vector<std::pair<std::string, Variable<S>>> Recognizer<S>::named_parameters() {
  std::vector<std::pair<std::string, Variable<S>>> out;
  for (auto& entry : state()) {
    if (!entry.trainable()) continue;
    // The replaced head stays in the checkpoint but no longer feeds the loss.
    if (correction_ && entry.name.rfind("head.", 0) == 0) continue;
    out.emplace_back(entry.name, entry.param);
  }
  return out;
}

template <typename S>
std::vector<Variable<S>> Recognizer<S>::parameters() {
  std::vector<Variable<S>> out;
  for (auto& [name, param] : named_parameters()) out.push_back(param);
  return out;
}

template <typename S>
Index Recognizer<S>::parameter_count() {
  Index total = 0;
  for (auto& entry : state()) {
    if (entry.trainable()) total += entry.param.size();
  }
  return total;
}

template <typename S>
void Recognizer<S>::reset_head(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x4ead));
  auto& head = correction_ ? correction_head_ : head_;
  head = nn::Linear<S>::create(head.in_features, vocab_.classes(), rng);
}

template <typename S>
Json Recognizer<S>::descriptor() const {
  std::vector<std::uint32_t> cps(vocab_.codepoints().begin(), vocab_.codepoints().end());
  Json d;
  d["format"] = 1;
  d["kind"] = to_string(kind());
  d["config"] = config_to_json(config_);
  d["input"] = {input_size()[0], input_size()[1]};
  d["frames"] = kFrames;
  d["vocab"] = {{"codepoints", cps}, {"hash", vocab_.hash_hex()}};
  d["correction"] = {{"attached", has_correction()},
                     {"hidden", correction_hidden()},
                     {"input", "decoder"}};
  d["plan"] = layer_plan(config_);
  d["seed"] = seed_;
  return d;
}

template <typename S>
std::vector<std::string> Recognizer<S>::predict(const std::vector<synth::Image>& images, std::size_t batch) {
  std::vector<std::string> out;
  for (std::size_t start = 0; start < images.size(); start += batch) {
    std::vector<const synth::Image*> chunk;
    for (std::size_t i = start; i < std::min(images.size(), start + batch); ++i) chunk.push_back(&images[i]);
    auto lp = forward(constant(image_batch<S>(chunk, input_size())), false);
    for (auto& s : ctc::greedy_decode(lp.value(), vocab_)) out.push_back(std::move(s));
  }
  return out;
}

template <typename S>
Tensor<S> image_batch(const std::vector<const synth::Image*>& images, Pair size) {
  if (images.empty()) throw Error(ErrorCode::EmptyDataset, "no images to batch");
  Tensor<S> out({static_cast<Index>(images.size()), 1, size[0], size[1]});
  const Index plane = size[0] * size[1];
  for (std::size_t i = 0; i < images.size(); ++i) {
    const synth::Image* img = images[i];
    synth::Image resized;
    if (img->rows() != size[0] || img->cols() != size[1]) {
      resized = synth::resize(*img, static_cast<int>(size[0]), static_cast<int>(size[1]));
      img = &resized;
    }
    auto dst = out.vec().segment(static_cast<Index>(i) * plane, plane);
    dst = Eigen::Map<const Eigen::VectorXf>(img->data(), plane).template cast<S>();
  }
  return out;
}

template class Recognizer<float>;
template class Recognizer<double>;
template Tensor<float> image_batch<float>(const std::vector<const synth::Image*>&, Pair);
template Tensor<double> image_batch<double>(const std::vector<const synth::Image*>&, Pair);

}  // namespace strlab::models
