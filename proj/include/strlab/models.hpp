#pragma once

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "strlab/nn.hpp"
#include "strlab/synthgen.hpp"
#include "strlab/textcodec.hpp"

// CRNN and STAR-Net recognizers over grayscale word images, the correction
// BiLSTM head, and the named-tensor checkpoint format.
namespace strlab::models {

using Json = nlohmann::json;
using nn::Pair;
using text::Vocabulary;

enum class ModelKind { Crnn, StarNet };
std::string to_string(ModelKind kind);

/// Frames of the feature sequence; both models emit 25 steps.
inline constexpr Index kFrames = 25;
inline constexpr Pair kRecognizerInput{32, 100};
inline constexpr Pair kStarNetRawInput{18, 150};

struct CrnnConfig {
  /// Seven conv widths. Pools: 2x2 after conv1-2, (h2,w1) after conv4 and
  /// conv6; batchnorm on conv5-6; conv7 has a 2x3 kernel collapsing height.
  std::array<Index, 7> channels{64, 128, 256, 256, 512, 512, 256};
  Index hidden = 256;
  Index lstm_layers = 2;

  /// Reduced widths for single-core desk runs; same layer plan.
  static CrnnConfig desk();
  void validate() const;
  bool operator==(const CrnnConfig&) const = default;
};

struct StarNetConfig {
  /// Localizer conv widths (k3 s1 p1, each followed by a 2x2 pool) and FC size.
  std::array<Index, 4> localizer{16, 32, 64, 128};
  Index localizer_fc = 256;
  /// Extractor widths: stem, stage 1, stage 2, stage 3, output. The plan has
  /// 22 convs: stem, conv2, 2 residual blocks, transition, 3 blocks,
  /// transition, 3 blocks, a conv and a 2x3 height-collapsing conv.
  std::array<Index, 5> extractor{64, 128, 256, 256, 256};
  Index hidden = 256;
  nn::SampleMode sampler = nn::SampleMode::Bilinear;

  static StarNetConfig desk();
  void validate() const;
  bool operator==(const StarNetConfig&) const = default;
};

using ArchConfig = std::variant<CrnnConfig, StarNetConfig>;

Json config_to_json(const ArchConfig& config);
ArchConfig config_from_json(const Json& j);

/// Human-readable layer table recorded in checkpoint descriptors.
std::vector<std::string> layer_plan(const ArchConfig& config);

template <typename S>
class Recognizer {
 public:
  /// Throws BadConfig for invalid widths or an empty vocabulary.
  static Recognizer build(const ArchConfig& config, const Vocabulary& vocab, std::uint64_t seed);

  ModelKind kind() const { return std::holds_alternative<CrnnConfig>(config_) ? ModelKind::Crnn : ModelKind::StarNet; }
  const ArchConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  std::uint64_t seed() const { return seed_; }
  /// Raw input (height, width): 32x100 for CRNN, 18x150 for STAR-Net.
  Pair input_size() const;
  /// Width of the CNN feature sequence.
  Index feature_size() const;
  Index decoder_width() const { return 2 * decoder_.back().hidden_size; }

  /// STAR-Net only: affine parameters theta[N,6] for images[N,1,18,150].
  Variable<S> localize(const Variable<S>& images) const;
  /// STAR-Net only: images resampled to [N,1,32,100].
  Variable<S> rectify(const Variable<S>& images) const;
  /// CNN feature sequence [25,N,F].
  Variable<S> features(const Variable<S>& images, bool training);
  /// Per-frame log-probabilities [25,N,C+1].
  Variable<S> forward(const Variable<S>& images, bool training);

  /// Appends a BiLSTM over the decoder output and a fresh projection that
  /// replaces the old head in the forward pass. Prior weights are kept.
  /// Throws AlreadyAttached on a second call.
  void attach_correction(std::uint64_t seed, Index hidden = 256);
  bool has_correction() const { return correction_.has_value(); }
  Index correction_hidden() const { return correction_ ? correction_->hidden_size : 0; }

  /// Every parameter and buffer, in checkpoint order.
  nn::StateList<S> state();
  /// Trainable parameters used by the forward pass, with checkpoint names.
  std::vector<std::pair<std::string, Variable<S>>> named_parameters();
  std::vector<Variable<S>> parameters();
  /// Elements over all trainable tensors, including an inactive old head.
  Index parameter_count();

  /// Freshly initializes the active projection head.
  void reset_head(std::uint64_t seed);

  /// Architecture descriptor: kind, config, vocabulary, correction, plan.
  Json descriptor() const;

  /// Greedy transcription of images of any size (resized to the input).
  std::vector<std::string> predict(const std::vector<synth::Image>& images, std::size_t batch = 64);

 private:
  Variable<S> crnn_features(Variable<S> x, bool training);
  Variable<S> starnet_features(Variable<S> x, bool training);
  Variable<S> conv_bn_relu(std::size_t k, const Variable<S>& x, bool training, bool relu_after = true);

  ArchConfig config_;
  Vocabulary vocab_;
  std::uint64_t seed_ = 0;
  std::vector<nn::Conv2d<S>> convs_;
  std::vector<std::optional<nn::BatchNorm2d<S>>> norms_;  // parallel to convs_
  std::vector<nn::Conv2d<S>> loc_convs_;
  nn::Linear<S> loc_fc1_, loc_fc2_;
  std::vector<nn::BiLstm<S>> decoder_;
  nn::Linear<S> head_;
  std::optional<nn::BiLstm<S>> correction_;
  nn::Linear<S> correction_head_;
};

/// Stacks images into [N,1,h,w], resizing any whose size differs.
template <typename S>
Tensor<S> image_batch(const std::vector<const synth::Image*>& images, Pair size);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

struct TensorRecord {
  std::string name;
  DType dtype = DType::F32;
  Shape shape;
  std::string bytes;  // little-endian payload

  template <typename S>
  Tensor<S> to_tensor() const;
  template <typename S>
  static TensorRecord from_tensor(std::string name, const Tensor<S>& t);
};

/// "STRC1", u32 descriptor length, compact JSON descriptor, u32 tensor count,
/// table of (u16 name length, name, u8 dtype, u8 rank, u32 dims, u64 offset),
/// then the payload. All integers little-endian.
struct Checkpoint {
  Json descriptor;
  std::vector<TensorRecord> tensors;

  std::string serialize() const;
  /// Throws BadMagic for a wrong header and Io for truncated or inconsistent
  /// content.
  static Checkpoint parse(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  const TensorRecord* find(std::string_view name) const;
  ModelKind kind() const;
  Vocabulary vocab() const;
  bool has_correction() const;
};

template <typename S>
Checkpoint make_checkpoint(Recognizer<S>& model);

/// Rebuilds the described model and restores every tensor. Throws
/// HashMismatch when the stored vocabulary hash disagrees with its codepoints
/// or with `expected`.
template <typename S>
Recognizer<S> load_model(const Checkpoint& ckpt, const Vocabulary* expected = nullptr);

/// Copies every tensor of the checkpoint into the model; all names and
/// shapes must match (ArchMismatch otherwise).
template <typename S>
void restore_state(Recognizer<S>& model, const Checkpoint& ckpt);

struct TransferReport {
  std::vector<std::string> copied;
  std::vector<std::string> reinitialized;

  /// "tensor<TAB>copied|reinitialized" rows.
  std::string tsv() const;
};

/// Copies every same-name, same-shape tensor from src into dst. Projection
/// heads that differ in shape keep dst's fresh initialization. Throws
/// ArchMismatch when kind or config differ, or when any other tensor cannot
/// be copied.
template <typename S>
TransferReport transfer_weights(const Checkpoint& src, Recognizer<S>& dst);

/// Writes the first conv layer's filters as one PGM grid, contrast-stretched.
template <typename S>
void dump_filters(Recognizer<S>& model, const std::filesystem::path& path);

}  // namespace strlab::models
