#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "strlab/metrics.hpp"
#include "strlab/models.hpp"
#include "strlab/synthgen.hpp"

// ADADELTA, the training loop, and the cross-script transfer experiment.
namespace strlab::train {

using models::Checkpoint;
using models::Recognizer;
using synth::WordSample;

struct AdadeltaConfig {
  double rho = 0.9;
  double eps = 1e-6;
  double lr = 1.0;  // multiplier on the update
  /// Extra multiplier on localizer.* updates. A large early step can move the
  /// sampled window off the image, where the localizer receives no gradient.
  double localizer_lr = 0.1;
};

/// Running averages E[g^2] and E[dx^2], one pair per parameter.
template <typename S>
struct AdadeltaState {
  AdadeltaConfig config;
  std::vector<Tensor<S>> sq_grad;
  std::vector<Tensor<S>> sq_delta;
  std::vector<double> lr_scale;  // per-parameter update multiplier, empty for all 1
};

/// E[g^2] = rho E[g^2] + (1-rho) g^2;  dx = -sqrt(E[dx^2]+eps)/sqrt(E[g^2]+eps) g;
/// E[dx^2] = rho E[dx^2] + (1-rho) dx^2;  x += lr * lr_scale[i] * dx.
/// Accumulators are created on the first call. Throws ShapeMismatch when
/// shapes disagree.
template <typename S>
void adadelta_step(const std::vector<Tensor<S>*>& params, const std::vector<const Tensor<S>*>& grads,
                   AdadeltaState<S>& state);

/// Scales every gradient so that their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename S>
double clip_grad_norm(std::vector<Variable<S>>& params, double max_norm);

/// One optimizer step per batch: forward, CTC loss, backward, clip, update.
template <typename S>
class Trainer {
 public:
  Trainer(Recognizer<S>& model, AdadeltaConfig optimizer = {}, double clip_norm = 5.0);

  /// Returns the batch loss before the update. Throws OovCodepoint or
  /// InfeasibleTarget for labels the model cannot emit.
  double step(const std::vector<const WordSample*>& batch);

  AdadeltaState<S>& optimizer() { return state_; }
  std::size_t steps() const { return steps_; }
  void set_steps(std::size_t steps) { steps_ = steps; }

 private:
  Recognizer<S>& model_;
  std::vector<Variable<S>> params_;
  AdadeltaState<S> state_;
  double clip_norm_;
  std::size_t steps_ = 0;
};

/// Greedy predictions of the model scored against the sample labels.
template <typename S>
metrics::EvalReport evaluate_model(Recognizer<S>& model, const std::vector<WordSample>& samples,
                                   metrics::CrrPooling pooling = metrics::CrrPooling::Corpus);

struct TrainPlan {
  std::size_t batch_size = 16;
  int epochs = 15;
  std::uint64_t seed = 1;
  int eval_every = 1;  // epochs between held-out evaluations
  double clip_norm = 5.0;  // <= 0 disables clipping
  AdadeltaConfig optimizer;
  /// Stop once held-out WRR reaches this percentage; unset trains all epochs.
  std::optional<double> stop_at_wrr;
  std::filesystem::path best_path;  // best held-out WRR checkpoint, optional
  std::filesystem::path last_path;  // resumable end-of-epoch checkpoint, optional
  bool verbose = false;             // progress lines on stderr

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0;
  std::optional<double> crr;
  std::optional<double> wrr;
};

struct TrainResult {
  std::vector<double> losses;  // per step, across resumes
  std::size_t first_step = 0;  // global index of losses[0]
  std::vector<EpochRecord> epochs;
  double best_wrr = -1;
  int best_epoch = 0;

  /// First epoch whose held-out WRR reached the threshold.
  std::optional<int> epochs_to(double wrr) const;
  /// "step<TAB>loss" rows, 1-based steps.
  std::string loss_tsv() const;
};

/// Trains with a seeded per-epoch shuffle. Throws EmptyDataset before any
/// step when `data` is empty. With `resume`, model weights, optimizer state
/// and the epoch counter are restored from a checkpoint written to last_path.
template <typename S>
TrainResult train(Recognizer<S>& model, const std::vector<WordSample>& data,
                  const std::vector<WordSample>* heldout, const TrainPlan& plan,
                  const Checkpoint* resume = nullptr);

/// Model checkpoint plus optimizer accumulators and the training position.
template <typename S>
Checkpoint training_checkpoint(Recognizer<S>& model, const AdadeltaState<S>& state, int epoch, std::size_t step);

struct TransferSetup {
  models::ArchConfig arch;
  std::string src_script = "A";
  std::string dst_script = "B";
  std::size_t src_count = 2000;
  std::size_t dst_count = 400;
  std::size_t test_count = 200;
  std::size_t lexicon_size = 400;
  TrainPlan src_plan;
  TrainPlan dst_plan;
  double threshold = 80.0;  // WRR percent for epochs-to-threshold
  std::uint64_t seed = 1;
};

struct ConditionResult {
  std::string condition;
  double crr = 0;
  double wrr = 0;
  std::optional<int> epochs_to_threshold;
};

struct ExperimentReport {
  std::vector<ConditionResult> rows;

  const ConditionResult& row(const std::string& condition) const;
  /// Header "condition<TAB>CRR<TAB>WRR<TAB>epochs_to_threshold"; "-" when the
  /// threshold was never reached.
  std::string tsv() const;
};

/// Trains a scratch model on the destination script and a model initialized
/// from the source (all layers fine-tuned) under identical plans, both scored
/// on the same held-out destination words. Rows: "source" (source model on its
/// own held-out set), "transfer@0" (transferred weights before fine-tuning),
/// "scratch", "transfer". A pretrained source checkpoint skips source training.
template <typename S>
ExperimentReport transfer_experiment(const TransferSetup& setup, const Checkpoint* pretrained = nullptr);

/// Train/held-out sets of one builtin script with disjoint words.
synth::Dataset script_dataset(const std::string& script, std::size_t train_count, std::size_t test_count,
                              std::size_t lexicon_size, int height, std::uint64_t seed);

}  // namespace strlab::train
