#include "strlab/trainkit.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "strlab/ctc.hpp"

namespace strlab::train {

namespace {

// Encodes every label up front so bad data fails before the first step.
std::vector<text::LabelSeq> encode_labels(const std::vector<const WordSample*>& batch, const text::Vocabulary& vocab) {
  std::vector<text::LabelSeq> out;
  out.reserve(batch.size());
  for (const auto* sample : batch) {
    auto seq = text::encode(sample->label, vocab);
    if (ctc::min_frames(seq.ids) > models::kFrames) {
      throw Error(ErrorCode::InfeasibleTarget, "label '" + sample->label + "' is too long for " +
                                                   std::to_string(models::kFrames) + " frames");
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<const WordSample*> pointers(const std::vector<WordSample>& samples) {
  std::vector<const WordSample*> out;
  for (const auto& s : samples) out.push_back(&s);
  return out;
}

}  // namespace

template <typename S>
void adadelta_step(const std::vector<Tensor<S>*>& params, const std::vector<const Tensor<S>*>& grads,
                   AdadeltaState<S>& state) {
  if (params.size() != grads.size()) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(params.size()) + " parameters but " +
                                              std::to_string(grads.size()) + " gradients");
  }
  if (state.sq_grad.empty()) {
    for (const auto* p : params) {
      state.sq_grad.push_back(Tensor<S>::zeros_like(*p));
      state.sq_delta.push_back(Tensor<S>::zeros_like(*p));
    }
  }
  if (state.sq_grad.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer state tracks " + std::to_string(state.sq_grad.size()) +
                                              " parameters, got " + std::to_string(params.size()));
  }
  const S rho = static_cast<S>(state.config.rho);
  const S eps = static_cast<S>(state.config.eps);
  if (!state.lr_scale.empty() && state.lr_scale.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(state.lr_scale.size()) + " update multipliers for " +
                                              std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const S lr = static_cast<S>(state.config.lr * (state.lr_scale.empty() ? 1.0 : state.lr_scale[i]));
    auto& p = *params[i];
    const auto& g = *grads[i];
    if (g.shape() != p.shape() || state.sq_grad[i].shape() != p.shape()) {
      throw Error(ErrorCode::ShapeMismatch, "gradient " + shape_string(g.shape()) + " for parameter " +
                                                shape_string(p.shape()));
    }
    auto eg = state.sq_grad[i].vec().array();
    auto ed = state.sq_delta[i].vec().array();
    auto ga = g.vec().array();
    eg = rho * eg + (S(1) - rho) * ga.square();
    auto dx = (-((ed + eps).sqrt() / (eg + eps).sqrt()) * ga).eval();
    ed = rho * ed + (S(1) - rho) * dx.square();
    p.vec().array() += lr * dx;
  }
}

template <typename S>
double clip_grad_norm(std::vector<Variable<S>>& params, double max_norm) {
  double total = 0;
  for (const auto& p : params) {
    if (p.has_grad()) total += static_cast<double>(p.grad().vec().squaredNorm());
  }
  double norm = std::sqrt(total);
  if (max_norm > 0 && norm > max_norm) {
    S factor = static_cast<S>(max_norm / norm);
    for (auto& p : params) {
      if (p.has_grad()) p.node()->grad.vec() *= factor;
    }
  }
  return norm;
}

template <typename S>
Trainer<S>::Trainer(Recognizer<S>& model, AdadeltaConfig optimizer, double clip_norm)
    : model_(model), params_(model.parameters()), clip_norm_(clip_norm) {
  state_.config = optimizer;
  for (const auto& [name, param] : model.named_parameters()) {
    state_.lr_scale.push_back(name.starts_with("localizer.") ? optimizer.localizer_lr : 1.0);
  }
}

template <typename S>
double Trainer<S>::step(const std::vector<const WordSample*>& batch) {
  if (batch.empty()) throw Error(ErrorCode::EmptyDataset, "empty batch");
  auto targets = encode_labels(batch, model_.vocab());
  std::vector<const synth::Image*> images;
  for (const auto* s : batch) images.push_back(&s->image);
  double loss_value;
  {
    Tape<S> tape;
    auto log_probs = model_.forward(constant(models::image_batch<S>(images, model_.input_size())), true);
    auto loss = ctc::ctc_loss(log_probs, targets);
    loss_value = static_cast<double>(loss.value()[0]);
    backward(loss);
  }
  if (clip_norm_ > 0) clip_grad_norm(params_, clip_norm_);
  std::vector<Tensor<S>*> values;
  std::vector<Tensor<S>> zeros;
  zeros.reserve(params_.size());
  std::vector<const Tensor<S>*> grads;
  for (auto& p : params_) {
    values.push_back(&p.mutable_value());
    if (p.has_grad()) {
      grads.push_back(&p.grad());
    } else {
      zeros.push_back(Tensor<S>::zeros_like(p.value()));
      grads.push_back(&zeros.back());
    }
  }
  adadelta_step(values, grads, state_);
  for (auto& p : params_) p.zero_grad();
  ++steps_;
  return loss_value;
}

template <typename S>
metrics::EvalReport evaluate_model(Recognizer<S>& model, const std::vector<WordSample>& samples,
                                   metrics::CrrPooling pooling) {
  if (samples.empty()) throw Error(ErrorCode::EmptySet, "no samples to evaluate");
  std::vector<synth::Image> images;
  images.reserve(samples.size());
  for (const auto& s : samples) images.push_back(s.image);
  auto preds = model.predict(images);
  std::vector<std::pair<std::string, std::string>> pairs;
  for (std::size_t i = 0; i < samples.size(); ++i) pairs.emplace_back(samples[i].label, preds[i]);
  return metrics::evaluate(pairs, pooling);
}

void TrainPlan::validate() const {
  if (batch_size < 1 || epochs < 1 || eval_every < 0 || !(optimizer.rho > 0 && optimizer.rho < 1) ||
      !(optimizer.eps > 0) || !(optimizer.lr > 0)) {
    throw Error(ErrorCode::BadConfig, "invalid training plan");
  }
}

std::optional<int> TrainResult::epochs_to(double wrr) const {
  for (const auto& e : epochs) {
    if (e.wrr && *e.wrr >= wrr) return e.epoch;
  }
  return std::nullopt;
}

std::string TrainResult::loss_tsv() const {
  std::string out = "step\tloss\n";
  char line[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(line, sizeof line, "%zu\t%.6f\n", first_step + i + 1, losses[i]);
    out += line;
  }
  return out;
}

template <typename S>
Checkpoint training_checkpoint(Recognizer<S>& model, const AdadeltaState<S>& state, int epoch, std::size_t step) {
  auto ckpt = models::make_checkpoint(model);
  ckpt.descriptor["train_state"] = {{"epoch", epoch},
                                    {"step", step},
                                    {"rho", state.config.rho},
                                    {"eps", state.config.eps},
                                    {"lr", state.config.lr}};
  auto named = model.named_parameters();
  if (!state.sq_grad.empty()) {
    for (std::size_t i = 0; i < named.size(); ++i) {
      ckpt.tensors.push_back(models::TensorRecord::from_tensor("opt.sq_grad." + named[i].first, state.sq_grad[i]));
      ckpt.tensors.push_back(models::TensorRecord::from_tensor("opt.sq_delta." + named[i].first, state.sq_delta[i]));
    }
  }
  return ckpt;
}

template <typename S>
TrainResult train(Recognizer<S>& model, const std::vector<WordSample>& data,
                  const std::vector<WordSample>* heldout, const TrainPlan& plan, const Checkpoint* resume) {
  plan.validate();
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "training set is empty");
  encode_labels(pointers(data), model.vocab());
  if (heldout != nullptr && heldout->empty()) heldout = nullptr;

  Trainer<S> trainer(model, plan.optimizer, plan.clip_norm);
  TrainResult result;
  int start_epoch = 1;
  if (resume != nullptr) {
    if (!resume->descriptor.contains("train_state")) {
      throw Error(ErrorCode::Io, "checkpoint carries no training state to resume from");
    }
    const auto& ts = resume->descriptor["train_state"];
    models::restore_state(model, *resume);
    for (const auto& [name, param] : model.named_parameters()) {
      const auto* g = resume->find("opt.sq_grad." + name);
      const auto* d = resume->find("opt.sq_delta." + name);
      if (g == nullptr || d == nullptr) break;
      trainer.optimizer().sq_grad.push_back(g->template to_tensor<S>());
      trainer.optimizer().sq_delta.push_back(d->template to_tensor<S>());
    }
    start_epoch = ts.at("epoch").get<int>() + 1;
    trainer.set_steps(ts.at("step").get<std::size_t>());
    result.first_step = trainer.steps();
    result.best_wrr = ts.value("best_wrr", -1.0);
    result.best_epoch = ts.value("best_epoch", 0);
  }

  std::vector<std::size_t> order(data.size());
  for (int epoch = start_epoch; epoch <= plan.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng(mix_seed(plan.seed, static_cast<std::uint64_t>(epoch))).shuffle(order.begin(), order.end());
    EpochRecord record;
    record.epoch = epoch;
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += plan.batch_size) {
      std::vector<const WordSample*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + plan.batch_size); ++i) {
        batch.push_back(&data[order[i]]);
      }
      double loss = trainer.step(batch);
      result.losses.push_back(loss);
      loss_sum += loss;
      ++batches;
    }
    record.mean_loss = loss_sum / static_cast<double>(batches);

    bool evaluate = heldout != nullptr && plan.eval_every > 0 && (epoch % plan.eval_every == 0 || epoch == plan.epochs);
    if (evaluate) {
      auto report = evaluate_model(model, *heldout);
      record.crr = report.crr;
      record.wrr = report.wrr;
      if (report.wrr > result.best_wrr) {
        result.best_wrr = report.wrr;
        result.best_epoch = epoch;
        if (!plan.best_path.empty()) models::make_checkpoint(model).save(plan.best_path);
      }
    } else if (heldout == nullptr) {
      result.best_epoch = epoch;
      if (!plan.best_path.empty()) models::make_checkpoint(model).save(plan.best_path);
    }
    result.epochs.push_back(record);
    if (plan.verbose) {
      std::fprintf(stderr, "epoch %d\tloss %.4f", epoch, record.mean_loss);
      if (record.wrr) std::fprintf(stderr, "\tcrr %.2f\twrr %.2f", *record.crr, *record.wrr);
      std::fprintf(stderr, "\n");
    }
    if (!plan.last_path.empty()) {
      auto ckpt = training_checkpoint(model, trainer.optimizer(), epoch, trainer.steps());
      ckpt.descriptor["train_state"]["best_wrr"] = result.best_wrr;
      ckpt.descriptor["train_state"]["best_epoch"] = result.best_epoch;
      ckpt.save(plan.last_path);
    }
    if (plan.stop_at_wrr && record.wrr && *record.wrr >= *plan.stop_at_wrr) break;
  }
  return result;
}

synth::Dataset script_dataset(const std::string& script, std::size_t train_count, std::size_t test_count,
                              std::size_t lexicon_size, int height, std::uint64_t seed) {
  const auto& atlas = synth::builtin_atlas(script);
  auto lexicon = synth::builtin_lexicon(atlas, lexicon_size, mix_seed(seed, 1));
  auto cfg = synth::RenderConfig::for_height(height);
  cfg.seed = mix_seed(seed, 2);
  if (test_count == 0) return synth::generate_dataset(lexicon, atlas, cfg, train_count);
  double ratio = static_cast<double>(train_count) / static_cast<double>(train_count + test_count);
  return synth::generate_dataset(lexicon, atlas, cfg, train_count + test_count, ratio);
}

const ConditionResult& ExperimentReport::row(const std::string& condition) const {
  for (const auto& r : rows) {
    if (r.condition == condition) return r;
  }
  throw Error(ErrorCode::BadConfig, "no condition " + condition + " in report");
}

std::string ExperimentReport::tsv() const {
  std::string out = "condition\tCRR\tWRR\tepochs_to_threshold\n";
  char line[160];
  for (const auto& r : rows) {
    std::string epochs = r.epochs_to_threshold ? std::to_string(*r.epochs_to_threshold) : "-";
    std::snprintf(line, sizeof line, "%s\t%.2f\t%.2f\t%s\n", r.condition.c_str(), r.crr, r.wrr, epochs.c_str());
    out += line;
  }
  return out;
}

template <typename S>
ExperimentReport transfer_experiment(const TransferSetup& setup, const Checkpoint* pretrained) {
  ExperimentReport report;
  const bool crnn = std::holds_alternative<models::CrnnConfig>(setup.arch);
  const int height = static_cast<int>((crnn ? models::kRecognizerInput : models::kStarNetRawInput)[0]);

  auto score = [&](const std::string& name, const TrainResult& r) {
    ConditionResult row{name, 0, 0, r.epochs_to(setup.threshold)};
    for (const auto& e : r.epochs) {
      if (e.epoch == r.best_epoch && e.wrr) {
        row.crr = *e.crr;
        row.wrr = *e.wrr;
      }
    }
    report.rows.push_back(row);
  };

  auto src_data = script_dataset(setup.src_script, pretrained ? 1 : setup.src_count, setup.test_count,
                                 setup.lexicon_size, height, mix_seed(setup.seed, 10));
  Checkpoint src_ckpt;
  if (pretrained != nullptr) {
    src_ckpt = *pretrained;
    auto src_model = models::load_model<S>(src_ckpt);
    auto eval = evaluate_model(src_model, src_data.test);
    report.rows.push_back({"source", eval.crr, eval.wrr, std::nullopt});
  } else {
    const auto& atlas = synth::builtin_atlas(setup.src_script);
    auto src_model = Recognizer<S>::build(setup.arch, atlas.vocabulary(), mix_seed(setup.seed, 11));
    auto result = train(src_model, src_data.train, &src_data.test, setup.src_plan);
    score("source", result);
    src_ckpt = models::make_checkpoint(src_model);
  }

  auto dst = script_dataset(setup.dst_script, setup.dst_count, setup.test_count, setup.lexicon_size, height,
                            mix_seed(setup.seed, 20));
  const auto dst_vocab = synth::builtin_atlas(setup.dst_script).vocabulary();
  const auto init_seed = mix_seed(setup.seed, 21);

  auto transferred = Recognizer<S>::build(setup.arch, dst_vocab, init_seed);
  models::transfer_weights(src_ckpt, transferred);
  auto start = evaluate_model(transferred, dst.test);
  report.rows.push_back({"transfer@0", start.crr, start.wrr, std::nullopt});

  auto scratch = Recognizer<S>::build(setup.arch, dst_vocab, init_seed);
  score("scratch", train(scratch, dst.train, &dst.test, setup.dst_plan));
  score("transfer", train(transferred, dst.train, &dst.test, setup.dst_plan));
  return report;
}

#define STRLAB_INSTANTIATE(S)                                                                          \
  template void adadelta_step<S>(const std::vector<Tensor<S>*>&, const std::vector<const Tensor<S>*>&, \
                                 AdadeltaState<S>&);                                                   \
  template double clip_grad_norm<S>(std::vector<Variable<S>>&, double);                                \
  template class Trainer<S>;                                                                           \
  template metrics::EvalReport evaluate_model<S>(Recognizer<S>&, const std::vector<WordSample>&,       \
                                                 metrics::CrrPooling);                                 \
  template Checkpoint training_checkpoint<S>(Recognizer<S>&, const AdadeltaState<S>&, int, std::size_t); \
  template TrainResult train<S>(Recognizer<S>&, const std::vector<WordSample>&,                        \
                                const std::vector<WordSample>*, const TrainPlan&, const Checkpoint*);  \
  template ExperimentReport transfer_experiment<S>(const TransferSetup&, const Checkpoint*);

STRLAB_INSTANTIATE(float)
STRLAB_INSTANTIATE(double)

}  // namespace strlab::train
