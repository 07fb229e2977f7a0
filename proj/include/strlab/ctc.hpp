#pragma once

#include <string>
#include <vector>

#include "strlab/autodiff.hpp"
#include "strlab/textcodec.hpp"

// Connectionist temporal classification over per-frame log-probabilities
// laid out as [T, N, C+1] with class 0 the blank.
namespace strlab::ctc {

using text::LabelSeq;
using text::Vocabulary;

inline constexpr int kBlank = 0;

/// Shortest path that collapses to `ids`: one frame per label plus a blank
/// between each pair of equal neighbours.
Index min_frames(const std::vector<int>& ids);

/// Mean over the batch of -log p(target | log_probs), from the log-space
/// alpha recursion over the blank-interleaved target. Differentiable in
/// log_probs. Throws TargetTooLong when min_frames(target) > T and
/// BlankInTarget when a target contains class 0.
template <typename S>
Variable<S> ctc_loss(const Variable<S>& log_probs, const std::vector<LabelSeq>& targets);

/// Per-item negative log-likelihoods without building a graph.
template <typename S>
std::vector<double> ctc_neg_log_likelihood(const Tensor<S>& log_probs,
                                           const std::vector<LabelSeq>& targets);

/// Frame-wise argmax (first maximum on ties), repeats collapsed, blanks
/// dropped. One id sequence per batch item.
template <typename S>
std::vector<std::vector<int>> greedy_ids(const Tensor<S>& log_probs);

/// greedy_ids mapped through the vocabulary. Throws VocabMismatch unless the
/// class axis has exactly vocab.classes() entries.
template <typename S>
std::vector<std::string> greedy_decode(const Tensor<S>& log_probs, const Vocabulary& vocab);

/// Removes repeats, then blanks, from a frame-level path.
std::vector<int> collapse_path(const std::vector<int>& path);

/// Exact -log p(target) by enumerating all (C+1)^T paths of one item's
/// log-probabilities [T, C+1]. Guarded to T <= 8 and C <= 4 (TooLarge).
/// Returns +infinity when no path collapses to the target.
double brute_force_likelihood(const Tensor<double>& log_probs, const std::vector<int>& target);

}  // namespace strlab::ctc
