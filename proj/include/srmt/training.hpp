#ifndef SRMT_TRAINING_HPP
#define SRMT_TRAINING_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "srmt/corpus.hpp"
#include "srmt/decoding.hpp"
#include "srmt/model.hpp"

namespace srmt {

// ---------------------------------------------------------------------------
// Loss terms. Each returns the mean-reduced loss and, when `grad` is given,
// writes d(loss)/d(logits) into it (same shape as the logits).

/// Negative log-likelihood of the gold token at masked target rows, mean over those rows.
/// `rows` are row indices into `logits`.
template <typename Scalar>
double loss_dec(const Matrix<Scalar>& logits, const std::vector<TokenId>& gold, const std::vector<Index>& rows,
                Matrix<Scalar>* grad = nullptr);

/// Binary cross-entropy of keep-probabilities against labels, probabilities clamped to
/// [1e-7, 1 - 1e-7]; mean over all positions given.
double loss_rev(const std::vector<double>& probs, const std::vector<int>& labels);

/// Same loss computed from review logits.
template <typename Scalar>
double loss_rev_logits(const Vector<Scalar>& logits, const std::vector<int>& labels, Vector<Scalar>* grad = nullptr);

/// Cross-entropy of the length softmax; `true_len[b]` is 1-based.
template <typename Scalar>
double loss_len(const Matrix<Scalar>& logits, const std::vector<Index>& true_len, Matrix<Scalar>* grad = nullptr);

/// Argmax (or sampled) predictions at masked slots, gold elsewhere, and keep labels.
struct ReviewInput {
    PackedIds y_hat;
    std::vector<int> labels;  // 1 iff y_hat == gold, per packed row
};

/// `masked_rows` are packed row indices of y_mask. Argmax ties go to the lowest id.
/// When `sample_rng` is set, masked slots are sampled from the softmax instead.
template <typename Scalar>
ReviewInput build_review_input(const Matrix<Scalar>& logits, const PackedIds& target,
                               const std::vector<Index>& masked_rows, Rng* sample_rng = nullptr);

/// peak * min(step / warmup, sqrt(warmup / step)); 0 at step 0.
double lr_schedule(long step, long warmup, double peak);

struct LossWeights {
    double dec = 1.0;
    double len = 1.0;
    double rev = 1.0;
    double ar = 0.0;  // optional teacher-forced left-to-right term on the causal path
};

struct LossBreakdown {
    double l_dec = 0.0;
    double l_rev = 0.0;
    double l_len = 0.0;
    double l_ar = 0.0;
    double total = 0.0;
    long masked_count = 0;
    long reviewed_count = 0;
};

struct StepOptions {
    LossWeights weights;
    bool review_sampling = false;
    /// Cuts the review loss off from the encoder states and the embedding table.
    bool stop_review_gradient = true;
};

template <typename Scalar>
struct GradientResult {
    LossBreakdown loss;
    Parameters<Scalar> grads;
};

/// Forward and backward over one batch without touching the parameters.
template <typename Scalar>
GradientResult<Scalar> compute_gradients(const Model<Scalar>& model, const Batch& batch, const StepOptions& options,
                                         Rng* rng = nullptr);

/// Loss only; used by finite-difference checks.
template <typename Scalar>
LossBreakdown compute_loss(const Model<Scalar>& model, const Batch& batch, const StepOptions& options);

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
};

template <typename Scalar>
struct AdamState {
    Parameters<Scalar> m, v;
    long updates = 0;
};

template <typename Scalar>
AdamState<Scalar> adam_init(const Parameters<Scalar>& params);

template <typename Scalar>
void adam_update(Parameters<Scalar>& params, const Parameters<Scalar>& grads, AdamState<Scalar>& state, double lr,
                 const AdamOptions& options = {});

// ---------------------------------------------------------------------------
// Training loop

struct TrainOptions {
    std::uint64_t seed = 0;
    long steps = 2000;
    Index batch_tokens = 512;
    long warmup = 500;
    double peak_lr = 5e-4;
    StepOptions step;
    AdamOptions adam;
    bool mask_eos = true;
    /// Packed batches carry no padding, so bucketing buys no compute; off by default.
    bool length_bucketing = false;
    long log_interval = 1;
    long eval_interval = 0;       // 0 disables held-out evaluation
    long checkpoint_interval = 0; // 0 disables periodic checkpoints
    DecodeOptions eval_decode;
    /// Stop once held-out exact match reaches this value (0 disables).
    double stop_at_exact_match = 0.0;
};

template <typename Scalar>
struct TrainState {
    Model<Scalar> model;
    AdamState<Scalar> adam;
    long step = 0;
    long epoch = 0;
    long cursor = 0;  // next batch within the epoch
    double cumulative_flops = 0.0;
    double avg_dec = 0.0, avg_rev = 0.0, avg_len = 0.0, avg_total = 0.0;
};

template <typename Scalar>
TrainState<Scalar> fresh_state(const ModelConfig& config, std::uint64_t seed);

/// One structured log row: `kind` is "step" or "eval".
struct MetricsRow {
    std::string kind;
    long step = 0;
    double lr = 0.0;
    LossBreakdown loss;
    long tokens = 0;
    double cumulative_flops = 0.0;
    double avg_total = 0.0;
    AccuracyStats eval;
    double length_accuracy = 0.0;
};

std::string to_json_line(const MetricsRow& row);

struct TrainHooks {
    std::function<void(const MetricsRow&)> log;
    std::function<void(long step, double tokens_per_sec)> throughput;
};

template <typename Scalar>
using CheckpointHook = std::function<void(const TrainState<Scalar>&)>;

/// Held-out scores of the current model.
template <typename Scalar>
MetricsRow evaluate(const Model<Scalar>& model, const std::vector<SentencePair>& heldout, const DecodeOptions& options);

/// Trains from `state` until `options.steps` updates have been applied.
template <typename Scalar>
void train(TrainState<Scalar>& state, const TrainOptions& options, const std::vector<SentencePair>& train_pairs,
           const std::vector<SentencePair>& heldout, const TrainHooks& hooks = {},
           const CheckpointHook<Scalar>& checkpoint = {});

/// Batches of one epoch; a pure function of (seed, epoch).
std::vector<Batch> epoch_batches(const std::vector<SentencePair>& pairs, const ModelConfig& config,
                                 const TrainOptions& options, long epoch);

}  // namespace srmt

#endif
