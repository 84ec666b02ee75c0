#ifndef SRMT_ANALYSIS_HPP
#define SRMT_ANALYSIS_HPP

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "srmt/model.hpp"

namespace srmt {

// ---------------------------------------------------------------------------
// BLEU

struct BleuOptions {
    int max_ngram = 4;
    /// Add-one smoothing of the precisions for orders >= 2.
    bool smooth = false;
};

struct BleuStats {
    double score = 0.0;  // [0, 100]
    std::vector<double> precisions;
    double brevity_penalty = 0.0;
    long hypothesis_length = 0;
    long reference_length = 0;
};

using TokenSeq = std::vector<std::string>;

/// Corpus BLEU over pre-tokenized sentences (one reference per hypothesis).
BleuStats bleu_stats(const std::vector<TokenSeq>& references, const std::vector<TokenSeq>& hypotheses,
                     const BleuOptions& options = {});
double bleu(const std::vector<std::string>& references, const std::vector<std::string>& hypotheses,
            const BleuOptions& options = {});

// ---------------------------------------------------------------------------
// Repetition, accuracy

/// 100 * (tokens equal to their predecessor) / (all tokens).
double repetition_rate(const std::vector<TokenSeq>& hypotheses);
double repetition_rate(const std::vector<std::string>& hypotheses);

struct AccuracyStats {
    double token_accuracy = 0.0;  // matches / sum(max(|ref|, |hyp|))
    double exact_match = 0.0;
    std::size_t sentences = 0;
};

AccuracyStats accuracy(const std::vector<std::vector<TokenId>>& references,
                       const std::vector<std::vector<TokenId>>& hypotheses);

// ---------------------------------------------------------------------------
// Cosine maps

struct CosineMap {
    Matrix<double> similarity;
    std::vector<Index> zero_rows;  // rows with zero norm; their entries are 0
};

/// Pairwise cosine similarity between the rows of `states`.
CosineMap cosine_similarity_map(const Matrix<double>& states);

// ---------------------------------------------------------------------------
// Length buckets

struct BucketScore {
    long lower = 0;  // inclusive
    long upper = 0;  // exclusive
    std::size_t count = 0;
    double bleu = 0.0;
    bool low_confidence = false;  // fewer than 5 pairs
};

struct BucketReport {
    std::vector<BucketScore> buckets;  // non-empty buckets only
    std::vector<BucketScore> omitted;  // empty buckets
    std::size_t out_of_range = 0;
};

/// Partitions pairs by reference length into [edges[i], edges[i+1]).
BucketReport length_bucket_scores(const std::vector<std::string>& references, const std::vector<std::string>& hypotheses,
                                  const std::vector<long>& edges, const BleuOptions& options = {});

// ---------------------------------------------------------------------------
// FLOPs

enum class FlopsModule { Encoder, Decoder, Reviewer };

struct FlopsOptions {
    /// Adds softmax, layer-norm and activation element operations.
    bool include_nonlinear = false;
};

/// Forward FLOPs of one module for one sentence; one multiply-accumulate counts 2.
/// `src_len` excludes <LEN>; `tgt_len` includes <EOS>.
std::int64_t flops_estimate(const ModelConfig& config, Index src_len, Index tgt_len, FlopsModule module,
                            const FlopsOptions& options = {});

/// Training FLOPs of one step (forward + backward = 3x forward) for a batch with the given
/// row lengths. The reviewer is counted only when `with_review` is set.
double training_step_flops(const ModelConfig& config, const std::vector<Index>& src_lens,
                           const std::vector<Index>& tgt_lens, bool with_review, bool with_ar = false,
                           const FlopsOptions& options = {});

/// One held-out evaluation taken from a metrics log.
struct EvalPoint {
    long step = 0;
    double cumulative_flops = 0.0;
    double token_accuracy = 0.0;
    double exact_match = 0.0;
    double length_accuracy = 0.0;
};

struct RunCurve {
    std::string name;
    std::vector<EvalPoint> evals;
    long steps = 0;
    double total_flops = 0.0;
};

enum class TargetMetric { TokenAccuracy, ExactMatch };

struct RunTarget {
    bool reached = false;
    long step = 0;
    double cumulative_flops = 0.0;
};

struct FlopsReport {
    TargetMetric metric = TargetMetric::ExactMatch;
    double target = 0.0;
    RunTarget a, b;
    double flops_per_step_a = 0.0, flops_per_step_b = 0.0;
    /// flops(b) / flops(a); present only when both runs reach the target.
    std::optional<double> ratio;
};

RunTarget first_reaching(const RunCurve& run, TargetMetric metric, double target);
FlopsReport training_flops_report(const RunCurve& a, const RunCurve& b, TargetMetric metric, double target);

}  // namespace srmt

#endif
