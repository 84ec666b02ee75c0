#ifndef SRMT_DECODING_HPP
#define SRMT_DECODING_HPP

#include <string_view>
#include <vector>

#include "srmt/analysis.hpp"
#include "srmt/model.hpp"

namespace srmt {

/// Top-k target lengths (1-based) by logit, descending; ties go to the shorter length.
std::vector<Index> select_lengths(const Eigen::Ref<const Eigen::RowVectorXd>& logits, Index k);

/// Positions masked again after iteration t of T for a hypothesis of length L:
/// floor(L * (T - t) / T).
Index remask_count(Index length, Index iterations, Index t);

enum class RemaskMode { Count, Threshold };
RemaskMode parse_remask_mode(std::string_view s);
std::string_view to_string(RemaskMode m);

struct DecodeOptions {
    int iterations = 4;
    int length_beam = 3;
    RemaskMode remask = RemaskMode::Count;
    double remask_threshold = 0.5;
    /// Keep the final-iteration decoder states of every hypothesis.
    bool keep_states = false;
};

/// One refinement round of one hypothesis.
struct IterationTrace {
    int iteration = 0;                // 1-based
    std::vector<Index> predicted;     // positions re-predicted in this round
    std::vector<TokenId> tokens;      // after the round
    std::vector<double> confidences;  // after the round
    std::vector<Index> remasked;      // positions masked for the next round
};

struct Hypothesis {
    Index length = 0;       // includes the final <EOS> slot
    Index length_rank = 0;  // rank of `length` among the candidates
    std::vector<TokenId> tokens;
    std::vector<double> confidences;
    double score = 0.0;  // mean log confidence
    std::vector<IterationTrace> trace;
    Matrix<double> states;  // final decoder states when requested
};

struct DecodeResult {
    std::vector<TokenId> output;  // winning tokens without the trailing <EOS>
    std::size_t best = 0;
    std::vector<Hypothesis> candidates;

    const Hypothesis& winner() const { return candidates.at(best); }
};

/// Mean log-confidences closer than this count as equal when picking the winner.
inline constexpr double kScoreTie = 1e-6;

/// Mask-Predict over a batch of sources (token ids without specials). The winner is the
/// candidate with the highest mean log-confidence; ties go to the better-ranked length.
template <typename Scalar>
std::vector<DecodeResult> mask_predict(const Model<Scalar>& model, const std::vector<std::vector<TokenId>>& sources,
                                       const DecodeOptions& options);

template <typename Scalar>
DecodeResult mask_predict(const Model<Scalar>& model, const std::vector<TokenId>& source, const DecodeOptions& options);

/// Argmax length for each source.
template <typename Scalar>
std::vector<Index> predict_lengths(const Model<Scalar>& model, const std::vector<std::vector<TokenId>>& sources);

/// Left-to-right greedy decoding through the causal path with the token head.
template <typename Scalar>
std::vector<TokenId> greedy_ar_decode(const Model<Scalar>& model, const std::vector<TokenId>& source, Index max_len);

/// Cosine similarity between the winning hypothesis' final decoder states.
template <typename Scalar>
CosineMap cosine_map(const Model<Scalar>& model, const std::vector<TokenId>& source, const DecodeOptions& options);

/// PackedIds of sources with <LEN> prepended.
PackedIds pack_sources(const std::vector<std::vector<TokenId>>& sources);

}  // namespace srmt

#endif
