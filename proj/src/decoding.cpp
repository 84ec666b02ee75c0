#include "srmt/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace srmt {

std::vector<Index> select_lengths(const Eigen::Ref<const Eigen::RowVectorXd>& logits, Index k) {
    const Index n = logits.size();
    if (k < 1 || k > n) throw Error("select_lengths: k must be in [1, " + std::to_string(n) + "]");
    std::vector<Index> order(n);
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return logits(a) > logits(b); });
    std::vector<Index> out;
    for (Index i = 0; i < k; ++i) out.push_back(order[i] + 1);
    return out;
}

Index remask_count(Index length, Index iterations, Index t) {
    if (iterations < 1 || t < 1 || t > iterations) throw Error("remask_count: need 1 <= t <= T");
    return length * (iterations - t) / iterations;
}

RemaskMode parse_remask_mode(std::string_view s) {
    if (s == "count") return RemaskMode::Count;
    if (s == "threshold") return RemaskMode::Threshold;
    throw Error("remask must be count or threshold, got " + std::string(s));
}

std::string_view to_string(RemaskMode m) { return m == RemaskMode::Count ? "count" : "threshold"; }

PackedIds pack_sources(const std::vector<std::vector<TokenId>>& sources) {
    PackedIds p;
    for (const auto& s : sources) {
        std::vector<TokenId> row{special::kLen};
        row.insert(row.end(), s.begin(), s.end());
        p.push(row);
    }
    return p;
}

namespace {

/// Best allowed token at a target slot and its probability. Specials are excluded
/// except <EOS>, which is only allowed in the last slot.
template <typename Row>
std::pair<TokenId, double> pick_token(const Row& logits, bool last_slot) {
    const Index V = logits.size();
    double mx = -std::numeric_limits<double>::infinity();
    for (Index v = 0; v < V; ++v) mx = std::max(mx, static_cast<double>(logits(v)));
    double denom = 0.0;
    for (Index v = 0; v < V; ++v) denom += std::exp(static_cast<double>(logits(v)) - mx);
    TokenId best = -1;
    double best_logit = -std::numeric_limits<double>::infinity();
    for (Index v = 0; v < V; ++v) {
        bool allowed = v >= special::kCount || (v == special::kEos && last_slot);
        if (!allowed) continue;
        auto l = static_cast<double>(logits(v));
        if (l > best_logit) {
            best_logit = l;
            best = static_cast<TokenId>(v);
        }
    }
    return {best, std::exp(best_logit - mx) / denom};
}

std::vector<Index> lowest_confidence(const std::vector<double>& conf, Index n) {
    std::vector<Index> order(conf.size());
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return conf[a] < conf[b]; });
    order.resize(static_cast<std::size_t>(n));
    std::sort(order.begin(), order.end());
    return order;
}

template <typename Scalar>
Matrix<Scalar> gather_rows(const Matrix<Scalar>& m, const Packing& packing, const std::vector<std::size_t>& seqs,
                           Packing& out_packing) {
    Index rows = 0;
    for (auto s : seqs) rows += packing.length(static_cast<Index>(s));
    Matrix<Scalar> out(rows, m.cols());
    out_packing = Packing{};
    Index r = 0;
    for (auto s : seqs) {
        Index len = packing.length(static_cast<Index>(s));
        out.middleRows(r, len) = m.middleRows(packing.begin(static_cast<Index>(s)), len);
        out_packing.push(len);
        r += len;
    }
    return out;
}

}  // namespace

template <typename Scalar>
std::vector<Index> predict_lengths(const Model<Scalar>& model, const std::vector<std::vector<TokenId>>& sources) {
    auto src = pack_sources(sources);
    Matrix<Scalar> enc = encode(model, src);
    Matrix<Scalar> logits = length_logits(model, enc, src.packing);
    std::vector<Index> out;
    for (Index b = 0; b < logits.rows(); ++b) {
        Index arg;
        logits.row(b).maxCoeff(&arg);
        out.push_back(arg + 1);
    }
    return out;
}

template <typename Scalar>
std::vector<DecodeResult> mask_predict(const Model<Scalar>& model, const std::vector<std::vector<TokenId>>& sources,
                                       const DecodeOptions& options) {
    if (options.iterations < 1) throw Error("mask_predict: iterations must be at least 1");
    if (model.params.token_head.size() == 0) throw Error("mask_predict: model has no parameters");
    std::vector<DecodeResult> results(sources.size());
    if (sources.empty()) return results;

    auto src = pack_sources(sources);
    Matrix<Scalar> enc = encode(model, src);
    Matrix<Scalar> len_logits = length_logits(model, enc, src.packing);

    struct Slot {
        std::size_t source;
        std::vector<Index> masked;
    };
    std::vector<Slot> slots;
    for (std::size_t b = 0; b < sources.size(); ++b) {
        Eigen::RowVectorXd row = len_logits.row(static_cast<Index>(b)).template cast<double>();
        auto lengths = select_lengths(row, std::min<Index>(options.length_beam, row.size()));
        for (std::size_t rank = 0; rank < lengths.size(); ++rank) {
            Hypothesis h;
            h.length = lengths[rank];
            h.length_rank = static_cast<Index>(rank);
            h.tokens.assign(static_cast<std::size_t>(h.length), special::kMask);
            h.confidences.assign(static_cast<std::size_t>(h.length), 0.0);
            std::vector<Index> all(static_cast<std::size_t>(h.length));
            std::iota(all.begin(), all.end(), Index{0});
            results[b].candidates.push_back(std::move(h));
            slots.push_back({b, std::move(all)});
        }
    }
    // Slot i belongs to results[slots[i].source].candidates[slot_candidate[i]].
    std::vector<std::size_t> slot_candidate;
    for (const auto& r : results)
        for (std::size_t c = 0; c < r.candidates.size(); ++c) slot_candidate.push_back(c);

    const int T = options.iterations;
    for (int t = 1; t <= T; ++t) {
        std::vector<std::size_t> active;
        for (std::size_t i = 0; i < slots.size(); ++i)
            if (!slots[i].masked.empty()) active.push_back(i);

        if (!active.empty()) {
            PackedIds inputs;
            std::vector<std::size_t> memory_seqs;
            for (auto i : active) {
                const auto& h = results[slots[i].source].candidates[slot_candidate[i]];
                std::vector<TokenId> row = h.tokens;
                for (Index p : slots[i].masked) row[static_cast<std::size_t>(p)] = special::kMask;
                inputs.push(row);
                memory_seqs.push_back(slots[i].source);
            }
            Packing mem_packing;
            Matrix<Scalar> memory = gather_rows(enc, src.packing, memory_seqs, mem_packing);
            Matrix<Scalar> states = decode(model, memory, mem_packing, inputs);
            Matrix<Scalar> logits = token_logits(model, states);

            for (std::size_t a = 0; a < active.size(); ++a) {
                auto i = active[a];
                auto& h = results[slots[i].source].candidates[slot_candidate[i]];
                const Index start = inputs.packing.begin(static_cast<Index>(a));
                for (Index p : slots[i].masked) {
                    auto [tok, prob] = pick_token(logits.row(start + p), p == h.length - 1);
                    h.tokens[static_cast<std::size_t>(p)] = tok;
                    h.confidences[static_cast<std::size_t>(p)] = prob;
                }
                if (options.keep_states)
                    h.states = states.middleRows(start, h.length).template cast<double>();
            }
        }

        for (std::size_t i = 0; i < slots.size(); ++i) {
            auto& h = results[slots[i].source].candidates[slot_candidate[i]];
            IterationTrace tr;
            tr.iteration = t;
            tr.predicted = slots[i].masked;
            tr.tokens = h.tokens;
            tr.confidences = h.confidences;
            if (t < T) {
                if (options.remask == RemaskMode::Count) {
                    tr.remasked = lowest_confidence(h.confidences, remask_count(h.length, T, t));
                } else {
                    for (Index p = 0; p < h.length; ++p)
                        if (h.confidences[static_cast<std::size_t>(p)] < options.remask_threshold)
                            tr.remasked.push_back(p);
                }
            }
            slots[i].masked = tr.remasked;
            h.trace.push_back(std::move(tr));
        }
    }

    for (auto& r : results) {
        for (auto& h : r.candidates) {
            double sum = 0.0;
            for (double conf : h.confidences) sum += std::log(conf);
            h.score = sum / static_cast<double>(h.length);
        }
        double top = -std::numeric_limits<double>::infinity();
        for (const auto& h : r.candidates) top = std::max(top, h.score);
        // Candidates within kScoreTie of the top score are tied; the better-ranked length wins.
        for (std::size_t c = 0; c < r.candidates.size(); ++c)
            if (r.candidates[c].score >= top - kScoreTie) {
                r.best = c;
                break;
            }
        r.output = r.winner().tokens;
        if (!r.output.empty() && r.output.back() == special::kEos) r.output.pop_back();
    }
    return results;
}

template <typename Scalar>
DecodeResult mask_predict(const Model<Scalar>& model, const std::vector<TokenId>& source, const DecodeOptions& options) {
    return mask_predict(model, std::vector<std::vector<TokenId>>{source}, options).front();
}

template <typename Scalar>
std::vector<TokenId> greedy_ar_decode(const Model<Scalar>& model, const std::vector<TokenId>& source, Index max_len) {
    auto src = pack_sources({source});
    Matrix<Scalar> enc = encode(model, src);
    std::vector<TokenId> prefix{special::kSos};
    std::vector<TokenId> out;
    const Index limit = std::min<Index>(max_len, model.config.max_target_len - 1);
    while (static_cast<Index>(out.size()) < limit) {
        PackedIds inputs;
        inputs.push(prefix);
        Matrix<Scalar> states = run_decoder(model, enc, src.packing, inputs, AttentionMask::Causal);
        Matrix<Scalar> logits = token_logits<Scalar>(model, states.bottomRows(1));
        auto [tok, prob] = pick_token(logits.row(0), true);
        if (tok == special::kEos) break;
        out.push_back(tok);
        prefix.push_back(tok);
    }
    return out;
}

template <typename Scalar>
CosineMap cosine_map(const Model<Scalar>& model, const std::vector<TokenId>& source, const DecodeOptions& options) {
    DecodeOptions opts = options;
    opts.keep_states = true;
    auto result = mask_predict(model, source, opts);
    return cosine_similarity_map(result.winner().states);
}

#define SRMT_INSTANTIATE(S)                                                                                    \
    template std::vector<Index> predict_lengths(const Model<S>&, const std::vector<std::vector<TokenId>>&);     \
    template std::vector<DecodeResult> mask_predict(const Model<S>&, const std::vector<std::vector<TokenId>>&, \
                                                    const DecodeOptions&);                                     \
    template DecodeResult mask_predict(const Model<S>&, const std::vector<TokenId>&, const DecodeOptions&);    \
    template std::vector<TokenId> greedy_ar_decode(const Model<S>&, const std::vector<TokenId>&, Index);       \
    template CosineMap cosine_map(const Model<S>&, const std::vector<TokenId>&, const DecodeOptions&);

SRMT_INSTANTIATE(float)
SRMT_INSTANTIATE(double)

#undef SRMT_INSTANTIATE

}  // namespace srmt
