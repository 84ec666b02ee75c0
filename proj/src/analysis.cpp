#include "srmt/analysis.hpp"

#include <algorithm>
#include <cmath>

namespace srmt {

namespace {

using NgramCounts = std::map<std::vector<std::string>, long>;

NgramCounts ngrams(const TokenSeq& s, int n) {
    NgramCounts out;
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[TokenSeq(s.begin() + i, s.begin() + i + n)];
    return out;
}

std::vector<TokenSeq> tokenize_all(const std::vector<std::string>& lines) {
    std::vector<TokenSeq> out;
    out.reserve(lines.size());
    for (const auto& l : lines) out.push_back(split_tokens(l));
    return out;
}

}  // namespace

BleuStats bleu_stats(const std::vector<TokenSeq>& references, const std::vector<TokenSeq>& hypotheses,
                     const BleuOptions& options) {
    if (references.size() != hypotheses.size())
        throw Error("bleu: " + std::to_string(references.size()) + " references but " +
                    std::to_string(hypotheses.size()) + " hypotheses");
    if (references.empty()) throw Error("bleu: no references");
    if (options.max_ngram < 1) throw Error("bleu: max_ngram must be positive");

    std::vector<long> matched(options.max_ngram, 0), total(options.max_ngram, 0);
    BleuStats stats;
    for (std::size_t i = 0; i < references.size(); ++i) {
        stats.reference_length += static_cast<long>(references[i].size());
        stats.hypothesis_length += static_cast<long>(hypotheses[i].size());
        for (int n = 1; n <= options.max_ngram; ++n) {
            auto ref = ngrams(references[i], n);
            for (const auto& [gram, count] : ngrams(hypotheses[i], n)) {
                total[n - 1] += count;
                auto it = ref.find(gram);
                if (it != ref.end()) matched[n - 1] += std::min(count, it->second);
            }
        }
    }

    double log_sum = 0.0;
    bool zero = false;
    for (int n = 1; n <= options.max_ngram; ++n) {
        double p;
        if (options.smooth && n >= 2)
            p = (matched[n - 1] + 1.0) / (total[n - 1] + 1.0);
        else
            p = total[n - 1] > 0 ? static_cast<double>(matched[n - 1]) / total[n - 1] : 0.0;
        stats.precisions.push_back(p);
        if (p <= 0.0)
            zero = true;
        else
            log_sum += std::log(p);
    }
    const double c = stats.hypothesis_length, r = stats.reference_length;
    stats.brevity_penalty = c == 0 ? 0.0 : (c < r ? std::exp(1.0 - r / c) : 1.0);
    stats.score = zero ? 0.0 : 100.0 * stats.brevity_penalty * std::exp(log_sum / options.max_ngram);
    return stats;
}

double bleu(const std::vector<std::string>& references, const std::vector<std::string>& hypotheses,
            const BleuOptions& options) {
    return bleu_stats(tokenize_all(references), tokenize_all(hypotheses), options).score;
}

double repetition_rate(const std::vector<TokenSeq>& hypotheses) {
    if (hypotheses.empty()) throw Error("repetition_rate: no hypotheses");
    long repeats = 0, tokens = 0;
    for (const auto& h : hypotheses) {
        tokens += static_cast<long>(h.size());
        for (std::size_t t = 1; t < h.size(); ++t)
            if (h[t] == h[t - 1]) ++repeats;
    }
    return tokens == 0 ? 0.0 : 100.0 * static_cast<double>(repeats) / static_cast<double>(tokens);
}

double repetition_rate(const std::vector<std::string>& hypotheses) {
    return repetition_rate(tokenize_all(hypotheses));
}

AccuracyStats accuracy(const std::vector<std::vector<TokenId>>& references,
                       const std::vector<std::vector<TokenId>>& hypotheses) {
    if (references.size() != hypotheses.size()) throw Error("accuracy: count mismatch");
    AccuracyStats s;
    s.sentences = references.size();
    if (references.empty()) return s;
    long matches = 0, positions = 0, exact = 0;
    for (std::size_t i = 0; i < references.size(); ++i) {
        const auto& r = references[i];
        const auto& h = hypotheses[i];
        positions += static_cast<long>(std::max(r.size(), h.size()));
        for (std::size_t t = 0; t < std::min(r.size(), h.size()); ++t)
            if (r[t] == h[t]) ++matches;
        if (r == h) ++exact;
    }
    s.token_accuracy = positions == 0 ? 1.0 : static_cast<double>(matches) / positions;
    s.exact_match = static_cast<double>(exact) / static_cast<double>(references.size());
    return s;
}

CosineMap cosine_similarity_map(const Matrix<double>& states) {
    CosineMap out;
    const Index n = states.rows();
    Vector<double> norms = states.rowwise().norm();
    out.similarity = Matrix<double>::Zero(n, n);
    for (Index i = 0; i < n; ++i)
        if (norms(i) == 0.0) out.zero_rows.push_back(i);
    for (Index i = 0; i < n; ++i) {
        if (norms(i) == 0.0) continue;
        out.similarity(i, i) = 1.0;
        for (Index j = i + 1; j < n; ++j) {
            if (norms(j) == 0.0) continue;
            double c = states.row(i).dot(states.row(j)) / (norms(i) * norms(j));
            c = std::clamp(c, -1.0, 1.0);
            out.similarity(i, j) = c;
            out.similarity(j, i) = c;
        }
    }
    return out;
}

BucketReport length_bucket_scores(const std::vector<std::string>& references, const std::vector<std::string>& hypotheses,
                                  const std::vector<long>& edges, const BleuOptions& options) {
    if (references.size() != hypotheses.size()) throw Error("length buckets: count mismatch");
    if (edges.size() < 2) throw Error("length buckets: need at least two edges");
    for (std::size_t i = 1; i < edges.size(); ++i)
        if (edges[i] <= edges[i - 1]) throw Error("length buckets: edges must be strictly increasing");

    auto refs = tokenize_all(references);
    auto hyps = tokenize_all(hypotheses);
    BucketReport report;
    std::vector<std::vector<TokenSeq>> bucket_refs(edges.size() - 1), bucket_hyps(edges.size() - 1);
    for (std::size_t i = 0; i < refs.size(); ++i) {
        auto len = static_cast<long>(refs[i].size());
        auto it = std::upper_bound(edges.begin(), edges.end(), len);
        if (it == edges.begin() || it == edges.end()) {
            ++report.out_of_range;
            continue;
        }
        auto b = static_cast<std::size_t>(it - edges.begin()) - 1;
        bucket_refs[b].push_back(refs[i]);
        bucket_hyps[b].push_back(hyps[i]);
    }
    for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
        BucketScore s;
        s.lower = edges[b];
        s.upper = edges[b + 1];
        s.count = bucket_refs[b].size();
        if (s.count == 0) {
            s.low_confidence = true;
            report.omitted.push_back(s);
            continue;
        }
        s.bleu = bleu_stats(bucket_refs[b], bucket_hyps[b], options).score;
        s.low_confidence = s.count < 5;
        report.buckets.push_back(s);
    }
    return report;
}

std::int64_t flops_estimate(const ModelConfig& c, Index src_len, Index tgt_len, FlopsModule module,
                            const FlopsOptions& options) {
    const std::int64_t d = c.model_dim, f = c.ffn_dim, V = c.vocab_size, N = c.max_target_len, layers = c.layers,
                       heads = c.heads;
    const std::int64_t S = src_len + 1, L = tgt_len;
    auto self_attn = [&](std::int64_t n) { return 2 * (4 * n * d * d + 2 * n * n * d); };
    auto cross_attn = [&](std::int64_t n, std::int64_t m) { return 2 * (2 * n * d * d + 2 * m * d * d + 2 * n * m * d); };
    auto ffn = [&](std::int64_t n) { return 2 * 2 * n * d * f; };
    // Element-wise extras: 5 per softmax entry, 8 per normalized feature, 1 per activation.
    auto softmax = [&](std::int64_t n, std::int64_t m) { return options.include_nonlinear ? 5 * heads * n * m : 0; };
    auto norm = [&](std::int64_t n) { return options.include_nonlinear ? 8 * n * d : 0; };
    auto act = [&](std::int64_t n) { return options.include_nonlinear ? n * f : 0; };

    if (module == FlopsModule::Encoder) {
        std::int64_t per_layer = self_attn(S) + ffn(S) + softmax(S, S) + 2 * norm(S) + act(S);
        return layers * per_layer + norm(S) + 2 * d * N;
    }
    std::int64_t per_layer = self_attn(L) + cross_attn(L, S) + ffn(L) + softmax(L, L) + softmax(L, S) +
                             3 * norm(L) + act(L);
    std::int64_t stack = layers * per_layer + norm(L);
    if (module == FlopsModule::Decoder) return stack + 2 * L * d * V + (options.include_nonlinear ? 5 * L * V : 0);
    return stack + 2 * L * d + (options.include_nonlinear ? 5 * L : 0);
}

double training_step_flops(const ModelConfig& config, const std::vector<Index>& src_lens,
                           const std::vector<Index>& tgt_lens, bool with_review, bool with_ar,
                           const FlopsOptions& options) {
    if (src_lens.size() != tgt_lens.size()) throw Error("training_step_flops: length lists differ");
    double forward = 0.0;
    for (std::size_t i = 0; i < src_lens.size(); ++i) {
        forward += static_cast<double>(flops_estimate(config, src_lens[i], tgt_lens[i], FlopsModule::Encoder, options));
        forward += static_cast<double>(flops_estimate(config, src_lens[i], tgt_lens[i], FlopsModule::Decoder, options));
        if (with_review)
            forward +=
                static_cast<double>(flops_estimate(config, src_lens[i], tgt_lens[i], FlopsModule::Reviewer, options));
        if (with_ar)
            forward +=
                static_cast<double>(flops_estimate(config, src_lens[i], tgt_lens[i], FlopsModule::Decoder, options));
    }
    return 3.0 * forward;
}

RunTarget first_reaching(const RunCurve& run, TargetMetric metric, double target) {
    for (const auto& e : run.evals) {
        double v = metric == TargetMetric::ExactMatch ? e.exact_match : e.token_accuracy;
        if (v >= target) return {true, e.step, e.cumulative_flops};
    }
    return {};
}

FlopsReport training_flops_report(const RunCurve& a, const RunCurve& b, TargetMetric metric, double target) {
    FlopsReport r;
    r.metric = metric;
    r.target = target;
    r.a = first_reaching(a, metric, target);
    r.b = first_reaching(b, metric, target);
    r.flops_per_step_a = a.steps > 0 ? a.total_flops / static_cast<double>(a.steps) : 0.0;
    r.flops_per_step_b = b.steps > 0 ? b.total_flops / static_cast<double>(b.steps) : 0.0;
    if (r.a.reached && r.b.reached && r.a.cumulative_flops > 0.0)
        r.ratio = r.b.cumulative_flops / r.a.cumulative_flops;
    return r;
}

}  // namespace srmt
