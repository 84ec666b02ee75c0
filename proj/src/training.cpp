#include "srmt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <sstream>

#include "json.hpp"

namespace srmt {

template <typename Scalar>
double loss_dec(const Matrix<Scalar>& logits, const std::vector<TokenId>& gold, const std::vector<Index>& rows,
                Matrix<Scalar>* grad) {
    if (rows.empty()) throw Error("loss_dec: no masked positions");
    if (grad) *grad = Matrix<Scalar>::Zero(logits.rows(), logits.cols());
    const double n = static_cast<double>(rows.size());
    double total = 0.0;
    for (Index r : rows) {
        const auto row = logits.row(r).template cast<double>();
        double mx = row.maxCoeff();
        double lse = mx + std::log((row.array() - mx).exp().sum());
        TokenId y = gold[static_cast<std::size_t>(r)];
        total += lse - row(y);
        if (grad) {
            grad->row(r) = ((row.array() - lse).exp() / n).matrix().template cast<Scalar>();
            (*grad)(r, y) -= static_cast<Scalar>(1.0 / n);
        }
    }
    return total / n;
}

namespace {
constexpr double kProbClamp = 1e-7;
}

double loss_rev(const std::vector<double>& probs, const std::vector<int>& labels) {
    if (probs.size() != labels.size()) throw Error("loss_rev: length mismatch");
    if (probs.empty()) throw Error("loss_rev: no positions");
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        double p = std::clamp(probs[i], kProbClamp, 1.0 - kProbClamp);
        total -= labels[i] ? std::log(p) : std::log(1.0 - p);
    }
    return total / static_cast<double>(probs.size());
}

template <typename Scalar>
double loss_rev_logits(const Vector<Scalar>& logits, const std::vector<int>& labels, Vector<Scalar>* grad) {
    if (static_cast<std::size_t>(logits.size()) != labels.size()) throw Error("loss_rev: length mismatch");
    if (labels.empty()) throw Error("loss_rev: no positions");
    const double n = static_cast<double>(labels.size());
    if (grad) *grad = Vector<Scalar>::Zero(logits.size());
    double total = 0.0;
    for (Index i = 0; i < logits.size(); ++i) {
        double z = static_cast<double>(logits(i));
        double p = 1.0 / (1.0 + std::exp(-z));
        bool clamped = p < kProbClamp || p > 1.0 - kProbClamp;
        double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
        bool keep = labels[static_cast<std::size_t>(i)] != 0;
        if (!clamped) {
            // -log(sigmoid(z)) and -log(1 - sigmoid(z)) in overflow-safe form.
            total += keep ? std::log1p(std::exp(-std::abs(z))) + std::max(-z, 0.0)
                          : std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0);
            if (grad) (*grad)(i) = static_cast<Scalar>((p - (keep ? 1.0 : 0.0)) / n);
        } else {
            total -= keep ? std::log(pc) : std::log(1.0 - pc);
        }
    }
    return total / n;
}

template <typename Scalar>
double loss_len(const Matrix<Scalar>& logits, const std::vector<Index>& true_len, Matrix<Scalar>* grad) {
    if (static_cast<Index>(true_len.size()) != logits.rows()) throw Error("loss_len: row count mismatch");
    std::vector<Index> rows(true_len.size());
    std::vector<TokenId> gold(true_len.size());
    for (std::size_t b = 0; b < true_len.size(); ++b) {
        if (true_len[b] < 1 || true_len[b] > logits.cols())
            throw Error("loss_len: length " + std::to_string(true_len[b]) + " outside [1, N]");
        rows[b] = static_cast<Index>(b);
        gold[b] = static_cast<TokenId>(true_len[b] - 1);
    }
    return loss_dec(logits, gold, rows, grad);
}

template <typename Scalar>
ReviewInput build_review_input(const Matrix<Scalar>& logits, const PackedIds& target,
                               const std::vector<Index>& masked_rows, Rng* sample_rng) {
    ReviewInput out;
    out.y_hat = target;
    for (Index r : masked_rows) {
        TokenId pick = 0;
        if (sample_rng) {
            Eigen::RowVectorXd p = softmax_rows<double>(logits.row(r).template cast<double>()).row(0);
            std::discrete_distribution<TokenId> dist(p.data(), p.data() + p.size());
            pick = dist(*sample_rng);
        } else {
            for (Index v = 1; v < logits.cols(); ++v)
                if (logits(r, v) > logits(r, pick)) pick = static_cast<TokenId>(v);
        }
        out.y_hat.ids[static_cast<std::size_t>(r)] = pick;
    }
    out.labels.resize(target.ids.size());
    for (std::size_t i = 0; i < target.ids.size(); ++i) out.labels[i] = out.y_hat.ids[i] == target.ids[i] ? 1 : 0;
    return out;
}

double lr_schedule(long step, long warmup, double peak) {
    if (warmup < 1) throw Error("lr_schedule: warmup must be at least 1");
    if (step <= 0) return 0.0;
    double s = static_cast<double>(step), w = static_cast<double>(warmup);
    return peak * std::min(s / w, std::sqrt(w / s));
}

namespace {

template <typename Scalar>
struct Forward {
    PackedIds src, tgt, y_in;
    std::vector<Index> masked_rows;
    StackCache<Scalar> enc_cache, dec_cache, rev_cache, ar_cache;
    Matrix<Scalar> enc, dec, rev, ar;
    Matrix<Scalar> len_logits, dec_logits, ar_logits;
    Vector<Scalar> rev_logits;
    Matrix<Scalar> d_len, d_dec, d_ar;
    Vector<Scalar> d_rev;
    LossBreakdown loss;
};

template <typename Scalar>
Forward<Scalar> forward_losses(const Model<Scalar>& model, const Batch& batch, const StepOptions& o, Rng* rng,
                               bool keep_caches) {
    Forward<Scalar> f;
    const auto& w = o.weights;
    Dropout drop{model.config.dropout, rng};
    f.src = batch.packed_source();
    f.tgt = batch.packed_target();
    for (Index b = 0; b < batch.rows(); ++b)
        for (Index p : batch.mask_positions[static_cast<std::size_t>(b)]) f.masked_rows.push_back(f.tgt.packing.begin(b) + p);
    f.y_in = f.tgt;
    for (Index r : f.masked_rows) f.y_in.ids[static_cast<std::size_t>(r)] = special::kMask;

    f.enc = encode(model, f.src, keep_caches ? &f.enc_cache : nullptr, drop);
    f.len_logits = length_logits(model, f.enc, f.src.packing);
    f.loss.l_len = loss_len(f.len_logits, batch.tgt_len, keep_caches ? &f.d_len : nullptr);

    f.dec = decode(model, f.enc, f.src.packing, f.y_in, keep_caches ? &f.dec_cache : nullptr, drop);
    f.dec_logits = token_logits(model, f.dec);
    f.loss.l_dec = loss_dec(f.dec_logits, f.tgt.ids, f.masked_rows, keep_caches ? &f.d_dec : nullptr);
    f.loss.masked_count = static_cast<long>(f.masked_rows.size());

    if (w.rev != 0.0) {
        auto ri = build_review_input(f.dec_logits, f.tgt, f.masked_rows, o.review_sampling ? rng : nullptr);
        f.rev = review(model, f.enc, f.src.packing, ri.y_hat, keep_caches ? &f.rev_cache : nullptr, drop);
        f.rev_logits = review_logits(model, f.rev);
        f.loss.l_rev = loss_rev_logits(f.rev_logits, ri.labels, keep_caches ? &f.d_rev : nullptr);
        f.loss.reviewed_count = static_cast<long>(ri.labels.size());
    }
    if (w.ar != 0.0) {
        auto inputs = review_inputs(f.tgt, ReviewMaskMode::Shifted);
        f.ar = run_decoder(model, f.enc, f.src.packing, inputs, AttentionMask::Causal,
                           keep_caches ? &f.ar_cache : nullptr, drop);
        f.ar_logits = token_logits(model, f.ar);
        std::vector<Index> all(f.tgt.ids.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<Index>(i);
        f.loss.l_ar = loss_dec(f.ar_logits, f.tgt.ids, all, keep_caches ? &f.d_ar : nullptr);
    }
    f.loss.total = w.dec * f.loss.l_dec + w.len * f.loss.l_len + w.rev * f.loss.l_rev + w.ar * f.loss.l_ar;
    return f;
}

template <typename Scalar>
void add_token_head_grad(const Model<Scalar>& model, const Matrix<Scalar>& states, Matrix<Scalar> d_logits,
                         double weight, const StackCache<Scalar>& cache, Matrix<Scalar>& d_enc,
                         Parameters<Scalar>& grads) {
    d_logits *= static_cast<Scalar>(weight);
    grads.token_head.noalias() += states.transpose() * d_logits;
    Matrix<Scalar> d_states = d_logits * model.params.token_head.transpose();
    d_enc += decoder_backward(model, cache, d_states, grads, true);
}

}  // namespace

template <typename Scalar>
LossBreakdown compute_loss(const Model<Scalar>& model, const Batch& batch, const StepOptions& options) {
    return forward_losses(model, batch, options, nullptr, false).loss;
}

template <typename Scalar>
GradientResult<Scalar> compute_gradients(const Model<Scalar>& model, const Batch& batch, const StepOptions& o,
                                         Rng* rng) {
    auto f = forward_losses(model, batch, o, rng, true);
    const auto& w = o.weights;
    GradientResult<Scalar> out{f.loss, zeros_like(model.params)};
    auto& grads = out.grads;
    Matrix<Scalar> d_enc = Matrix<Scalar>::Zero(f.enc.rows(), f.enc.cols());
    bool encoder_touched = false;

    if (w.rev != 0.0) {
        Vector<Scalar> dz = f.d_rev * static_cast<Scalar>(w.rev);
        grads.review_head.col(0).noalias() += f.rev.transpose() * dz;
        Matrix<Scalar> d_states = dz * model.params.review_head.col(0).transpose();
        Matrix<Scalar> d_mem = decoder_backward(model, f.rev_cache, d_states, grads, !o.stop_review_gradient);
        if (!o.stop_review_gradient) {
            d_enc += d_mem;
            encoder_touched = true;
        }
    }
    if (w.dec != 0.0) {
        add_token_head_grad(model, f.dec, f.d_dec, w.dec, f.dec_cache, d_enc, grads);
        encoder_touched = true;
    }
    if (w.ar != 0.0) {
        add_token_head_grad(model, f.ar, f.d_ar, w.ar, f.ar_cache, d_enc, grads);
        encoder_touched = true;
    }
    if (w.len != 0.0) {
        Matrix<Scalar> dl = f.d_len * static_cast<Scalar>(w.len);
        Matrix<Scalar> first(f.src.packing.sequences(), f.enc.cols());
        for (Index b = 0; b < first.rows(); ++b) first.row(b) = f.enc.row(f.src.packing.begin(b));
        grads.length_head.noalias() += first.transpose() * dl;
        Matrix<Scalar> d_first = dl * model.params.length_head.transpose();
        for (Index b = 0; b < first.rows(); ++b) d_enc.row(f.src.packing.begin(b)) += d_first.row(b);
        encoder_touched = true;
    }
    if (encoder_touched) encode_backward(model, f.enc_cache, d_enc, grads);
    return out;
}

template <typename Scalar>
AdamState<Scalar> adam_init(const Parameters<Scalar>& params) {
    return {zeros_like(params), zeros_like(params), 0};
}

template <typename Scalar>
void adam_update(Parameters<Scalar>& params, const Parameters<Scalar>& grads, AdamState<Scalar>& state, double lr,
                 const AdamOptions& o) {
    ++state.updates;
    auto p = named_tensors(params);
    auto g = named_tensors(grads);
    auto m = named_tensors(state.m);
    auto v = named_tensors(state.v);
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.updates));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.updates));
    const auto b1 = static_cast<Scalar>(o.beta1), b2 = static_cast<Scalar>(o.beta2);
    const auto step = static_cast<Scalar>(lr / c1), inv_c2 = static_cast<Scalar>(1.0 / c2),
               eps = static_cast<Scalar>(o.eps);
    for (std::size_t i = 0; i < p.size(); ++i) {
        auto& mi = *m[i].second;
        auto& vi = *v[i].second;
        const auto& gi = *g[i].second;
        mi = b1 * mi + (Scalar(1) - b1) * gi;
        vi = b2 * vi + (Scalar(1) - b2) * gi.cwiseProduct(gi);
        p[i].second->array() -= step * mi.array() / ((vi.array() * inv_c2).sqrt() + eps);
    }
}

template <typename Scalar>
TrainState<Scalar> fresh_state(const ModelConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    TrainState<Scalar> s;
    s.model = Model<Scalar>::initialize(config, rng);
    s.adam = adam_init(s.model.params);
    return s;
}

std::string to_json_line(const MetricsRow& row) {
    nlohmann::ordered_json j;
    j["kind"] = row.kind;
    j["step"] = row.step;
    if (row.kind == "eval") {
        j["flops"] = row.cumulative_flops;
        j["token_accuracy"] = row.eval.token_accuracy;
        j["exact_match"] = row.eval.exact_match;
        j["length_accuracy"] = row.length_accuracy;
        j["sentences"] = row.eval.sentences;
    } else {
        j["lr"] = row.lr;
        j["l_dec"] = row.loss.l_dec;
        j["l_rev"] = row.loss.l_rev;
        j["l_len"] = row.loss.l_len;
        j["l_ar"] = row.loss.l_ar;
        j["total"] = row.loss.total;
        j["masked"] = row.loss.masked_count;
        j["reviewed"] = row.loss.reviewed_count;
        j["tokens"] = row.tokens;
        j["flops"] = row.cumulative_flops;
        j["avg_total"] = row.avg_total;
    }
    return j.dump();
}

template <typename Scalar>
MetricsRow evaluate(const Model<Scalar>& model, const std::vector<SentencePair>& heldout, const DecodeOptions& options) {
    MetricsRow row;
    row.kind = "eval";
    if (heldout.empty()) return row;
    std::vector<std::vector<TokenId>> refs, hyps;
    long length_hits = 0;
    constexpr std::size_t kChunk = 256;
    for (std::size_t start = 0; start < heldout.size(); start += kChunk) {
        std::vector<std::vector<TokenId>> sources;
        for (std::size_t i = start; i < std::min(heldout.size(), start + kChunk); ++i) {
            sources.push_back(heldout[i].source);
            refs.push_back(heldout[i].target);
        }
        auto lengths = predict_lengths(model, sources);
        for (std::size_t i = 0; i < sources.size(); ++i)
            if (lengths[i] == static_cast<Index>(heldout[start + i].target.size()) + 1) ++length_hits;
        for (auto& r : mask_predict(model, sources, options)) hyps.push_back(std::move(r.output));
    }
    row.eval = accuracy(refs, hyps);
    row.length_accuracy = static_cast<double>(length_hits) / static_cast<double>(heldout.size());
    return row;
}

std::vector<Batch> epoch_batches(const std::vector<SentencePair>& pairs, const ModelConfig& config,
                                 const TrainOptions& options, long epoch) {
    std::seed_seq seq{static_cast<std::uint32_t>(options.seed), static_cast<std::uint32_t>(options.seed >> 32),
                      static_cast<std::uint32_t>(epoch), 0xba7cu};
    Rng rng(seq);
    BatchingOptions b;
    b.batch_tokens = options.batch_tokens;
    b.max_source_len = config.max_source_len;
    b.max_target_len = config.max_target_len;
    b.mask_eos = options.mask_eos;
    b.length_bucketing = options.length_bucketing;
    auto stream = make_batches(pairs, b, rng);
    if (stream.skipped > 0 && epoch == 0)
        std::cerr << "warning: skipped " << stream.skipped << " pairs longer than the configured maximum\n";
    return std::move(stream.batches);
}

namespace {

std::uint64_t batch_hash(const Batch& b) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](std::int64_t v) {
        h ^= static_cast<std::uint64_t>(v);
        h *= 1099511628211ull;
    };
    for (Index i = 0; i < b.src.size(); ++i) mix(b.src.data()[i]);
    for (Index i = 0; i < b.tgt.size(); ++i) mix(b.tgt.data()[i]);
    for (const auto& m : b.mask_positions)
        for (Index p : m) mix(p);
    return h;
}

}  // namespace

template <typename Scalar>
void train(TrainState<Scalar>& state, const TrainOptions& options, const std::vector<SentencePair>& train_pairs,
           const std::vector<SentencePair>& heldout, const TrainHooks& hooks, const CheckpointHook<Scalar>& checkpoint) {
    const auto& cfg = state.model.config;
    std::vector<Batch> batches;
    long loaded_epoch = -1;
    const bool with_review = options.step.weights.rev != 0.0;
    const bool with_ar = options.step.weights.ar != 0.0;

    while (state.step < options.steps) {
        if (loaded_epoch != state.epoch) {
            batches = epoch_batches(train_pairs, cfg, options, state.epoch);
            loaded_epoch = state.epoch;
            if (batches.empty()) throw Error("train: no usable training pairs");
        }
        if (state.cursor >= static_cast<long>(batches.size())) {
            ++state.epoch;
            state.cursor = 0;
            continue;
        }
        const Batch& batch = batches[static_cast<std::size_t>(state.cursor)];
        std::seed_seq seq{static_cast<std::uint32_t>(options.seed), static_cast<std::uint32_t>(state.step),
                          static_cast<std::uint32_t>(state.step >> 32), 0xd20bu};
        Rng rng(seq);

        auto t0 = std::chrono::steady_clock::now();
        auto result = compute_gradients(state.model, batch, options.step, &rng);
        const auto& loss = result.loss;
        if (!std::isfinite(loss.total)) {
            std::ostringstream msg;
            msg << "non-finite loss at step " << state.step + 1 << " (batch hash " << std::hex << batch_hash(batch)
                << std::dec << "): l_dec=" << loss.l_dec << " l_len=" << loss.l_len << " l_rev=" << loss.l_rev
                << " l_ar=" << loss.l_ar;
            throw Error(msg.str());
        }
        double lr = lr_schedule(state.step + 1, options.warmup, options.peak_lr);
        adam_update(state.model.params, result.grads, state.adam, lr, options.adam);
        ++state.step;
        if (++state.cursor >= static_cast<long>(batches.size())) {
            ++state.epoch;
            state.cursor = 0;
        }

        std::vector<Index> src_lens, tgt_lens;
        for (Index r = 0; r < batch.rows(); ++r) {
            src_lens.push_back(batch.src_len[static_cast<std::size_t>(r)] - 1);
            tgt_lens.push_back(batch.tgt_len[static_cast<std::size_t>(r)]);
        }
        state.cumulative_flops += training_step_flops(cfg, src_lens, tgt_lens, with_review, with_ar);
        if (state.step == 1) {
            state.avg_dec = loss.l_dec;
            state.avg_rev = loss.l_rev;
            state.avg_len = loss.l_len;
            state.avg_total = loss.total;
        } else {
            constexpr double a = 0.01;
            state.avg_dec += a * (loss.l_dec - state.avg_dec);
            state.avg_rev += a * (loss.l_rev - state.avg_rev);
            state.avg_len += a * (loss.l_len - state.avg_len);
            state.avg_total += a * (loss.total - state.avg_total);
        }
        if (hooks.throughput) {
            double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            hooks.throughput(state.step, secs > 0 ? static_cast<double>(batch.target_tokens()) / secs : 0.0);
        }
        if (hooks.log && options.log_interval > 0 && state.step % options.log_interval == 0) {
            MetricsRow row;
            row.kind = "step";
            row.step = state.step;
            row.lr = lr;
            row.loss = loss;
            row.tokens = batch.target_tokens();
            row.cumulative_flops = state.cumulative_flops;
            row.avg_total = state.avg_total;
            hooks.log(row);
        }
        bool stop = false;
        if (options.eval_interval > 0 && state.step % options.eval_interval == 0 && !heldout.empty()) {
            MetricsRow row = evaluate(state.model, heldout, options.eval_decode);
            row.step = state.step;
            row.cumulative_flops = state.cumulative_flops;
            if (hooks.log) hooks.log(row);
            stop = options.stop_at_exact_match > 0.0 && row.eval.exact_match >= options.stop_at_exact_match;
        }
        if (checkpoint && options.checkpoint_interval > 0 && state.step % options.checkpoint_interval == 0)
            checkpoint(state);
        if (stop) break;
    }
}

#define SRMT_INSTANTIATE(S)                                                                                       \
    template double loss_dec(const Matrix<S>&, const std::vector<TokenId>&, const std::vector<Index>&, Matrix<S>*); \
    template double loss_rev_logits(const Vector<S>&, const std::vector<int>&, Vector<S>*);                       \
    template double loss_len(const Matrix<S>&, const std::vector<Index>&, Matrix<S>*);                            \
    template ReviewInput build_review_input(const Matrix<S>&, const PackedIds&, const std::vector<Index>&, Rng*); \
    template GradientResult<S> compute_gradients(const Model<S>&, const Batch&, const StepOptions&, Rng*);        \
    template LossBreakdown compute_loss(const Model<S>&, const Batch&, const StepOptions&);                       \
    template AdamState<S> adam_init(const Parameters<S>&);                                                        \
    template void adam_update(Parameters<S>&, const Parameters<S>&, AdamState<S>&, double, const AdamOptions&);   \
    template TrainState<S> fresh_state(const ModelConfig&, std::uint64_t);                                        \
    template MetricsRow evaluate(const Model<S>&, const std::vector<SentencePair>&, const DecodeOptions&);        \
    template void train(TrainState<S>&, const TrainOptions&, const std::vector<SentencePair>&,                   \
                        const std::vector<SentencePair>&, const TrainHooks&, const CheckpointHook<S>&);

SRMT_INSTANTIATE(float)
SRMT_INSTANTIATE(double)

#undef SRMT_INSTANTIATE

}  // namespace srmt
