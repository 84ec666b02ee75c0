#include "srmt/model.hpp"

#include <cmath>

namespace srmt {

ReviewMaskMode parse_review_mask_mode(std::string_view s) {
    if (s == "inclusive") return ReviewMaskMode::Inclusive;
    if (s == "shifted") return ReviewMaskMode::Shifted;
    throw Error("review_mask_mode must be inclusive or shifted, got " + std::string(s));
}

std::string_view to_string(ReviewMaskMode m) { return m == ReviewMaskMode::Inclusive ? "inclusive" : "shifted"; }

InitMode parse_init_mode(std::string_view s) {
    if (s == "normal") return InitMode::Normal;
    if (s == "uniform") return InitMode::Uniform;
    throw Error("init must be normal or uniform, got " + std::string(s));
}

std::string_view to_string(InitMode m) { return m == InitMode::Normal ? "normal" : "uniform"; }

void ModelConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) { throw Error(field + ": " + why); };
    if (layers < 1) fail("layers", "must be at least 1");
    if (model_dim < 1) fail("model_dim", "must be positive");
    if (ffn_dim < 1) fail("ffn_dim", "must be positive");
    if (heads < 1) fail("heads", "must be positive");
    if (model_dim % heads != 0) fail("model_dim", "must be divisible by heads");
    if (vocab_size <= special::kCount) fail("vocab_size", "must exceed the reserved tokens");
    if (max_target_len < 1) fail("max_target_len", "must be positive");
    if (max_source_len < 1) fail("max_source_len", "must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout", "must be in [0, 1)");
    if (!(init_scale > 0.0)) fail("init_scale", "must be positive");
}

TensorGroup tensor_group(std::string_view name) {
    if (name.starts_with("decoder.")) return TensorGroup::SharedDecoder;
    if (name == "token_head") return TensorGroup::TokenHead;
    if (name == "review_head") return TensorGroup::ReviewHead;
    if (name == "length_head") return TensorGroup::LengthHead;
    return TensorGroup::Encoder;
}

namespace {

template <typename Scalar, typename Ptr, typename P>
std::vector<std::pair<std::string, Ptr>> collect(P& p) {
    std::vector<std::pair<std::string, Ptr>> out;
    auto add = [&](std::string name, auto& m) { out.emplace_back(std::move(name), &m); };
    auto norm = [&](const std::string& n, auto& ln) {
        add(n + ".gamma", ln.gamma);
        add(n + ".beta", ln.beta);
    };
    auto lin = [&](const std::string& n, auto& l) {
        add(n + ".weight", l.weight);
        add(n + ".bias", l.bias);
    };
    auto attn = [&](const std::string& n, auto& a) {
        lin(n + ".query", a.query);
        lin(n + ".key", a.key);
        lin(n + ".value", a.value);
        lin(n + ".output", a.output);
    };
    add("embedding", p.embedding);
    for (std::size_t i = 0; i < p.encoder.size(); ++i) {
        auto& l = p.encoder[i];
        std::string pre = "encoder." + std::to_string(i);
        norm(pre + ".self_attn_norm", l.self_attn_norm);
        attn(pre + ".self_attn", l.self_attn);
        norm(pre + ".ffn_norm", l.ffn_norm);
        lin(pre + ".ffn_in", l.ffn_in);
        lin(pre + ".ffn_out", l.ffn_out);
    }
    norm("encoder.final_norm", p.encoder_norm);
    for (std::size_t i = 0; i < p.decoder.size(); ++i) {
        auto& l = p.decoder[i];
        std::string pre = "decoder." + std::to_string(i);
        norm(pre + ".self_attn_norm", l.self_attn_norm);
        attn(pre + ".self_attn", l.self_attn);
        norm(pre + ".cross_attn_norm", l.cross_attn_norm);
        attn(pre + ".cross_attn", l.cross_attn);
        norm(pre + ".ffn_norm", l.ffn_norm);
        lin(pre + ".ffn_in", l.ffn_in);
        lin(pre + ".ffn_out", l.ffn_out);
    }
    norm("decoder.final_norm", p.decoder_norm);
    add("token_head", p.token_head);
    add("review_head", p.review_head);
    add("length_head", p.length_head);
    return out;
}

}  // namespace

template <typename Scalar>
std::vector<std::pair<std::string, Matrix<Scalar>*>> named_tensors(Parameters<Scalar>& p) {
    return collect<Scalar, Matrix<Scalar>*>(p);
}

template <typename Scalar>
std::vector<std::pair<std::string, const Matrix<Scalar>*>> named_tensors(const Parameters<Scalar>& p) {
    return collect<Scalar, const Matrix<Scalar>*>(p);
}

template <typename Scalar>
Parameters<Scalar> zeros_like(const Parameters<Scalar>& p) {
    Parameters<Scalar> z = p;
    for (auto& [name, m] : named_tensors(z)) m->setZero();
    return z;
}

template <typename Scalar>
Index parameter_count(const Parameters<Scalar>& p) {
    Index n = 0;
    for (const auto& [name, m] : named_tensors(p)) n += m->size();
    return n;
}

template <typename Scalar>
Parameters<Scalar> initialize_parameters(const ModelConfig& c, Rng& rng) {
    c.validate();
    const Index d = c.model_dim, f = c.ffn_dim, V = c.vocab_size, N = c.max_target_len;
    auto weight = [&](Index rows, Index cols) {
        Matrix<Scalar> m(rows, cols);
        if (c.init == InitMode::Normal) {
            std::normal_distribution<double> dist(0.0, c.init_scale);
            for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
        } else {
            std::uniform_real_distribution<double> dist(-c.init_scale, c.init_scale);
            for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
        }
        return m;
    };
    auto linear = [&](Index in, Index out) { return Linear<Scalar>{weight(in, out), Matrix<Scalar>::Zero(1, out)}; };
    auto norm = [&] { return LayerNorm<Scalar>{Matrix<Scalar>::Ones(1, d), Matrix<Scalar>::Zero(1, d)}; };
    auto attention = [&] { return Attention<Scalar>{linear(d, d), linear(d, d), linear(d, d), linear(d, d)}; };

    Parameters<Scalar> p;
    p.embedding = weight(V, d);
    for (int i = 0; i < c.layers; ++i) {
        EncoderLayer<Scalar> l;
        l.self_attn_norm = norm();
        l.self_attn = attention();
        l.ffn_norm = norm();
        l.ffn_in = linear(d, f);
        l.ffn_out = linear(f, d);
        p.encoder.push_back(std::move(l));
    }
    p.encoder_norm = norm();
    for (int i = 0; i < c.layers; ++i) {
        DecoderLayer<Scalar> l;
        l.self_attn_norm = norm();
        l.self_attn = attention();
        l.cross_attn_norm = norm();
        l.cross_attn = attention();
        l.ffn_norm = norm();
        l.ffn_in = linear(d, f);
        l.ffn_out = linear(f, d);
        p.decoder.push_back(std::move(l));
    }
    p.decoder_norm = norm();
    p.token_head = weight(d, V);
    p.review_head = weight(d, 1);
    p.length_head = weight(d, N);
    return p;
}

template <typename Scalar>
Matrix<Scalar> sinusoidal_positions(int rows, int dim) {
    Matrix<Scalar> pe(rows, dim);
    for (int pos = 0; pos < rows; ++pos)
        for (int i = 0; i < dim; ++i) {
            double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
            double angle = pos * rate;
            pe(pos, i) = static_cast<Scalar>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    return pe;
}

template <typename Scalar>
Model<Scalar>::Model(ModelConfig cfg, Parameters<Scalar> p)
    : config(std::move(cfg)), params(std::move(p)),
      positions(sinusoidal_positions<Scalar>(config.max_positions(), config.model_dim)) {
    config.validate();
    if (params.embedding.rows() != config.vocab_size || params.embedding.cols() != config.model_dim)
        throw Error("parameters do not match model config");
}

template <typename Scalar>
Model<Scalar> Model<Scalar>::initialize(const ModelConfig& cfg, Rng& rng) {
    return Model(cfg, initialize_parameters<Scalar>(cfg, rng));
}

// ---------------------------------------------------------------------------
// Layer primitives

namespace {

constexpr double kNormEps = 1e-5;

template <typename Scalar>
Matrix<Scalar> linear_forward(const Linear<Scalar>& l, const Matrix<Scalar>& x) {
    Matrix<Scalar> y(x.rows(), l.weight.cols());
    y.noalias() = x * l.weight;
    y.rowwise() += l.bias.row(0);
    return y;
}

template <typename Scalar>
Matrix<Scalar> linear_backward(const Linear<Scalar>& l, const Matrix<Scalar>& x, const Matrix<Scalar>& dy,
                               Linear<Scalar>& g) {
    g.weight.noalias() += x.transpose() * dy;
    g.bias += dy.colwise().sum();
    Matrix<Scalar> dx(dy.rows(), l.weight.rows());
    dx.noalias() = dy * l.weight.transpose();
    return dx;
}

template <typename Scalar>
Matrix<Scalar> norm_forward(const LayerNorm<Scalar>& ln, const Matrix<Scalar>& x, NormCache<Scalar>& cache) {
    const Index n = x.rows(), d = x.cols();
    cache.normalized.resize(n, d);
    cache.inv_std.resize(n);
    for (Index r = 0; r < n; ++r) {
        Scalar mean = x.row(r).mean();
        auto centered = (x.row(r).array() - mean).matrix();
        Scalar var = centered.squaredNorm() / static_cast<Scalar>(d);
        Scalar inv = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kNormEps));
        cache.inv_std(r) = inv;
        cache.normalized.row(r) = centered * inv;
    }
    Matrix<Scalar> y = cache.normalized.array().rowwise() * ln.gamma.row(0).array();
    y.rowwise() += ln.beta.row(0);
    return y;
}

template <typename Scalar>
Matrix<Scalar> norm_backward(const LayerNorm<Scalar>& ln, const NormCache<Scalar>& cache, const Matrix<Scalar>& dy,
                             LayerNorm<Scalar>& g) {
    const auto& xhat = cache.normalized;
    g.gamma += (dy.array() * xhat.array()).colwise().sum().matrix();
    g.beta += dy.colwise().sum();
    Matrix<Scalar> dxhat = dy.array().rowwise() * ln.gamma.row(0).array();
    Matrix<Scalar> dx(dy.rows(), dy.cols());
    const auto d = static_cast<Scalar>(dy.cols());
    for (Index r = 0; r < dy.rows(); ++r) {
        Scalar mean_dxhat = dxhat.row(r).sum() / d;
        Scalar mean_dxhat_xhat = dxhat.row(r).dot(xhat.row(r)) / d;
        dx.row(r) = cache.inv_std(r) *
                    (dxhat.row(r).array() - mean_dxhat - xhat.row(r).array() * mean_dxhat_xhat).matrix();
    }
    return dx;
}

template <typename Scalar>
void dropout_forward(Matrix<Scalar>& x, Dropout dropout, Matrix<Scalar>* mask_out) {
    if (!dropout.active()) return;
    Matrix<Scalar> mask(x.rows(), x.cols());
    std::bernoulli_distribution keep(1.0 - dropout.rate);
    auto scale = static_cast<Scalar>(1.0 / (1.0 - dropout.rate));
    for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*dropout.rng) ? scale : Scalar(0);
    x.array() *= mask.array();
    if (mask_out) *mask_out = std::move(mask);
}

template <typename Scalar>
void dropout_backward(Matrix<Scalar>& dx, const Matrix<Scalar>& mask) {
    if (mask.size() > 0) dx.array() *= mask.array();
}

template <typename Scalar>
Matrix<Scalar> attention_forward(const Attention<Scalar>& a, const Matrix<Scalar>& xq, const Matrix<Scalar>& xk,
                                 const Packing& qp, const Packing& kp, AttentionMask mask, int heads,
                                 AttentionCache<Scalar>* cache) {
    Matrix<Scalar> q = linear_forward(a.query, xq);
    Matrix<Scalar> k = linear_forward(a.key, xk);
    Matrix<Scalar> v = linear_forward(a.value, xk);
    const Index d = q.cols(), dh = d / heads;
    const auto scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
    Matrix<Scalar> ctx = Matrix<Scalar>::Zero(q.rows(), d);
    std::vector<Matrix<Scalar>> probs;
    if (cache) probs.reserve(static_cast<std::size_t>(qp.sequences() * heads));

    for (Index b = 0; b < qp.sequences(); ++b) {
        const Index q0 = qp.begin(b), lq = qp.length(b), k0 = kp.begin(b), lk = kp.length(b);
        for (Index h = 0; h < heads; ++h) {
            Matrix<Scalar> s(lq, lk);
            s.noalias() = q.block(q0, h * dh, lq, dh) * k.block(k0, h * dh, lk, dh).transpose();
            s *= scale;
            for (Index i = 0; i < lq; ++i) {
                Index visible = mask == AttentionMask::Causal ? std::min(i + 1, lk) : lk;
                Scalar mx = s.row(i).head(visible).maxCoeff();
                s.row(i).head(visible) = (s.row(i).head(visible).array() - mx).exp().matrix();
                s.row(i).head(visible) /= s.row(i).head(visible).sum();
                s.row(i).tail(lk - visible).setZero();
            }
            ctx.block(q0, h * dh, lq, dh).noalias() = s * v.block(k0, h * dh, lk, dh);
            if (cache) probs.push_back(std::move(s));
        }
    }
    Matrix<Scalar> out = linear_forward(a.output, ctx);
    if (cache) {
        cache->query_input = xq;
        cache->key_input = xk;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->context = std::move(ctx);
        cache->probs = std::move(probs);
    }
    return out;
}

/// Returns (d query_input, d key_input).
template <typename Scalar>
std::pair<Matrix<Scalar>, Matrix<Scalar>> attention_backward(const Attention<Scalar>& a,
                                                             const AttentionCache<Scalar>& c, const Packing& qp,
                                                             const Packing& kp, int heads, const Matrix<Scalar>& dout,
                                                             Attention<Scalar>& g) {
    Matrix<Scalar> dctx = linear_backward(a.output, c.context, dout, g.output);
    const Index d = c.q.cols(), dh = d / heads;
    const auto scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
    Matrix<Scalar> dq = Matrix<Scalar>::Zero(c.q.rows(), d);
    Matrix<Scalar> dk = Matrix<Scalar>::Zero(c.k.rows(), d);
    Matrix<Scalar> dv = Matrix<Scalar>::Zero(c.v.rows(), d);
    std::size_t idx = 0;
    for (Index b = 0; b < qp.sequences(); ++b) {
        const Index q0 = qp.begin(b), lq = qp.length(b), k0 = kp.begin(b), lk = kp.length(b);
        for (Index h = 0; h < heads; ++h, ++idx) {
            const Matrix<Scalar>& p = c.probs[idx];
            auto dc = dctx.block(q0, h * dh, lq, dh);
            dv.block(k0, h * dh, lk, dh).noalias() += p.transpose() * dc;
            Matrix<Scalar> dp(lq, lk);
            dp.noalias() = dc * c.v.block(k0, h * dh, lk, dh).transpose();
            Vector<Scalar> rowdot = (dp.array() * p.array()).rowwise().sum();
            Matrix<Scalar> ds = p.array() * (dp.colwise() - rowdot).array();
            ds *= scale;
            dq.block(q0, h * dh, lq, dh).noalias() += ds * c.k.block(k0, h * dh, lk, dh);
            dk.block(k0, h * dh, lk, dh).noalias() += ds.transpose() * c.q.block(q0, h * dh, lq, dh);
        }
    }
    Matrix<Scalar> dxq = linear_backward(a.query, c.query_input, dq, g.query);
    Matrix<Scalar> dxk = linear_backward(a.key, c.key_input, dk, g.key);
    dxk += linear_backward(a.value, c.key_input, dv, g.value);
    return {std::move(dxq), std::move(dxk)};
}

template <typename Scalar, typename Layer>
Matrix<Scalar> ffn_forward(const Layer& l, const Matrix<Scalar>& x, Dropout dropout, LayerCache<Scalar>* cache) {
    NormCache<Scalar> nc;
    Matrix<Scalar> h = norm_forward(l.ffn_norm, x, nc);
    Matrix<Scalar> hidden = linear_forward(l.ffn_in, h).cwiseMax(Scalar(0));
    Matrix<Scalar> f = linear_forward(l.ffn_out, hidden);
    Matrix<Scalar> mask;
    dropout_forward(f, dropout, cache ? &mask : nullptr);
    if (cache) {
        cache->ffn_norm = std::move(nc);
        cache->ffn_input = std::move(h);
        cache->ffn_hidden = std::move(hidden);
        cache->ffn_drop = std::move(mask);
    }
    return x + f;
}

template <typename Scalar, typename Layer>
Matrix<Scalar> ffn_backward(const Layer& l, const LayerCache<Scalar>& c, const Matrix<Scalar>& dy, Layer& g) {
    Matrix<Scalar> df = dy;
    dropout_backward(df, c.ffn_drop);
    Matrix<Scalar> dhidden = linear_backward(l.ffn_out, c.ffn_hidden, df, g.ffn_out);
    dhidden.array() *= (c.ffn_hidden.array() > Scalar(0)).template cast<Scalar>();
    Matrix<Scalar> dh = linear_backward(l.ffn_in, c.ffn_input, dhidden, g.ffn_in);
    return dy + norm_backward(l.ffn_norm, c.ffn_norm, dh, g.ffn_norm);
}

template <typename Scalar>
Matrix<Scalar> embed(const Model<Scalar>& model, const PackedIds& ids, Dropout dropout, StackCache<Scalar>* cache) {
    const auto& cfg = model.config;
    const Index d = cfg.model_dim;
    const auto scale = static_cast<Scalar>(std::sqrt(static_cast<double>(d)));
    Matrix<Scalar> x(ids.packing.total(), d);
    for (Index b = 0; b < ids.packing.sequences(); ++b) {
        const Index start = ids.packing.begin(b), len = ids.packing.length(b);
        if (len > model.positions.rows())
            throw Error("sequence of length " + std::to_string(len) + " exceeds positional table of " +
                        std::to_string(model.positions.rows()));
        for (Index t = 0; t < len; ++t) {
            TokenId id = ids.ids[start + t];
            if (id < 0 || id >= cfg.vocab_size) throw Error("token id out of range: " + std::to_string(id));
            x.row(start + t) = scale * model.params.embedding.row(id) + model.positions.row(t);
        }
    }
    dropout_forward(x, dropout, cache ? &cache->embed_drop : nullptr);
    return x;
}

template <typename Scalar>
void embed_backward(const Model<Scalar>& model, const StackCache<Scalar>& cache, Matrix<Scalar> dx,
                    Parameters<Scalar>& grads) {
    dropout_backward(dx, cache.embed_drop);
    const auto scale = static_cast<Scalar>(std::sqrt(static_cast<double>(model.config.model_dim)));
    for (Index r = 0; r < dx.rows(); ++r) grads.embedding.row(cache.ids[r]) += scale * dx.row(r);
}

}  // namespace

// ---------------------------------------------------------------------------
// Stacks

template <typename Scalar>
Matrix<Scalar> encode(const Model<Scalar>& model, const PackedIds& src, StackCache<Scalar>* cache, Dropout dropout) {
    const int heads = model.config.heads;
    for (Index b = 0; b < src.packing.sequences(); ++b)
        if (src.packing.length(b) < 1 || src.ids[src.packing.begin(b)] != special::kLen)
            throw Error("encode: source rows must start with <LEN>");
    if (cache) {
        cache->ids = src.ids;
        cache->packing = src.packing;
        cache->mask = AttentionMask::Bidirectional;
        cache->layers.assign(model.params.encoder.size(), {});
    }
    Matrix<Scalar> x = embed(model, src, dropout, cache);
    for (std::size_t i = 0; i < model.params.encoder.size(); ++i) {
        const auto& l = model.params.encoder[i];
        LayerCache<Scalar>* lc = cache ? &cache->layers[i] : nullptr;
        NormCache<Scalar> nc;
        Matrix<Scalar> h = norm_forward(l.self_attn_norm, x, nc);
        Matrix<Scalar> a = attention_forward(l.self_attn, h, h, src.packing, src.packing,
                                             AttentionMask::Bidirectional, heads, lc ? &lc->self_attn : nullptr);
        dropout_forward(a, dropout, lc ? &lc->self_drop : nullptr);
        if (lc) lc->self_norm = std::move(nc);
        x += a;
        x = ffn_forward(l, x, dropout, lc);
    }
    NormCache<Scalar> fc;
    Matrix<Scalar> out = norm_forward(model.params.encoder_norm, x, fc);
    if (cache) cache->final_norm = std::move(fc);
    return out;
}

template <typename Scalar>
void encode_backward(const Model<Scalar>& model, const StackCache<Scalar>& cache, const Matrix<Scalar>& d_states,
                     Parameters<Scalar>& grads) {
    const int heads = model.config.heads;
    Matrix<Scalar> dx = norm_backward(model.params.encoder_norm, cache.final_norm, d_states, grads.encoder_norm);
    for (std::size_t i = model.params.encoder.size(); i-- > 0;) {
        const auto& l = model.params.encoder[i];
        auto& g = grads.encoder[i];
        const auto& c = cache.layers[i];
        dx = ffn_backward(l, c, dx, g);
        Matrix<Scalar> da = dx;
        dropout_backward(da, c.self_drop);
        auto [dq, dk] = attention_backward(l.self_attn, c.self_attn, cache.packing, cache.packing, heads, da,
                                           g.self_attn);
        dq += dk;
        dx += norm_backward(l.self_attn_norm, c.self_norm, dq, g.self_attn_norm);
    }
    embed_backward(model, cache, std::move(dx), grads);
}

template <typename Scalar>
Matrix<Scalar> run_decoder(const Model<Scalar>& model, const Matrix<Scalar>& memory, const Packing& memory_packing,
                           const PackedIds& inputs, AttentionMask mask, StackCache<Scalar>* cache, Dropout dropout) {
    const int heads = model.config.heads;
    if (inputs.packing.sequences() != memory_packing.sequences())
        throw Error("decoder: " + std::to_string(inputs.packing.sequences()) + " target rows for " +
                    std::to_string(memory_packing.sequences()) + " source rows");
    for (Index b = 0; b < inputs.packing.sequences(); ++b)
        if (inputs.packing.length(b) > model.config.max_target_len)
            throw Error("decoder: target length " + std::to_string(inputs.packing.length(b)) +
                        " exceeds max_target_len");
    auto stack = mask == AttentionMask::Bidirectional ? decode_path(model.params) : review_path(model.params);
    if (cache) {
        cache->ids = inputs.ids;
        cache->packing = inputs.packing;
        cache->memory_packing = memory_packing;
        cache->mask = mask;
        cache->memory = memory;
        cache->layers.assign(stack.layers.size(), {});
    }
    Matrix<Scalar> x = embed(model, inputs, dropout, cache);
    for (std::size_t i = 0; i < stack.layers.size(); ++i) {
        const auto& l = stack.layers[i];
        LayerCache<Scalar>* lc = cache ? &cache->layers[i] : nullptr;
        NormCache<Scalar> nc, cc;
        Matrix<Scalar> h = norm_forward(l.self_attn_norm, x, nc);
        Matrix<Scalar> a = attention_forward(l.self_attn, h, h, inputs.packing, inputs.packing, mask, heads,
                                             lc ? &lc->self_attn : nullptr);
        dropout_forward(a, dropout, lc ? &lc->self_drop : nullptr);
        x += a;
        Matrix<Scalar> hc = norm_forward(l.cross_attn_norm, x, cc);
        Matrix<Scalar> c = attention_forward(l.cross_attn, hc, memory, inputs.packing, memory_packing,
                                             AttentionMask::Bidirectional, heads, lc ? &lc->cross_attn : nullptr);
        dropout_forward(c, dropout, lc ? &lc->cross_drop : nullptr);
        x += c;
        if (lc) {
            lc->self_norm = std::move(nc);
            lc->cross_norm = std::move(cc);
        }
        x = ffn_forward(l, x, dropout, lc);
    }
    NormCache<Scalar> fc;
    Matrix<Scalar> out = norm_forward(stack.final_norm, x, fc);
    if (cache) cache->final_norm = std::move(fc);
    return out;
}

template <typename Scalar>
Matrix<Scalar> decoder_backward(const Model<Scalar>& model, const StackCache<Scalar>& cache,
                                const Matrix<Scalar>& d_states, Parameters<Scalar>& grads, bool embedding_grad) {
    const int heads = model.config.heads;
    Matrix<Scalar> dmemory = Matrix<Scalar>::Zero(cache.memory.rows(), cache.memory.cols());
    Matrix<Scalar> dx = norm_backward(model.params.decoder_norm, cache.final_norm, d_states, grads.decoder_norm);
    for (std::size_t i = model.params.decoder.size(); i-- > 0;) {
        const auto& l = model.params.decoder[i];
        auto& g = grads.decoder[i];
        const auto& c = cache.layers[i];
        dx = ffn_backward(l, c, dx, g);

        Matrix<Scalar> dc = dx;
        dropout_backward(dc, c.cross_drop);
        auto [dhc, dmem] = attention_backward(l.cross_attn, c.cross_attn, cache.packing, cache.memory_packing,
                                              heads, dc, g.cross_attn);
        dmemory += dmem;
        dx += norm_backward(l.cross_attn_norm, c.cross_norm, dhc, g.cross_attn_norm);

        Matrix<Scalar> da = dx;
        dropout_backward(da, c.self_drop);
        auto [dq, dk] = attention_backward(l.self_attn, c.self_attn, cache.packing, cache.packing, heads, da,
                                           g.self_attn);
        dq += dk;
        dx += norm_backward(l.self_attn_norm, c.self_norm, dq, g.self_attn_norm);
    }
    if (embedding_grad) embed_backward(model, cache, std::move(dx), grads);
    return dmemory;
}

template <typename Scalar>
Matrix<Scalar> decode(const Model<Scalar>& model, const Matrix<Scalar>& enc, const Packing& enc_packing,
                      const PackedIds& y_in, StackCache<Scalar>* cache, Dropout dropout) {
    return run_decoder(model, enc, enc_packing, y_in, AttentionMask::Bidirectional, cache, dropout);
}

PackedIds review_inputs(const PackedIds& y_hat, ReviewMaskMode mode) {
    if (mode == ReviewMaskMode::Inclusive) return y_hat;
    PackedIds shifted;
    shifted.packing = y_hat.packing;
    shifted.ids.resize(y_hat.ids.size());
    for (Index b = 0; b < y_hat.packing.sequences(); ++b) {
        const Index start = y_hat.packing.begin(b), len = y_hat.packing.length(b);
        if (len == 0) continue;
        shifted.ids[start] = special::kSos;
        for (Index t = 1; t < len; ++t) shifted.ids[start + t] = y_hat.ids[start + t - 1];
    }
    return shifted;
}

template <typename Scalar>
Matrix<Scalar> review(const Model<Scalar>& model, const Matrix<Scalar>& enc, const Packing& enc_packing,
                      const PackedIds& y_hat, StackCache<Scalar>* cache, Dropout dropout) {
    return run_decoder(model, enc, enc_packing, review_inputs(y_hat, model.config.review_mask_mode),
                       AttentionMask::Causal, cache, dropout);
}

// ---------------------------------------------------------------------------
// Heads

template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits) {
    Matrix<Scalar> p(logits.rows(), logits.cols());
    for (Index r = 0; r < logits.rows(); ++r) {
        Scalar mx = logits.row(r).maxCoeff();
        p.row(r) = (logits.row(r).array() - mx).exp().matrix();
        p.row(r) /= p.row(r).sum();
    }
    return p;
}

template <typename Scalar>
Matrix<Scalar> token_logits(const Model<Scalar>& model, const Matrix<Scalar>& dec_states) {
    Matrix<Scalar> out(dec_states.rows(), model.params.token_head.cols());
    out.noalias() = dec_states * model.params.token_head;
    return out;
}

template <typename Scalar>
Matrix<Scalar> token_probs(const Model<Scalar>& model, const Matrix<Scalar>& dec_states) {
    return softmax_rows<Scalar>(token_logits(model, dec_states));
}

template <typename Scalar>
Vector<Scalar> review_logits(const Model<Scalar>& model, const Matrix<Scalar>& rev_states) {
    return rev_states * model.params.review_head.col(0);
}

template <typename Scalar>
Vector<Scalar> review_probs(const Model<Scalar>& model, const Matrix<Scalar>& rev_states) {
    Vector<Scalar> z = review_logits(model, rev_states);
    return z.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
}

template <typename Scalar>
Matrix<Scalar> length_logits(const Model<Scalar>& model, const Matrix<Scalar>& enc, const Packing& enc_packing) {
    Matrix<Scalar> first(enc_packing.sequences(), enc.cols());
    for (Index b = 0; b < enc_packing.sequences(); ++b) first.row(b) = enc.row(enc_packing.begin(b));
    Matrix<Scalar> out(first.rows(), model.params.length_head.cols());
    out.noalias() = first * model.params.length_head;
    return out;
}

#define SRMT_INSTANTIATE(S)                                                                                         \
    template std::vector<std::pair<std::string, Matrix<S>*>> named_tensors(Parameters<S>&);                         \
    template std::vector<std::pair<std::string, const Matrix<S>*>> named_tensors(const Parameters<S>&);             \
    template Parameters<S> zeros_like(const Parameters<S>&);                                                        \
    template Index parameter_count(const Parameters<S>&);                                                           \
    template Parameters<S> initialize_parameters<S>(const ModelConfig&, Rng&);                                      \
    template Matrix<S> sinusoidal_positions<S>(int, int);                                                           \
    template struct Model<S>;                                                                                       \
    template Matrix<S> encode(const Model<S>&, const PackedIds&, StackCache<S>*, Dropout);                          \
    template void encode_backward(const Model<S>&, const StackCache<S>&, const Matrix<S>&, Parameters<S>&);         \
    template Matrix<S> run_decoder(const Model<S>&, const Matrix<S>&, const Packing&, const PackedIds&,             \
                                   AttentionMask, StackCache<S>*, Dropout);                                         \
    template Matrix<S> decoder_backward(const Model<S>&, const StackCache<S>&, const Matrix<S>&, Parameters<S>&,    \
                                        bool);                                                                      \
    template Matrix<S> decode(const Model<S>&, const Matrix<S>&, const Packing&, const PackedIds&, StackCache<S>*,  \
                              Dropout);                                                                             \
    template Matrix<S> review(const Model<S>&, const Matrix<S>&, const Packing&, const PackedIds&, StackCache<S>*,  \
                              Dropout);                                                                             \
    template Matrix<S> softmax_rows(const Matrix<S>&);                                                              \
    template Matrix<S> token_logits(const Model<S>&, const Matrix<S>&);                                             \
    template Matrix<S> token_probs(const Model<S>&, const Matrix<S>&);                                              \
    template Vector<S> review_logits(const Model<S>&, const Matrix<S>&);                                            \
    template Vector<S> review_probs(const Model<S>&, const Matrix<S>&);                                             \
    template Matrix<S> length_logits(const Model<S>&, const Matrix<S>&, const Packing&);

SRMT_INSTANTIATE(float)
SRMT_INSTANTIATE(double)

#undef SRMT_INSTANTIATE

}  // namespace srmt
