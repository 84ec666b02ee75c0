#ifndef SRMT_MODEL_HPP
#define SRMT_MODEL_HPP

#include <algorithm>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "srmt/corpus.hpp"
#include "srmt/tensor.hpp"

namespace srmt {

/// How the review path lines up its inputs with its causal mask.
enum class ReviewMaskMode {
    Inclusive,  // unshifted inputs, position t sees tokens 0..t
    Shifted,    // <SOS>-shifted inputs, position t sees tokens 0..t-1
};

enum class InitMode { Normal, Uniform };

ReviewMaskMode parse_review_mask_mode(std::string_view s);
std::string_view to_string(ReviewMaskMode m);
InitMode parse_init_mode(std::string_view s);
std::string_view to_string(InitMode m);

struct ModelConfig {
    int layers = 2;
    int model_dim = 64;
    int ffn_dim = 256;
    int heads = 4;
    int vocab_size = 0;
    int max_target_len = 64;  // N, counts <EOS>
    int max_source_len = 63;  // without <LEN>
    double dropout = 0.0;
    ReviewMaskMode review_mask_mode = ReviewMaskMode::Inclusive;
    InitMode init = InitMode::Normal;
    double init_scale = 0.02;

    /// Throws Error naming the first invalid field.
    void validate() const;
    /// Number of rows of the positional table.
    int max_positions() const { return std::max(max_target_len, max_source_len + 1); }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename Scalar>
struct Linear {
    Matrix<Scalar> weight;  // [in x out]
    Matrix<Scalar> bias;    // [1 x out]
};

template <typename Scalar>
struct LayerNorm {
    Matrix<Scalar> gamma;  // [1 x d]
    Matrix<Scalar> beta;   // [1 x d]
};

template <typename Scalar>
struct Attention {
    Linear<Scalar> query, key, value, output;
};

template <typename Scalar>
struct EncoderLayer {
    LayerNorm<Scalar> self_attn_norm;
    Attention<Scalar> self_attn;
    LayerNorm<Scalar> ffn_norm;
    Linear<Scalar> ffn_in, ffn_out;
};

template <typename Scalar>
struct DecoderLayer {
    LayerNorm<Scalar> self_attn_norm;
    Attention<Scalar> self_attn;
    LayerNorm<Scalar> cross_attn_norm;
    Attention<Scalar> cross_attn;
    LayerNorm<Scalar> ffn_norm;
    Linear<Scalar> ffn_in, ffn_out;
};

/*
 * All trainable tensors. There is exactly one decoder stack: the bidirectional
 * decode path and the causal review path both run `decoder` and
 * `decoder_norm`. Only the output heads differ (token_head vs review_head).
 */
template <typename Scalar>
struct Parameters {
    Matrix<Scalar> embedding;  // [V x d], shared by source, target and review inputs
    std::vector<EncoderLayer<Scalar>> encoder;
    LayerNorm<Scalar> encoder_norm;
    std::vector<DecoderLayer<Scalar>> decoder;
    LayerNorm<Scalar> decoder_norm;
    Matrix<Scalar> token_head;   // W1 [d x V]
    Matrix<Scalar> review_head;  // W2 [d x 1]
    Matrix<Scalar> length_head;  // [d x N]
};

/// Every tensor of `p` under its canonical name, in a fixed order.
template <typename Scalar>
std::vector<std::pair<std::string, Matrix<Scalar>*>> named_tensors(Parameters<Scalar>& p);
template <typename Scalar>
std::vector<std::pair<std::string, const Matrix<Scalar>*>> named_tensors(const Parameters<Scalar>& p);

/// Same shapes as `p`, all zeros.
template <typename Scalar>
Parameters<Scalar> zeros_like(const Parameters<Scalar>& p);

template <typename Scalar>
Parameters<Scalar> initialize_parameters(const ModelConfig& config, Rng& rng);

template <typename Scalar>
Index parameter_count(const Parameters<Scalar>& p);

/// Which module a tensor belongs to, derived from its canonical name.
enum class TensorGroup { Encoder, SharedDecoder, TokenHead, ReviewHead, LengthHead };
TensorGroup tensor_group(std::string_view name);

/// The decoder layers as seen by one path. Both paths view the same storage.
template <typename Scalar>
struct DecoderStackView {
    const std::vector<DecoderLayer<Scalar>>& layers;
    const LayerNorm<Scalar>& final_norm;
};

template <typename Scalar>
DecoderStackView<Scalar> decode_path(const Parameters<Scalar>& p) {
    return {p.decoder, p.decoder_norm};
}
template <typename Scalar>
DecoderStackView<Scalar> review_path(const Parameters<Scalar>& p) {
    return {p.decoder, p.decoder_norm};
}

template <typename Scalar>
struct Model {
    ModelConfig config;
    Parameters<Scalar> params;
    Matrix<Scalar> positions;  // sinusoidal table [max_positions x d]

    Model() = default;
    Model(ModelConfig cfg, Parameters<Scalar> p);
    static Model initialize(const ModelConfig& cfg, Rng& rng);
};

template <typename Scalar>
Matrix<Scalar> sinusoidal_positions(int rows, int dim);

enum class AttentionMask { Bidirectional, Causal };

/// Dropout state for one forward call; inactive when rate is 0 or rng is null.
struct Dropout {
    double rate = 0.0;
    Rng* rng = nullptr;
    bool active() const { return rate > 0.0 && rng != nullptr; }
};

template <typename Scalar>
struct NormCache {
    Matrix<Scalar> normalized;
    Vector<Scalar> inv_std;
};

template <typename Scalar>
struct AttentionCache {
    Matrix<Scalar> query_input, key_input;
    Matrix<Scalar> q, k, v, context;
    std::vector<Matrix<Scalar>> probs;  // one per (sequence, head)
};

template <typename Scalar>
struct LayerCache {
    NormCache<Scalar> self_norm;
    AttentionCache<Scalar> self_attn;
    Matrix<Scalar> self_drop;
    NormCache<Scalar> cross_norm;
    AttentionCache<Scalar> cross_attn;
    Matrix<Scalar> cross_drop;
    NormCache<Scalar> ffn_norm;
    Matrix<Scalar> ffn_input, ffn_hidden;
    Matrix<Scalar> ffn_drop;
};

/// Activations kept by a forward pass for the matching backward pass.
template <typename Scalar>
struct StackCache {
    std::vector<TokenId> ids;
    Packing packing;
    Packing memory_packing;
    AttentionMask mask = AttentionMask::Bidirectional;
    Matrix<Scalar> memory;  // encoder states read by cross attention (decoder stacks only)
    Matrix<Scalar> embed_drop;
    std::vector<LayerCache<Scalar>> layers;
    NormCache<Scalar> final_norm;
};

/// Encoder states, one row per source position (row 0 of each sequence is <LEN>).
template <typename Scalar>
Matrix<Scalar> encode(const Model<Scalar>& model, const PackedIds& src, StackCache<Scalar>* cache = nullptr,
                      Dropout dropout = {});

/// Runs the shared decoder stack under `mask` over `inputs` with cross attention on `memory`.
template <typename Scalar>
Matrix<Scalar> run_decoder(const Model<Scalar>& model, const Matrix<Scalar>& memory, const Packing& memory_packing,
                           const PackedIds& inputs, AttentionMask mask, StackCache<Scalar>* cache = nullptr,
                           Dropout dropout = {});

/// Bidirectional decode: position t's state predicts the token at t.
template <typename Scalar>
Matrix<Scalar> decode(const Model<Scalar>& model, const Matrix<Scalar>& enc, const Packing& enc_packing,
                      const PackedIds& y_in, StackCache<Scalar>* cache = nullptr, Dropout dropout = {});

/// Inputs the review path actually consumes for `y_hat` under `mode`.
PackedIds review_inputs(const PackedIds& y_hat, ReviewMaskMode mode);

/// Causal review of `y_hat` with the decoder's own layers.
template <typename Scalar>
Matrix<Scalar> review(const Model<Scalar>& model, const Matrix<Scalar>& enc, const Packing& enc_packing,
                      const PackedIds& y_hat, StackCache<Scalar>* cache = nullptr, Dropout dropout = {});

template <typename Scalar>
Matrix<Scalar> token_logits(const Model<Scalar>& model, const Matrix<Scalar>& dec_states);
template <typename Scalar>
Matrix<Scalar> token_probs(const Model<Scalar>& model, const Matrix<Scalar>& dec_states);
template <typename Scalar>
Vector<Scalar> review_logits(const Model<Scalar>& model, const Matrix<Scalar>& rev_states);
template <typename Scalar>
Vector<Scalar> review_probs(const Model<Scalar>& model, const Matrix<Scalar>& rev_states);
/// [B x N]; column i scores target length i+1.
template <typename Scalar>
Matrix<Scalar> length_logits(const Model<Scalar>& model, const Matrix<Scalar>& enc, const Packing& enc_packing);

/// Row-wise softmax.
template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits);

/// Accumulates encoder and embedding gradients into `grads`.
template <typename Scalar>
void encode_backward(const Model<Scalar>& model, const StackCache<Scalar>& cache, const Matrix<Scalar>& d_states,
                     Parameters<Scalar>& grads);

/// Accumulates decoder-stack gradients; returns the gradient w.r.t. the memory (encoder states).
/// When `embedding_grad` is false the input embedding lookup is treated as a constant.
template <typename Scalar>
Matrix<Scalar> decoder_backward(const Model<Scalar>& model, const StackCache<Scalar>& cache,
                                const Matrix<Scalar>& d_states, Parameters<Scalar>& grads, bool embedding_grad = true);

}  // namespace srmt

#endif
