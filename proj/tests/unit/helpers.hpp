#ifndef SRMT_TEST_HELPERS_HPP
#define SRMT_TEST_HELPERS_HPP

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <doctest.h>

#include "srmt/corpus.hpp"
#include "srmt/model.hpp"

namespace srmt::test {

/// Small enough for finite differences, large enough to exercise every code path.
inline ModelConfig tiny_config(int vocab = 14) {
    ModelConfig c;
    c.layers = 2;
    c.model_dim = 16;
    c.ffn_dim = 24;
    c.heads = 2;
    c.vocab_size = vocab;
    c.max_target_len = 10;
    c.max_source_len = 9;
    c.init_scale = 0.3;
    return c;
}

/// Random corpus ids in [special::kCount, vocab).
inline std::vector<SentencePair> random_pairs(int n, int vocab, std::uint64_t seed, Index max_src = 6,
                                              Index max_tgt = 6) {
    Rng rng(seed);
    std::uniform_int_distribution<TokenId> tok(special::kCount, vocab - 1);
    std::uniform_int_distribution<Index> src_len(1, max_src), tgt_len(1, max_tgt);
    std::vector<SentencePair> out(n);
    for (auto& p : out) {
        p.source.resize(src_len(rng));
        p.target.resize(tgt_len(rng));
        for (auto& t : p.source) t = tok(rng);
        for (auto& t : p.target) t = tok(rng);
    }
    return out;
}

/// All pairs in one batch with freshly sampled masks.
inline Batch single_batch(const std::vector<SentencePair>& pairs, std::uint64_t seed) {
    BatchingOptions o;
    o.batch_tokens = 1 << 20;
    Rng rng(seed);
    auto stream = make_batches(pairs, o, rng);
    REQUIRE(stream.batches.size() == 1);
    return stream.batches.front();
}

template <typename Scalar>
Model<Scalar> random_model(const ModelConfig& c, std::uint64_t seed) {
    Rng rng(seed);
    return Model<Scalar>::initialize(c, rng);
}

/// A scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("srmt-" + tag + "-" + std::to_string(std::random_device{}()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

}  // namespace srmt::test

#endif
