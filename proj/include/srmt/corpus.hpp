#ifndef SRMT_CORPUS_HPP
#define SRMT_CORPUS_HPP

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "srmt/tensor.hpp"

namespace srmt {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kSos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kMask = 3;
inline constexpr TokenId kLen = 4;
inline constexpr TokenId kUnk = 5;
inline constexpr TokenId kCount = 6;
}  // namespace special

/// Whitespace tokens of a sentence; runs of spaces/tabs collapse.
std::vector<std::string> split_tokens(std::string_view sentence);
std::string join_tokens(const std::vector<std::string>& tokens);

/// A sentence pair as raw whitespace-tokenized text.
struct RawPair {
    std::string source;
    std::string target;
};

/// Token/id map with the six reserved specials at ids 0..5.
class Vocab {
public:
    Vocab();

    /// Builds from an ordered list that already starts with the specials.
    static Vocab from_tokens(std::vector<std::string> tokens);

    TokenId id(std::string_view token) const;
    const std::string& token(TokenId id) const;
    bool contains(std::string_view token) const;
    Index size() const { return static_cast<Index>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    std::vector<TokenId> encode(std::string_view sentence) const;
    /// Joins ids back to text; specials are skipped when `strip_specials`.
    std::string decode(const std::vector<TokenId>& ids, bool strip_specials = true) const;

    void save(const std::filesystem::path& path) const;
    static Vocab load(const std::filesystem::path& path);

    friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

private:
    void append(std::string token);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
};

/// Specials first, then tokens by (descending count, lexicographic).
/// Tokens seen fewer than `min_count` times are left out and encode to <UNK>.
Vocab build_vocab(const std::vector<RawPair>& corpus, int min_count = 1);

/// Encoded pair; neither side carries specials.
struct SentencePair {
    std::vector<TokenId> source;
    std::vector<TokenId> target;
};

std::vector<SentencePair> encode_pairs(const std::vector<RawPair>& corpus, const Vocab& vocab);

enum class SyntheticTask { Copy, Reverse, ToyGrammar };

SyntheticTask parse_task(std::string_view name);
std::string_view task_name(SyntheticTask task);

struct SyntheticOptions {
    /// Surface vocabulary for copy/reverse (ignored by the grammar task).
    int vocab_size = 20;
    int min_len = 1;
};

/// Deterministic under `seed`. Lengths are drawn uniformly from [min_len, max_len].
std::vector<RawPair> generate_synthetic(SyntheticTask task, int n, int max_len, std::uint64_t seed,
                                        const SyntheticOptions& options = {});
std::vector<RawPair> generate_synthetic(std::string_view task, int n, int max_len, std::uint64_t seed,
                                        const SyntheticOptions& options = {});

/// Grammar task lexicon: category of each source word and its target translation.
struct ToyLexiconEntry {
    std::string source;
    std::string category;  // det, adj, noun, pron, verb, adv, prep, conj
    std::string target;
};
const std::vector<ToyLexiconEntry>& toy_grammar_lexicon();
/// Number of production rules in the grammar (phrase rules plus lexical rules).
int toy_grammar_rule_count();
/// Dictionary lookup followed by adjective/noun swap.
std::string toy_grammar_translate(std::string_view source);

/// k ~ Uniform{1..tgt_len}, then a uniform k-subset of {0..tgt_len-1}; sorted ascending.
std::vector<Index> sample_mask(Index tgt_len, Rng& rng);

/// Padded batch. Every source row starts with <LEN>; every target row ends with <EOS>.
struct Batch {
    IdMatrix src;
    IdMatrix tgt;
    std::vector<Index> src_len;  // includes <LEN>
    std::vector<Index> tgt_len;  // includes <EOS>
    std::vector<std::vector<Index>> mask_positions;
    std::vector<std::size_t> pair_index;  // position of each row's pair in the input list

    Index rows() const { return src.rows(); }
    Index target_tokens() const;
    PackedIds packed_source() const;
    PackedIds packed_target() const;
};

struct BatchingOptions {
    Index batch_tokens = 512;
    Index max_source_len = 63;  // without <LEN>
    Index max_target_len = 64;  // with <EOS>
    bool mask_eos = true;
    /// Group rows of similar target length; otherwise batches follow the shuffled order.
    bool length_bucketing = true;
};

struct BatchStream {
    std::vector<Batch> batches;
    std::size_t skipped = 0;
};

/// Greedy length-bucketed batching; padded target tokens per batch stay within
/// `batch_tokens` unless a single row is already larger. Batch order is shuffled.
BatchStream make_batches(const std::vector<SentencePair>& pairs, const BatchingOptions& options, Rng& rng);

/// Aligned source/target files, one sentence per line.
std::vector<RawPair> read_parallel(const std::filesystem::path& source, const std::filesystem::path& target);
/// Two tab-separated columns per line.
std::vector<RawPair> read_tsv(const std::filesystem::path& path);
void write_tsv(const std::filesystem::path& path, const std::vector<RawPair>& pairs);
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace srmt

#endif
