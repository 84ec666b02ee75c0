#include "srmt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>

namespace srmt {

namespace {

const char* const kSpecialNames[] = {"<PAD>", "<SOS>", "<EOS>", "<MASK>", "<LEN>", "<UNK>"};

}  // namespace

std::vector<std::string> split_tokens(std::string_view sentence) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < sentence.size()) {
        while (i < sentence.size() && (sentence[i] == ' ' || sentence[i] == '\t' || sentence[i] == '\r' ||
                                       sentence[i] == '\n'))
            ++i;
        std::size_t j = i;
        while (j < sentence.size() && sentence[j] != ' ' && sentence[j] != '\t' && sentence[j] != '\r' &&
               sentence[j] != '\n')
            ++j;
        if (j > i) out.emplace_back(sentence.substr(i, j - i));
        i = j;
    }
    return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

Vocab::Vocab() {
    for (const char* name : kSpecialNames) append(name);
}

void Vocab::append(std::string token) {
    auto id = static_cast<TokenId>(tokens_.size());
    auto [it, inserted] = index_.emplace(token, id);
    if (!inserted) throw Error("duplicate vocabulary token: " + token);
    tokens_.push_back(std::move(token));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < static_cast<std::size_t>(special::kCount))
        throw Error("vocabulary is missing reserved tokens");
    for (TokenId i = 0; i < special::kCount; ++i)
        if (tokens[i] != kSpecialNames[i])
            throw Error("vocabulary line " + std::to_string(i) + " must be " + kSpecialNames[i]);
    Vocab v;
    for (std::size_t i = special::kCount; i < tokens.size(); ++i) v.append(std::move(tokens[i]));
    return v;
}

TokenId Vocab::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? special::kUnk : it->second;
}

const std::string& Vocab::token(TokenId id) const {
    if (id < 0 || id >= static_cast<TokenId>(tokens_.size()))
        throw Error("token id out of range: " + std::to_string(id));
    return tokens_[id];
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

std::vector<TokenId> Vocab::encode(std::string_view sentence) const {
    std::vector<TokenId> ids;
    for (const auto& t : split_tokens(sentence)) ids.push_back(id(t));
    return ids;
}

std::string Vocab::decode(const std::vector<TokenId>& ids, bool strip_specials) const {
    std::vector<std::string> words;
    for (TokenId i : ids) {
        if (strip_specials && i < special::kCount && i != special::kUnk) continue;
        words.push_back(token(i));
    }
    return join_tokens(words);
}

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write vocabulary: " + path.string());
    for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) { return from_tokens(read_lines(path)); }

Vocab build_vocab(const std::vector<RawPair>& corpus, int min_count) {
    if (corpus.empty()) throw Error("empty corpus");
    std::map<std::string, long> counts;
    for (const auto& pair : corpus) {
        for (auto& t : split_tokens(pair.source)) ++counts[t];
        for (auto& t : split_tokens(pair.target)) ++counts[t];
    }
    std::vector<std::pair<std::string, long>> ordered;
    Vocab reserved;
    for (auto& [token, count] : counts)
        if (count >= min_count && !reserved.contains(token)) ordered.emplace_back(token, count);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    std::vector<std::string> tokens = reserved.tokens();
    for (auto& [token, count] : ordered) tokens.push_back(token);
    return Vocab::from_tokens(std::move(tokens));
}

std::vector<SentencePair> encode_pairs(const std::vector<RawPair>& corpus, const Vocab& vocab) {
    std::vector<SentencePair> out;
    out.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        SentencePair p{vocab.encode(corpus[i].source), vocab.encode(corpus[i].target)};
        if (p.source.empty() || p.target.empty())
            throw Error("empty sentence in pair " + std::to_string(i));
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<Index> sample_mask(Index tgt_len, Rng& rng) {
    if (tgt_len < 1) throw Error("sample_mask: target length must be at least 1");
    std::uniform_int_distribution<Index> pick_k(1, tgt_len);
    Index k = pick_k(rng);
    // Partial Fisher-Yates over the index range.
    std::vector<Index> all(tgt_len);
    std::iota(all.begin(), all.end(), Index{0});
    for (Index i = 0; i < k; ++i) {
        std::uniform_int_distribution<Index> pick(i, tgt_len - 1);
        std::swap(all[i], all[pick(rng)]);
    }
    std::vector<Index> out(all.begin(), all.begin() + k);
    std::sort(out.begin(), out.end());
    return out;
}

Index Batch::target_tokens() const {
    return std::accumulate(tgt_len.begin(), tgt_len.end(), Index{0});
}

PackedIds Batch::packed_source() const {
    PackedIds p;
    for (Index r = 0; r < rows(); ++r) {
        std::vector<TokenId> row(src.row(r).data(), src.row(r).data() + src_len[r]);
        p.push(row);
    }
    return p;
}

PackedIds Batch::packed_target() const {
    PackedIds p;
    for (Index r = 0; r < rows(); ++r) {
        std::vector<TokenId> row(tgt.row(r).data(), tgt.row(r).data() + tgt_len[r]);
        p.push(row);
    }
    return p;
}

BatchStream make_batches(const std::vector<SentencePair>& pairs, const BatchingOptions& options, Rng& rng) {
    BatchStream stream;
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        auto src = static_cast<Index>(p.source.size());
        auto tgt = static_cast<Index>(p.target.size()) + 1;
        if (src > options.max_source_len || tgt > options.max_target_len || p.source.empty() ||
            p.target.empty()) {
            ++stream.skipped;
            continue;
        }
        order.push_back(i);
    }
    std::shuffle(order.begin(), order.end(), rng);
    if (options.length_bucketing)
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return pairs[a].target.size() < pairs[b].target.size();
        });

    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::size_t> current;
    Index widest = 0;
    for (std::size_t i : order) {
        auto len = static_cast<Index>(pairs[i].target.size()) + 1;
        Index wider = std::max(widest, len);
        if (!current.empty() && wider * static_cast<Index>(current.size() + 1) > options.batch_tokens) {
            groups.push_back(std::move(current));
            current.clear();
            wider = len;
        }
        current.push_back(i);
        widest = wider;
    }
    if (!current.empty()) groups.push_back(std::move(current));
    std::shuffle(groups.begin(), groups.end(), rng);

    for (const auto& group : groups) {
        Batch b;
        auto rows = static_cast<Index>(group.size());
        Index max_src = 0, max_tgt = 0;
        for (std::size_t i : group) {
            max_src = std::max(max_src, static_cast<Index>(pairs[i].source.size()) + 1);
            max_tgt = std::max(max_tgt, static_cast<Index>(pairs[i].target.size()) + 1);
        }
        b.src = IdMatrix::Constant(rows, max_src, special::kPad);
        b.tgt = IdMatrix::Constant(rows, max_tgt, special::kPad);
        for (Index r = 0; r < rows; ++r) {
            const auto& p = pairs[group[r]];
            b.src(r, 0) = special::kLen;
            for (std::size_t j = 0; j < p.source.size(); ++j) b.src(r, j + 1) = p.source[j];
            for (std::size_t j = 0; j < p.target.size(); ++j) b.tgt(r, j) = p.target[j];
            auto tl = static_cast<Index>(p.target.size()) + 1;
            b.tgt(r, tl - 1) = special::kEos;
            b.src_len.push_back(static_cast<Index>(p.source.size()) + 1);
            b.tgt_len.push_back(tl);
            b.mask_positions.push_back(sample_mask(options.mask_eos ? tl : tl - 1, rng));
            b.pair_index.push_back(group[r]);
        }
        stream.batches.push_back(std::move(b));
    }
    return stream;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
    }
    return lines;
}

std::vector<RawPair> read_parallel(const std::filesystem::path& source, const std::filesystem::path& target) {
    auto src = read_lines(source);
    auto tgt = read_lines(target);
    if (src.size() != tgt.size())
        throw Error("parallel files differ in line count: " + source.string() + " vs " + target.string());
    std::vector<RawPair> out;
    for (std::size_t i = 0; i < src.size(); ++i) out.push_back({src[i], tgt[i]});
    return out;
}

std::vector<RawPair> read_tsv(const std::filesystem::path& path) {
    std::vector<RawPair> out;
    auto lines = read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        auto tab = lines[i].find('\t');
        if (tab == std::string::npos || lines[i].find('\t', tab + 1) != std::string::npos)
            throw Error(path.string() + ":" + std::to_string(i + 1) + ": expected two tab-separated columns");
        out.push_back({lines[i].substr(0, tab), lines[i].substr(tab + 1)});
    }
    return out;
}

void write_tsv(const std::filesystem::path& path, const std::vector<RawPair>& pairs) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& p : pairs) out << p.source << '\t' << p.target << '\n';
}

}  // namespace srmt
