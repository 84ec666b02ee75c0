#include <algorithm>
#include <unordered_map>

#include "srmt/corpus.hpp"

namespace srmt {

namespace {

// Phrase rules of the toy grammar. Lexical rules (one per lexicon entry) make up the rest.
enum class Symbol { S, NP, VP, PP, Det, Adj, Noun, Pron, Verb, Adv, Prep, Conj };

struct Production {
    Symbol lhs;
    std::vector<Symbol> rhs;
    double weight;
    bool recursive;
};

const std::vector<Production>& phrase_rules() {
    using enum Symbol;
    static const std::vector<Production> rules = {
        {S, {NP, VP}, 0.75, false},
        {S, {NP, VP, Conj, NP, VP}, 0.25, false},
        {NP, {Det, Noun}, 0.35, false},
        {NP, {Det, Adj, Noun}, 0.35, false},
        {NP, {Det, Noun, PP}, 0.10, true},
        {NP, {Pron}, 0.20, false},
        {VP, {Verb, NP}, 0.45, false},
        {VP, {Verb}, 0.15, false},
        {VP, {Verb, NP, PP}, 0.15, true},
        {VP, {Adv, Verb, NP}, 0.25, false},
        {PP, {Prep, NP}, 1.0, false},
    };
    return rules;
}

const char* category_of(Symbol s) {
    switch (s) {
        case Symbol::Det: return "det";
        case Symbol::Adj: return "adj";
        case Symbol::Noun: return "noun";
        case Symbol::Pron: return "pron";
        case Symbol::Verb: return "verb";
        case Symbol::Adv: return "adv";
        case Symbol::Prep: return "prep";
        case Symbol::Conj: return "conj";
        default: return "";
    }
}

struct Lexicon {
    std::vector<ToyLexiconEntry> entries;
    std::unordered_map<std::string, std::size_t> by_source;
    std::unordered_map<std::string, std::vector<std::string>> words_of;
};

const Lexicon& lexicon() {
    static const Lexicon lex = [] {
        Lexicon l;
        auto add = [&](const char* cat, std::vector<std::pair<const char*, const char*>> words) {
            for (auto [src, tgt] : words) {
                l.by_source[src] = l.entries.size();
                l.entries.push_back({src, cat, tgt});
                l.words_of[cat].push_back(src);
            }
        };
        add("det", {{"da", "le"}, {"de", "la"}, {"di", "les"}});
        add("adj", {{"red", "rouge"}, {"big", "grand"}, {"old", "vieux"}, {"new", "neuf"}, {"hot", "chaud"},
                    {"shy", "timide"}});
        add("noun", {{"cat", "chat"}, {"dog", "chien"}, {"fox", "renard"}, {"owl", "hibou"}, {"bee", "abeille"},
                     {"cow", "vache"}, {"pig", "cochon"}, {"ant", "fourmi"}});
        add("pron", {{"he", "il"}, {"she", "elle"}});
        add("verb", {{"sees", "voit"}, {"likes", "aime"}, {"eats", "mange"}, {"finds", "trouve"},
                     {"calls", "appelle"}, {"helps", "aide"}});
        add("adv", {{"now", "maintenant"}, {"often", "souvent"}});
        add("prep", {{"near", "pres"}});
        add("conj", {{"and", "et"}});
        return l;
    }();
    return lex;
}

void expand(Symbol sym, int depth, Rng& rng, std::vector<std::string>& out) {
    if (const char* cat = category_of(sym); *cat) {
        const auto& words = lexicon().words_of.at(cat);
        std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
        out.push_back(words[pick(rng)]);
        return;
    }
    std::vector<const Production*> options;
    std::vector<double> weights;
    for (const auto& r : phrase_rules()) {
        if (r.lhs != sym || (r.recursive && depth > 1)) continue;
        options.push_back(&r);
        weights.push_back(r.weight);
    }
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    const Production* rule = options[pick(rng)];
    for (Symbol s : rule->rhs) expand(s, depth + 1, rng, out);
}

}  // namespace

SyntheticTask parse_task(std::string_view name) {
    if (name == "copy") return SyntheticTask::Copy;
    if (name == "reverse") return SyntheticTask::Reverse;
    if (name == "toy_grammar") return SyntheticTask::ToyGrammar;
    throw Error("unknown task: " + std::string(name));
}

std::string_view task_name(SyntheticTask task) {
    switch (task) {
        case SyntheticTask::Copy: return "copy";
        case SyntheticTask::Reverse: return "reverse";
        case SyntheticTask::ToyGrammar: return "toy_grammar";
    }
    return "";
}

const std::vector<ToyLexiconEntry>& toy_grammar_lexicon() { return lexicon().entries; }

int toy_grammar_rule_count() {
    return static_cast<int>(phrase_rules().size() + lexicon().entries.size());
}

std::string toy_grammar_translate(std::string_view source) {
    const auto& lex = lexicon();
    auto words = split_tokens(source);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        const auto& e = lex.entries.at(lex.by_source.at(words[i]));
        if (e.category == "adj" && i + 1 < words.size()) {
            const auto& next = lex.entries.at(lex.by_source.at(words[i + 1]));
            if (next.category == "noun") {
                out.push_back(next.target);
                out.push_back(e.target);
                ++i;
                continue;
            }
        }
        out.push_back(e.target);
    }
    return join_tokens(out);
}

std::vector<RawPair> generate_synthetic(SyntheticTask task, int n, int max_len, std::uint64_t seed,
                                        const SyntheticOptions& options) {
    if (n <= 0) throw Error("generate_synthetic: n must be positive");
    if (max_len < 2) throw Error("generate_synthetic: max_len must be at least 2");
    if (options.min_len < 1 || options.min_len > max_len) throw Error("generate_synthetic: bad min_len");
    Rng rng(seed);
    std::vector<RawPair> out;
    out.reserve(n);

    if (task == SyntheticTask::ToyGrammar) {
        while (static_cast<int>(out.size()) < n) {
            std::vector<std::string> words;
            expand(Symbol::S, 0, rng, words);
            auto len = static_cast<int>(words.size());
            if (len > max_len || len < options.min_len) continue;
            auto src = join_tokens(words);
            out.push_back({src, toy_grammar_translate(src)});
        }
        return out;
    }

    if (options.vocab_size < 1) throw Error("generate_synthetic: vocab_size must be positive");
    std::uniform_int_distribution<int> pick_len(options.min_len, max_len);
    std::uniform_int_distribution<int> pick_word(0, options.vocab_size - 1);
    for (int i = 0; i < n; ++i) {
        std::vector<std::string> words(pick_len(rng));
        for (auto& w : words) w = "w" + std::to_string(pick_word(rng));
        auto src = join_tokens(words);
        if (task == SyntheticTask::Reverse) std::reverse(words.begin(), words.end());
        out.push_back({src, join_tokens(words)});
    }
    return out;
}

std::vector<RawPair> generate_synthetic(std::string_view task, int n, int max_len, std::uint64_t seed,
                                        const SyntheticOptions& options) {
    return generate_synthetic(parse_task(task), n, max_len, seed, options);
}

}  // namespace srmt
