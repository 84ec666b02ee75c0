#include "srmt/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

extern char** environ;

namespace srmt {

namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size() || v.empty())
        throw Error(key + ": expected a number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw Error(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string fmt_int(T v) {
    return std::to_string(v);
}

ConfigKey int_key(std::string name, std::string help, bool resumable, int RunConfig::*field) {
    return {name, std::move(help), resumable,
            [name, field](RunConfig& c, const std::string& v) { c.*field = parse_number<int>(name, v); },
            [field](const RunConfig& c) { return fmt_int(c.*field); }};
}

ConfigKey long_key(std::string name, std::string help, bool resumable, long RunConfig::*field) {
    return {name, std::move(help), resumable,
            [name, field](RunConfig& c, const std::string& v) { c.*field = parse_number<long>(name, v); },
            [field](const RunConfig& c) { return fmt_int(c.*field); }};
}

ConfigKey double_key(std::string name, std::string help, bool resumable, double RunConfig::*field) {
    return {name, std::move(help), resumable,
            [name, field](RunConfig& c, const std::string& v) { c.*field = parse_number<double>(name, v); },
            [field](const RunConfig& c) { return fmt(c.*field); }};
}

ConfigKey bool_key(std::string name, std::string help, bool resumable, bool RunConfig::*field) {
    return {name, std::move(help), resumable,
            [name, field](RunConfig& c, const std::string& v) { c.*field = parse_bool(name, v); },
            [field](const RunConfig& c) { return fmt(c.*field); }};
}

ConfigKey string_key(std::string name, std::string help, bool resumable, std::string RunConfig::*field) {
    return {name, std::move(help), resumable, [field](RunConfig& c, const std::string& v) { c.*field = v; },
            [field](const RunConfig& c) { return c.*field; }};
}

template <typename T>
ConfigKey model_key(std::string name, std::string help, T ModelConfig::*field) {
    return {name, std::move(help), false,
            [name, field](RunConfig& c, const std::string& v) { c.model.*field = parse_number<T>(name, v); },
            [field](const RunConfig& c) {
                if constexpr (std::is_floating_point_v<T>)
                    return fmt(c.model.*field);
                else
                    return fmt_int(c.model.*field);
            }};
}

std::vector<ConfigKey> make_keys() {
    std::vector<ConfigKey> k;
    k.push_back(model_key("layers", "encoder and decoder layers", &ModelConfig::layers));
    k.push_back(model_key("model_dim", "hidden size d", &ModelConfig::model_dim));
    k.push_back(model_key("ffn_dim", "feed-forward inner size", &ModelConfig::ffn_dim));
    k.push_back(model_key("heads", "attention heads", &ModelConfig::heads));
    k.push_back(model_key("vocab_size", "0 = size of the vocabulary built from the data", &ModelConfig::vocab_size));
    k.push_back(model_key("max_target_len", "length classes N, counting <EOS>", &ModelConfig::max_target_len));
    k.push_back(model_key("max_source_len", "longest source without <LEN>", &ModelConfig::max_source_len));
    k.push_back(model_key("dropout", "dropout rate", &ModelConfig::dropout));
    k.push_back({"review_mask_mode", "inclusive or shifted", false,
                 [](RunConfig& c, const std::string& v) { c.model.review_mask_mode = parse_review_mask_mode(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.model.review_mask_mode)); }});
    k.push_back({"init", "normal or uniform", false,
                 [](RunConfig& c, const std::string& v) { c.model.init = parse_init_mode(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.model.init)); }});
    k.push_back(model_key("init_scale", "init std (normal) or bound (uniform)", &ModelConfig::init_scale));

    k.push_back(string_key("task", "copy, reverse or toy_grammar; empty to read files", false, &RunConfig::task));
    k.push_back(string_key("train_tsv", "training pairs, source<TAB>target", false, &RunConfig::train_tsv));
    k.push_back(string_key("train_src", "training source lines", false, &RunConfig::train_src));
    k.push_back(string_key("train_tgt", "training target lines", false, &RunConfig::train_tgt));
    k.push_back(string_key("eval_tsv", "held-out pairs, source<TAB>target", false, &RunConfig::eval_tsv));
    k.push_back(string_key("eval_src", "held-out source lines", false, &RunConfig::eval_src));
    k.push_back(string_key("eval_tgt", "held-out target lines", false, &RunConfig::eval_tgt));
    k.push_back(int_key("train_size", "synthetic training pairs", false, &RunConfig::train_size));
    k.push_back(int_key("eval_size", "synthetic held-out pairs", false, &RunConfig::eval_size));
    k.push_back(int_key("max_len", "longest synthetic sentence", false, &RunConfig::max_len));
    k.push_back(int_key("min_len", "shortest synthetic sentence", false, &RunConfig::min_len));
    k.push_back(int_key("synth_vocab", "copy/reverse surface vocabulary", false, &RunConfig::synth_vocab));
    k.push_back({"data_seed", "synthetic data seed", false,
                 [](RunConfig& c, const std::string& v) { c.data_seed = parse_number<std::uint64_t>("data_seed", v); },
                 [](const RunConfig& c) { return fmt_int(c.data_seed); }});
    k.push_back(int_key("min_count", "vocabulary frequency cutoff", false, &RunConfig::min_count));

    k.push_back({"seed", "training seed (required)", false,
                 [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); },
                 [](const RunConfig& c) { return c.seed ? fmt_int(*c.seed) : std::string(); }});
    k.push_back({"precision", "double or float", false,
                 [](RunConfig& c, const std::string& v) {
                     if (v != "double" && v != "float") throw Error("precision: expected double or float, got '" + v + "'");
                     c.precision = v;
                 },
                 [](const RunConfig& c) { return c.precision; }});
    k.push_back(long_key("steps", "optimizer updates", true, &RunConfig::steps));
    k.push_back({"batch_tokens", "target tokens per batch (rows x widest row)", false,
                 [](RunConfig& c, const std::string& v) { c.batch_tokens = parse_number<Index>("batch_tokens", v); },
                 [](const RunConfig& c) { return fmt_int(c.batch_tokens); }});
    k.push_back(long_key("warmup", "warm-up steps", false, &RunConfig::warmup));
    k.push_back(double_key("peak_lr", "learning rate at the end of warm-up", false, &RunConfig::peak_lr));
    k.push_back({"weight_dec", "masked-token loss weight", false,
                 [](RunConfig& c, const std::string& v) { c.weights.dec = parse_number<double>("weight_dec", v); },
                 [](const RunConfig& c) { return fmt(c.weights.dec); }});
    k.push_back({"weight_len", "length loss weight", false,
                 [](RunConfig& c, const std::string& v) { c.weights.len = parse_number<double>("weight_len", v); },
                 [](const RunConfig& c) { return fmt(c.weights.len); }});
    k.push_back({"weight_rev", "review loss weight", false,
                 [](RunConfig& c, const std::string& v) { c.weights.rev = parse_number<double>("weight_rev", v); },
                 [](const RunConfig& c) { return fmt(c.weights.rev); }});
    k.push_back({"weight_ar", "left-to-right loss weight on the causal path", false,
                 [](RunConfig& c, const std::string& v) { c.weights.ar = parse_number<double>("weight_ar", v); },
                 [](const RunConfig& c) { return fmt(c.weights.ar); }});
    k.push_back(bool_key("mask_eos", "let the <EOS> slot be masked", false, &RunConfig::mask_eos));
    k.push_back(bool_key("length_bucketing", "batch rows of equal target length together", false,
                         &RunConfig::length_bucketing));
    k.push_back(bool_key("review_sampling", "sample review inputs instead of argmax", false, &RunConfig::review_sampling));
    k.push_back(bool_key("stop_review_gradient", "detach the review loss from encoder and embedding", false,
                         &RunConfig::stop_review_gradient));
    k.push_back(long_key("eval_interval", "steps between held-out evaluations (0 = off)", true, &RunConfig::eval_interval));
    k.push_back(long_key("checkpoint_interval", "steps between checkpoints (0 = final only)", true,
                         &RunConfig::checkpoint_interval));
    k.push_back(double_key("stop_at_exact_match", "stop once held-out exact match reaches this (0 = off)", true,
                           &RunConfig::stop_at_exact_match));

    k.push_back(int_key("iterations", "Mask-Predict iterations T", true, &RunConfig::iterations));
    k.push_back(int_key("length_beam", "length candidates k", true, &RunConfig::length_beam));
    k.push_back({"remask", "count or threshold", true,
                 [](RunConfig& c, const std::string& v) {
                     parse_remask_mode(v);
                     c.remask = v;
                 },
                 [](const RunConfig& c) { return c.remask; }});
    k.push_back(double_key("remask_threshold", "confidence cutoff for threshold remasking", true,
                           &RunConfig::remask_threshold));
    k.push_back(string_key("out_dir", "parent of run directories", true, &RunConfig::out_dir));
    return k;
}

const ConfigKey& find_key(const std::string& key) {
    for (const auto& k : config_keys())
        if (k.name == key) return k;
    throw Error("unknown config key '" + key + "'");
}

void check_readable(const std::string& key, const std::string& path) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw Error(key + ": cannot read " + path);
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = make_keys();
    return keys;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
    find_key(key).set(config, value);
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        const std::string where = origin + ":" + std::to_string(lineno) + ": ";
        if (eq == std::string::npos) throw Error(where + "expected key = value");
        auto key = trim(std::string_view(line).substr(0, eq));
        auto value = trim(std::string_view(line).substr(eq + 1));
        try {
            set_config_value(c, key, value);
        } catch (const Error& e) {
            throw Error(where + e.what());
        }
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path.string());
}

std::map<std::string, std::string> process_environment() {
    std::map<std::string, std::string> env;
    for (char** e = environ; e && *e; ++e) {
        std::string_view kv(*e);
        auto eq = kv.find('=');
        if (eq == std::string_view::npos) continue;
        env.emplace(std::string(kv.substr(0, eq)), std::string(kv.substr(eq + 1)));
    }
    return env;
}

void apply_env_overrides(RunConfig& config, const std::map<std::string, std::string>& env) {
    for (const auto& k : config_keys()) {
        std::string var = kEnvPrefix;
        for (char ch : k.name) var += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        auto it = env.find(var);
        if (it == env.end()) continue;
        try {
            k.set(config, it->second);
        } catch (const Error& e) {
            throw Error(var + ": " + e.what());
        }
    }
}

void validate(const RunConfig& c) {
    if (!c.seed) throw Error("seed required");
    ModelConfig m = c.model;
    if (m.vocab_size == 0) m.vocab_size = special::kCount + 1;
    m.validate();
    if (c.precision != "double" && c.precision != "float") throw Error("precision: expected double or float");
    if (c.synthetic()) {
        parse_task(c.task);
        if (c.train_size <= 0) throw Error("train_size must be positive");
        if (c.eval_size < 0) throw Error("eval_size must be non-negative");
        if (c.max_len < 2) throw Error("max_len must be at least 2");
        if (c.min_len < 1 || c.min_len > c.max_len) throw Error("min_len must be in [1, max_len]");
        if (c.synth_vocab < 1) throw Error("synth_vocab must be positive");
    } else {
        if (c.train_tsv.empty() && (c.train_src.empty() || c.train_tgt.empty()))
            throw Error("train_tsv or train_src and train_tgt required when task is empty");
        check_readable("train_tsv", c.train_tsv);
        check_readable("train_src", c.train_src);
        check_readable("train_tgt", c.train_tgt);
        check_readable("eval_tsv", c.eval_tsv);
        check_readable("eval_src", c.eval_src);
        check_readable("eval_tgt", c.eval_tgt);
        if (!c.eval_src.empty() != !c.eval_tgt.empty()) throw Error("eval_src and eval_tgt must be given together");
    }
    if (c.steps < 0) throw Error("steps must be non-negative");
    if (c.batch_tokens < 1) throw Error("batch_tokens must be positive");
    if (c.warmup < 1) throw Error("warmup must be positive");
    if (!(c.peak_lr > 0.0)) throw Error("peak_lr must be positive");
    for (auto [name, w] : {std::pair{"weight_dec", c.weights.dec}, {"weight_len", c.weights.len},
                           {"weight_rev", c.weights.rev}, {"weight_ar", c.weights.ar}})
        if (!(w >= 0.0)) throw Error(std::string(name) + " must be non-negative");
    if (c.eval_interval < 0) throw Error("eval_interval must be non-negative");
    if (c.checkpoint_interval < 0) throw Error("checkpoint_interval must be non-negative");
    if (c.iterations < 1) throw Error("iterations must be at least 1");
    if (c.length_beam < 1 || c.length_beam > c.model.max_target_len)
        throw Error("length_beam must be in [1, max_target_len]");
    if (c.out_dir.empty()) throw Error("out_dir must not be empty");
}

std::string to_text(const RunConfig& c) {
    std::string out;
    for (const auto& k : config_keys()) out += k.name + "=" + k.get(c) + "\n";
    return out;
}

std::map<std::string, std::string> to_map(const RunConfig& c) {
    std::map<std::string, std::string> out;
    for (const auto& k : config_keys()) out[k.name] = k.get(c);
    return out;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash) {
    for (unsigned char ch : bytes) {
        hash ^= ch;
        hash *= 0x100000001b3ull;
    }
    return hash;
}

std::string config_hash(const RunConfig& c) {
    std::uint64_t h = fnv1a("");
    for (const auto& k : config_keys()) {
        if (k.resumable || k.name == "seed") continue;
        h = fnv1a(k.name + "=" + k.get(c) + "\n", h);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string first_resume_mismatch(const std::map<std::string, std::string>& stored, const RunConfig& c) {
    for (const auto& k : config_keys()) {
        if (k.resumable) continue;
        auto it = stored.find(k.name);
        if (it == stored.end() || it->second != k.get(c)) return k.name;
    }
    return {};
}

TrainOptions train_options(const RunConfig& c) {
    TrainOptions o;
    o.seed = c.seed.value_or(0);
    o.steps = c.steps;
    o.batch_tokens = c.batch_tokens;
    o.warmup = c.warmup;
    o.peak_lr = c.peak_lr;
    o.step.weights = c.weights;
    o.step.review_sampling = c.review_sampling;
    o.step.stop_review_gradient = c.stop_review_gradient;
    o.mask_eos = c.mask_eos;
    o.length_bucketing = c.length_bucketing;
    o.eval_interval = c.eval_interval;
    o.checkpoint_interval = c.checkpoint_interval;
    o.eval_decode = decode_options(c);
    o.stop_at_exact_match = c.stop_at_exact_match;
    return o;
}

DecodeOptions decode_options(const RunConfig& c) {
    DecodeOptions o;
    o.iterations = c.iterations;
    o.length_beam = c.length_beam;
    o.remask = parse_remask_mode(c.remask);
    o.remask_threshold = c.remask_threshold;
    return o;
}

std::string config_help() {
    RunConfig defaults;
    std::size_t width = 0;
    for (const auto& k : config_keys()) width = std::max(width, k.name.size());
    std::string out = "Config keys (flat key = value; override with " + std::string(kEnvPrefix) + "<KEY>):\n";
    for (const auto& k : config_keys()) {
        std::string def = k.get(defaults);
        if (def.empty()) def = k.name == "seed" ? "(required)" : "(empty)";
        out += "  " + k.name + std::string(width - k.name.size() + 2, ' ') + def + "  " + k.help + "\n";
    }
    return out;
}

Dataset load_dataset(RunConfig& c) {
    Dataset d;
    if (c.synthetic()) {
        SyntheticOptions so;
        so.vocab_size = c.synth_vocab;
        so.min_len = c.min_len;
        d.train_raw = generate_synthetic(c.task, c.train_size, c.max_len, c.data_seed, so);
        if (c.eval_size > 0) d.eval_raw = generate_synthetic(c.task, c.eval_size, c.max_len, c.data_seed + 1, so);
    } else {
        d.train_raw = c.train_tsv.empty() ? read_parallel(c.train_src, c.train_tgt) : read_tsv(c.train_tsv);
        if (!c.eval_tsv.empty())
            d.eval_raw = read_tsv(c.eval_tsv);
        else if (!c.eval_src.empty())
            d.eval_raw = read_parallel(c.eval_src, c.eval_tgt);
    }
    d.vocab = build_vocab(d.train_raw, c.min_count);
    if (c.model.vocab_size == 0)
        c.model.vocab_size = static_cast<int>(d.vocab.size());
    else if (c.model.vocab_size != d.vocab.size())
        throw Error("vocab_size: config says " + std::to_string(c.model.vocab_size) + ", data has " +
                    std::to_string(d.vocab.size()));
    d.train = encode_pairs(d.train_raw, d.vocab);
    d.eval = encode_pairs(d.eval_raw, d.vocab);
    return d;
}

}  // namespace srmt
