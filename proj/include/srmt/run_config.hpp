#ifndef SRMT_RUN_CONFIG_HPP
#define SRMT_RUN_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "srmt/corpus.hpp"
#include "srmt/decoding.hpp"
#include "srmt/model.hpp"
#include "srmt/training.hpp"

namespace srmt {

struct RunConfig {
    ModelConfig model;

    // Data: either a synthetic task or parallel files.
    std::string task = "copy";
    std::string train_tsv, train_src, train_tgt;
    std::string eval_tsv, eval_src, eval_tgt;
    int train_size = 5000;
    int eval_size = 500;
    int max_len = 12;
    int min_len = 1;
    int synth_vocab = 20;
    std::uint64_t data_seed = 1;
    int min_count = 1;

    std::optional<std::uint64_t> seed;
    std::string precision = "double";

    long steps = 2000;
    Index batch_tokens = 512;
    long warmup = 500;
    double peak_lr = 5e-4;
    LossWeights weights;
    bool mask_eos = true;
    bool length_bucketing = false;
    bool review_sampling = false;
    bool stop_review_gradient = true;
    long eval_interval = 0;
    long checkpoint_interval = 0;
    double stop_at_exact_match = 0.0;

    int iterations = 4;
    int length_beam = 3;
    std::string remask = "count";
    double remask_threshold = 0.5;

    std::string out_dir = "runs";

    bool synthetic() const { return !task.empty(); }
};

struct ConfigKey {
    std::string name;
    std::string help;
    /// May differ between a checkpoint and the config resuming from it.
    bool resumable = false;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

/// Every recognised key, in file order.
const std::vector<ConfigKey>& config_keys();

/// Parses flat `key = value` text; '#' starts a comment. Unknown keys and malformed values
/// throw Error naming the key and line.
RunConfig parse_run_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Applies SRMT_<KEY> overrides (key upper-cased) from `env`.
void apply_env_overrides(RunConfig& config, const std::map<std::string, std::string>& env);
std::map<std::string, std::string> process_environment();
inline constexpr const char* kEnvPrefix = "SRMT_";

void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

/// Seed present, model fields valid, task known, input files readable.
void validate(const RunConfig& config);

/// Canonical `key=value` lines for every key.
std::string to_text(const RunConfig& config);
std::map<std::string, std::string> to_map(const RunConfig& config);

/// FNV-1a over the canonical text of every non-resumable key except seed, as 16 hex digits.
/// Runs that differ only in step budget or decoding settings share a directory.
std::string config_hash(const RunConfig& config);

/// First key whose value differs and may not change on resume, or empty.
std::string first_resume_mismatch(const std::map<std::string, std::string>& stored, const RunConfig& config);

TrainOptions train_options(const RunConfig& config);
DecodeOptions decode_options(const RunConfig& config);

/// Help text listing every key with its default.
std::string config_help();

struct Dataset {
    Vocab vocab;
    std::vector<RawPair> train_raw, eval_raw;
    std::vector<SentencePair> train, eval;
};

/// Builds the vocabulary from the training side and sets `config.model.vocab_size`.
Dataset load_dataset(RunConfig& config);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ull);

}  // namespace srmt

#endif
