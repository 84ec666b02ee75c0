#include <fstream>

#include "helpers.hpp"
#include "srmt/checkpoint.hpp"
#include "srmt/decoding.hpp"
#include "srmt/run_config.hpp"

using namespace srmt;

namespace {

template <typename Scalar>
TrainState<Scalar> trained_state(const ModelConfig& cfg, long steps) {
    auto pairs = test::random_pairs(30, cfg.vocab_size, 61);
    TrainOptions o;
    o.seed = 2;
    o.steps = steps;
    o.batch_tokens = 30;
    o.warmup = 4;
    auto s = fresh_state<Scalar>(cfg, 2);
    train(s, o, pairs, {});
    return s;
}

template <typename Scalar>
bool same_parameters(Parameters<Scalar>& a, Parameters<Scalar>& b) {
    auto x = named_tensors(a), y = named_tensors(b);
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i].first != y[i].first || *x[i].second != *y[i].second) return false;
    return true;
}

}  // namespace

TEST_CASE("checkpoint: bit-exact round trip") {
    test::TempDir dir("ckpt");
    auto cfg = test::tiny_config();
    cfg.review_mask_mode = ReviewMaskMode::Shifted;
    cfg.init_scale = 0.1234567890123;
    auto s = trained_state<double>(cfg, 5);
    save_checkpoint(dir.path / "c.bin", s, {{"note", "hello\nworld"}});
    CHECK(checkpoint_scalar_bytes(dir.path / "c.bin") == 8);

    Metadata meta;
    auto back = load_checkpoint<double>(dir.path / "c.bin", &meta);
    CHECK(meta.at("note") == "hello\nworld");
    CHECK(back.model.config == s.model.config);
    CHECK(back.step == s.step);
    CHECK(back.epoch == s.epoch);
    CHECK(back.cursor == s.cursor);
    CHECK(back.adam.updates == s.adam.updates);
    CHECK(back.cumulative_flops == s.cumulative_flops);
    CHECK(back.avg_total == s.avg_total);
    CHECK(same_parameters(back.model.params, s.model.params));
    CHECK(same_parameters(back.adam.m, s.adam.m));
    CHECK(same_parameters(back.adam.v, s.adam.v));

    DecodeOptions o;
    auto a = mask_predict(s.model, std::vector<TokenId>{6, 7, 8}, o);
    auto b = mask_predict(back.model, std::vector<TokenId>{6, 7, 8}, o);
    CHECK(a.output == b.output);
    CHECK(a.winner().score == b.winner().score);
}

TEST_CASE("checkpoint: float state round trips and refuses a double load") {
    test::TempDir dir("ckptf");
    auto s = trained_state<float>(test::tiny_config(), 3);
    save_checkpoint(dir.path / "f.bin", s);
    CHECK(checkpoint_scalar_bytes(dir.path / "f.bin") == 4);
    auto back = load_checkpoint<float>(dir.path / "f.bin");
    CHECK(same_parameters(back.model.params, s.model.params));
    CHECK_THROWS_WITH_AS(load_checkpoint<double>(dir.path / "f.bin"), doctest::Contains("32-bit"), Error);
}

TEST_CASE("checkpoint: damaged files are rejected") {
    test::TempDir dir("ckptbad");
    auto s = trained_state<double>(test::tiny_config(), 1);
    save_checkpoint(dir.path / "c.bin", s);
    auto size = std::filesystem::file_size(dir.path / "c.bin");
    std::filesystem::resize_file(dir.path / "c.bin", size / 2);
    CHECK_THROWS_AS(load_checkpoint<double>(dir.path / "c.bin"), Error);
    std::ofstream(dir.path / "junk.bin") << "not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint<double>(dir.path / "junk.bin"), Error);
    CHECK_THROWS_AS(load_checkpoint<double>(dir.path / "missing.bin"), Error);
}

TEST_CASE("checkpoint: model config map round trip") {
    auto cfg = test::tiny_config();
    cfg.dropout = 0.1;
    cfg.init = InitMode::Uniform;
    CHECK(model_config_from_map(model_config_to_map(cfg)) == cfg);
}

TEST_CASE("checkpoint: resuming reproduces the uninterrupted losses") {
    test::TempDir dir("resume");
    auto cfg = test::tiny_config();
    auto pairs = test::random_pairs(30, cfg.vocab_size, 62);
    TrainOptions o;
    o.seed = 3;
    o.steps = 20;
    o.batch_tokens = 30;
    o.warmup = 4;

    std::vector<std::string> straight, resumed;
    auto s = fresh_state<double>(cfg, 3);
    train(s, o, pairs, {}, {[&](const MetricsRow& r) { straight.push_back(to_json_line(r)); }, {}});

    auto first = fresh_state<double>(cfg, 3);
    o.steps = 8;
    train(first, o, pairs, {}, {[&](const MetricsRow& r) { resumed.push_back(to_json_line(r)); }, {}});
    save_checkpoint(dir.path / "mid.bin", first);
    auto second = load_checkpoint<double>(dir.path / "mid.bin");
    o.steps = 20;
    train(second, o, pairs, {}, {[&](const MetricsRow& r) { resumed.push_back(to_json_line(r)); }, {}});
    CHECK(resumed == straight);
    CHECK(same_parameters(second.model.params, s.model.params));
}

TEST_CASE("run config: parsing") {
    auto c = parse_run_config("# comment\nlayers = 3  # trailing\n\nseed=7\ntask = reverse\npeak_lr=1e-3\n");
    CHECK(c.model.layers == 3);
    CHECK(c.seed == 7u);
    CHECK(c.task == "reverse");
    CHECK(c.peak_lr == 1e-3);
    CHECK_THROWS_WITH_AS(parse_run_config("bogus = 1\n", "f.cfg"), "f.cfg:1: unknown config key 'bogus'", Error);
    CHECK_THROWS_WITH_AS(parse_run_config("seed=1\nlayers = two\n", "f.cfg"), doctest::Contains("f.cfg:2: layers"), Error);
    CHECK_THROWS_AS(parse_run_config("layers\n"), Error);
    CHECK_THROWS_AS(parse_run_config("precision = half\n"), Error);
}

TEST_CASE("run config: validation") {
    RunConfig c;
    CHECK_THROWS_WITH_AS(validate(c), "seed required", Error);
    c.seed = 1;
    CHECK_NOTHROW(validate(c));
    c.model.heads = 5;
    CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("heads"), Error);
    c = RunConfig{};
    c.seed = 1;
    c.task = "";
    c.train_tsv = "/nonexistent/file.tsv";
    CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("train_tsv"), Error);
}

TEST_CASE("run config: environment overrides") {
    RunConfig c;
    apply_env_overrides(c, {{"SRMT_SEED", "9"}, {"SRMT_MODEL_DIM", "32"}, {"OTHER", "x"}});
    CHECK(c.seed == 9u);
    CHECK(c.model.model_dim == 32);
    CHECK_THROWS_WITH_AS(apply_env_overrides(c, {{"SRMT_STEPS", "lots"}}), doctest::Contains("SRMT_STEPS"), Error);
}

TEST_CASE("run config: text round trip, hash and resume keys") {
    RunConfig c;
    c.seed = 4;
    c.model.dropout = 0.1;
    c.weights.rev = 0.5;
    auto back = parse_run_config(to_text(c));
    CHECK(to_text(back) == to_text(c));

    RunConfig other = c;
    other.seed = 5;
    other.out_dir = "elsewhere";
    other.steps = 123;
    other.iterations = 9;
    CHECK(config_hash(other) == config_hash(c));
    other.weights.rev = 0.0;
    CHECK(config_hash(other) != config_hash(c));
    CHECK(config_hash(c).size() == 16);

    auto stored = to_map(c);
    RunConfig longer = c;
    longer.steps = 99999;
    longer.eval_interval = 10;
    CHECK(first_resume_mismatch(stored, longer).empty());
    longer.model.layers = 3;
    CHECK(first_resume_mismatch(stored, longer) == "layers");
}

TEST_CASE("run config: help lists every key") {
    auto help = config_help();
    for (const auto& k : config_keys()) CHECK_MESSAGE(help.find("  " + k.name + " ") != std::string::npos, k.name);
    CHECK(help.find("(required)") != std::string::npos);
}

TEST_CASE("run config: synthetic dataset") {
    RunConfig c;
    c.seed = 1;
    c.train_size = 50;
    c.eval_size = 10;
    auto d = load_dataset(c);
    CHECK(d.train.size() == 50);
    CHECK(d.eval.size() == 10);
    CHECK(c.model.vocab_size == d.vocab.size());
    c.model.vocab_size = 3;
    CHECK_THROWS_AS(load_dataset(c), Error);
}
