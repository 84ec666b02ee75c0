#include "srmt/commands.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "srmt/checkpoint.hpp"
#include "srmt/decoding.hpp"

namespace srmt {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr std::size_t kDecodeChunk = 256;

std::string fixed(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

Metadata read_key_values(const fs::path& path) {
    Metadata m;
    for (const auto& line : read_lines(path)) {
        auto eq = line.find('=');
        if (eq != std::string::npos) m[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return m;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

/// Keeps the rows of a JSONL log whose step is at most `step`.
void truncate_log(const fs::path& path, long step) {
    if (!fs::exists(path)) return;
    std::string kept;
    for (const auto& line : read_lines(path)) {
        if (line.empty()) continue;
        if (json::parse(line).at("step").get<long>() <= step) kept += line + "\n";
    }
    write_text(path, kept);
}

Metadata checkpoint_metadata(const RunConfig& user, const Vocab& vocab, const std::string& tag) {
    Metadata m;
    for (const auto& [k, v] : to_map(user)) m["config." + k] = v;
    std::string tokens;
    for (const auto& t : vocab.tokens()) tokens += t + "\n";
    m["vocab"] = tokens;
    m["tag"] = tag;
    return m;
}

Vocab vocab_from_metadata(const Metadata& m, const std::string& path) {
    auto it = m.find("vocab");
    if (it == m.end()) throw Error("checkpoint " + path + " carries no vocabulary");
    std::vector<std::string> tokens;
    std::istringstream in(it->second);
    for (std::string line; std::getline(in, line);) tokens.push_back(line);
    return Vocab::from_tokens(std::move(tokens));
}

RunConfig config_from_metadata(const Metadata& m) {
    RunConfig c;
    for (const auto& [k, v] : m)
        if (k.rfind("config.", 0) == 0) set_config_value(c, k.substr(7), v);
    return c;
}

template <typename Scalar>
RunOutcome train_typed(const RunConfig& user, RunConfig effective, const Dataset& data, const fs::path& dir,
                       const std::string& tag, bool resume, std::ostream& log) {
    const fs::path ckpt = dir / "checkpoint.bin";
    const fs::path metrics = dir / "metrics.jsonl";
    const fs::path throughput = dir / "throughput.jsonl";
    const Metadata meta = checkpoint_metadata(user, data.vocab, tag);

    TrainState<Scalar> state;
    if (resume) {
        if (!fs::exists(ckpt)) throw Error("nothing to resume: " + ckpt.string() + " does not exist");
        Metadata stored;
        state = load_checkpoint<Scalar>(ckpt, &stored);
        Metadata stored_config;
        for (const auto& [k, v] : stored)
            if (k.rfind("config.", 0) == 0) stored_config[k.substr(7)] = v;
        auto bad = first_resume_mismatch(stored_config, user);
        if (!bad.empty()) throw Error("cannot resume: config key '" + bad + "' differs from the checkpoint");
        if (!(state.model.config == effective.model)) throw Error("cannot resume: model config differs from the checkpoint");
        truncate_log(metrics, state.step);
        truncate_log(throughput, state.step);
        log << "resuming " << dir.string() << " at step " << state.step << "\n";
    } else {
        state = fresh_state<Scalar>(effective.model, *user.seed);
        write_text(metrics, "");
        write_text(throughput, "");
    }

    auto write_run_info = [&](const std::string& status) {
        std::ostringstream s;
        s << "tag=" << tag << "\nhash=" << config_hash(user) << "\nseed=" << *user.seed << "\nstatus=" << status
          << "\nstep=" << state.step << "\nflops=" << fixed(state.cumulative_flops, 0) << "\n";
        write_text(dir / "run.txt", s.str());
    };
    write_run_info("running");

    std::ofstream metrics_out(metrics, std::ios::binary | std::ios::app);
    std::ofstream throughput_out(throughput, std::ios::binary | std::ios::app);
    TrainHooks hooks;
    hooks.log = [&](const MetricsRow& row) {
        metrics_out << to_json_line(row) << '\n';
        metrics_out.flush();
        if (row.kind == "eval")
            log << "step " << row.step << ": token accuracy " << fixed(100 * row.eval.token_accuracy)
                << "%, exact match " << fixed(100 * row.eval.exact_match) << "%, length accuracy "
                << fixed(100 * row.length_accuracy) << "%\n";
    };
    hooks.throughput = [&](long step, double tps) {
        json j;
        j["step"] = step;
        j["tokens_per_sec"] = tps;
        throughput_out << j.dump() << '\n';
    };
    CheckpointHook<Scalar> checkpoint = [&](const TrainState<Scalar>& s) { save_checkpoint(ckpt, s, meta); };

    train(state, train_options(effective), data.train, data.eval, hooks, checkpoint);
    metrics_out.close();
    throughput_out.close();
    save_checkpoint(ckpt, state, meta);
    write_run_info("complete");
    log << "finished " << dir.string() << " at step " << state.step << " (" << tag << ", avg loss "
        << fixed(state.avg_total, 4) << ")\n";
    return {dir, tag, state.step, state.cumulative_flops};
}

/// Calls f(TrainState<S>&, Metadata&) with the checkpoint loaded at its stored precision.
template <typename F>
auto with_checkpoint(const fs::path& path, F&& f) {
    Metadata meta;
    if (checkpoint_scalar_bytes(path) == sizeof(float)) {
        auto state = load_checkpoint<float>(path, &meta);
        return f(state, meta);
    }
    auto state = load_checkpoint<double>(path, &meta);
    return f(state, meta);
}

std::vector<std::vector<TokenId>> encode_lines(const Vocab& vocab, const std::vector<std::string>& lines) {
    std::vector<std::vector<TokenId>> out;
    for (const auto& l : lines) out.push_back(vocab.encode(l));
    return out;
}

template <typename Scalar>
std::vector<DecodeResult> decode_all(const Model<Scalar>& model, const std::vector<std::vector<TokenId>>& sources,
                                     const DecodeOptions& options) {
    std::vector<DecodeResult> out;
    for (std::size_t start = 0; start < sources.size(); start += kDecodeChunk) {
        std::vector<std::vector<TokenId>> chunk(sources.begin() + static_cast<std::ptrdiff_t>(start),
                                                sources.begin() + static_cast<std::ptrdiff_t>(std::min(sources.size(), start + kDecodeChunk)));
        for (auto& r : mask_predict(model, chunk, options)) out.push_back(std::move(r));
    }
    return out;
}

std::vector<std::string> token_strings(const Vocab& vocab, const std::vector<TokenId>& ids) {
    std::vector<std::string> out;
    for (auto id : ids) out.push_back(vocab.token(id));
    return out;
}

json trace_json(const Vocab& vocab, std::size_t line, const DecodeResult& r) {
    json j;
    j["line"] = line;
    j["output"] = vocab.decode(r.output);
    j["winner"] = r.best;
    json cands = json::array();
    for (const auto& h : r.candidates) {
        json c;
        c["length"] = h.length;
        c["length_rank"] = h.length_rank;
        c["score"] = h.score;
        c["tokens"] = token_strings(vocab, h.tokens);
        json rounds = json::array();
        for (const auto& t : h.trace) {
            json tj;
            tj["iteration"] = t.iteration;
            tj["predicted"] = t.predicted;
            tj["tokens"] = token_strings(vocab, t.tokens);
            tj["confidences"] = t.confidences;
            tj["remasked"] = t.remasked;
            rounds.push_back(std::move(tj));
        }
        c["trace"] = std::move(rounds);
        cands.push_back(std::move(c));
    }
    j["candidates"] = std::move(cands);
    return j;
}

std::vector<std::string> read_input(const std::string& path) {
    if (path.empty() || path == "-") {
        std::vector<std::string> lines;
        for (std::string line; std::getline(std::cin, line);) lines.push_back(line);
        return lines;
    }
    return read_lines(path);
}

void write_lines(const std::string& path, const std::vector<std::string>& lines, std::ostream& out) {
    if (path.empty() || path == "-") {
        for (const auto& l : lines) out << l << "\n";
        return;
    }
    std::string text;
    for (const auto& l : lines) text += l + "\n";
    write_text(path, text);
}

std::vector<long> parse_long_list(const std::string& s) {
    std::vector<long> out;
    std::istringstream in(s);
    for (std::string item; std::getline(in, item, ',');) {
        try {
            std::size_t used = 0;
            out.push_back(std::stol(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw Error("not an integer list: " + s);
        }
    }
    return out;
}

RunConfig config_with_overrides(const std::string& path, const std::vector<std::string>& sets) {
    RunConfig c = path.empty() ? RunConfig{} : load_run_config(path);
    apply_env_overrides(c, process_environment());
    for (const auto& kv : sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
        set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return c;
}

std::string flops_table(const RunConfig& config, Index src_len, Index tgt_len, bool nonlinear, bool training) {
    ModelConfig m = config.model;
    if (m.vocab_size == 0) {
        RunConfig tmp = config;
        m.vocab_size = static_cast<int>(load_dataset(tmp).vocab.size());
    }
    m.validate();
    FlopsOptions opts{nonlinear};
    auto mflops = [](double f) { return fixed(f / 1e6, 3); };
    std::ostringstream out;
    out << "# FLOPs per sentence, forward pass; 1 multiply-accumulate = 2 FLOPs; src_len=" << src_len
        << " tgt_len=" << tgt_len << " vocab=" << m.vocab_size
        << (nonlinear ? "; softmax/layer-norm/activation included" : "; matmuls only") << "\n";
    out << "module      MFLOPs\n";
    out << "encoder     " << mflops(static_cast<double>(flops_estimate(m, src_len, tgt_len, FlopsModule::Encoder, opts))) << "\n";
    out << "decoder     " << mflops(static_cast<double>(flops_estimate(m, src_len, tgt_len, FlopsModule::Decoder, opts))) << "\n";
    out << "reviewer    " << mflops(static_cast<double>(flops_estimate(m, src_len, tgt_len, FlopsModule::Reviewer, opts))) << "\n";
    if (training) {
        double full = training_step_flops(m, {src_len}, {tgt_len}, true, config.weights.ar != 0.0, opts);
        double ablated = training_step_flops(m, {src_len}, {tgt_len}, false, config.weights.ar != 0.0, opts);
        out << "# training FLOPs per sentence per step (forward + backward = 3x forward)\n";
        out << "model       MFLOPs\n";
        out << "full        " << mflops(full) << "\n";
        out << "cmtm-only   " << mflops(ablated) << "\n";
        out << "ratio       " << fixed(full / ablated, 3) << "\n";
    }
    return out.str();
}

struct PairedScores {
    double bleu = 0.0;
    AccuracyStats acc;
    double repetition = 0.0;
};

PairedScores score_run(const fs::path& dir) {
    RunConfig c = load_run_config(dir / "config.txt");
    Dataset d = load_dataset(c);
    if (d.eval.empty()) throw Error("run " + dir.string() + " has no held-out data");
    return with_checkpoint(dir / "checkpoint.bin", [&](auto& state, Metadata&) {
        std::vector<std::vector<TokenId>> sources, refs, hyps;
        for (const auto& p : d.eval) {
            sources.push_back(p.source);
            refs.push_back(p.target);
        }
        for (auto& r : decode_all(state.model, sources, decode_options(c))) hyps.push_back(std::move(r.output));
        std::vector<std::string> ref_text, hyp_text;
        for (std::size_t i = 0; i < refs.size(); ++i) {
            ref_text.push_back(d.vocab.decode(refs[i]));
            hyp_text.push_back(d.vocab.decode(hyps[i]));
        }
        PairedScores s;
        s.bleu = bleu(ref_text, hyp_text);
        s.acc = accuracy(refs, hyps);
        s.repetition = repetition_rate(hyp_text);
        return s;
    });
}

}  // namespace

fs::path run_directory(const RunConfig& config) {
    if (!config.seed) throw Error("seed required");
    return fs::path(config.out_dir) / (config_hash(config) + "-s" + std::to_string(*config.seed));
}

RunOutcome run_training(TrainRequest request, std::ostream& log) {
    RunConfig user = request.config;
    if (request.ablate_review) user.weights.rev = 0.0;
    validate(user);
    const std::string tag = user.weights.rev == 0.0 ? "cmtm-only" : "full";
    const fs::path dir = run_directory(user);

    RunConfig effective = user;
    Dataset data = load_dataset(effective);
    fs::create_directories(dir);
    write_text(dir / "config.txt", to_text(user));
    data.vocab.save(dir / "vocab.txt");
    log << "run " << dir.string() << " (" << tag << "): " << data.train.size() << " training pairs, "
        << data.eval.size() << " held-out, vocabulary " << data.vocab.size() << "\n";

    if (user.precision == "float")
        return train_typed<float>(user, effective, data, dir, tag, request.resume, log);
    return train_typed<double>(user, effective, data, dir, tag, request.resume, log);
}

RunCurve read_run_curve(const fs::path& run_dir) {
    const fs::path metrics = run_dir / "metrics.jsonl";
    if (!fs::exists(metrics)) throw Error("incomplete run " + run_dir.string() + ": no metrics.jsonl");
    if (!fs::exists(run_dir / "run.txt") || read_key_values(run_dir / "run.txt")["status"] != "complete")
        throw Error("incomplete run " + run_dir.string());
    RunCurve curve;
    auto info = read_key_values(run_dir / "run.txt");
    curve.name = info["tag"] + ":" + run_dir.filename().string();
    for (const auto& line : read_lines(metrics)) {
        if (line.empty()) continue;
        auto j = json::parse(line);
        if (j.at("kind") == "eval") {
            EvalPoint p;
            p.step = j.at("step").get<long>();
            p.cumulative_flops = j.at("flops").get<double>();
            p.token_accuracy = j.at("token_accuracy").get<double>();
            p.exact_match = j.at("exact_match").get<double>();
            p.length_accuracy = j.at("length_accuracy").get<double>();
            curve.evals.push_back(p);
        } else {
            curve.steps = j.at("step").get<long>();
            curve.total_flops = j.at("flops").get<double>();
        }
    }
    return curve;
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(args, out, err);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Conditional masked translation with a self-review decoder", "srmt"};
    app.require_subcommand(1);
    app.footer(config_help());

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model; the run directory is <out_dir>/<config hash>-s<seed>");
    std::string config_path;
    std::vector<std::string> sets;
    bool ablate = false, resume = false, print_config = false;
    train_cmd->add_option("--config", config_path, "flat key = value config file")->required();
    train_cmd->add_option("--set", sets, "override one key, key=value (repeatable)");
    train_cmd->add_flag("--ablate-review", ablate, "force weight_rev=0 and tag the run cmtm-only");
    train_cmd->add_flag("--resume", resume, "continue from the run directory's checkpoint");
    train_cmd->add_flag("--print-config", print_config, "print the effective config and exit");
    train_cmd->footer(config_help());

    // decode
    auto* decode_cmd = app.add_subcommand("decode", "translate source lines with Mask-Predict");
    std::string ckpt, input, output, trace_path;
    int iterations = 0, length_beam = 0;
    bool ar = false;
    decode_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    decode_cmd->add_option("--input", input, "source lines (default stdin)");
    decode_cmd->add_option("--output", output, "hypotheses (default stdout)");
    decode_cmd->add_option("--iterations", iterations, "refinement iterations T (default from the run config)");
    decode_cmd->add_option("--length-beam", length_beam, "length candidates k (default from the run config)");
    decode_cmd->add_option("--trace", trace_path, "write per-iteration traces as JSON lines");
    decode_cmd->add_flag("--ar", ar, "greedy left-to-right decoding through the causal path");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "score hypotheses against references");
    eval_cmd->require_subcommand(1);
    std::string ref_path, hyp_path;
    bool smooth = false;
    int max_ngram = 4;
    auto* bleu_cmd = eval_cmd->add_subcommand("bleu", "corpus BLEU (unsmoothed by default)");
    bleu_cmd->add_option("--ref", ref_path, "reference lines")->required();
    bleu_cmd->add_option("--hyp", hyp_path, "hypothesis lines")->required();
    bleu_cmd->add_flag("--smooth", smooth, "add-one smoothing for orders >= 2");
    bleu_cmd->add_option("--max-ngram", max_ngram, "highest n-gram order");
    auto* acc_cmd = eval_cmd->add_subcommand("accuracy", "token accuracy and exact match");
    acc_cmd->add_option("--ref", ref_path, "reference lines")->required();
    acc_cmd->add_option("--hyp", hyp_path, "hypothesis lines")->required();

    // analyze
    auto* analyze_cmd = app.add_subcommand("analyze", "diagnostics");
    analyze_cmd->require_subcommand(1);
    std::string iteration_list = "1,2,3,4,5", sentence, edges = "1,5,10,20,40";
    long src_len = 0, tgt_len = 0;
    bool nonlinear = false;
    auto* rep_cmd = analyze_cmd->add_subcommand(
        "repetition", "percentage of tokens equal to their predecessor, over all tokens");
    rep_cmd->add_option("--hyp", hyp_path, "hypothesis lines");
    rep_cmd->add_option("--checkpoint", ckpt, "decode --input at each of --iterations instead");
    rep_cmd->add_option("--input", input, "source lines");
    rep_cmd->add_option("--iterations", iteration_list, "comma-separated T values");
    auto* cos_cmd = analyze_cmd->add_subcommand("cosine", "cosine map of final decoder states as CSV");
    cos_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    cos_cmd->add_option("--sentence", sentence, "source sentence")->required();
    cos_cmd->add_option("--iterations", iterations, "refinement iterations T");
    cos_cmd->add_option("--output", output, "CSV file (default stdout)");
    auto* buckets_cmd = analyze_cmd->add_subcommand("buckets", "BLEU by reference length");
    buckets_cmd->add_option("--ref", ref_path, "reference lines")->required();
    buckets_cmd->add_option("--hyp", hyp_path, "hypothesis lines")->required();
    buckets_cmd->add_option("--edges", edges, "strictly increasing bucket edges");
    auto add_flops_options = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "config file")->required();
        cmd->add_option("--set", sets, "override one key, key=value (repeatable)");
        cmd->add_option("--src-len", src_len, "source length without <LEN> (default max_len)");
        cmd->add_option("--tgt-len", tgt_len, "target length with <EOS> (default max_len + 1)");
        cmd->add_flag("--include-nonlinear", nonlinear, "count softmax, layer-norm and activation operations");
    };
    auto* aflops_cmd = analyze_cmd->add_subcommand("flops", "FLOPs of encoder, decoder and reviewer");
    add_flops_options(aflops_cmd);

    // compare
    auto* compare_cmd = app.add_subcommand("compare", "training FLOPs to a target and paired score deltas");
    std::string run_a, run_b, metric = "exact";
    double target = 0.95;
    bool no_decode = false;
    compare_cmd->add_option("run_a", run_a, "first run directory")->required();
    compare_cmd->add_option("run_b", run_b, "second run directory")->required();
    compare_cmd->add_option("--metric", metric, "exact or token")->check(CLI::IsMember({"exact", "token"}));
    compare_cmd->add_option("--target", target, "held-out accuracy to reach");
    compare_cmd->add_flag("--no-decode", no_decode, "skip the paired BLEU/accuracy/repetition deltas");

    // flops
    auto* flops_cmd = app.add_subcommand("flops", "per-sentence module FLOPs and training-step FLOPs");
    add_flops_options(flops_cmd);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (train_cmd->parsed()) {
            RunConfig c = config_with_overrides(config_path, sets);
            if (ablate) c.weights.rev = 0.0;
            if (print_config) {
                out << to_text(c);
                return 0;
            }
            run_training({c, ablate, resume}, err);
            out << run_directory(c).string() << "\n";
            return 0;
        }

        if (decode_cmd->parsed()) {
            auto lines = read_input(input);
            std::vector<std::string> hyps;
            with_checkpoint(ckpt, [&](auto& state, Metadata& meta) {
                Vocab vocab = vocab_from_metadata(meta, ckpt);
                RunConfig rc = config_from_metadata(meta);
                DecodeOptions opts = decode_options(rc);
                if (iterations > 0) opts.iterations = iterations;
                if (length_beam > 0) opts.length_beam = length_beam;
                auto sources = encode_lines(vocab, lines);
                if (ar) {
                    for (const auto& s : sources)
                        hyps.push_back(vocab.decode(greedy_ar_decode(state.model, s, state.model.config.max_target_len)));
                    return 0;
                }
                auto results = decode_all(state.model, sources, opts);
                std::string trace;
                for (std::size_t i = 0; i < results.size(); ++i) {
                    hyps.push_back(vocab.decode(results[i].output));
                    if (!trace_path.empty()) trace += trace_json(vocab, i, results[i]).dump() + "\n";
                }
                if (!trace_path.empty()) write_text(trace_path, trace);
                return 0;
            });
            write_lines(output, hyps, out);
            return 0;
        }

        if (bleu_cmd->parsed()) {
            auto refs = read_lines(ref_path), hyps = read_lines(hyp_path);
            std::vector<TokenSeq> r, h;
            for (const auto& s : refs) r.push_back(split_tokens(s));
            for (const auto& s : hyps) h.push_back(split_tokens(s));
            auto st = bleu_stats(r, h, {max_ngram, smooth});
            out << "BLEU = " << fixed(st.score) << ", ";
            for (std::size_t n = 0; n < st.precisions.size(); ++n)
                out << (n ? "/" : "") << fixed(100 * st.precisions[n], 1);
            double ratio = st.reference_length ? static_cast<double>(st.hypothesis_length) / st.reference_length : 0.0;
            out << " (BP=" << fixed(st.brevity_penalty, 3) << ", ratio=" << fixed(ratio, 3)
                << ", hyp_len=" << st.hypothesis_length << ", ref_len=" << st.reference_length << ")\n";
            return 0;
        }

        if (acc_cmd->parsed()) {
            auto refs = read_lines(ref_path), hyps = read_lines(hyp_path);
            std::unordered_map<std::string, TokenId> ids;
            auto encode = [&](const std::vector<std::string>& lines) {
                std::vector<std::vector<TokenId>> out_ids;
                for (const auto& l : lines) {
                    std::vector<TokenId> row;
                    for (const auto& t : split_tokens(l)) row.push_back(ids.emplace(t, static_cast<TokenId>(ids.size())).first->second);
                    out_ids.push_back(std::move(row));
                }
                return out_ids;
            };
            auto a = accuracy(encode(refs), encode(hyps));
            out << "token_accuracy = " << fixed(100 * a.token_accuracy) << "%\nexact_match = " << fixed(100 * a.exact_match)
                << "%\nsentences = " << a.sentences << "\n";
            return 0;
        }

        if (rep_cmd->parsed()) {
            out << "# repetition = 100 * tokens equal to their predecessor / all tokens\n";
            if (!ckpt.empty()) {
                auto lines = read_input(input);
                with_checkpoint(ckpt, [&](auto& state, Metadata& meta) {
                    Vocab vocab = vocab_from_metadata(meta, ckpt);
                    DecodeOptions opts = decode_options(config_from_metadata(meta));
                    auto sources = encode_lines(vocab, lines);
                    for (long t : parse_long_list(iteration_list)) {
                        opts.iterations = static_cast<int>(t);
                        std::vector<std::string> hyps;
                        for (auto& r : decode_all(state.model, sources, opts)) hyps.push_back(vocab.decode(r.output));
                        out << "T=" << t << " repetition=" << fixed(repetition_rate(hyps)) << "%\n";
                    }
                    return 0;
                });
                return 0;
            }
            if (hyp_path.empty()) throw Error("analyze repetition needs --hyp or --checkpoint");
            out << "repetition=" << fixed(repetition_rate(read_lines(hyp_path))) << "%\n";
            return 0;
        }

        if (cos_cmd->parsed()) {
            auto map = with_checkpoint(ckpt, [&](auto& state, Metadata& meta) {
                Vocab vocab = vocab_from_metadata(meta, ckpt);
                DecodeOptions opts = decode_options(config_from_metadata(meta));
                if (iterations > 0) opts.iterations = iterations;
                return cosine_map(state.model, vocab.encode(sentence), opts);
            });
            std::vector<std::string> rows;
            for (Index i = 0; i < map.similarity.rows(); ++i) {
                std::string row;
                for (Index j = 0; j < map.similarity.cols(); ++j) row += (j ? "," : "") + fixed(map.similarity(i, j), 6);
                rows.push_back(row);
            }
            for (auto z : map.zero_rows) err << "warning: zero-norm state at position " << z << "\n";
            write_lines(output, rows, out);
            return 0;
        }

        if (buckets_cmd->parsed()) {
            auto report = length_bucket_scores(read_lines(ref_path), read_lines(hyp_path), parse_long_list(edges));
            out << "bucket       pairs  BLEU\n";
            auto label = [](const BucketScore& b) {
                std::string s = "[" + std::to_string(b.lower) + "," + std::to_string(b.upper) + ")";
                return s + std::string(s.size() < 13 ? 13 - s.size() : 1, ' ');
            };
            for (const auto& b : report.buckets) {
                std::string n = std::to_string(b.count);
                out << label(b) << n << std::string(n.size() < 7 ? 7 - n.size() : 1, ' ') << fixed(b.bleu)
                    << (b.low_confidence ? "  low-confidence" : "") << "\n";
            }
            for (const auto& b : report.omitted) out << label(b) << "0      -  omitted (empty)\n";
            if (report.out_of_range) out << "# " << report.out_of_range << " pairs outside the edges\n";
            return 0;
        }

        if (aflops_cmd->parsed() || flops_cmd->parsed()) {
            RunConfig c = config_with_overrides(config_path, sets);
            Index s = src_len > 0 ? src_len : c.max_len;
            Index t = tgt_len > 0 ? tgt_len : c.max_len + 1;
            out << flops_table(c, s, t, nonlinear, flops_cmd->parsed());
            return 0;
        }

        if (compare_cmd->parsed()) {
            RunCurve a = read_run_curve(run_a), b = read_run_curve(run_b);
            TargetMetric m = metric == "token" ? TargetMetric::TokenAccuracy : TargetMetric::ExactMatch;
            auto report = training_flops_report(a, b, m, target);
            auto reach = [&](const RunTarget& t) {
                return t.reached ? "step " + std::to_string(t.step) + ", " + fixed(t.cumulative_flops / 1e9, 3) + " GFLOPs"
                                 : std::string("unreached");
            };
            out << "# target: held-out " << (metric == "token" ? "token accuracy" : "exact match") << " >= "
                << fixed(target, 4) << "\n";
            out << "A " << a.name << ": steps=" << a.steps << " flops/step=" << fixed(report.flops_per_step_a / 1e6, 3)
                << "M target=" << reach(report.a) << "\n";
            out << "B " << b.name << ": steps=" << b.steps << " flops/step=" << fixed(report.flops_per_step_b / 1e6, 3)
                << "M target=" << reach(report.b) << "\n";
            out << "flops_ratio (B/A) = " << (report.ratio ? fixed(*report.ratio, 3) : std::string("n/a (target unreached)"))
                << "\n";
            if (!no_decode) {
                auto sa = score_run(run_a), sb = score_run(run_b);
                out << "metric          A        B        delta(B-A)\n";
                auto row = [&](const std::string& name, double x, double y) {
                    out << name << std::string(16 - name.size(), ' ') << fixed(x) << std::string(x < 10 ? 6 : x < 100 ? 5 : 4, ' ')
                        << fixed(y) << std::string(y < 10 ? 6 : y < 100 ? 5 : 4, ' ') << fixed(y - x) << "\n";
                };
                row("bleu", sa.bleu, sb.bleu);
                row("token_accuracy", 100 * sa.acc.token_accuracy, 100 * sb.acc.token_accuracy);
                row("exact_match", 100 * sa.acc.exact_match, 100 * sb.acc.exact_match);
                row("repetition", sa.repetition, sb.repetition);
            }
            return 0;
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace srmt
