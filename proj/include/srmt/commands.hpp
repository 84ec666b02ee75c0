#ifndef SRMT_COMMANDS_HPP
#define SRMT_COMMANDS_HPP

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "srmt/analysis.hpp"
#include "srmt/run_config.hpp"

namespace srmt {

struct TrainRequest {
    RunConfig config;
    bool ablate_review = false;
    bool resume = false;
};

struct RunOutcome {
    std::filesystem::path dir;
    std::string tag;  // "full" or "cmtm-only"
    long steps = 0;
    double cumulative_flops = 0.0;
};

/// Trains into <out_dir>/<config hash>-s<seed>, writing config.txt, vocab.txt, run.txt,
/// metrics.jsonl, throughput.jsonl and checkpoint.bin.
RunOutcome run_training(TrainRequest request, std::ostream& log);

/// Directory a config trains into.
std::filesystem::path run_directory(const RunConfig& config);

/// Eval rows and totals from a run directory; throws unless the run completed.
RunCurve read_run_curve(const std::filesystem::path& run_dir);

/// Entry point of the `srmt` executable.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace srmt

#endif
