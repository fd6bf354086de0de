#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "oodkit/evaluator.hpp"
#include "oodkit/probe.hpp"
#include "oodkit/scorers.hpp"
#include "oodkit/synth.hpp"

namespace oodkit::cli {

/// Exit codes shared by every subcommand.
enum ExitCode : int { kOk = 0, kDomainFailure = 1, kUsage = 2 };

struct RunConfig {
    std::string manifest;
    std::string out;
    std::vector<std::string> methods;
    std::string probe = "linear";
    ProbeConfig probe_cfg;
    ScorerParams scorer;
    std::uint64_t seed = 0;
    std::size_t threads = 0;
    std::vector<std::string> formats{"text", "csv", "json"};
    ScenarioConfig scenario;
    std::size_t seeds = 1;

    /// Snapshot embedded in reports. Excludes paths and thread count so that
    /// reruns elsewhere or with other parallelism produce identical bytes.
    std::string snapshot_json() const;
};

/// Applies keys of a JSON config object onto cfg (keys mirror the long flag
/// names with '-' replaced by '_'). Throws IoError on unknown keys.
void apply_config_file(const std::filesystem::path& path, RunConfig& cfg);

int cmd_validate(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_probe(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_geometry(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Full command-line entry point; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace oodkit::cli
