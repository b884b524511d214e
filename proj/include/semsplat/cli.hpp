// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "semsplat/common.hpp"
#include "semsplat/metrics.hpp"
#include "semsplat/optim.hpp"

namespace semsplat::cli {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

int exit_code_for(ErrorKind kind);

/// Settings shared by the commands. Resolution order: built-in defaults,
/// then a `key = value` config file, then command-line flags.
struct RunConfig {
    std::filesystem::path data;
    std::filesystem::path out;
    std::optional<std::filesystem::path> classes;  ///< overrides <data>/classes.tsv
    int holdout_every = kDefaultHoldoutEvery;
    TrainConfig train;
};

using KeyValues = std::map<std::string, std::string>;

/// Parses `key = value` lines; `#` starts a comment. Throws Usage with the
/// line number on malformed input.
KeyValues read_config_file(const std::filesystem::path& path);

/// Applies recognised keys to `config`. Throws Usage for unknown keys or
/// unparsable values.
void apply_config(const KeyValues& values, RunConfig& config);

/// Every key accepted by apply_config, with its current value.
KeyValues describe_config(const RunConfig& config);

/// Exclusive marker file in an output directory, removed on destruction.
class OutputLock {
public:
    explicit OutputLock(const std::filesystem::path& dir);
    ~OutputLock();
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    std::filesystem::path path_;
};

inline constexpr const char* kLockFileName = ".semsplat.lock";

// ---------------------------------------------------------------------------
// Commands. Each validates its inputs before writing anything.

struct TrainSummary {
    std::size_t gaussians = 0;
    std::size_t train_frames = 0;
    std::optional<EvalReport> held_out;
};

/// Writes point_cloud.ply, point_cloud.optim, loss.tsv, config.txt,
/// checkpoints/ and (when the test split is non-empty) eval.txt / eval.kv.
TrainSummary cmd_train(const RunConfig& config);

struct RenderRequest {
    std::filesystem::path checkpoint;
    std::filesystem::path cameras;  ///< dataset root or COLMAP model directory
    std::filesystem::path out;
    std::vector<std::string> remove;
    std::vector<std::string> extract;
    double min_confidence = 0.0;
    bool labels = false;
    std::array<double, 3> background{0.0, 0.0, 0.0};
};

/// One PNG per registered image (and labels/<stem>.png with `labels`).
void cmd_render(const RenderRequest& request);

enum class EvalSplit { Test, Train, All };

struct EvalRequest {
    std::filesystem::path checkpoint;
    std::filesystem::path data;
    std::optional<std::filesystem::path> out;
    int holdout_every = kDefaultHoldoutEvery;
    EvalSplit split = EvalSplit::Test;
    MiouMode miou_mode = MiouMode::PresentClasses;
    std::array<double, 3> background{0.0, 0.0, 0.0};
};

EvalReport cmd_eval(const EvalRequest& request);

struct EditRequest {
    std::filesystem::path input;
    std::filesystem::path output;
    std::vector<std::string> classes;
    double min_confidence = 0.0;
    bool plain = false;  ///< drop the semantic extension from the output
};

/// Returns the number of Gaussians written.
std::size_t cmd_remove(const EditRequest& request);
std::size_t cmd_extract(const EditRequest& request);

void cmd_info(const std::filesystem::path& checkpoint, std::ostream& os);

void cmd_make_toy(const std::filesystem::path& out, std::uint64_t seed);

/// Resolves names or ids (comma-separated entries allowed) through `classes`.
std::vector<int> resolve_classes(const ClassTable& classes, const std::vector<std::string>& names);

/// Parses "r,g,b" with components in [0, 1].
std::array<double, 3> parse_color(const std::string& text);

/// Full command-line entry point; returns the process exit code.
int run(int argc, char** argv);

}  // namespace semsplat::cli
