// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "semsplat/common.hpp"
#include "semsplat/ingest.hpp"
#include "semsplat/loss.hpp"
#include "semsplat/raster.hpp"
#include "semsplat/scene.hpp"

namespace semsplat {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-15;

/// Optimizer parameter groups, in sidecar order.
enum class ParamGroup : int { Position = 0, Rotation, Scaling, Opacity, ShDc, ShRest, Semantic };
inline constexpr int kParamGroupCount = 7;

const char* to_string(ParamGroup group);

/// Scalars per Gaussian held by `group` for a given set layout.
std::size_t group_width(ParamGroup group, const GaussianSet& set);

struct LearningRates {
    double position_init = 1.6e-4;   ///< multiplied by the scene extent
    double position_final = 1.6e-6;  ///< multiplied by the scene extent
    double sh_dc = 2.5e-3;
    double sh_rest = 2.5e-3 / 20.0;
    double opacity = 0.05;
    double scaling = 5e-3;
    double rotation = 1e-3;
    double semantic = 2.5e-2;
};

struct TrainConfig {
    int iterations = 30000;
    LearningRates lr;
    int densify_interval = 100;
    int densify_start = 500;
    int densify_stop = -1;  ///< -1 selects min(15000, iterations / 2)
    double densify_grad_threshold = 2e-4;
    double densify_scale_fraction = 0.01;  ///< clone below this fraction of the extent, split above
    double split_scale_divisor = 1.6;
    double prune_opacity = 0.005;
    double prune_scale_fraction = 0.1;
    int opacity_reset_interval = 3000;
    double opacity_reset_value = 0.01;
    int sh_degree_interval = 1000;
    int sh_degree = 3;
    double lambda_ssim = 0.2;
    double lambda_sem = 1.0;
    std::uint64_t seed = 0;
    std::array<double, 3> background{0.0, 0.0, 0.0};
    int checkpoint_interval = 0;  ///< 0 disables periodic checkpoints

    [[nodiscard]] int effective_densify_stop() const {
        return densify_stop >= 0 ? densify_stop : std::min(15000, iterations / 2);
    }

    /// Throws InvalidParameter naming the offending key.
    void validate() const;
};

struct Moments {
    std::vector<double> first;
    std::vector<double> second;
};

struct OptimState {
    std::uint64_t step = 0;
    double scene_extent = 1.0;
    LearningRates lr;
    int lr_decay_steps = 1;
    std::array<Moments, kParamGroupCount> moments;
    /// Sum over views of the NDC-space 2D mean gradient norm, and the number
    /// of views in which each Gaussian was visible.
    std::vector<double> grad_accum;
    std::vector<std::uint32_t> grad_views;
    std::uint64_t skipped_nonfinite = 0;

    OptimState() = default;
    OptimState(const GaussianSet& set, const LearningRates& lr, double scene_extent, int lr_decay_steps);

    [[nodiscard]] std::size_t size() const { return grad_accum.size(); }
    [[nodiscard]] Moments& group(ParamGroup g) { return moments[static_cast<std::size_t>(g)]; }
    [[nodiscard]] const Moments& group(ParamGroup g) const { return moments[static_cast<std::size_t>(g)]; }

    /// Throws InvalidState unless every per-Gaussian array matches `set`.
    void check_lockstep(const GaussianSet& set) const;
};

/// Exponential interpolation from position_init to position_final (both
/// scaled by the extent) over `decay_steps`; constant afterwards.
double position_learning_rate(const LearningRates& lr, double scene_extent, std::uint64_t step, int decay_steps);

/// Radius of the sphere around the mean camera centre that holds every
/// camera, enlarged by 10 percent.
double scene_extent(std::span<const Camera> cameras);

/// One adaptive moment update of every parameter. Non-finite gradient
/// entries are skipped and counted in `state.skipped_nonfinite`.
void optimizer_step(GaussianSet& set, const GradientBuffers& grads, OptimState& state);

/// Adds one view's screen-space gradient statistics.
void accumulate_densify_stats(OptimState& state, const GradientBuffers& grads);

struct DensifyReport {
    std::size_t cloned = 0;
    std::size_t split = 0;
    std::size_t pruned = 0;
};

/// Clone/split Gaussians whose mean 2D gradient exceeds the threshold, then
/// prune faint or oversized ones. Statistics are reset afterwards.
DensifyReport densify_and_prune(GaussianSet& set, OptimState& state, const TrainConfig& config, double scene_extent,
                                Rng& rng);

/// Lowers every opacity above `value` to `value`.
void reset_opacity(GaussianSet& set, double value = 0.01);

/// Removes entries `keep[i] == false` from every per-Gaussian array.
void filter_gaussians(GaussianSet& set, OptimState& state, const std::vector<bool>& keep);

struct IterationLog {
    int iteration = 0;
    std::string frame;
    double l1 = 0.0;
    double dssim = 0.0;
    double ce = 0.0;
    double total = 0.0;
    std::size_t gaussians = 0;
};

struct TrainResult {
    GaussianSet set;
    OptimState state;
    std::vector<IterationLog> log;
};

/// Called with the iteration count reached so far.
using CheckpointFn = std::function<void(int iteration, const GaussianSet&, const OptimState&)>;

/// Raised when the loss stops being finite. Carries the most recent
/// checkpointed state (or the initial one).
class TrainingDiverged : public Error {
public:
    TrainingDiverged(int iteration, GaussianSet last_good, OptimState last_good_state, int last_good_iteration);

    int iteration;
    GaussianSet last_good;
    OptimState last_good_state;
    int last_good_iteration;
};

TrainResult train(std::span<const Frame> frames, const GaussianSet& init, const TrainConfig& config,
                  const CheckpointFn& on_checkpoint = {});

// ---------------------------------------------------------------------------
// Optimizer-state sidecar
//
// Little-endian layout:
//   char[8]  magic "SSOPTST\0"
//   u32      version (1)
//   u64      step
//   u64      gaussian count N
//   u32      group count G
//   u32[G]   scalars per Gaussian for each group
//   f32      scene extent
//   u64      skipped non-finite gradient entries
//   f32[...] for each group: first moments (N x width), then second moments
//   f32[N]   accumulated 2D gradient
//   u32[N]   visible-view counts

inline constexpr std::uint32_t kOptimStateVersion = 1;

void write_optimizer_state(const std::filesystem::path& path, const OptimState& state);
OptimState read_optimizer_state(const std::filesystem::path& path);

}  // namespace semsplat
