// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "semsplat/image.hpp"
#include "semsplat/projection.hpp"
#include "semsplat/scene.hpp"

namespace semsplat {

/// Blending stops before a Gaussian that would push transmittance below this.
inline constexpr double kMinTransmittance = 1e-4;

/// Per-Gaussian screen-space state shared by the forward and backward passes.
struct SplatState {
    bool visible = false;
    Vec2 mean2d;
    Sym2 conic;
    double depth = 0.0;
    double opacity = 0.0;
    std::array<double, 3> color{};
    /// Channels whose SH value was clamped at zero (no gradient).
    std::array<bool, 3> color_clamped{};
};

struct RenderOutput {
    ImageF rgb;        ///< H x W x 3
    ImageF semantic;   ///< H x W x C, soft class mass
    ImageF alpha;      ///< H x W x 1, 1 - final transmittance
    Image<std::int32_t> last_contributor;  ///< global index of the last blended Gaussian, -1 if none

    // Backward-pass bookkeeping.
    std::size_t gaussian_count = 0;
    int num_classes = 0;
    std::array<double, 3> background{};
    ImageF transmittance;                        ///< final T per pixel
    Image<std::uint32_t> contributor_end;        ///< tile-list entries consumed per pixel
    std::vector<SplatState> splats;              ///< indexed by Gaussian
    std::vector<double> probs;                   ///< class probabilities, N x C
    std::vector<std::vector<std::uint32_t>> tile_lists;  ///< depth-sorted Gaussian ids per tile
};

struct GradientBuffers {
    std::vector<Vec3> positions;
    std::vector<Quat> rotations;
    std::vector<Vec3> log_scales;
    std::vector<double> opacity_logits;
    std::vector<double> sh_coeffs;
    std::vector<double> semantic_logits;
    /// ||dL/d mean2d|| in normalized device units, and 1 for every Gaussian
    /// that survived culling in this view.
    std::vector<double> mean2d_grad_norm;
    std::vector<std::uint32_t> visible_count;

    void resize_like(const GaussianSet& set);
};

/// Front-to-back tiled compositing of colour and class probabilities.
RenderOutput rasterize_forward(const GaussianSet& set, const Camera& camera, const std::array<double, 3>& background);

/// Gradients of a scalar loss given its derivatives w.r.t. the rendered rgb
/// (H x W x 3) and semantic (H x W x C) images.
GradientBuffers rasterize_backward(const GaussianSet& set, const Camera& camera, const RenderOutput& out,
                                   const ImageF& d_rgb, const ImageF& d_semantic);

/// Argmax over semantic channels; alpha < 0.5 maps to the ignore label;
/// ties resolve to the lowest class id.
LabelImage render_label_map(const RenderOutput& out);

}  // namespace semsplat
