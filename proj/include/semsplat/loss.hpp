// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "semsplat/image.hpp"
#include "semsplat/ingest.hpp"
#include "semsplat/raster.hpp"

namespace semsplat {

/// Floor added to every class channel before normalizing the rendered
/// semantic vector for cross-entropy.
inline constexpr double kCrossEntropyEpsilon = 1e-8;

struct LossWeights {
    double lambda_ssim = 0.2;
    double lambda_sem = 1.0;
};

struct TermWithGradient {
    double value = 0.0;
    ImageF grad;
};

/// Mean absolute difference; gradient sign(r - t) / (H W 3).
TermWithGradient l1_photometric(const ImageF& render, const ImageF& target);

/// (1 - SSIM) / 2 with the metrics-module SSIM.
TermWithGradient dssim(const ImageF& render, const ImageF& target);

/// Mean over supervised pixels of -log s_hat[label], where
/// s_hat = (semantic + eps) / (sum(semantic) + C eps). Pixels labelled
/// `ignore_label` contribute neither loss nor gradient. `alpha` only has to
/// match the semantic image in size; transparent pixels are handled by eps.
TermWithGradient semantic_ce(const ImageF& semantic, const ImageF& alpha, const LabelImage& mask,
                             std::uint8_t ignore_label);

struct LossReport {
    double l1 = 0.0;
    double dssim = 0.0;
    double ce = 0.0;
    double total = 0.0;
    ImageF d_rgb;
    ImageF d_semantic;
};

/// (1 - lambda_ssim) l1 + lambda_ssim dssim + lambda_sem ce, with gradient images.
LossReport total_loss(const RenderOutput& render, const ImageF& target_rgb, const LabelImage& mask,
                      const LossWeights& weights);
LossReport total_loss(const RenderOutput& render, const Frame& frame, const LossWeights& weights);

}  // namespace semsplat
