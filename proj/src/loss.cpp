// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#include "semsplat/loss.hpp"

#include <cmath>

#include "semsplat/common.hpp"
#include "semsplat/metrics.hpp"

namespace semsplat {

namespace {

/// Pairwise sum in a fixed order.
double pairwise_sum(const double* v, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += v[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

}  // namespace

TermWithGradient l1_photometric(const ImageF& render, const ImageF& target) {
    if (!render.same_shape(target)) throw Error(ErrorKind::SizeMismatch, "l1: image shapes differ");
    const std::size_t n = render.size();
    if (n == 0) throw Error(ErrorKind::InvalidParameter, "l1: empty image");
    TermWithGradient out;
    out.grad = ImageF(render.width(), render.height(), render.channels());
    std::vector<double> abs_diff(n);
    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = render.data()[i] - target.data()[i];
        abs_diff[i] = std::abs(d);
        out.grad.data()[i] = d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0);
    }
    out.value = pairwise_sum(abs_diff.data(), n) * scale;
    return out;
}

TermWithGradient dssim(const ImageF& render, const ImageF& target) {
    auto s = ssim_with_gradient(render, target);
    TermWithGradient out;
    out.value = 0.5 * (1.0 - s.value);
    out.grad = std::move(s.d_render);
    for (double& g : out.grad.data()) g *= -0.5;
    return out;
}

TermWithGradient semantic_ce(const ImageF& semantic, const ImageF& alpha, const LabelImage& mask,
                             std::uint8_t ignore_label) {
    const int w = semantic.width(), h = semantic.height(), nc = semantic.channels();
    if (mask.width() != w || mask.height() != h || alpha.width() != w || alpha.height() != h)
        throw Error(ErrorKind::SizeMismatch, "semantic_ce: semantic, alpha and mask shapes differ");
    TermWithGradient out;
    out.grad = ImageF(w, h, nc);
    std::vector<double> losses;
    losses.reserve(mask.pixel_count());
    std::vector<std::pair<int, int>> supervised;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::uint8_t label = mask.at(x, y);
            if (label == ignore_label) continue;
            if (label >= nc)
                throw Error(ErrorKind::LabelOutOfRange, "semantic_ce: label " + std::to_string(label) +
                                                            " at (" + std::to_string(x) + ", " + std::to_string(y) +
                                                            ") out of range");
            double sum = 0.0;
            for (int c = 0; c < nc; ++c) sum += semantic.at(x, y, c);
            const double denom = sum + nc * kCrossEntropyEpsilon;
            const double numer = semantic.at(x, y, label) + kCrossEntropyEpsilon;
            losses.push_back(-std::log(numer / denom));
            supervised.emplace_back(x, y);
        }
    if (losses.empty()) return out;
    const double scale = 1.0 / static_cast<double>(losses.size());
    out.value = pairwise_sum(losses.data(), losses.size()) * scale;
    for (const auto& [x, y] : supervised) {
        const std::uint8_t label = mask.at(x, y);
        double sum = 0.0;
        for (int c = 0; c < nc; ++c) sum += semantic.at(x, y, c);
        const double inv_denom = 1.0 / (sum + nc * kCrossEntropyEpsilon);
        for (int c = 0; c < nc; ++c) out.grad.at(x, y, c) = scale * inv_denom;
        out.grad.at(x, y, label) -= scale / (semantic.at(x, y, label) + kCrossEntropyEpsilon);
    }
    return out;
}

LossReport total_loss(const RenderOutput& render, const ImageF& target_rgb, const LabelImage& mask,
                      const LossWeights& weights) {
    LossReport report;
    const auto l1 = l1_photometric(render.rgb, target_rgb);
    report.l1 = l1.value;
    report.d_rgb = ImageF(render.rgb.width(), render.rgb.height(), 3);
    const double w_l1 = 1.0 - weights.lambda_ssim;
    const auto ds = dssim(render.rgb, target_rgb);
    report.dssim = ds.value;
    for (std::size_t i = 0; i < report.d_rgb.size(); ++i)
        report.d_rgb.data()[i] = w_l1 * l1.grad.data()[i] + weights.lambda_ssim * ds.grad.data()[i];
    const auto ce = semantic_ce(render.semantic, render.alpha, mask, kIgnoreLabel);
    report.ce = ce.value;
    report.d_semantic = ce.grad;
    for (double& g : report.d_semantic.data()) g *= weights.lambda_sem;
    report.total = w_l1 * report.l1 + weights.lambda_ssim * report.dssim + weights.lambda_sem * report.ce;
    if (!std::isfinite(report.total)) throw Error(ErrorKind::Numerical, "loss is not finite");
    return report;
}

LossReport total_loss(const RenderOutput& render, const Frame& frame, const LossWeights& weights) {
    return total_loss(render, frame.rgb, frame.mask, weights);
}

}  // namespace semsplat
