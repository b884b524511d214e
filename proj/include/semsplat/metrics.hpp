// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "semsplat/image.hpp"

namespace semsplat {

inline constexpr double kPsnrCap = 100.0;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

/// 10 log10(1 / MSE) over all pixel-channels; identical images give kPsnrCap.
double psnr(const ImageF& render, const ImageF& target);

/// Mean SSIM over valid (fully inside) 11x11 Gaussian windows, per channel,
/// then averaged over channels. Dynamic range 1.
double ssim(const ImageF& render, const ImageF& target);

struct SsimGradient {
    double value = 0.0;
    ImageF d_render;  ///< d(mean SSIM) / d(render)
};
SsimGradient ssim_with_gradient(const ImageF& render, const ImageF& target);

enum class MiouMode {
    /// Classes absent from both prediction and ground truth are left out of the mean.
    PresentClasses,
    /// Mean over all classes; a class absent from both counts as IoU 1.
    AllClasses,
};

struct MiouResult {
    std::vector<double> iou;    ///< per class, 0 where not included
    std::vector<bool> included;
    double mean = 0.0;
};

/// Pixels whose ground truth equals `ignore_label` are not counted. A
/// prediction of `ignore_label` on a counted pixel is a miss for the true class.
MiouResult miou(const LabelImage& pred, const LabelImage& gt, int num_classes, std::uint8_t ignore_label,
                MiouMode mode = MiouMode::PresentClasses);

/// Confusion counts accumulated over several frames.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes);
    void add(const LabelImage& pred, const LabelImage& gt, std::uint8_t ignore_label);
    [[nodiscard]] MiouResult result(MiouMode mode = MiouMode::PresentClasses) const;
    [[nodiscard]] std::uint64_t count(int gt_class, int pred_class) const;

private:
    int num_classes_;
    /// Rows: ground-truth class. Columns 0..C-1: predicted class; column C:
    /// predictions outside 0..C-1.
    std::vector<std::uint64_t> counts_;
};

struct FrameScore {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct EvalReport {
    std::vector<FrameScore> frames;
    std::vector<std::string> class_names;
    MiouResult segmentation;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;

    void finalize_means();
    /// Human-readable table.
    void write_table(std::ostream& os) const;
    /// One `key = value` pair per line.
    void write_key_values(std::ostream& os) const;
    void save(const std::filesystem::path& table_path, const std::filesystem::path& kv_path) const;
};

}  // namespace semsplat
