// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "semsplat/image.hpp"
#include "semsplat/linalg.hpp"
#include "semsplat/projection.hpp"
#include "semsplat/scene.hpp"

namespace semsplat {

// ---------------------------------------------------------------------------
// COLMAP sparse models

enum class ColmapFormat { Text, Binary };

/// Camera models accepted by the loader; anything with distortion is rejected.
enum class ColmapCameraModel : int { SimplePinhole = 0, Pinhole = 1 };

struct ColmapCamera {
    std::uint32_t id = 0;
    ColmapCameraModel model = ColmapCameraModel::Pinhole;
    std::uint64_t width = 0;
    std::uint64_t height = 0;
    std::vector<double> params;  ///< f,cx,cy (SIMPLE_PINHOLE) or fx,fy,cx,cy (PINHOLE)

    [[nodiscard]] double fx() const { return params[0]; }
    [[nodiscard]] double fy() const { return model == ColmapCameraModel::Pinhole ? params[1] : params[0]; }
    [[nodiscard]] double cx() const { return model == ColmapCameraModel::Pinhole ? params[2] : params[1]; }
    [[nodiscard]] double cy() const { return model == ColmapCameraModel::Pinhole ? params[3] : params[2]; }

    friend bool operator==(const ColmapCamera&, const ColmapCamera&) = default;
};

struct ColmapObservation {
    double x = 0.0;
    double y = 0.0;
    std::int64_t point3d_id = -1;
    friend bool operator==(const ColmapObservation&, const ColmapObservation&) = default;
};

struct ColmapImage {
    std::uint32_t id = 0;
    Quat rotation;  ///< world-to-camera, (qw, qx, qy, qz)
    Vec3 translation;
    std::uint32_t camera_id = 0;
    std::string name;
    std::vector<ColmapObservation> observations;

    friend bool operator==(const ColmapImage&, const ColmapImage&) = default;
};

struct ColmapTrackElement {
    std::uint32_t image_id = 0;
    std::uint32_t point2d_index = 0;
    friend bool operator==(const ColmapTrackElement&, const ColmapTrackElement&) = default;
};

struct ColmapPoint {
    std::uint64_t id = 0;
    Vec3 position;
    std::array<std::uint8_t, 3> rgb{};
    double error = 0.0;
    std::vector<ColmapTrackElement> track;

    friend bool operator==(const ColmapPoint&, const ColmapPoint&) = default;
};

struct SparseModel {
    std::map<std::uint32_t, ColmapCamera> cameras;
    std::map<std::uint32_t, ColmapImage> images;
    std::map<std::uint64_t, ColmapPoint> points;

    /// Camera for a registered image.
    [[nodiscard]] Camera camera_for(const ColmapImage& image) const;
    /// Sparse points as initialization input (colours scaled to [0,1]).
    [[nodiscard]] std::vector<ColoredPoint> colored_points() const;

    friend bool operator==(const SparseModel&, const SparseModel&) = default;
};

/// Reads cameras/images/points3D (.txt or .bin) from `dir`.
SparseModel parse_colmap(const std::filesystem::path& dir, ColmapFormat format);
/// Picks the binary layout when cameras.bin exists, else text.
SparseModel parse_colmap(const std::filesystem::path& dir);
void write_colmap(const SparseModel& model, const std::filesystem::path& dir, ColmapFormat format);

// ---------------------------------------------------------------------------
// PNG

/// 8-bit RGB (RGBA and grey are converted), values scaled to [0, 1].
ImageF read_png_rgb(const std::filesystem::path& path);
/// 8-bit single-channel image.
LabelImage read_png_gray(const std::filesystem::path& path);
/// Writes 8-bit RGB; values are clamped to [0,1] and rounded.
void write_png_rgb(const std::filesystem::path& path, const ImageF& image);
void write_png_gray(const std::filesystem::path& path, const LabelImage& image);

// ---------------------------------------------------------------------------
// Frames and datasets

struct Frame {
    ImageF rgb;        ///< H x W x 3 in [0, 1]
    LabelImage mask;   ///< H x W class ids or the ignore label
    Camera camera;
    std::string name;
};

/// Checks dimensions against the camera and mask values against `num_classes`.
void validate_frame(const Frame& frame, int num_classes);

Frame load_frame(const std::filesystem::path& image_path, const std::filesystem::path& mask_path,
                 const Camera& camera, int num_classes, std::string name = {});

struct DatasetSplit {
    std::vector<Frame> train;
    std::vector<Frame> test;
};

inline constexpr int kDefaultHoldoutEvery = 8;

/// Sorts by name; index % holdout_every == 0 goes to test. With fewer frames
/// than holdout_every everything is training data (with a warning).
DatasetSplit split_train_test(std::vector<Frame> frames, int holdout_every = kDefaultHoldoutEvery);

/// Dataset directory convention:
///   images/<name>          8-bit RGB PNG
///   masks/<stem>.png       8-bit class-id PNG, 255 = ignore
///   sparse/0/              COLMAP model (text or binary)
///   classes.tsv            `id<TAB>name` lines
struct DatasetLayout {
    std::filesystem::path root;
    std::filesystem::path class_table;  ///< empty selects root/classes.tsv
    [[nodiscard]] std::filesystem::path images() const { return root / "images"; }
    [[nodiscard]] std::filesystem::path masks() const { return root / "masks"; }
    [[nodiscard]] std::filesystem::path sparse() const { return root / "sparse" / "0"; }
    [[nodiscard]] std::filesystem::path classes() const {
        return class_table.empty() ? root / "classes.tsv" : class_table;
    }
    [[nodiscard]] std::filesystem::path mask_for(const std::string& image_name) const;

    /// Throws with the expected path when a required entry is missing.
    void validate() const;
};

struct Dataset {
    ClassTable classes;
    SparseModel model;
    std::vector<Frame> frames;
};

/// Loads and validates every frame before returning.
Dataset load_dataset(const DatasetLayout& layout);
Dataset load_dataset(const std::filesystem::path& root);

}  // namespace semsplat
