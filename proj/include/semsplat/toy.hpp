// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "semsplat/ingest.hpp"
#include "semsplat/scene.hpp"

namespace semsplat {

struct ToyOptions {
    std::uint64_t seed = 1;
    int views = 24;
    int width = 64;
    int height = 64;
    int min_blobs = 30;
    int max_blobs = 100;
    int points_per_blob = 3;
    std::array<double, 3> background{0.0, 0.0, 0.0};
};

/// A synthetic scene of coloured blobs in three classes, viewed from a ring
/// of cameras looking at the origin.
struct ToyScene {
    GaussianSet truth;
    ClassTable classes;
    SparseModel model;             ///< cameras, posed images and seed points
    std::vector<Camera> cameras;   ///< camera_for() of each image, in image-id order
    std::vector<std::string> image_names;
    std::array<double, 3> background{};
};

ToyScene make_toy_scene(const ToyOptions& options);

/// Renders every view and writes a dataset directory (images, masks, COLMAP
/// text model, class table) plus the ground-truth PLY as `truth.ply`.
void write_toy_dataset(const ToyScene& scene, const std::filesystem::path& root);

}  // namespace semsplat
