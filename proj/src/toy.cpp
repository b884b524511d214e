// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#include "semsplat/toy.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "semsplat/common.hpp"
#include "semsplat/edit.hpp"
#include "semsplat/raster.hpp"

namespace semsplat {

namespace fs = std::filesystem;

namespace {

constexpr std::array<std::array<double, 3>, 3> kClassColors = {{
    {0.85, 0.30, 0.20},
    {0.25, 0.75, 0.30},
    {0.25, 0.35, 0.85},
}};

Quat random_rotation(Rng& rng) {
    while (true) {
        const Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        if (q.norm() > 1e-3) return q.normalized();
    }
}

}  // namespace

ToyScene make_toy_scene(const ToyOptions& options) {
    if (options.views < 1 || options.width < 16 || options.height < 16)
        throw Error(ErrorKind::InvalidParameter, "toy scene needs at least one view of at least 16x16 pixels");
    if (options.min_blobs < 3 || options.max_blobs < options.min_blobs)
        throw Error(ErrorKind::InvalidParameter, "toy blob count range is invalid");
    if (options.points_per_blob < 1) throw Error(ErrorKind::InvalidParameter, "points_per_blob must be positive");

    Rng rng(options.seed);
    ToyScene scene;
    scene.background = options.background;
    scene.classes = ClassTable({"sky", "tree", "rock"});
    const int num_classes = scene.classes.size();
    scene.truth = GaussianSet(0, num_classes);
    GaussianSet& truth = scene.truth;

    const auto span = static_cast<std::uint64_t>(options.max_blobs - options.min_blobs + 1);
    const int blobs = options.min_blobs + static_cast<int>(rng.below(span));
    for (int i = 0; i < blobs; ++i) {
        const int cls = i % num_classes;
        const double angle = 2.0 * std::numbers::pi * cls / num_classes;
        const Vec3 center{0.8 * std::cos(angle), 0.8 * std::sin(angle), 0.0};
        truth.positions.push_back(center + Vec3{0.22 * rng.normal(), 0.22 * rng.normal(), 0.18 * rng.normal()});
        truth.rotations.push_back(random_rotation(rng));
        Vec3 log_scale;
        for (int k = 0; k < 3; ++k) log_scale[k] = std::log(rng.uniform(0.05, 0.12));
        truth.log_scales.push_back(log_scale);
        truth.opacity_logits.push_back(opacity_logit(rng.uniform(0.7, 0.95)));
        for (int c = 0; c < 3; ++c) {
            const double v = std::clamp(kClassColors[static_cast<std::size_t>(cls)][static_cast<std::size_t>(c)] +
                                            rng.uniform(-0.12, 0.12),
                                        0.05, 0.95);
            truth.sh_coeffs.push_back(rgb_to_sh_dc(v));
        }
        for (int c = 0; c < num_classes; ++c) truth.semantic_logits.push_back(c == cls ? 8.0 : 0.0);
    }
    truth.validate();

    ColmapCamera intrinsics;
    intrinsics.id = 1;
    intrinsics.model = ColmapCameraModel::Pinhole;
    intrinsics.width = static_cast<std::uint64_t>(options.width);
    intrinsics.height = static_cast<std::uint64_t>(options.height);
    const double focal = 1.25 * options.width;
    intrinsics.params = {focal, focal, (options.width - 1) / 2.0, (options.height - 1) / 2.0};
    scene.model.cameras[intrinsics.id] = intrinsics;

    const double radius = 3.2;
    for (int v = 0; v < options.views; ++v) {
        const double azimuth = 2.0 * std::numbers::pi * v / options.views;
        const double elevation = (v % 2 == 0 ? 12.0 : 30.0) * std::numbers::pi / 180.0;
        const Vec3 eye{radius * std::cos(elevation) * std::cos(azimuth),
                       radius * std::cos(elevation) * std::sin(azimuth), radius * std::sin(elevation)};
        const Camera look = look_at_camera(eye, Vec3{}, Vec3{0.0, 0.0, 1.0}, focal, options.width, options.height);
        ColmapImage image;
        image.id = static_cast<std::uint32_t>(v + 1);
        image.camera_id = intrinsics.id;
        image.rotation = quaternion_from_rotation(look.rotation).normalized();
        const Mat3 r = rotation_matrix(image.rotation.normalized());
        const Vec3 t = r * eye;
        image.translation = Vec3{-t.x, -t.y, -t.z};
        char name[32];
        std::snprintf(name, sizeof(name), "view_%02d.png", v);
        image.name = name;
        scene.model.images[image.id] = image;
    }
    for (const auto& [id, image] : scene.model.images) {
        scene.cameras.push_back(scene.model.camera_for(image));
        scene.image_names.push_back(image.name);
    }

    std::uint64_t point_id = 1;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const Mat3 r = rotation_matrix(truth.rotations[i]);
        const auto rgb = sh_to_rgb(truth.sh(i), Vec3{0.0, 0.0, 1.0}, 0);
        for (int k = 0; k < options.points_per_blob; ++k) {
            Vec3 z;
            for (int a = 0; a < 3; ++a) z[a] = std::exp(truth.log_scales[i][a]) * rng.normal();
            ColmapPoint p;
            p.id = point_id++;
            p.position = truth.positions[i] + r * z;
            for (int c = 0; c < 3; ++c)
                p.rgb[static_cast<std::size_t>(c)] =
                    static_cast<std::uint8_t>(std::lround(std::clamp(rgb[static_cast<std::size_t>(c)], 0.0, 1.0) * 255.0));
            scene.model.points[p.id] = p;
        }
    }
    return scene;
}

void write_toy_dataset(const ToyScene& scene, const fs::path& root) {
    const DatasetLayout layout{root, {}};
    fs::create_directories(layout.images());
    fs::create_directories(layout.masks());
    write_colmap(scene.model, layout.sparse(), ColmapFormat::Text);
    scene.classes.write(layout.classes());
    export_ply(root / "truth.ply", scene.truth, scene.classes);

    for (std::size_t v = 0; v < scene.cameras.size(); ++v) {
        const RenderOutput out = rasterize_forward(scene.truth, scene.cameras[v], scene.background);
        write_png_rgb(layout.images() / scene.image_names[v], out.rgb);
        write_png_gray(layout.mask_for(scene.image_names[v]), render_label_map(out));
    }
}

}  // namespace semsplat
