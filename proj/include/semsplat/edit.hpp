// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "semsplat/scene.hpp"

namespace semsplat {

struct ClassAssignment {
    std::vector<int> class_ids;     ///< argmax of the semantic logits
    std::vector<double> confidence;  ///< largest class probability

    [[nodiscard]] std::size_t size() const { return class_ids.size(); }
};

/// Ties resolve to the lowest class id.
ClassAssignment assign_classes(const GaussianSet& set);
int assign_class(std::span<const double> logits);

/// Gaussians whose assigned class is not in `classes`. Parameters are copied
/// bitwise; an empty result is returned with a warning.
GaussianSet remove_classes(const GaussianSet& set, std::span<const int> classes);

/// Gaussians whose assigned class is in `classes`. With `min_confidence` > 0,
/// kept Gaussians must also reach that class probability.
GaussianSet extract_classes(const GaussianSet& set, std::span<const int> classes, double min_confidence = 0.0);

// ---------------------------------------------------------------------------
// PLY assets
//
// Binary little-endian, one vertex per Gaussian, float32 properties in the
// usual splatting order:
//   x y z  nx ny nz  f_dc_0..2  f_rest_*  opacity  scale_0..2  rot_0..3
// followed by the semantic extension
//   sem_class  sem_logit_0..C-1
// f_rest is stored channel-major. Header comments carry `num_classes C`,
// `sh_degree D`, `active_sh_degree A` and one `class <id> <name>` per class.

struct PlyExportOptions {
    bool semantics = true;  ///< false writes a plain splatting PLY
};

struct PlyImportOptions {
    /// Class count assumed for files without semantic properties or comments.
    int fallback_num_classes = 1;
};

struct PlyAsset {
    GaussianSet set;
    ClassTable classes;
};

void export_ply(const std::filesystem::path& path, const GaussianSet& set, const ClassTable& classes,
                const PlyExportOptions& options = {});
void export_ply(const std::filesystem::path& path, const GaussianSet& set);

PlyAsset import_ply_asset(const std::filesystem::path& path, const PlyImportOptions& options = {});
GaussianSet import_ply(const std::filesystem::path& path, const PlyImportOptions& options = {});

}  // namespace semsplat
