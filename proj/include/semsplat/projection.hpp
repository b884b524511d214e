// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "semsplat/linalg.hpp"
#include "semsplat/scene.hpp"

namespace semsplat {

inline constexpr double kNearPlane = 0.01;
inline constexpr double kCovarianceDilation = 0.3;
inline constexpr int kTileSize = 16;
inline constexpr double kMinAlpha = 1.0 / 255.0;
inline constexpr double kMaxAlpha = 0.99;
/// Camera-space x/z and y/z used in the projection Jacobian are clamped to
/// this multiple of the frustum half-angle tangent.
inline constexpr double kJacobianClampFactor = 1.3;

/// Pinhole camera with a rigid world-to-camera transform (rotation, translation).
/// Pixel (u, v) has its centre at coordinates (u, v).
struct Camera {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;
    Mat3 rotation = Mat3::identity();
    Vec3 translation;

    /// 4x4 row-major homogeneous world-to-camera matrix.
    [[nodiscard]] std::array<double, 16> world_to_camera() const;
    /// Camera centre in world coordinates.
    [[nodiscard]] Vec3 center() const;
    [[nodiscard]] Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
    [[nodiscard]] int tiles_x() const { return (width + kTileSize - 1) / kTileSize; }
    [[nodiscard]] int tiles_y() const { return (height + kTileSize - 1) / kTileSize; }

    /// Throws InvalidParameter on non-positive focal lengths, empty images, or a
    /// non-orthonormal rotation block.
    void validate() const;

    friend bool operator==(const Camera&, const Camera&) = default;
};

/// Builds a camera at `eye` looking at `target`, +y down in the image.
Camera look_at_camera(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width, int height);

struct PointProjection {
    Vec2 pixel;
    double depth = 0.0;
};

PointProjection project_point(const Vec3& position, const Camera& camera);

/// Jacobian of the perspective map at camera-space point `t`, with the x/z and
/// y/z ratios clamped as described above. Rows are d(pixel)/d(t).
struct ProjectionJacobian {
    double j00 = 0.0, j02 = 0.0, j11 = 0.0, j12 = 0.0;
    bool clamped_x = false;
    bool clamped_y = false;
};
ProjectionJacobian projection_jacobian(const Vec3& t, const Camera& camera);

/// J W cov W^T J^T, undilated. Empty when the point is not beyond the near plane.
std::optional<Sym2> project_covariance(const Mat3& cov3d, const Vec3& position, const Camera& camera);

/// Half-open tile rectangle [x0, x1) x [y0, y1).
struct TileRange {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    [[nodiscard]] bool empty() const { return x0 >= x1 || y0 >= y1; }
    [[nodiscard]] int count() const { return empty() ? 0 : (x1 - x0) * (y1 - y0); }
    friend bool operator==(const TileRange&, const TileRange&) = default;
};

struct Extent {
    int radius = 0;
    TileRange tiles;
};

/// Tiles covering pixel centres inside [mean - half, mean + half] on each axis.
TileRange tiles_for_box(const Vec2& mean, double half_x, double half_y, int width, int height);

/// radius = ceil(3 sqrt(max eigenvalue of `dilated_cov`)), at least 1; tiles
/// of the square of side 2 radius around the mean.
Extent compute_extent(const Vec2& mean2d, const Sym2& dilated_cov, int width, int height);

/// Half-widths of the axis-aligned box enclosing every offset whose alpha
/// reaches the 1/255 skip threshold. Negative when nothing reaches it.
Vec2 alpha_support(const Sym2& dilated_cov, double opacity);

struct ProjectedGaussian {
    Vec2 mean2d;
    Sym2 cov2d;  ///< dilated
    Sym2 conic;  ///< inverse of cov2d
    double depth = 0.0;
    int radius = 0;
    TileRange tiles;  ///< tiles where alpha can reach 1/255
};

/// Full screen-space footprint of Gaussian `i`; empty when culled.
std::optional<ProjectedGaussian> project_gaussian(const GaussianSet& set, std::size_t i, const Camera& camera);

/// Indices of Gaussians beyond the near plane whose mean lies within the image
/// bounds inflated by their screen extent.
std::vector<std::size_t> cull_frustum(const GaussianSet& set, const Camera& camera);

}  // namespace semsplat
