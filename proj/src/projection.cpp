// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#include "semsplat/projection.hpp"

#include <algorithm>
#include <cmath>

#include "semsplat/common.hpp"

namespace semsplat {

std::array<double, 16> Camera::world_to_camera() const {
    return {rotation(0, 0), rotation(0, 1), rotation(0, 2), translation.x,
            rotation(1, 0), rotation(1, 1), rotation(1, 2), translation.y,
            rotation(2, 0), rotation(2, 1), rotation(2, 2), translation.z,
            0.0,            0.0,            0.0,            1.0};
}

Vec3 Camera::center() const {
    const Mat3 rt = rotation.transposed();
    return -1.0 * (rt * translation);
}

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorKind::InvalidParameter, "camera focal lengths must be positive");
    if (width <= 0 || height <= 0) throw Error(ErrorKind::InvalidParameter, "camera image size must be positive");
    const Mat3 should_be_identity = rotation * rotation.transposed();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            if (std::abs(should_be_identity(r, c) - (r == c ? 1.0 : 0.0)) > 1e-5)
                throw Error(ErrorKind::InvalidParameter, "camera rotation is not orthonormal");
}

Camera look_at_camera(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width, int height) {
    auto normalize = [](Vec3 v) { return (1.0 / norm(v)) * v; };
    auto cross = [](Vec3 a, Vec3 b) {
        return Vec3{a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
    };
    const Vec3 forward = normalize(target - eye);
    const Vec3 right = normalize(cross(forward, up));
    const Vec3 down = cross(forward, right);
    Camera cam;
    cam.fx = cam.fy = focal;
    cam.cx = 0.5 * (width - 1);
    cam.cy = 0.5 * (height - 1);
    cam.width = width;
    cam.height = height;
    cam.rotation = Mat3{{right.x, right.y, right.z, down.x, down.y, down.z, forward.x, forward.y, forward.z}};
    cam.translation = -1.0 * (cam.rotation * eye);
    return cam;
}

PointProjection project_point(const Vec3& position, const Camera& camera) {
    const Vec3 p = camera.to_camera(position);
    return {{camera.fx * p.x / p.z + camera.cx, camera.fy * p.y / p.z + camera.cy}, p.z};
}

ProjectionJacobian projection_jacobian(const Vec3& t, const Camera& camera) {
    const double lim_x = kJacobianClampFactor * (0.5 * camera.width / camera.fx);
    const double lim_y = kJacobianClampFactor * (0.5 * camera.height / camera.fy);
    const double rx = t.x / t.z;
    const double ry = t.y / t.z;
    ProjectionJacobian j;
    const double crx = std::clamp(rx, -lim_x, lim_x);
    const double cry = std::clamp(ry, -lim_y, lim_y);
    j.clamped_x = crx != rx;
    j.clamped_y = cry != ry;
    j.j00 = camera.fx / t.z;
    j.j02 = -camera.fx * crx / t.z;
    j.j11 = camera.fy / t.z;
    j.j12 = -camera.fy * cry / t.z;
    return j;
}

namespace {

/// T = J W (2x3), row-major.
std::array<double, 6> jacobian_times_rotation(const ProjectionJacobian& j, const Mat3& w) {
    return {j.j00 * w(0, 0) + j.j02 * w(2, 0), j.j00 * w(0, 1) + j.j02 * w(2, 1), j.j00 * w(0, 2) + j.j02 * w(2, 2),
            j.j11 * w(1, 0) + j.j12 * w(2, 0), j.j11 * w(1, 1) + j.j12 * w(2, 1), j.j11 * w(1, 2) + j.j12 * w(2, 2)};
}

}  // namespace

std::optional<Sym2> project_covariance(const Mat3& cov3d, const Vec3& position, const Camera& camera) {
    const Vec3 t = camera.to_camera(position);
    if (!(t.z > kNearPlane)) return std::nullopt;
    const auto m = jacobian_times_rotation(projection_jacobian(t, camera), camera.rotation);
    // cov2d = T cov3d T^T; both off-diagonal entries come from the same sum.
    double tc[2][3];
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += m[static_cast<std::size_t>(r * 3 + k)] * cov3d(k, c);
            tc[r][c] = s;
        }
    Sym2 out;
    out.a = tc[0][0] * m[0] + tc[0][1] * m[1] + tc[0][2] * m[2];
    out.b = tc[0][0] * m[3] + tc[0][1] * m[4] + tc[0][2] * m[5];
    out.c = tc[1][0] * m[3] + tc[1][1] * m[4] + tc[1][2] * m[5];
    return out;
}

TileRange tiles_for_box(const Vec2& mean, double half_x, double half_y, int width, int height) {
    if (!(half_x >= 0.0) || !(half_y >= 0.0)) return {};
    const double px_lo = std::ceil(mean.x - half_x);
    const double px_hi = std::floor(mean.x + half_x);
    const double py_lo = std::ceil(mean.y - half_y);
    const double py_hi = std::floor(mean.y + half_y);
    if (px_hi < 0.0 || py_hi < 0.0 || px_lo > width - 1 || py_lo > height - 1 || px_lo > px_hi || py_lo > py_hi)
        return {};
    const int x_lo = static_cast<int>(std::max(0.0, px_lo));
    const int x_hi = static_cast<int>(std::min<double>(width - 1, px_hi));
    const int y_lo = static_cast<int>(std::max(0.0, py_lo));
    const int y_hi = static_cast<int>(std::min<double>(height - 1, py_hi));
    return {x_lo / kTileSize, y_lo / kTileSize, x_hi / kTileSize + 1, y_hi / kTileSize + 1};
}

Extent compute_extent(const Vec2& mean2d, const Sym2& dilated_cov, int width, int height) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * std::sqrt(dilated_cov.max_eigenvalue()))));
    return {radius, tiles_for_box(mean2d, radius, radius, width, height)};
}

Vec2 alpha_support(const Sym2& dilated_cov, double opacity_value) {
    if (!(opacity_value >= kMinAlpha)) return {-1.0, -1.0};
    // alpha >= 1/255  <=>  d^T conic d <= 2 ln(255 opacity); the box is the
    // ellipse's bounding box, padded slightly against rounding.
    const double level = 2.0 * std::log(255.0 * opacity_value);
    const double hx = std::sqrt(level * dilated_cov.a);
    const double hy = std::sqrt(level * dilated_cov.c);
    return {hx + 1e-9 * (1.0 + hx), hy + 1e-9 * (1.0 + hy)};
}

std::optional<ProjectedGaussian> project_gaussian(const GaussianSet& set, std::size_t i, const Camera& camera) {
    const Vec3& position = set.positions[i];
    const auto cov2d = project_covariance(covariance_3d(set.log_scales[i], set.rotations[i]), position, camera);
    if (!cov2d) return std::nullopt;
    ProjectedGaussian g;
    const PointProjection proj = project_point(position, camera);
    g.mean2d = proj.pixel;
    g.depth = proj.depth;
    g.cov2d = {cov2d->a + kCovarianceDilation, cov2d->b, cov2d->c + kCovarianceDilation};
    if (!(g.cov2d.det() > 0.0)) return std::nullopt;
    g.conic = g.cov2d.inverse();
    g.radius = compute_extent(g.mean2d, g.cov2d, camera.width, camera.height).radius;
    const Vec2 support = alpha_support(g.cov2d, opacity(set.opacity_logits[i]));
    const double inflate_x = std::max<double>(g.radius, support.x);
    const double inflate_y = std::max<double>(g.radius, support.y);
    if (tiles_for_box(g.mean2d, inflate_x, inflate_y, camera.width, camera.height).empty()) return std::nullopt;
    g.tiles = tiles_for_box(g.mean2d, support.x, support.y, camera.width, camera.height);
    return g;
}

std::vector<std::size_t> cull_frustum(const GaussianSet& set, const Camera& camera) {
    std::vector<std::size_t> visible;
    for (std::size_t i = 0; i < set.size(); ++i)
        if (project_gaussian(set, i, camera)) visible.push_back(i);
    return visible;
}

}  // namespace semsplat
