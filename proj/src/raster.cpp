// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#include "semsplat/raster.hpp"

#include <algorithm>
#include <cmath>

#include "semsplat/common.hpp"

namespace semsplat {

void GradientBuffers::resize_like(const GaussianSet& set) {
    const std::size_t n = set.size();
    positions.assign(n, Vec3{});
    rotations.assign(n, Quat{0, 0, 0, 0});
    log_scales.assign(n, Vec3{});
    opacity_logits.assign(n, 0.0);
    sh_coeffs.assign(n * set.sh_stride(), 0.0);
    semantic_logits.assign(n * set.class_stride(), 0.0);
    mean2d_grad_norm.assign(n, 0.0);
    visible_count.assign(n, 0);
}

namespace {

struct PixelEval {
    double alpha = 0.0;
    double gauss = 0.0;  // exp(power)
    double dx = 0.0;
    double dy = 0.0;
    bool clamped = false;
};

/// Returns false when the Gaussian is skipped at this pixel.
inline bool evaluate(const SplatState& s, double px, double py, PixelEval& e) {
    e.dx = s.mean2d.x - px;
    e.dy = s.mean2d.y - py;
    const double power = -0.5 * (s.conic.a * e.dx * e.dx + s.conic.c * e.dy * e.dy) - s.conic.b * e.dx * e.dy;
    if (power > 0.0) return false;
    e.gauss = std::exp(power);
    const double raw = s.opacity * e.gauss;
    e.clamped = raw > kMaxAlpha;
    e.alpha = e.clamped ? kMaxAlpha : raw;
    return e.alpha >= kMinAlpha;
}

}  // namespace

RenderOutput rasterize_forward(const GaussianSet& set, const Camera& camera, const std::array<double, 3>& background) {
    camera.validate();
    set.validate();
    const std::size_t n = set.size();
    const int w = camera.width, h = camera.height;
    const int num_classes = set.num_classes;
    const auto nc = static_cast<std::size_t>(num_classes);

    RenderOutput out;
    out.gaussian_count = n;
    out.num_classes = num_classes;
    out.background = background;
    out.rgb = ImageF(w, h, 3);
    out.semantic = ImageF(w, h, num_classes);
    out.alpha = ImageF(w, h, 1);
    out.transmittance = ImageF(w, h, 1, 1.0);
    out.last_contributor = Image<std::int32_t>(w, h, 1, -1);
    out.contributor_end = Image<std::uint32_t>(w, h, 1, 0);
    out.splats.assign(n, SplatState{});
    out.probs.assign(n * nc, 0.0);

    // Per-Gaussian projection, colour, and class probabilities.
    const Vec3 cam_center = camera.center();
    std::vector<TileRange> ranges(n);
    parallel_for(n, [&](std::size_t i) {
        const auto projected = project_gaussian(set, i, camera);
        if (!projected) return;
        SplatState& s = out.splats[i];
        s.visible = true;
        s.mean2d = projected->mean2d;
        s.conic = projected->conic;
        s.depth = projected->depth;
        s.opacity = opacity(set.opacity_logits[i]);
        const Vec3 v = set.positions[i] - cam_center;
        const Vec3 dir = (1.0 / norm(v)) * v;
        const auto sh = set.sh(i);
        std::array<double, 16> basis{};
        sh_basis(dir, set.active_sh_degree, basis);
        const auto k = static_cast<std::size_t>(sh_coeff_count(set.active_sh_degree));
        for (std::size_t c = 0; c < 3; ++c) {
            double value = 0.5;
            for (std::size_t j = 0; j < k; ++j) value += basis[j] * sh[j * 3 + c];
            s.color_clamped[c] = value < 0.0;
            s.color[c] = std::max(0.0, value);
        }
        class_probs(set.semantics(i), std::span<double>(out.probs.data() + i * nc, nc));
        ranges[i] = projected->tiles;
    });

    // Binning in index order, then a per-tile depth sort with index tie-break.
    const int tiles_x = camera.tiles_x(), tiles_y = camera.tiles_y();
    out.tile_lists.assign(static_cast<std::size_t>(tiles_x * tiles_y), {});
    for (std::size_t i = 0; i < n; ++i) {
        if (!out.splats[i].visible) continue;
        const TileRange& r = ranges[i];
        for (int ty = r.y0; ty < r.y1; ++ty)
            for (int tx = r.x0; tx < r.x1; ++tx)
                out.tile_lists[static_cast<std::size_t>(ty * tiles_x + tx)].push_back(static_cast<std::uint32_t>(i));
    }
    parallel_for(out.tile_lists.size(), [&](std::size_t t) {
        auto& list = out.tile_lists[t];
        std::sort(list.begin(), list.end(), [&](std::uint32_t a, std::uint32_t b) {
            const double da = out.splats[a].depth, db = out.splats[b].depth;
            return da < db || (da == db && a < b);
        });
    });

    parallel_for(out.tile_lists.size(), [&](std::size_t t) {
        const auto& list = out.tile_lists[t];
        const int tx = static_cast<int>(t) % tiles_x, ty = static_cast<int>(t) / tiles_x;
        std::vector<double> sem(nc);
        for (int y = ty * kTileSize; y < std::min(h, (ty + 1) * kTileSize); ++y)
            for (int x = tx * kTileSize; x < std::min(w, (tx + 1) * kTileSize); ++x) {
                double T = 1.0;
                double rgb[3] = {0.0, 0.0, 0.0};
                std::fill(sem.begin(), sem.end(), 0.0);
                std::uint32_t end = 0;
                for (std::uint32_t e = 0; e < list.size(); ++e) {
                    const std::uint32_t g = list[e];
                    const SplatState& s = out.splats[g];
                    PixelEval ev;
                    if (!evaluate(s, x, y, ev)) continue;
                    const double next_t = T * (1.0 - ev.alpha);
                    if (next_t < kMinTransmittance) break;
                    const double weight = ev.alpha * T;
                    for (int c = 0; c < 3; ++c) rgb[c] += s.color[static_cast<std::size_t>(c)] * weight;
                    const double* p = out.probs.data() + static_cast<std::size_t>(g) * nc;
                    for (std::size_t c = 0; c < nc; ++c) sem[c] += p[c] * weight;
                    T = next_t;
                    end = e + 1;
                }
                for (int c = 0; c < 3; ++c) out.rgb.at(x, y, c) = rgb[c] + T * out.background[static_cast<std::size_t>(c)];
                for (std::size_t c = 0; c < nc; ++c) out.semantic.at(x, y, static_cast<int>(c)) = sem[c];
                out.transmittance.at(x, y) = T;
                out.alpha.at(x, y) = 1.0 - T;
                out.contributor_end.at(x, y) = end;
                out.last_contributor.at(x, y) = end > 0 ? static_cast<std::int32_t>(list[end - 1]) : -1;
            }
    });
    return out;
}

namespace {

// Layout of the per-entry screen-space gradient record.
constexpr std::size_t kMeanX = 0, kMeanY = 1, kConicA = 2, kConicB = 3, kConicC = 4, kOpacity = 5, kColor = 6,
                      kProbs = 9;

/// dR/dq for each quaternion component (w, x, y, z) of a unit quaternion.
std::array<Mat3, 4> rotation_derivatives(const Quat& q) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    return {Mat3{{0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0}},
            Mat3{{0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x}},
            Mat3{{-4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y}},
            Mat3{{-4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0}}};
}

}  // namespace

GradientBuffers rasterize_backward(const GaussianSet& set, const Camera& camera, const RenderOutput& out,
                                   const ImageF& d_rgb, const ImageF& d_semantic) {
    const std::size_t n = set.size();
    if (out.gaussian_count != n || out.splats.size() != n || out.num_classes != set.num_classes)
        throw Error(ErrorKind::InvalidState, "rasterize_backward: render output does not match the Gaussian set");
    const int w = camera.width, h = camera.height;
    if (out.rgb.width() != w || out.rgb.height() != h)
        throw Error(ErrorKind::InvalidState, "rasterize_backward: render output does not match the camera");
    const auto nc = static_cast<std::size_t>(set.num_classes);
    if (d_rgb.width() != w || d_rgb.height() != h || d_rgb.channels() != 3 || d_semantic.width() != w ||
        d_semantic.height() != h || d_semantic.channels() != static_cast<int>(nc))
        throw Error(ErrorKind::InvalidParameter, "rasterize_backward: gradient image shape mismatch");

    const std::size_t stride = kProbs + nc;
    const int tiles_x = camera.tiles_x();
    const auto& bg = out.background;

    // Screen-space gradients per tile-list entry; tiles own disjoint records.
    std::vector<std::vector<double>> partial(out.tile_lists.size());
    parallel_for(out.tile_lists.size(), [&](std::size_t t) {
        const auto& list = out.tile_lists[t];
        auto& acc = partial[t];
        acc.assign(list.size() * stride, 0.0);
        if (list.empty()) return;
        const int tx = static_cast<int>(t) % tiles_x, ty = static_cast<int>(t) / tiles_x;
        std::vector<double> acc_sem(nc), d_sem(nc);
        for (int y = ty * kTileSize; y < std::min(h, (ty + 1) * kTileSize); ++y)
            for (int x = tx * kTileSize; x < std::min(w, (tx + 1) * kTileSize); ++x) {
                const std::uint32_t end = out.contributor_end.at(x, y);
                if (end == 0) continue;
                const double d_pix[3] = {d_rgb.at(x, y, 0), d_rgb.at(x, y, 1), d_rgb.at(x, y, 2)};
                for (std::size_t c = 0; c < nc; ++c) d_sem[c] = d_semantic.at(x, y, static_cast<int>(c));
                const double t_final = out.transmittance.at(x, y);
                const double bg_dot = bg[0] * d_pix[0] + bg[1] * d_pix[1] + bg[2] * d_pix[2];
                double T = t_final;
                double acc_rgb[3] = {0.0, 0.0, 0.0};
                std::fill(acc_sem.begin(), acc_sem.end(), 0.0);
                double last_alpha = 0.0;
                const SplatState* last = nullptr;
                const double* last_probs = nullptr;
                for (std::uint32_t e = end; e-- > 0;) {
                    const std::uint32_t g = list[e];
                    const SplatState& s = out.splats[g];
                    PixelEval ev;
                    if (!evaluate(s, x, y, ev)) continue;
                    T /= (1.0 - ev.alpha);
                    const double* p = out.probs.data() + static_cast<std::size_t>(g) * nc;
                    if (last != nullptr) {
                        for (int c = 0; c < 3; ++c)
                            acc_rgb[c] = last_alpha * last->color[static_cast<std::size_t>(c)] +
                                         (1.0 - last_alpha) * acc_rgb[c];
                        for (std::size_t c = 0; c < nc; ++c)
                            acc_sem[c] = last_alpha * last_probs[c] + (1.0 - last_alpha) * acc_sem[c];
                    }
                    last_alpha = ev.alpha;
                    last = &s;
                    last_probs = p;

                    double* rec = acc.data() + static_cast<std::size_t>(e) * stride;
                    const double weight = ev.alpha * T;
                    double d_alpha = 0.0;
                    for (int c = 0; c < 3; ++c) {
                        rec[kColor + static_cast<std::size_t>(c)] += weight * d_pix[c];
                        d_alpha += (s.color[static_cast<std::size_t>(c)] - acc_rgb[c]) * d_pix[c];
                    }
                    for (std::size_t c = 0; c < nc; ++c) {
                        rec[kProbs + c] += weight * d_sem[c];
                        d_alpha += (p[c] - acc_sem[c]) * d_sem[c];
                    }
                    d_alpha *= T;
                    d_alpha -= t_final / (1.0 - ev.alpha) * bg_dot;
                    if (ev.clamped) continue;

                    rec[kOpacity] += ev.gauss * d_alpha;
                    const double d_power = ev.alpha * d_alpha;
                    rec[kMeanX] += -d_power * (s.conic.a * ev.dx + s.conic.b * ev.dy);
                    rec[kMeanY] += -d_power * (s.conic.c * ev.dy + s.conic.b * ev.dx);
                    rec[kConicA] += -0.5 * d_power * ev.dx * ev.dx;
                    rec[kConicB] += -d_power * ev.dx * ev.dy;
                    rec[kConicC] += -0.5 * d_power * ev.dy * ev.dy;
                }
            }
    });

    // Merge in fixed tile order.
    std::vector<double> screen(n * stride, 0.0);
    for (std::size_t t = 0; t < out.tile_lists.size(); ++t) {
        const auto& list = out.tile_lists[t];
        for (std::size_t e = 0; e < list.size(); ++e) {
            const double* rec = partial[t].data() + e * stride;
            double* dst = screen.data() + static_cast<std::size_t>(list[e]) * stride;
            for (std::size_t k = 0; k < stride; ++k) dst[k] += rec[k];
        }
    }

    GradientBuffers grads;
    grads.resize_like(set);
    const Vec3 cam_center = camera.center();
    const Mat3& W = camera.rotation;
    parallel_for(n, [&](std::size_t i) {
        const SplatState& s = out.splats[i];
        if (!s.visible) return;
        const double* g = screen.data() + i * stride;
        grads.visible_count[i] = 1;
        grads.mean2d_grad_norm[i] = std::hypot(g[kMeanX] * 0.5 * w, g[kMeanY] * 0.5 * h);

        // Semantic logits through the softmax.
        const double* p = out.probs.data() + i * nc;
        double p_dot_g = 0.0;
        for (std::size_t c = 0; c < nc; ++c) p_dot_g += p[c] * g[kProbs + c];
        for (std::size_t c = 0; c < nc; ++c) grads.semantic_logits[i * nc + c] = p[c] * (g[kProbs + c] - p_dot_g);

        // Opacity logit through the logistic.
        grads.opacity_logits[i] = g[kOpacity] * s.opacity * (1.0 - s.opacity);

        // Colour through SH, including the view-direction dependence on position.
        const Vec3 v = set.positions[i] - cam_center;
        const double v_len = norm(v);
        const Vec3 dir = (1.0 / v_len) * v;
        std::array<double, 16> basis{};
        std::array<Vec3, 16> basis_grad{};
        const int degree = set.active_sh_degree;
        sh_basis(dir, degree, basis, basis_grad);
        const auto k = static_cast<std::size_t>(sh_coeff_count(degree));
        const auto sh = set.sh(i);
        double* d_sh = grads.sh_coeffs.data() + i * set.sh_stride();
        Vec3 d_dir;
        for (std::size_t c = 0; c < 3; ++c) {
            if (s.color_clamped[c]) continue;
            const double dc = g[kColor + c];
            for (std::size_t j = 0; j < k; ++j) {
                d_sh[j * 3 + c] = basis[j] * dc;
                d_dir += (sh[j * 3 + c] * dc) * basis_grad[j];
            }
        }
        Vec3 d_pos = (1.0 / v_len) * (d_dir - dot(dir, d_dir) * dir);

        // Conic -> dilated 2D covariance: dL/dM = -Q H Q with H the symmetric
        // gradient w.r.t. the conic matrix.
        const Sym2& q = s.conic;
        const double ha = g[kConicA], hb = 0.5 * g[kConicB], hc = g[kConicC];
        // QH
        const double qh00 = q.a * ha + q.b * hb, qh01 = q.a * hb + q.b * hc;
        const double qh10 = q.b * ha + q.c * hb, qh11 = q.b * hb + q.c * hc;
        const double g00 = -(qh00 * q.a + qh01 * q.b);
        const double g01 = -(qh00 * q.b + qh01 * q.c);
        const double g11 = -(qh10 * q.b + qh11 * q.c);
        const double G[2][2] = {{g00, g01}, {g01, g11}};

        // cov2d = T S T^T with T = J W.
        const Vec3 t = camera.to_camera(set.positions[i]);
        const ProjectionJacobian jac = projection_jacobian(t, camera);
        double T2[2][3];
        for (int c = 0; c < 3; ++c) {
            T2[0][c] = jac.j00 * W(0, c) + jac.j02 * W(2, c);
            T2[1][c] = jac.j11 * W(1, c) + jac.j12 * W(2, c);
        }
        const Quat qn = set.rotations[i].normalized();
        const Mat3 R = rotation_matrix(qn);
        const Vec3 scale{std::exp(set.log_scales[i].x), std::exp(set.log_scales[i].y), std::exp(set.log_scales[i].z)};
        Mat3 M;  // R diag(scale)
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) M(r, c) = R(r, c) * scale[c];
        const Mat3 sigma = M * M.transposed();

        // dL/dSigma = T^T G T
        Mat3 d_sigma;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                double v2 = 0.0;
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) v2 += T2[a][r] * G[a][b] * T2[b][c];
                d_sigma(r, c) = v2;
            }
        // dL/dT = 2 G T Sigma
        double d_T[2][3];
        for (int a = 0; a < 2; ++a)
            for (int c = 0; c < 3; ++c) {
                double v2 = 0.0;
                for (int b = 0; b < 2; ++b)
                    for (int k2 = 0; k2 < 3; ++k2) v2 += G[a][b] * T2[b][k2] * sigma(k2, c);
                d_T[a][c] = 2.0 * v2;
            }
        // dL/dJ = dL/dT W^T (only the structurally non-zero entries).
        double d_j00 = 0.0, d_j02 = 0.0, d_j11 = 0.0, d_j12 = 0.0;
        for (int c = 0; c < 3; ++c) {
            d_j00 += d_T[0][c] * W(0, c);
            d_j02 += d_T[0][c] * W(2, c);
            d_j11 += d_T[1][c] * W(1, c);
            d_j12 += d_T[1][c] * W(2, c);
        }
        const double tz = t.z, tz2 = tz * tz, tz3 = tz2 * tz;
        const double crx = -jac.j02 * tz / camera.fx;  // clamped x/z
        const double cry = -jac.j12 * tz / camera.fy;
        Vec3 d_t;
        d_t.z += d_j00 * (-camera.fx / tz2) + d_j11 * (-camera.fy / tz2);
        d_t.z += d_j02 * (camera.fx * crx / tz2 + (jac.clamped_x ? 0.0 : camera.fx * t.x / tz3));
        d_t.z += d_j12 * (camera.fy * cry / tz2 + (jac.clamped_y ? 0.0 : camera.fy * t.y / tz3));
        if (!jac.clamped_x) d_t.x += d_j02 * (-camera.fx / tz2);
        if (!jac.clamped_y) d_t.y += d_j12 * (-camera.fy / tz2);
        // Mean projection.
        d_t.x += g[kMeanX] * camera.fx / tz;
        d_t.y += g[kMeanY] * camera.fy / tz;
        d_t.z += -g[kMeanX] * camera.fx * t.x / tz2 - g[kMeanY] * camera.fy * t.y / tz2;
        d_pos += W.transposed() * d_t;
        grads.positions[i] = d_pos;

        // Sigma = M M^T: dL/dM = 2 dL/dSigma M.
        const Mat3 d_M = d_sigma * M;
        Vec3 d_log_scale;
        Mat3 d_R;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                const double dm = 2.0 * d_M(r, c);
                d_log_scale[c] += dm * R(r, c) * scale[c];
                d_R(r, c) = dm * scale[c];
            }
        grads.log_scales[i] = d_log_scale;

        const auto dR_dq = rotation_derivatives(qn);
        double d_qn[4];
        for (int a = 0; a < 4; ++a) {
            double v2 = 0.0;
            for (std::size_t e = 0; e < 9; ++e) v2 += d_R.m[e] * dR_dq[static_cast<std::size_t>(a)].m[e];
            d_qn[a] = v2;
        }
        const double qv[4] = {qn.w, qn.x, qn.y, qn.z};
        const double proj = qv[0] * d_qn[0] + qv[1] * d_qn[1] + qv[2] * d_qn[2] + qv[3] * d_qn[3];
        const double inv_norm = 1.0 / set.rotations[i].norm();
        grads.rotations[i] = {(d_qn[0] - qv[0] * proj) * inv_norm, (d_qn[1] - qv[1] * proj) * inv_norm,
                              (d_qn[2] - qv[2] * proj) * inv_norm, (d_qn[3] - qv[3] * proj) * inv_norm};
    });
    return grads;
}

LabelImage render_label_map(const RenderOutput& out) {
    const int w = out.semantic.width(), h = out.semantic.height(), nc = out.semantic.channels();
    LabelImage labels(w, h, 1, kIgnoreLabel);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (out.alpha.at(x, y) < 0.5 || nc == 0) continue;
            int best = 0;
            for (int c = 1; c < nc; ++c)
                if (out.semantic.at(x, y, c) > out.semantic.at(x, y, best)) best = c;
            labels.at(x, y) = static_cast<std::uint8_t>(best);
        }
    return labels;
}

}  // namespace semsplat
