// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#include "semsplat/scene.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "semsplat/common.hpp"

namespace semsplat {

// ---------------------------------------------------------------------------
// ClassTable

ClassTable::ClassTable(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.size() >= kIgnoreLabel)
        throw Error(ErrorKind::InvalidParameter, "class table holds at most 255 classes");
}

ClassTable ClassTable::numbered(int count) {
    std::vector<std::string> names;
    for (int i = 0; i < count; ++i) names.push_back("class_" + std::to_string(i));
    return ClassTable(std::move(names));
}

ClassTable ClassTable::read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open class table " + path.string());
    std::vector<std::string> names;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw Error(ErrorKind::CorruptFile,
                        path.string() + ":" + std::to_string(line_no) + ": expected `id<TAB>name`");
        int id = -1;
        const auto [ptr, ec] = std::from_chars(line.data(), line.data() + tab, id);
        if (ec != std::errc{} || ptr != line.data() + tab)
            throw Error(ErrorKind::CorruptFile, path.string() + ":" + std::to_string(line_no) + ": bad class id");
        if (id != static_cast<int>(names.size()))
            throw Error(ErrorKind::CorruptFile, path.string() + ":" + std::to_string(line_no) +
                                                    ": class ids must be dense and ascending from 0");
        names.push_back(line.substr(tab + 1));
    }
    if (names.empty()) throw Error(ErrorKind::InsufficientData, "class table " + path.string() + " is empty");
    return ClassTable(std::move(names));
}

void ClassTable::write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write class table " + path.string());
    for (std::size_t i = 0; i < names_.size(); ++i) out << i << '\t' << names_[i] << '\n';
}

int ClassTable::resolve(std::string_view name_or_id) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name_or_id) return static_cast<int>(i);
    int id = -1;
    const auto [ptr, ec] = std::from_chars(name_or_id.data(), name_or_id.data() + name_or_id.size(), id);
    if (ec == std::errc{} && ptr == name_or_id.data() + name_or_id.size() && id >= 0 && id < size()) return id;
    std::string available;
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (i) available += ", ";
        available += names_[i];
    }
    throw Error(ErrorKind::Usage, "unknown class '" + std::string(name_or_id) + "'; available: " + available);
}

// ---------------------------------------------------------------------------
// GaussianSet

GaussianSet::GaussianSet(int degree, int classes)
    : sh_degree(degree), active_sh_degree(degree), num_classes(classes) {
    if (degree < 0 || degree > kMaxShDegree) throw Error(ErrorKind::InvalidParameter, "SH degree must be in 0..3");
    if (classes < 1) throw Error(ErrorKind::InvalidParameter, "need at least one class");
}

void GaussianSet::push_back_from(const GaussianSet& other, std::size_t i) {
    positions.push_back(other.positions[i]);
    rotations.push_back(other.rotations[i]);
    log_scales.push_back(other.log_scales[i]);
    opacity_logits.push_back(other.opacity_logits[i]);
    const auto sh_src = other.sh(i);
    const auto sem_src = other.semantics(i);
    // Copy first: the source may live in these vectors.
    const std::vector<double> sh_copy(sh_src.begin(), sh_src.end());
    const std::vector<double> sem_copy(sem_src.begin(), sem_src.end());
    sh_coeffs.insert(sh_coeffs.end(), sh_copy.begin(), sh_copy.end());
    semantic_logits.insert(semantic_logits.end(), sem_copy.begin(), sem_copy.end());
}

GaussianSet GaussianSet::subset(std::span<const std::size_t> indices) const {
    GaussianSet out(sh_degree, num_classes);
    out.active_sh_degree = active_sh_degree;
    out.positions.reserve(indices.size());
    out.rotations.reserve(indices.size());
    out.log_scales.reserve(indices.size());
    out.opacity_logits.reserve(indices.size());
    out.sh_coeffs.reserve(indices.size() * sh_stride());
    out.semantic_logits.reserve(indices.size() * class_stride());
    for (const std::size_t i : indices) out.push_back_from(*this, i);
    return out;
}

void GaussianSet::validate() const {
    const std::size_t n = positions.size();
    if (rotations.size() != n || log_scales.size() != n || opacity_logits.size() != n ||
        sh_coeffs.size() != n * sh_stride() || semantic_logits.size() != n * class_stride())
        throw Error(ErrorKind::InvalidState, "GaussianSet arrays disagree in length");
    if (active_sh_degree < 0 || active_sh_degree > sh_degree)
        throw Error(ErrorKind::InvalidState, "active SH degree exceeds stored degree");
    auto finite = [](double v) { return std::isfinite(v); };
    for (std::size_t i = 0; i < n; ++i) {
        const Quat& q = rotations[i];
        if (!is_finite(positions[i]) || !is_finite(log_scales[i]) || !finite(opacity_logits[i]) ||
            !finite(q.w) || !finite(q.x) || !finite(q.y) || !finite(q.z))
            throw Error(ErrorKind::InvalidState, "non-finite parameter at Gaussian " + std::to_string(i));
    }
    if (!std::all_of(sh_coeffs.begin(), sh_coeffs.end(), finite) ||
        !std::all_of(semantic_logits.begin(), semantic_logits.end(), finite))
        throw Error(ErrorKind::InvalidState, "non-finite SH or semantic coefficient");
}

// ---------------------------------------------------------------------------
// Parameter mappings

Mat3 covariance_3d(const Vec3& log_scale, const Quat& rotation) {
    if (!is_finite(log_scale) || !std::isfinite(rotation.w) || !std::isfinite(rotation.x) ||
        !std::isfinite(rotation.y) || !std::isfinite(rotation.z))
        throw Error(ErrorKind::InvalidParameter, "covariance_3d: non-finite input");
    const double n = rotation.norm();
    if (n == 0.0) throw Error(ErrorKind::InvalidParameter, "covariance_3d: zero quaternion");
    const Mat3 r = rotation_matrix(rotation.normalized());
    const double s2[3] = {std::exp(2.0 * log_scale.x), std::exp(2.0 * log_scale.y), std::exp(2.0 * log_scale.z)};
    Mat3 cov;
    for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) {
            double v = 0.0;
            for (int k = 0; k < 3; ++k) v += r(i, k) * s2[k] * r(j, k);
            cov(i, j) = v;
            cov(j, i) = v;
        }
    return cov;
}

double opacity(double logit) {
    if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
    const double e = std::exp(logit);
    return e / (1.0 + e);
}

double opacity_logit(double p) { return std::log(p / (1.0 - p)); }

namespace {

constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                          0.5462742152960396};
constexpr double kC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                          -0.4570457994644658, 1.445305721320277, -0.5900435899266435};

}  // namespace

void sh_basis(const Vec3& dir, int degree, std::span<double> basis, std::span<Vec3> grad) {
    const double x = dir.x, y = dir.y, z = dir.z;
    const bool want_grad = !grad.empty();
    basis[0] = kC0;
    if (want_grad) grad[0] = {};
    if (degree < 1) return;
    basis[1] = -kC1 * y;
    basis[2] = kC1 * z;
    basis[3] = -kC1 * x;
    if (want_grad) {
        grad[1] = {0, -kC1, 0};
        grad[2] = {0, 0, kC1};
        grad[3] = {-kC1, 0, 0};
    }
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    const double xy = x * y, yz = y * z, xz = x * z;
    basis[4] = kC2[0] * xy;
    basis[5] = kC2[1] * yz;
    basis[6] = kC2[2] * (2 * zz - xx - yy);
    basis[7] = kC2[3] * xz;
    basis[8] = kC2[4] * (xx - yy);
    if (want_grad) {
        grad[4] = {kC2[0] * y, kC2[0] * x, 0};
        grad[5] = {0, kC2[1] * z, kC2[1] * y};
        grad[6] = {-2 * kC2[2] * x, -2 * kC2[2] * y, 4 * kC2[2] * z};
        grad[7] = {kC2[3] * z, 0, kC2[3] * x};
        grad[8] = {2 * kC2[4] * x, -2 * kC2[4] * y, 0};
    }
    if (degree < 3) return;
    basis[9] = kC3[0] * y * (3 * xx - yy);
    basis[10] = kC3[1] * xy * z;
    basis[11] = kC3[2] * y * (4 * zz - xx - yy);
    basis[12] = kC3[3] * z * (2 * zz - 3 * xx - 3 * yy);
    basis[13] = kC3[4] * x * (4 * zz - xx - yy);
    basis[14] = kC3[5] * z * (xx - yy);
    basis[15] = kC3[6] * x * (xx - 3 * yy);
    if (want_grad) {
        grad[9] = {6 * kC3[0] * xy, kC3[0] * (3 * xx - 3 * yy), 0};
        grad[10] = {kC3[1] * yz, kC3[1] * xz, kC3[1] * xy};
        grad[11] = {-2 * kC3[2] * xy, kC3[2] * (4 * zz - xx - 3 * yy), 8 * kC3[2] * yz};
        grad[12] = {-6 * kC3[3] * xz, -6 * kC3[3] * yz, kC3[3] * (6 * zz - 3 * xx - 3 * yy)};
        grad[13] = {kC3[4] * (4 * zz - 3 * xx - yy), -2 * kC3[4] * xy, 8 * kC3[4] * xz};
        grad[14] = {2 * kC3[5] * xz, -2 * kC3[5] * yz, kC3[5] * (xx - yy)};
        grad[15] = {kC3[6] * (3 * xx - 3 * yy), -6 * kC3[6] * xy, 0};
    }
}

std::array<double, 3> sh_to_rgb(std::span<const double> coeffs, const Vec3& view_dir, int degree) {
    if (degree < 0 || degree > kMaxShDegree)
        throw Error(ErrorKind::InvalidParameter, "sh_to_rgb: degree must be in 0..3");
    const auto k = static_cast<std::size_t>(sh_coeff_count(degree));
    if (coeffs.size() < 3 * k)
        throw Error(ErrorKind::InvalidParameter, "sh_to_rgb: degree " + std::to_string(degree) +
                                                     " exceeds stored coefficients");
    std::array<double, 16> basis{};
    sh_basis(view_dir, degree, basis);
    std::array<double, 3> rgb{};
    for (int c = 0; c < 3; ++c) {
        double v = 0.0;
        for (std::size_t j = 0; j < k; ++j) v += basis[j] * coeffs[j * 3 + static_cast<std::size_t>(c)];
        rgb[static_cast<std::size_t>(c)] = std::max(0.0, v + 0.5);
    }
    return rgb;
}

double rgb_to_sh_dc(double value) { return (value - 0.5) / kC0; }

void class_probs(std::span<const double> logits, std::span<double> out) {
    double max_logit = -std::numeric_limits<double>::infinity();
    for (const double l : logits) max_logit = std::max(max_logit, l);
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - max_logit);
        sum += out[i];
    }
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= sum;
}

std::vector<double> class_probs(std::span<const double> logits) {
    std::vector<double> out(logits.size());
    class_probs(logits, out);
    return out;
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }

/// Mean of the k smallest values in `best` (sorted ascending, finite entries).
double mean_of(const std::vector<double>& best, int k) {
    double sum = 0.0;
    for (int i = 0; i < k; ++i) sum += best[static_cast<std::size_t>(i)];
    return sum / k;
}

void insert_candidate(std::vector<double>& best, double d) {
    if (d >= best.back()) return;
    best.back() = d;
    for (std::size_t j = best.size() - 1; j > 0 && best[j] < best[j - 1]; --j) std::swap(best[j], best[j - 1]);
}

}  // namespace

std::vector<double> knn_mean_distance(std::span<const Vec3> points, int k) {
    const std::size_t n = points.size();
    if (k < 1 || n <= static_cast<std::size_t>(k))
        throw Error(ErrorKind::InsufficientData, "k-NN needs more than k points");
    std::vector<double> out(n);
    parallel_for(n, [&](std::size_t i) {
        std::vector<double> best(static_cast<std::size_t>(k), std::numeric_limits<double>::infinity());
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) insert_candidate(best, distance(points[i], points[j]));
        out[i] = mean_of(best, k);
    });
    return out;
}

std::vector<double> knn_mean_distance_grid(std::span<const Vec3> points, int k) {
    const std::size_t n = points.size();
    if (k < 1 || n <= static_cast<std::size_t>(k))
        throw Error(ErrorKind::InsufficientData, "k-NN needs more than k points");
    Vec3 lo = points[0], hi = points[0];
    for (const Vec3& p : points)
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    // Roughly two points per cell.
    const double volume = std::max(1e-300, (hi.x - lo.x + 1e-12) * (hi.y - lo.y + 1e-12) * (hi.z - lo.z + 1e-12));
    double cell = std::cbrt(volume * 2.0 / static_cast<double>(n));
    if (!(cell > 0.0) || !std::isfinite(cell)) cell = 1.0;
    while ((hi.x - lo.x) / cell > 1024.0 || (hi.y - lo.y) / cell > 1024.0 || (hi.z - lo.z) / cell > 1024.0)
        cell *= 2.0;
    int dims[3];
    for (int a = 0; a < 3; ++a) dims[a] = static_cast<int>(std::floor((hi[a] - lo[a]) / cell)) + 1;
    auto cell_of = [&](const Vec3& p, int a) {
        return std::clamp(static_cast<int>(std::floor((p[a] - lo[a]) / cell)), 0, dims[a] - 1);
    };
    auto key = [&](int cx, int cy, int cz) {
        return (static_cast<std::size_t>(cz) * static_cast<std::size_t>(dims[1]) + static_cast<std::size_t>(cy)) *
                   static_cast<std::size_t>(dims[0]) +
               static_cast<std::size_t>(cx);
    };
    std::unordered_map<std::size_t, std::vector<std::size_t>> grid;
    for (std::size_t i = 0; i < n; ++i)
        grid[key(cell_of(points[i], 0), cell_of(points[i], 1), cell_of(points[i], 2))].push_back(i);

    const int max_ring = std::max({dims[0], dims[1], dims[2]});
    std::vector<double> out(n);
    parallel_for(n, [&](std::size_t i) {
        const Vec3& p = points[i];
        const int c[3] = {cell_of(p, 0), cell_of(p, 1), cell_of(p, 2)};
        std::vector<double> best(static_cast<std::size_t>(k), std::numeric_limits<double>::infinity());
        for (int ring = 0; ring <= max_ring; ++ring) {
            for (int dz = -ring; dz <= ring; ++dz)
                for (int dy = -ring; dy <= ring; ++dy)
                    for (int dx = -ring; dx <= ring; ++dx) {
                        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
                        const int x = c[0] + dx, y = c[1] + dy, z = c[2] + dz;
                        if (x < 0 || y < 0 || z < 0 || x >= dims[0] || y >= dims[1] || z >= dims[2]) continue;
                        const auto it = grid.find(key(x, y, z));
                        if (it == grid.end()) continue;
                        for (const std::size_t j : it->second)
                            if (j != i) insert_candidate(best, distance(p, points[j]));
                    }
            // Every unvisited point lies at least `ring * cell` away along some axis.
            if (best.back() <= ring * cell) break;
        }
        out[i] = mean_of(best, k);
    });
    return out;
}

double bounding_extent(std::span<const Vec3> points) {
    if (points.empty()) return 0.0;
    Vec3 lo = points[0], hi = points[0];
    for (const Vec3& p : points)
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    return norm(hi - lo);
}

namespace {
constexpr std::size_t kExactKnnLimit = 2048;
}

GaussianSet init_from_points(std::span<const ColoredPoint> points, int num_classes, int sh_degree) {
    if (points.size() < 4)
        throw Error(ErrorKind::InsufficientData,
                    "init_from_points needs at least 4 points, got " + std::to_string(points.size()));
    std::vector<Vec3> xyz;
    xyz.reserve(points.size());
    for (const auto& p : points) {
        if (!is_finite(p.position)) throw Error(ErrorKind::InvalidParameter, "init_from_points: non-finite point");
        xyz.push_back(p.position);
    }
    const auto mean_dist =
        xyz.size() <= kExactKnnLimit ? knn_mean_distance(xyz, 3) : knn_mean_distance_grid(xyz, 3);
    const double extent = bounding_extent(xyz);
    const double floor_log_scale = std::log(1e-7 * std::max(extent, 1e-12));

    GaussianSet set(sh_degree, num_classes);
    set.active_sh_degree = 0;
    const std::size_t n = points.size();
    set.positions = xyz;
    set.rotations.assign(n, Quat{});
    set.log_scales.resize(n);
    set.opacity_logits.assign(n, opacity_logit(0.1));
    set.sh_coeffs.assign(n * set.sh_stride(), 0.0);
    set.semantic_logits.assign(n * set.class_stride(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double ls = mean_dist[i] > 0.0 ? std::max(std::log(mean_dist[i]), floor_log_scale) : floor_log_scale;
        set.log_scales[i] = {ls, ls, ls};
        auto sh = set.sh(i);
        for (std::size_t c = 0; c < 3; ++c) sh[c] = rgb_to_sh_dc(points[i].rgb[c]);
    }
    return set;
}

}  // namespace semsplat
