// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semsplat/image.hpp"
#include "semsplat/linalg.hpp"

namespace semsplat {

inline constexpr int kMaxShDegree = 3;

/// Number of SH coefficients per colour channel for a given degree.
constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Dense class-id to name mapping. Ids are 0..size()-1; the ignore label is
/// reserved outside that range.
class ClassTable {
public:
    ClassTable() = default;
    explicit ClassTable(std::vector<std::string> names);

    /// Builds a table of `count` classes named "class_<id>".
    static ClassTable numbered(int count);

    /// Parses lines of `id<TAB>name`. Ids must be dense and start at 0.
    static ClassTable read(const std::filesystem::path& path);
    void write(const std::filesystem::path& path) const;

    [[nodiscard]] int size() const { return static_cast<int>(names_.size()); }
    [[nodiscard]] const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
    [[nodiscard]] const std::vector<std::string>& names() const { return names_; }
    [[nodiscard]] std::uint8_t ignore_label() const { return kIgnoreLabel; }

    /// Resolves a class by name or by numeric id. Throws with the list of
    /// available classes when nothing matches.
    [[nodiscard]] int resolve(std::string_view name_or_id) const;

    friend bool operator==(const ClassTable&, const ClassTable&) = default;

private:
    std::vector<std::string> names_;
};

/// Structure-of-arrays scene state. SH coefficients are stored per Gaussian
/// as [coefficient][channel]; semantic logits as [class].
struct GaussianSet {
    int sh_degree = 0;
    int active_sh_degree = 0;
    int num_classes = 1;

    std::vector<Vec3> positions;
    std::vector<Quat> rotations;
    std::vector<Vec3> log_scales;
    std::vector<double> opacity_logits;
    std::vector<double> sh_coeffs;
    std::vector<double> semantic_logits;

    GaussianSet() = default;
    GaussianSet(int sh_degree, int num_classes);

    [[nodiscard]] std::size_t size() const { return positions.size(); }
    [[nodiscard]] bool empty() const { return positions.empty(); }
    [[nodiscard]] std::size_t sh_stride() const { return static_cast<std::size_t>(sh_coeff_count(sh_degree)) * 3; }
    [[nodiscard]] std::size_t class_stride() const { return static_cast<std::size_t>(num_classes); }

    std::span<double> sh(std::size_t i) { return {sh_coeffs.data() + i * sh_stride(), sh_stride()}; }
    [[nodiscard]] std::span<const double> sh(std::size_t i) const {
        return {sh_coeffs.data() + i * sh_stride(), sh_stride()};
    }
    std::span<double> semantics(std::size_t i) {
        return {semantic_logits.data() + i * class_stride(), class_stride()};
    }
    [[nodiscard]] std::span<const double> semantics(std::size_t i) const {
        return {semantic_logits.data() + i * class_stride(), class_stride()};
    }

    /// Appends Gaussian `i` of `other` (same layout required).
    void push_back_from(const GaussianSet& other, std::size_t i);
    /// Gaussians at `indices`, in that order; parameters copied bitwise.
    [[nodiscard]] GaussianSet subset(std::span<const std::size_t> indices) const;

    /// Throws InvalidState when array lengths disagree or any value is not finite.
    void validate() const;

    friend bool operator==(const GaussianSet&, const GaussianSet&) = default;
};

/// R S S^T R^T. The quaternion is renormalized.
Mat3 covariance_3d(const Vec3& log_scale, const Quat& rotation);

double opacity(double logit);
double opacity_logit(double opacity);

/// Real SH basis (Condon-Shortley phase) at a unit direction for all bands up
/// to `degree`. Optionally writes d(basis)/d(dir) for each coefficient.
void sh_basis(const Vec3& dir, int degree, std::span<double> basis, std::span<Vec3> basis_grad = {});

/// Colour from SH coefficients laid out [coefficient][channel]; +0.5 offset,
/// clamped at zero from below.
std::array<double, 3> sh_to_rgb(std::span<const double> coeffs, const Vec3& view_dir, int degree);

/// DC coefficient that reproduces `value` through sh_to_rgb at degree 0.
double rgb_to_sh_dc(double value);

std::vector<double> class_probs(std::span<const double> logits);
void class_probs(std::span<const double> logits, std::span<double> out);

struct ColoredPoint {
    Vec3 position;
    std::array<double, 3> rgb{};
};

/// Mean distance from each point to its k nearest neighbours.
std::vector<double> knn_mean_distance(std::span<const Vec3> points, int k);
/// Same result via a uniform grid; used for large clouds.
std::vector<double> knn_mean_distance_grid(std::span<const Vec3> points, int k);

/// Diagonal length of the axis-aligned bounding box.
double bounding_extent(std::span<const Vec3> points);

GaussianSet init_from_points(std::span<const ColoredPoint> points, int num_classes, int sh_degree);

}  // namespace semsplat
