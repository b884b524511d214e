// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>

namespace semsplat {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr double& operator[](int i) {
        switch (i) {
            case 0: return x;
            case 1: return y;
            default: return z;
        }
    }
    constexpr double operator[](int i) const {
        switch (i) {
            case 0: return x;
            case 1: return y;
            default: return z;
        }
    }

    friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend constexpr Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
    constexpr Vec3& operator+=(Vec3 o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

inline constexpr double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline bool is_finite(Vec3 a) { return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z); }

/// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{};

    static constexpr Mat3 identity() { return Mat3{{1, 0, 0, 0, 1, 0, 0, 0, 1}}; }
    static constexpr Mat3 diagonal(double a, double b, double c) { return Mat3{{a, 0, 0, 0, b, 0, 0, 0, c}}; }

    constexpr double& operator()(int r, int c) { return m[static_cast<std::size_t>(r * 3 + c)]; }
    constexpr double operator()(int r, int c) const { return m[static_cast<std::size_t>(r * 3 + c)]; }

    [[nodiscard]] constexpr Mat3 transposed() const {
        Mat3 t;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
        return t;
    }

    friend constexpr Mat3 operator*(const Mat3& a, const Mat3& b) {
        Mat3 out;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += a(r, k) * b(k, c);
                out(r, c) = s;
            }
        return out;
    }
    friend constexpr Vec3 operator*(const Mat3& a, Vec3 v) {
        return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
                a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
                a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
    }
    friend constexpr Mat3 operator+(const Mat3& a, const Mat3& b) {
        Mat3 out;
        for (std::size_t i = 0; i < 9; ++i) out.m[i] = a.m[i] + b.m[i];
        return out;
    }
    friend constexpr bool operator==(const Mat3&, const Mat3&) = default;
};

/// Symmetric 2x2 matrix [[a, b], [b, c]].
struct Sym2 {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;

    [[nodiscard]] constexpr double det() const { return a * c - b * b; }
    [[nodiscard]] constexpr Sym2 inverse() const {
        const double d = det();
        return {c / d, -b / d, a / d};
    }
    /// Largest eigenvalue, closed form.
    [[nodiscard]] double max_eigenvalue() const {
        const double mid = 0.5 * (a + c);
        const double disc = std::sqrt(std::max(0.0, mid * mid - det()));
        return mid + disc;
    }
};

/// Quaternion (w, x, y, z); not necessarily normalized.
struct Quat {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    [[nodiscard]] double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
    [[nodiscard]] Quat normalized() const {
        const double n = norm();
        return {w / n, x / n, y / n, z / n};
    }
    friend constexpr bool operator==(const Quat&, const Quat&) = default;
};

/// Rotation matrix of a unit quaternion.
inline constexpr Mat3 rotation_matrix(const Quat& q) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    return Mat3{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
                 2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
                 2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
}

/// Inverse of rotation_matrix for a proper rotation (Shepperd's method).
Quat quaternion_from_rotation(const Mat3& r);

}  // namespace semsplat
