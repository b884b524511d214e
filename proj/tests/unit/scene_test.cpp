// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "oracles.hpp"
#include "semsplat/common.hpp"
#include "semsplat/scene.hpp"

using namespace semsplat;

namespace {

void expect_matrix_near(const Mat3& m, const Eigen::Matrix3d& ref, double tol) {
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) EXPECT_NEAR(m(r, c), ref(r, c), tol) << "(" << r << "," << c << ")";
}

Quat random_quat(Rng& rng) { return Quat{rng.normal(), rng.normal(), rng.normal(), rng.normal()}.normalized(); }

}  // namespace

TEST(Covariance3d, IdentityCases) {
    expect_matrix_near(covariance_3d({0, 0, 0}, Quat{}), Eigen::Matrix3d::Identity(), 0.0);
    const Mat3 c = covariance_3d({std::log(2.0), 0, 0}, Quat{});
    expect_matrix_near(c, Eigen::Vector3d(4, 1, 1).asDiagonal().toDenseMatrix(), 1e-14);
}

TEST(Covariance3d, QuarterTurnAboutZSwapsAxes) {
    const Quat q{std::cos(std::numbers::pi / 4), 0, 0, std::sin(std::numbers::pi / 4)};
    const Mat3 c = covariance_3d({std::log(2.0), 0, 0}, q);
    expect_matrix_near(c, oracle::covariance({std::log(2.0), 0, 0}, q), 1e-12);
    expect_matrix_near(c, Eigen::Vector3d(1, 4, 1).asDiagonal().toDenseMatrix(), 1e-12);
}

TEST(Covariance3d, MatchesOracleAndIsPsd) {
    Rng rng(21);
    for (int t = 0; t < 1000; ++t) {
        const Vec3 ls{rng.uniform(-5, 2), rng.uniform(-5, 2), rng.uniform(-5, 2)};
        const Quat q = random_quat(rng);
        const Mat3 c = covariance_3d(ls, q);
        const Eigen::Matrix3d ref = oracle::covariance(ls, q);
        expect_matrix_near(c, ref, 1e-10 * ref.norm());
        Eigen::Matrix3d e;
        for (int r = 0; r < 3; ++r)
            for (int k = 0; k < 3; ++k) e(r, k) = c(r, k);
        EXPECT_EQ(c(0, 1), c(1, 0));
        EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(e).eigenvalues().minCoeff(), -1e-9);
    }
}

TEST(Covariance3d, RenormalizesQuaternion) {
    const Quat q{2.0, 0.0, 0.0, 0.0};
    expect_matrix_near(covariance_3d({0, 0, 0}, q), Eigen::Matrix3d::Identity(), 1e-15);
}

TEST(Covariance3d, RejectsNonFinite) {
    try {
        covariance_3d({NAN, 0, 0}, Quat{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidParameter);
    }
}

TEST(Opacity, LogisticValues) {
    EXPECT_EQ(opacity(0.0), 0.5);
    EXPECT_NEAR(opacity(40.0), 1.0, 1e-12);
    const long double ref = 1.0L / (1.0L + std::exp(-std::log(3.0L)));
    EXPECT_NEAR(opacity(std::log(3.0)), static_cast<double>(ref), 1e-15);
    EXPECT_NEAR(opacity(std::log(3.0)), 0.75, 1e-15);
    double prev = 0.0;
    for (double x = -30; x <= 30; x += 0.25) {
        const double o = opacity(x);
        EXPECT_GT(o, prev);
        EXPECT_LT(o, 1.0 + 1e-16);
        prev = o;
    }
    EXPECT_NEAR(opacity(opacity_logit(0.1)), 0.1, 1e-15);
}

TEST(ShToRgb, ConstantBandAndOffset) {
    const double y = 0.5 / 0.28209479177387814;
    const std::vector<double> dc{y, y, y};
    const auto rgb = sh_to_rgb(dc, {0, 0, 1}, 0);
    for (double v : rgb) EXPECT_NEAR(v, 1.0, 1e-12);
    const std::vector<double> zeros(48, 0.0);
    for (double v : sh_to_rgb(zeros, {1, 0, 0}, 3)) EXPECT_EQ(v, 0.5);
}

TEST(ShToRgb, ClampsAtZero) {
    const std::vector<double> dc{-10.0, 0.0, 1.0};
    const auto rgb = sh_to_rgb(dc, {0, 0, 1}, 0);
    EXPECT_EQ(rgb[0], 0.0);
    EXPECT_EQ(rgb[1], 0.5);
}

TEST(ShToRgb, RejectsDegreeBeyondCoefficients) {
    const std::vector<double> dc(12, 0.0);
    EXPECT_THROW(sh_to_rgb(dc, {0, 0, 1}, 2), Error);
}

TEST(ShBasis, MatchesLegendreOracle) {
    Rng rng(8);
    for (int t = 0; t < 300; ++t) {
        Eigen::Vector3d d(rng.normal(), rng.normal(), rng.normal());
        d.normalize();
        std::array<double, 16> basis{};
        sh_basis({d.x(), d.y(), d.z()}, 3, basis);
        int j = 0;
        for (int l = 0; l <= 3; ++l)
            for (int m = -l; m <= l; ++m, ++j)
                EXPECT_NEAR(basis[static_cast<std::size_t>(j)], oracle::real_sh(l, m, d), 1e-12)
                    << "l=" << l << " m=" << m;
    }
}

TEST(ShBasis, DegreeOneAlongZ) {
    Rng rng(9);
    std::vector<double> coeffs(12);
    for (double& c : coeffs) c = rng.normal();
    const auto rgb = sh_to_rgb(coeffs, {0, 0, 1}, 1);
    const auto ref = oracle::sh_color(coeffs.data(), 1, {0, 0, 1});
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(rgb[static_cast<std::size_t>(c)], ref[static_cast<std::size_t>(c)], 1e-12);
}

TEST(ShBasis, DirectionGradientMatchesFiniteDifferences) {
    Rng rng(10);
    for (int t = 0; t < 50; ++t) {
        Vec3 d{rng.normal(), rng.normal(), rng.normal()};
        d = (1.0 / norm(d)) * d;
        std::array<double, 16> basis{};
        std::array<Vec3, 16> grad{};
        sh_basis(d, 3, basis, grad);
        for (int a = 0; a < 3; ++a) {
            Vec3 up = d, down = d;
            up[a] += 1e-6;
            down[a] -= 1e-6;
            std::array<double, 16> bu{}, bd{};
            sh_basis(up, 3, bu);
            sh_basis(down, 3, bd);
            for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(grad[j][a], (bu[j] - bd[j]) / 2e-6, 1e-6);
        }
    }
}

TEST(ClassProbs, UniformSaturatedAndOracle) {
    for (double p : class_probs(std::vector<double>{0, 0, 0, 0})) EXPECT_DOUBLE_EQ(p, 0.25);
    const auto sat = class_probs(std::vector<double>{0, 0, 40, 0});
    EXPECT_NEAR(sat[2], 1.0, 1e-12);
    EXPECT_NEAR(sat[0], 0.0, 1e-12);
    const auto p = class_probs(std::vector<double>{1, 2, 3});
    const long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
    EXPECT_NEAR(p[0], static_cast<double>(std::exp(1.0L) / z), 1e-15);
    EXPECT_NEAR(p[1], static_cast<double>(std::exp(2.0L) / z), 1e-15);
    EXPECT_NEAR(p[2], static_cast<double>(std::exp(3.0L) / z), 1e-15);
}

TEST(ClassProbs, ShiftInvariantAndOnSimplex) {
    Rng rng(12);
    for (int t = 0; t < 500; ++t) {
        std::vector<double> logits(1 + rng.below(8));
        for (double& l : logits) l = 10 * rng.normal();
        std::vector<double> shifted = logits;
        const double k = 100 * rng.normal();
        for (double& l : shifted) l += k;
        const auto a = class_probs(logits), b = class_probs(shifted);
        double sum = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_NEAR(a[i], b[i], 1e-9);
            EXPECT_GE(a[i], 0.0);
            sum += a[i];
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
        EXPECT_EQ(std::max_element(a.begin(), a.end()) - a.begin(), std::max_element(b.begin(), b.end()) - b.begin());
    }
}

TEST(InitFromPoints, TetrahedronScales) {
    const std::vector<ColoredPoint> pts{{{1, 1, 1}, {0.1, 0.2, 0.3}},
                                        {{1, -1, -1}, {0.4, 0.5, 0.6}},
                                        {{-1, 1, -1}, {0.7, 0.8, 0.9}},
                                        {{-1, -1, 1}, {1.0, 0.0, 0.5}}};
    const GaussianSet s = init_from_points(pts, 3, 2);
    ASSERT_EQ(s.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        for (int a = 0; a < 3; ++a) EXPECT_NEAR(s.log_scales[i][a], std::log(2.0 * std::sqrt(2.0)), 1e-12);
        EXPECT_EQ(s.rotations[i], Quat{});
        EXPECT_NEAR(opacity(s.opacity_logits[i]), 0.1, 1e-12);
        for (double p : class_probs(s.semantics(i))) EXPECT_DOUBLE_EQ(p, 1.0 / 3.0);
        for (std::size_t k = 3; k < s.sh_stride(); ++k) EXPECT_EQ(s.sh(i)[k], 0.0);
        const auto rgb = sh_to_rgb(s.sh(i), {0, 0, 1}, 0);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(rgb[c], pts[i].rgb[c], 1e-6);
    }
}

TEST(InitFromPoints, GridInteriorScaleIsZero) {
    std::vector<ColoredPoint> pts;
    for (int x = 0; x < 3; ++x)
        for (int y = 0; y < 3; ++y)
            for (int z = 0; z < 3; ++z) pts.push_back({{double(x), double(y), double(z)}, {0.5, 0.5, 0.5}});
    const GaussianSet s = init_from_points(pts, 2, 0);
    const std::size_t centre = 13;
    EXPECT_EQ(s.positions[centre], (Vec3{1, 1, 1}));
    EXPECT_NEAR(s.log_scales[centre].x, 0.0, 1e-15);
    // Exhaustive neighbour oracle for every point.
    for (std::size_t i = 0; i < pts.size(); ++i) {
        std::vector<double> d;
        for (std::size_t j = 0; j < pts.size(); ++j)
            if (j != i) d.push_back(norm(pts[i].position - pts[j].position));
        std::sort(d.begin(), d.end());
        EXPECT_NEAR(s.log_scales[i].x, std::log((d[0] + d[1] + d[2]) / 3.0), 1e-12);
    }
}

TEST(InitFromPoints, RequiresFourPoints) {
    const std::vector<ColoredPoint> pts(3);
    try {
        init_from_points(pts, 2, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InsufficientData);
    }
}

TEST(InitFromPoints, DcRoundTripOverUnitInterval) {
    for (double v = 0.0; v <= 1.0; v += 1.0 / 64) {
        const double dc = rgb_to_sh_dc(v);
        const std::vector<double> c{dc, dc, dc};
        EXPECT_NEAR(sh_to_rgb(c, {0, 1, 0}, 0)[0], v, 1e-6);
    }
}

TEST(Knn, GridMatchesExact) {
    Rng rng(14);
    std::vector<Vec3> pts;
    for (int i = 0; i < 3000; ++i) pts.push_back({rng.uniform(-5, 5), rng.uniform(-1, 1), rng.normal()});
    // Duplicates and a far outlier.
    pts.push_back(pts[10]);
    pts.push_back({100, 100, 100});
    const auto exact = knn_mean_distance(pts, 3);
    const auto grid = knn_mean_distance_grid(pts, 3);
    ASSERT_EQ(exact.size(), grid.size());
    for (std::size_t i = 0; i < exact.size(); ++i) EXPECT_EQ(exact[i], grid[i]) << i;
}

TEST(GaussianSet, SubsetCopiesBitwise) {
    Rng rng(15);
    GaussianSet s(1, 3);
    for (int i = 0; i < 5; ++i) {
        s.positions.push_back({rng.normal(), rng.normal(), rng.normal()});
        s.rotations.push_back(random_quat(rng));
        s.log_scales.push_back({rng.normal(), rng.normal(), rng.normal()});
        s.opacity_logits.push_back(rng.normal());
        for (int k = 0; k < 12; ++k) s.sh_coeffs.push_back(rng.normal());
        for (int k = 0; k < 3; ++k) s.semantic_logits.push_back(rng.normal());
    }
    const std::vector<std::size_t> idx{4, 1};
    const GaussianSet sub = s.subset(idx);
    ASSERT_EQ(sub.size(), 2u);
    EXPECT_EQ(sub.positions[0], s.positions[4]);
    EXPECT_EQ(sub.sh(1)[11], s.sh(1)[11]);
    EXPECT_EQ(sub.semantics(0)[2], s.semantics(4)[2]);
    sub.validate();
}

TEST(GaussianSet, ValidateCatchesNonFiniteAndLengthMismatch) {
    GaussianSet s(0, 2);
    s.positions.push_back({0, 0, 0});
    s.rotations.push_back({});
    s.log_scales.push_back({0, 0, 0});
    s.opacity_logits.push_back(0.0);
    s.sh_coeffs = {0, 0, 0};
    s.semantic_logits = {0, 0};
    s.validate();
    s.opacity_logits[0] = INFINITY;
    EXPECT_THROW(s.validate(), Error);
    s.opacity_logits[0] = 0;
    s.semantic_logits.push_back(1.0);
    EXPECT_THROW(s.validate(), Error);
}

TEST(ClassTable, ReadWriteAndResolve) {
    const auto path = std::filesystem::temp_directory_path() / "semsplat_classes_test.tsv";
    const ClassTable t(std::vector<std::string>{"sky", "tree", "rock"});
    t.write(path);
    const ClassTable back = ClassTable::read(path);
    EXPECT_EQ(back, t);
    EXPECT_EQ(back.resolve("tree"), 1);
    EXPECT_EQ(back.resolve("2"), 2);
    EXPECT_EQ(back.ignore_label(), 255);
    try {
        (void)back.resolve("water");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("sky"), std::string::npos);
    }
    std::filesystem::remove(path);
}
