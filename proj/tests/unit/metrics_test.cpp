// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "oracles.hpp"
#include "semsplat/common.hpp"
#include "semsplat/metrics.hpp"

using namespace semsplat;

namespace {

ImageF random_image(std::uint64_t seed, int w, int h, int c, double lo = 0.0, double hi = 1.0) {
    Rng rng(seed);
    ImageF img(w, h, c);
    for (double& v : img.data()) v = rng.uniform(lo, hi);
    return img;
}

LabelImage random_labels(std::uint64_t seed, int w, int h, int classes, bool with_ignore) {
    Rng rng(seed);
    LabelImage m(w, h, 1);
    for (auto& v : m.data()) {
        v = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(classes)));
        if (with_ignore && rng.uniform() < 0.1) v = kIgnoreLabel;
    }
    return m;
}

}  // namespace

TEST(Psnr, ClosedForms) {
    const ImageF a = random_image(1, 20, 20, 3, 0.0, 0.9);
    EXPECT_EQ(psnr(a, a), kPsnrCap);
    ImageF b = a;
    for (double& v : b.data()) v += 0.1;
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-6);
}

TEST(Psnr, MatchesMseOracleAndIsSymmetric) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const ImageF a = random_image(10 + s, 17, 9, 3), b = random_image(40 + s, 17, 9, 3);
        EXPECT_NEAR(psnr(a, b), 10.0 * std::log10(1.0 / oracle::mse(a, b)), 1e-9);
        EXPECT_EQ(psnr(a, b), psnr(b, a));
    }
}

TEST(Psnr, ShapeMismatchThrows) { EXPECT_THROW(psnr(ImageF(3, 3, 3), ImageF(3, 3, 1)), Error); }

TEST(Ssim, IdenticalIsOne) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const ImageF a = random_image(s, 11 + static_cast<int>(s) * 7, 13, 3);
        EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);
    }
}

TEST(Ssim, ShiftedImageMatchesReference) {
    const ImageF a = random_image(2, 32, 24, 3);
    ImageF b = a;
    for (double& v : b.data()) v = std::min(1.0, v + 0.1);
    const double s = ssim(a, b);
    EXPECT_LT(s, 1.0);
    EXPECT_NEAR(s, oracle::ssim(a, b), 1e-6);
}

TEST(Ssim, UncorrelatedNoiseMatchesReference) {
    const ImageF a = random_image(3, 40, 40, 3), b = random_image(4, 40, 40, 3);
    const double s = ssim(a, b);
    EXPECT_NEAR(s, 0.0, 0.05);
    EXPECT_NEAR(s, oracle::ssim(a, b), 1e-6);
    EXPECT_NEAR(s, ssim(b, a), 1e-9);
}

TEST(Ssim, GradientMatchesFiniteDifferences) {
    ImageF a = random_image(5, 14, 13, 2);
    const ImageF b = random_image(6, 14, 13, 2);
    const SsimGradient g = ssim_with_gradient(a, b);
    EXPECT_NEAR(g.value, ssim(a, b), 1e-14);
    for (std::size_t i = 0; i < a.size(); i += 7) {
        const double saved = a.data()[i];
        a.data()[i] = saved + 1e-6;
        const double up = ssim(a, b);
        a.data()[i] = saved - 1e-6;
        const double down = ssim(a, b);
        a.data()[i] = saved;
        EXPECT_NEAR(g.d_render.data()[i], (up - down) / 2e-6, 1e-7);
    }
}

TEST(Ssim, TooSmallThrows) { EXPECT_THROW(ssim(ImageF(10, 10, 3), ImageF(10, 10, 3)), Error); }

TEST(Miou, PerfectAndHalfHalf) {
    const LabelImage gt = random_labels(7, 16, 16, 3, false);
    const MiouResult perfect = miou(gt, gt, 3, kIgnoreLabel);
    EXPECT_EQ(perfect.mean, 1.0);
    for (double v : perfect.iou) EXPECT_EQ(v, 1.0);

    LabelImage half(8, 8, 1), zeros(8, 8, 1, 0);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) half.at(x, y) = y < 4 ? 0 : 1;
    const MiouResult r = miou(zeros, half, 2, kIgnoreLabel);
    EXPECT_EQ(r.iou[0], 0.5);
    EXPECT_EQ(r.iou[1], 0.0);
    EXPECT_EQ(r.mean, 0.25);
}

TEST(Miou, MatchesConfusionOracle) {
    for (std::uint64_t s = 0; s < 50; ++s) {
        const int classes = 2 + static_cast<int>(s % 5);
        const LabelImage gt = random_labels(100 + s, 13, 11, classes, true);
        LabelImage pred = random_labels(200 + s, 13, 11, classes + 1, true);  // includes out-of-range ids
        const MiouResult r = miou(pred, gt, classes, kIgnoreLabel);
        const auto ref = oracle::class_iou(pred, gt, classes, kIgnoreLabel);
        double sum = 0;
        int n = 0;
        for (int c = 0; c < classes; ++c) {
            const auto k = static_cast<std::size_t>(c);
            EXPECT_EQ(r.included[k], ref[k] >= 0.0);
            if (ref[k] >= 0.0) {
                EXPECT_EQ(r.iou[k], ref[k]);
                sum += ref[k];
                ++n;
            }
        }
        EXPECT_EQ(r.mean, sum / n);
    }
}

TEST(Miou, AbsentClassesAndAllClassesMode) {
    LabelImage gt(4, 1, 1, 0), pred(4, 1, 1, 0);
    gt.at(3, 0) = 1;
    pred.at(3, 0) = 1;
    const MiouResult present = miou(pred, gt, 4, kIgnoreLabel);
    EXPECT_FALSE(present.included[2]);
    EXPECT_EQ(present.mean, 1.0);
    const MiouResult all = miou(pred, gt, 4, kIgnoreLabel, MiouMode::AllClasses);
    EXPECT_EQ(all.mean, 1.0);
    pred.at(0, 0) = 2;
    EXPECT_DOUBLE_EQ(miou(pred, gt, 4, kIgnoreLabel, MiouMode::AllClasses).mean, (2.0 / 3 + 1 + 0 + 1) / 4);
}

TEST(Miou, IgnoredGroundTruthAndIgnoredPrediction) {
    LabelImage gt(2, 1, 1), pred(2, 1, 1);
    gt.at(0, 0) = kIgnoreLabel;
    pred.at(0, 0) = 1;
    gt.at(1, 0) = 0;
    pred.at(1, 0) = kIgnoreLabel;
    const MiouResult r = miou(pred, gt, 2, kIgnoreLabel);
    EXPECT_EQ(r.iou[0], 0.0);
    EXPECT_FALSE(r.included[1]);
}

TEST(Miou, PermutationEquivariant) {
    const int classes = 5;
    const std::array<std::uint8_t, 5> perm{3, 0, 4, 1, 2};
    for (std::uint64_t s = 0; s < 20; ++s) {
        const LabelImage gt = random_labels(300 + s, 10, 10, classes, true);
        const LabelImage pred = random_labels(400 + s, 10, 10, classes, false);
        LabelImage gp = gt, pp = pred;
        for (auto& v : gp.data())
            if (v != kIgnoreLabel) v = perm[v];
        for (auto& v : pp.data()) v = perm[v];
        const MiouResult a = miou(pred, gt, classes, kIgnoreLabel), b = miou(pp, gp, classes, kIgnoreLabel);
        for (int c = 0; c < classes; ++c) EXPECT_EQ(a.iou[static_cast<std::size_t>(c)], b.iou[perm[static_cast<std::size_t>(c)]]);
        EXPECT_DOUBLE_EQ(a.mean, b.mean);
    }
}

TEST(Miou, OutOfRangeGroundTruthThrows) {
    LabelImage gt(2, 1, 1, 7), pred(2, 1, 1, 0);
    try {
        miou(pred, gt, 3, kIgnoreLabel);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::LabelOutOfRange);
    }
}

TEST(ConfusionMatrix, AccumulatesAcrossFrames) {
    const LabelImage g1 = random_labels(500, 8, 8, 3, true), p1 = random_labels(501, 8, 8, 3, false);
    const LabelImage g2 = random_labels(502, 8, 8, 3, true), p2 = random_labels(503, 8, 8, 3, false);
    ConfusionMatrix cm(3);
    cm.add(p1, g1, kIgnoreLabel);
    cm.add(p2, g2, kIgnoreLabel);
    LabelImage gs(8, 16, 1), ps(8, 16, 1);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            gs.at(x, y) = g1.at(x, y);
            ps.at(x, y) = p1.at(x, y);
            gs.at(x, y + 8) = g2.at(x, y);
            ps.at(x, y + 8) = p2.at(x, y);
        }
    EXPECT_EQ(cm.result().iou, miou(ps, gs, 3, kIgnoreLabel).iou);
}

TEST(EvalReport, KeyValueOutput) {
    EvalReport r;
    r.frames = {{"a", 30.0, 0.9}, {"b", 20.0, 0.7}};
    r.class_names = {"sky", "tree"};
    r.segmentation.iou = {0.5, 1.0};
    r.segmentation.included = {true, true};
    r.segmentation.mean = 0.75;
    r.finalize_means();
    EXPECT_EQ(r.mean_psnr, 25.0);
    EXPECT_DOUBLE_EQ(r.mean_ssim, 0.8);
    std::ostringstream os;
    r.write_key_values(os);
    const std::string s = os.str();
    EXPECT_NE(s.find("mean_psnr = 25\n"), std::string::npos);
    EXPECT_NE(s.find("miou = 0.75\n"), std::string::npos);
    EXPECT_NE(s.find("iou.tree = 1\n"), std::string::npos);
    EXPECT_NE(s.find("frame.b.psnr = 20\n"), std::string::npos);
    std::ostringstream table;
    r.write_table(table);
    EXPECT_NE(table.str().find("sky"), std::string::npos);
}
