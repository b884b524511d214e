// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>

#include "oracles.hpp"
#include "scenes.hpp"
#include "semsplat/optim.hpp"
#include "tempdir.hpp"

using namespace semsplat;
using testing_support::TempDir;

namespace {

GradientBuffers zero_grads(const GaussianSet& set) {
    GradientBuffers g;
    g.resize_like(set);
    return g;
}

GaussianSet small_set(std::uint64_t seed, int n = 5) {
    testing_support::SceneOptions o;
    o.min_gaussians = n;
    o.max_gaussians = n;
    o.sh_degree = 2;
    return testing_support::random_scene(seed, o).set;
}

std::vector<Frame> toy_frames(const GaussianSet& truth, int count, int size) {
    std::vector<Frame> frames;
    for (int i = 0; i < count; ++i)
        frames.push_back(testing_support::render_frame(truth, testing_support::random_camera(400 + i, size, size),
                                                       "f" + std::to_string(i)));
    return frames;
}

}  // namespace

TEST(Optimizer, ZeroGradientLeavesParametersUnchanged) {
    GaussianSet set = small_set(1);
    const GaussianSet before = set;
    OptimState state(set, {}, 2.0, 100);
    for (int k = 0; k < 5; ++k) optimizer_step(set, zero_grads(set), state);
    EXPECT_EQ(set.positions, before.positions);
    EXPECT_EQ(set.log_scales, before.log_scales);
    EXPECT_EQ(set.opacity_logits, before.opacity_logits);
    EXPECT_EQ(set.sh_coeffs, before.sh_coeffs);
    EXPECT_EQ(set.semantic_logits, before.semantic_logits);
    for (std::size_t i = 0; i < set.size(); ++i) EXPECT_NEAR(set.rotations[i].w, before.rotations[i].w, 1e-15);
    EXPECT_EQ(state.step, 5u);
}

TEST(Optimizer, MatchesScalarAdamOracle) {
    GaussianSet set = small_set(2, 1);
    LearningRates lr;
    OptimState state(set, lr, 1.0, 1000);
    Rng rng(5);
    double x = set.opacity_logits[0], s = set.semantic_logits[1];
    double m1 = 0, v1 = 0, m2 = 0, v2 = 0;
    for (int t = 1; t <= 200; ++t) {
        GradientBuffers g = zero_grads(set);
        const double ga = rng.normal(), gb = rng.normal();
        g.opacity_logits[0] = ga;
        g.semantic_logits[1] = gb;
        optimizer_step(set, g, state);
        m1 = 0.9 * m1 + 0.1 * ga;
        v1 = 0.999 * v1 + 0.001 * ga * ga;
        x -= lr.opacity * (m1 / (1 - std::pow(0.9, t))) / (std::sqrt(v1 / (1 - std::pow(0.999, t))) + 1e-15);
        m2 = 0.9 * m2 + 0.1 * gb;
        v2 = 0.999 * v2 + 0.001 * gb * gb;
        s -= lr.semantic * (m2 / (1 - std::pow(0.9, t))) / (std::sqrt(v2 / (1 - std::pow(0.999, t))) + 1e-15);
        ASSERT_NEAR(set.opacity_logits[0], x, 1e-12) << "step " << t;
        ASSERT_NEAR(set.semantic_logits[1], s, 1e-12) << "step " << t;
    }
}

TEST(Optimizer, PositionUsesDecayedRateBeforeIncrement) {
    GaussianSet set = small_set(3, 1);
    OptimState state(set, {}, 3.0, 10);
    state.step = 4;
    const double x0 = set.positions[0].x;
    GradientBuffers g = zero_grads(set);
    g.positions[0].x = 1.0;
    optimizer_step(set, g, state);
    const double bc1 = 1 - std::pow(0.9, 5), bc2 = 1 - std::pow(0.999, 5);
    const double expected = position_learning_rate({}, 3.0, 4, 10) * (0.1 / bc1) / (std::sqrt(0.001 / bc2) + 1e-15);
    EXPECT_NEAR(x0 - set.positions[0].x, expected, 1e-15);
}

TEST(Optimizer, QuaternionsStayUnit) {
    GaussianSet set = small_set(4, 10);
    OptimState state(set, {}, 1.0, 100);
    Rng rng(9);
    for (int t = 0; t < 50; ++t) {
        GradientBuffers g = zero_grads(set);
        for (Quat& q : g.rotations) q = {100 * rng.normal(), 100 * rng.normal(), 100 * rng.normal(), rng.normal()};
        optimizer_step(set, g, state);
        for (const Quat& q : set.rotations) ASSERT_NEAR(q.norm(), 1.0, 1e-12);
    }
}

TEST(Optimizer, NonFiniteGradientsAreSkippedAndCounted) {
    GaussianSet set = small_set(5, 2);
    const GaussianSet before = set;
    OptimState state(set, {}, 1.0, 100);
    GradientBuffers g = zero_grads(set);
    g.opacity_logits[0] = std::numeric_limits<double>::quiet_NaN();
    g.opacity_logits[1] = 1.0;
    g.positions[1].y = std::numeric_limits<double>::infinity();
    log::ScopedCapture capture;
    optimizer_step(set, g, state);
    EXPECT_EQ(state.skipped_nonfinite, 2u);
    EXPECT_EQ(set.opacity_logits[0], before.opacity_logits[0]);
    EXPECT_EQ(set.positions[1].y, before.positions[1].y);
    EXPECT_LT(set.opacity_logits[1], before.opacity_logits[1]);
    EXPECT_TRUE(capture.contains("non-finite"));
    EXPECT_EQ(state.group(ParamGroup::Opacity).first[0], 0.0);
}

TEST(Optimizer, ShapeMismatchThrows) {
    GaussianSet set = small_set(6, 3);
    OptimState state(set, {}, 1.0, 100);
    GradientBuffers g = zero_grads(set);
    g.positions.pop_back();
    EXPECT_THROW(optimizer_step(set, g, state), Error);
    OptimState other(small_set(6, 2), {}, 1.0, 100);
    try {
        optimizer_step(set, zero_grads(set), other);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidState);
    }
}

TEST(LearningRate, DecaysLogLinearlyBetweenEndpoints) {
    const LearningRates lr;
    EXPECT_NEAR(position_learning_rate(lr, 2.0, 0, 1000), 3.2e-4, 1e-18);
    EXPECT_NEAR(position_learning_rate(lr, 2.0, 1000, 1000), 3.2e-6, 1e-20);
    EXPECT_NEAR(position_learning_rate(lr, 2.0, 5000, 1000), 3.2e-6, 1e-20);
    EXPECT_NEAR(position_learning_rate(lr, 1.0, 500, 1000), 1.6e-5, 1e-18);
    double prev = position_learning_rate(lr, 1.0, 0, 1000);
    for (std::uint64_t s = 1; s <= 1000; ++s) {
        const double cur = position_learning_rate(lr, 1.0, s, 1000);
        ASSERT_LT(cur, prev) << s;
        prev = cur;
    }
}

TEST(SceneExtent, IsEnlargedRadiusAroundMeanCentre) {
    std::vector<Camera> cams;
    for (const Vec3 c : {Vec3{1, 0, 0}, Vec3{-1, 0, 0}, Vec3{0, 3, 0}})
        cams.push_back(look_at_camera(c, {0, 0, -5}, {0, 1, 0}, 50, 32, 32));
    // Mean centre (0, 1, 0); farthest camera at distance 2.
    EXPECT_NEAR(scene_extent(cams), 2.2, 1e-12);
    EXPECT_THROW((void)scene_extent({}), Error);
}

TEST(Densify, NothingQualifiesLeavesSetUnchanged) {
    GaussianSet set = small_set(7, 6);
    for (double& l : set.opacity_logits) l = opacity_logit(0.5);
    for (Vec3& s : set.log_scales) s = {-3, -3, -3};
    const GaussianSet before = set;
    OptimState state(set, {}, 1.0, 100);
    state.grad_accum.assign(6, 1e-5);
    state.grad_views.assign(6, 1);
    Rng rng(1);
    const DensifyReport r = densify_and_prune(set, state, {}, 1.0, rng);
    EXPECT_EQ(r.cloned + r.split + r.pruned, 0u);
    EXPECT_EQ(set.positions, before.positions);
    EXPECT_EQ(set.sh_coeffs, before.sh_coeffs);
    EXPECT_EQ(state.grad_accum, std::vector<double>(6, 0.0));
    EXPECT_EQ(state.grad_views, std::vector<std::uint32_t>(6, 0u));
}

TEST(Densify, SmallGaussianClonesOnceWithSameClasses) {
    GaussianSet set = small_set(8, 1);
    set.log_scales[0] = {std::log(0.004), std::log(0.003), std::log(0.002)};
    set.opacity_logits[0] = opacity_logit(0.5);
    OptimState state(set, {}, 1.0, 100);
    state.grad_accum[0] = 1.0;
    state.grad_views[0] = 2;
    Rng rng(3);
    const DensifyReport r = densify_and_prune(set, state, {}, 1.0, rng);
    EXPECT_EQ(r.cloned, 1u);
    EXPECT_EQ(r.split, 0u);
    ASSERT_EQ(set.size(), 2u);
    EXPECT_EQ(set.semantics(0)[0], set.semantics(1)[0]);
    EXPECT_EQ(class_probs(set.semantics(0)), class_probs(set.semantics(1)));
    EXPECT_EQ(set.log_scales[0], set.log_scales[1]);
    EXPECT_NE(set.positions[0], set.positions[1]);
    EXPECT_LT(norm(set.positions[1] - set.positions[0]), 0.05);
    state.check_lockstep(set);
}

TEST(Densify, MatchesIndependentRuleReplay) {
    // Replays the clone, split and prune rules with the same random stream.
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        testing_support::SceneOptions o;
        o.min_gaussians = 30;
        o.max_gaussians = 30;
        o.min_log_scale = std::log(0.002);
        o.max_log_scale = std::log(0.3);
        o.min_opacity = 0.002;
        o.max_opacity = 0.9;
        o.sh_degree = 1;
        GaussianSet set = testing_support::random_scene(seed, o).set;
        const std::size_t n = set.size();
        const double extent = 1.5;
        TrainConfig cfg;
        OptimState state(set, cfg.lr, extent, 100);
        Rng stats(seed + 77);
        for (std::size_t i = 0; i < n; ++i) {
            state.grad_views[i] = static_cast<std::uint32_t>(stats.below(4));
            state.grad_accum[i] = state.grad_views[i] * stats.uniform(0, 4e-4);
        }

        struct G {
            Eigen::Vector3d pos;
            Quat rot;
            Eigen::Vector3d ls;
            double op;
            std::vector<double> sh, sem;
        };
        std::vector<G> ref;
        for (std::size_t i = 0; i < n; ++i) {
            const auto sh = set.sh(i);
            const auto sem = set.semantics(i);
            ref.push_back({{set.positions[i].x, set.positions[i].y, set.positions[i].z},
                           set.rotations[i],
                           {set.log_scales[i].x, set.log_scales[i].y, set.log_scales[i].z},
                           set.opacity_logits[i],
                           {sh.begin(), sh.end()},
                           {sem.begin(), sem.end()}});
        }
        Rng ref_rng(seed);
        auto offset = [&](const G& g) {
            Eigen::Vector3d z;
            for (int k = 0; k < 3; ++k) z[k] = std::exp(g.ls[k]) * ref_rng.normal();
            return Eigen::Vector3d(oracle::rotation(g.rot) * z);
        };
        std::vector<G> clones, children;
        std::vector<bool> split_parent(n, false);
        for (std::size_t i = 0; i < n; ++i) {
            const bool hot = state.grad_views[i] > 0 && state.grad_accum[i] / state.grad_views[i] > 2e-4;
            if (hot && std::exp(ref[i].ls.maxCoeff()) < 0.01 * extent) {
                G c = ref[i];
                c.pos += offset(ref[i]);
                clones.push_back(c);
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            const bool hot = state.grad_views[i] > 0 && state.grad_accum[i] / state.grad_views[i] > 2e-4;
            if (hot && std::exp(ref[i].ls.maxCoeff()) >= 0.01 * extent) {
                for (int c = 0; c < 2; ++c) {
                    G child = ref[i];
                    child.pos += offset(ref[i]);
                    child.ls -= Eigen::Vector3d::Constant(std::log(1.6));
                    children.push_back(child);
                }
                split_parent[i] = true;
            }
        }
        std::vector<G> all;
        for (std::size_t i = 0; i < n; ++i)
            if (!split_parent[i]) all.push_back(ref[i]);
        all.insert(all.end(), clones.begin(), clones.end());
        all.insert(all.end(), children.begin(), children.end());
        std::vector<G> expected;
        for (const G& g : all)
            if (1.0 / (1.0 + std::exp(-g.op)) >= 0.005 && std::exp(g.ls.maxCoeff()) <= 0.1 * extent)
                expected.push_back(g);

        Rng rng(seed);
        densify_and_prune(set, state, cfg, extent, rng);
        ASSERT_EQ(set.size(), expected.size()) << "seed " << seed;
        for (std::size_t i = 0; i < expected.size(); ++i) {
            const G& g = expected[i];
            for (int k = 0; k < 3; ++k) {
                EXPECT_NEAR(set.positions[i][k], g.pos[k], 1e-12) << "seed " << seed << " gaussian " << i;
                EXPECT_NEAR(set.log_scales[i][k], g.ls[k], 1e-12);
            }
            EXPECT_EQ(set.opacity_logits[i], g.op);
            const auto sh = set.sh(i);
            const auto sem = set.semantics(i);
            EXPECT_EQ(std::vector<double>(sh.begin(), sh.end()), g.sh);
            EXPECT_EQ(std::vector<double>(sem.begin(), sem.end()), g.sem);
        }
        state.check_lockstep(set);
        for (double a : state.grad_accum) EXPECT_EQ(a, 0.0);
    }
}

TEST(Densify, FilterKeepsMomentsInLockstep) {
    GaussianSet set = small_set(9, 4);
    OptimState state(set, {}, 1.0, 100);
    Moments& m = state.group(ParamGroup::Semantic);
    for (std::size_t k = 0; k < m.first.size(); ++k) m.first[k] = static_cast<double>(k);
    state.grad_accum = {1, 2, 3, 4};
    filter_gaussians(set, state, {true, false, false, true});
    state.check_lockstep(set);
    ASSERT_EQ(set.size(), 2u);
    EXPECT_EQ(state.grad_accum, (std::vector<double>{1, 4}));
    const std::size_t c = set.class_stride();
    EXPECT_EQ(state.group(ParamGroup::Semantic).first[0], 0.0);
    EXPECT_EQ(state.group(ParamGroup::Semantic).first[c], static_cast<double>(3 * c));
    EXPECT_THROW(filter_gaussians(set, state, {true}), Error);
}

TEST(OpacityReset, ClampsOnlyAboveValue) {
    GaussianSet set = small_set(10, 3);
    set.opacity_logits = {opacity_logit(0.9), opacity_logit(0.005), opacity_logit(0.01)};
    const double low = set.opacity_logits[1];
    reset_opacity(set, 0.01);
    EXPECT_NEAR(opacity(set.opacity_logits[0]), 0.01, 1e-9);
    EXPECT_EQ(set.opacity_logits[1], low);
    EXPECT_NEAR(opacity(set.opacity_logits[2]), 0.01, 1e-9);
}

TEST(TrainConfigValidation, NamesOffendingKey) {
    auto message = [](TrainConfig c) {
        try {
            c.validate();
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::InvalidParameter);
            return std::string(e.what());
        }
        return std::string();
    };
    EXPECT_EQ(message({}), "");
    TrainConfig c;
    c.iterations = -1;
    EXPECT_NE(message(c).find("iterations"), std::string::npos);
    c = {};
    c.lambda_ssim = 1.5;
    EXPECT_NE(message(c).find("lambda_ssim"), std::string::npos);
    c = {};
    c.sh_degree = 4;
    EXPECT_NE(message(c).find("sh_degree"), std::string::npos);
    c = {};
    c.densify_interval = 0;
    EXPECT_NE(message(c).find("densify_interval"), std::string::npos);
    c = {};
    c.opacity_reset_value = 1.0;
    EXPECT_NE(message(c).find("opacity_reset_value"), std::string::npos);
    c = {};
    c.iterations = 100;
    EXPECT_EQ(c.effective_densify_stop(), 50);
    c.iterations = 100000;
    EXPECT_EQ(c.effective_densify_stop(), 15000);
}

TEST(Train, ZeroIterationsReturnsInitialSet) {
    const GaussianSet init = small_set(11, 8);
    const auto frames = toy_frames(init, 2, 16);
    TrainConfig cfg;
    cfg.iterations = 0;
    const TrainResult r = train(frames, init, cfg);
    EXPECT_EQ(r.set.positions, init.positions);
    EXPECT_EQ(r.set.sh_coeffs, init.sh_coeffs);
    EXPECT_TRUE(r.log.empty());
    r.state.check_lockstep(r.set);
}

TEST(Train, SeededRunsAreIdenticalAndLossDecreases) {
    const GaussianSet truth = small_set(12, 12);
    const auto frames = toy_frames(truth, 4, 24);
    GaussianSet init = truth;
    Rng rng(4);
    for (Vec3& p : init.positions) p += Vec3{0.05 * rng.normal(), 0.05 * rng.normal(), 0.05 * rng.normal()};
    for (double& l : init.semantic_logits) l = 0.0;
    TrainConfig cfg;
    cfg.iterations = 60;
    cfg.densify_start = 10;
    cfg.densify_interval = 20;
    cfg.seed = 17;
    const TrainResult a = train(frames, init, cfg);
    const TrainResult b = train(frames, init, cfg);
    ASSERT_EQ(a.log.size(), 60u);
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        EXPECT_EQ(a.log[i].frame, b.log[i].frame);
        EXPECT_EQ(a.log[i].total, b.log[i].total);
    }
    EXPECT_EQ(a.set.positions, b.set.positions);
    double first = 0, last = 0;
    for (int i = 0; i < 8; ++i) {
        first += a.log[static_cast<std::size_t>(i)].total;
        last += a.log[a.log.size() - 1 - static_cast<std::size_t>(i)].total;
    }
    EXPECT_LT(last, first);
    a.state.check_lockstep(a.set);
}

TEST(Train, CheckpointCallbackFires) {
    const GaussianSet truth = small_set(13, 5);
    const auto frames = toy_frames(truth, 2, 16);
    TrainConfig cfg;
    cfg.iterations = 10;
    cfg.checkpoint_interval = 3;
    std::vector<int> seen;
    train(frames, truth, cfg, [&](int it, const GaussianSet& s, const OptimState& st) {
        st.check_lockstep(s);
        seen.push_back(it);
    });
    EXPECT_EQ(seen, (std::vector<int>{3, 6, 9}));
}

TEST(Train, RejectsEmptyFrameList) {
    try {
        train({}, small_set(14, 2), TrainConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InsufficientData);
    }
}

TEST(Sidecar, RoundTripsAtSinglePrecision) {
    TempDir dir("sidecar");
    GaussianSet set = small_set(15, 7);
    OptimState state(set, {}, 2.5, 100);
    Rng rng(2);
    for (Moments& m : state.moments) {
        for (double& v : m.first) v = static_cast<float>(rng.normal());
        for (double& v : m.second) v = static_cast<float>(rng.uniform());
    }
    for (double& v : state.grad_accum) v = static_cast<float>(rng.uniform());
    for (auto& v : state.grad_views) v = static_cast<std::uint32_t>(rng.below(100));
    state.step = 1234;
    state.skipped_nonfinite = 9;
    write_optimizer_state(dir / "s.optim", state);
    const OptimState back = read_optimizer_state(dir / "s.optim");
    EXPECT_EQ(back.step, 1234u);
    EXPECT_EQ(back.skipped_nonfinite, 9u);
    EXPECT_EQ(back.scene_extent, 2.5);
    for (std::size_t g = 0; g < state.moments.size(); ++g) {
        EXPECT_EQ(back.moments[g].first, state.moments[g].first);
        EXPECT_EQ(back.moments[g].second, state.moments[g].second);
    }
    EXPECT_EQ(back.grad_accum, state.grad_accum);
    EXPECT_EQ(back.grad_views, state.grad_views);
    back.check_lockstep(set);
}

TEST(Sidecar, CorruptFilesAreRejected) {
    TempDir dir("sidecar_bad");
    GaussianSet set = small_set(16, 3);
    write_optimizer_state(dir / "ok.optim", OptimState(set, {}, 1.0, 10));
    std::string bytes;
    {
        std::ifstream is(dir / "ok.optim", std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(is), {});
    }
    auto expect_corrupt = [&](const std::string& content, const std::string& needle) {
        {
            std::ofstream os(dir / "bad.optim", std::ios::binary | std::ios::trunc);
            os << content;
        }
        try {
            (void)read_optimizer_state(dir / "bad.optim");
            ADD_FAILURE() << "accepted " << needle;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::CorruptFile);
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
        }
    };
    expect_corrupt("NOTMAGIC" + bytes.substr(8), "not an optimizer state");
    expect_corrupt(bytes.substr(0, bytes.size() - 3), "truncated");
    expect_corrupt(bytes + "x", "trailing");
    std::string wrong_version = bytes;
    wrong_version[8] = 7;
    expect_corrupt(wrong_version, "version");
}
