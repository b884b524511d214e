// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "semsplat/cli.hpp"
#include "semsplat/edit.hpp"
#include "semsplat/ingest.hpp"
#include "semsplat/raster.hpp"
#include "semsplat/toy.hpp"
#include "tempdir.hpp"

using namespace semsplat;
using namespace semsplat::cli;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

int run_args(std::vector<std::string> args) {
    args.insert(args.begin(), "semsplat");
    std::vector<char*> argv;
    for (std::string& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    return run(static_cast<int>(args.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

void spit(const fs::path& p, const std::string& s) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os << s;
}

KeyValues parse_kv(const std::string& text) {
    KeyValues kv;
    std::istringstream ss(text);
    for (std::string line; std::getline(ss, line);) {
        const auto eq = line.find(" = ");
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return kv;
}

/// Toy dataset shared by the command tests.
class ToyDataset : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new TempDir("cli_toy");
        log::set_quiet(true);
        cmd_make_toy(data(), 1);
        log::set_quiet(false);
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }
    static fs::path data() { return *dir_ / "toy"; }
    static fs::path root() { return dir_->path(); }

    static TempDir* dir_;
};

TempDir* ToyDataset::dir_ = nullptr;

}  // namespace

TEST(ExitCodes, MapErrorKinds) {
    EXPECT_EQ(exit_code_for(ErrorKind::Usage), 1);
    EXPECT_EQ(exit_code_for(ErrorKind::InvalidParameter), 1);
    EXPECT_EQ(exit_code_for(ErrorKind::Io), 2);
    EXPECT_EQ(exit_code_for(ErrorKind::CorruptFile), 2);
    EXPECT_EQ(exit_code_for(ErrorKind::LabelOutOfRange), 2);
    EXPECT_EQ(exit_code_for(ErrorKind::InsufficientData), 2);
    EXPECT_EQ(exit_code_for(ErrorKind::Numerical), 3);
}

TEST(ConfigFile, ParsesKeyValueLines) {
    TempDir dir("cfg");
    spit(dir / "a.cfg", "# comment\n\niterations = 10  # trailing\n  seed=4\nbackground = 1, 0.5, 0\n");
    const KeyValues kv = read_config_file(dir / "a.cfg");
    EXPECT_EQ(kv.at("iterations"), "10");
    EXPECT_EQ(kv.at("seed"), "4");
    RunConfig config;
    apply_config(kv, config);
    EXPECT_EQ(config.train.iterations, 10);
    EXPECT_EQ(config.train.seed, 4u);
    EXPECT_EQ(config.train.background, (std::array<double, 3>{1.0, 0.5, 0.0}));
}

TEST(ConfigFile, ErrorsNameTheLine) {
    TempDir dir("cfg_bad");
    spit(dir / "b.cfg", "seed = 1\niterations 10\n");
    try {
        (void)read_config_file(dir / "b.cfg");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Usage);
        EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
    }
    RunConfig config;
    try {
        apply_config({{"iteratons", "3"}}, config);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Usage);
        EXPECT_NE(std::string(e.what()).find("iteratons"), std::string::npos);
    }
    EXPECT_THROW(apply_config({{"iterations", "ten"}}, config), Error);
    EXPECT_THROW(apply_config({{"iterations", "10x"}}, config), Error);
}

TEST(ConfigFile, DescribeRoundTrips) {
    RunConfig config;
    config.train.lambda_sem = 0.25;
    config.train.lr.opacity = 0.125;
    config.holdout_every = 5;
    RunConfig back;
    apply_config(describe_config(config), back);
    EXPECT_EQ(describe_config(back), describe_config(config));
    EXPECT_EQ(back.train.lambda_sem, 0.25);
    EXPECT_EQ(back.train.lr.opacity, 0.125);
}

TEST(ParseColor, AcceptsUnitTriples) {
    EXPECT_EQ(parse_color("0,0.5,1"), (std::array<double, 3>{0.0, 0.5, 1.0}));
    for (const char* bad : {"1,1", "1,1,1,1", "0,0,2", "a,b,c", "-0.1,0,0"}) EXPECT_THROW(parse_color(bad), Error) << bad;
}

TEST(ResolveClasses, NamesIdsAndLists) {
    const ClassTable classes({"sky", "tree", "rock"});
    EXPECT_EQ(resolve_classes(classes, {"tree"}), (std::vector<int>{1}));
    EXPECT_EQ(resolve_classes(classes, {"rock,0", "sky"}), (std::vector<int>{0, 2}));
    EXPECT_EQ(resolve_classes(classes, {"2"}), (std::vector<int>{2}));
    EXPECT_THROW(resolve_classes(classes, {"car"}), Error);
    EXPECT_TRUE(resolve_classes(classes, {}).empty());
}

TEST(OutputLockFile, IsExclusive) {
    TempDir dir("lock");
    {
        const OutputLock lock(dir.path());
        EXPECT_TRUE(fs::exists(dir / kLockFileName));
        EXPECT_THROW(OutputLock second(dir.path()), Error);
    }
    EXPECT_FALSE(fs::exists(dir / kLockFileName));
    const OutputLock again(dir.path());
}

TEST(CommandLine, UsageErrorsExitWithOne) {
    EXPECT_EQ(run_args({}), 1);
    EXPECT_EQ(run_args({"bogus"}), 1);
    EXPECT_EQ(run_args({"render", "--out", "x"}), 1);
    EXPECT_EQ(run_args({"eval", "--checkpoint", "a", "--data", "b", "--split", "sideways"}), 1);
}

TEST(CommandLine, MissingInputsExitWithTwo) {
    TempDir dir("cli_missing");
    EXPECT_EQ(run_args({"-q", "train", "--data", (dir / "nope").string(), "--out", (dir / "o").string()}), 2);
    EXPECT_EQ(run_args({"info", (dir / "missing.ply").string()}), 2);
    EXPECT_FALSE(fs::exists(dir / "o" / "point_cloud.ply"));
}

TEST_F(ToyDataset, MakeToyIsDeterministic) {
    const fs::path again = root() / "toy_again";
    ASSERT_EQ(run_args({"-q", "make-toy", "--out", again.string(), "--seed", "1"}), 0);
    for (const auto& entry : fs::recursive_directory_iterator(data())) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), data());
        EXPECT_EQ(slurp(entry.path()), slurp(again / rel)) << rel;
    }
    EXPECT_FALSE(fs::exists(data() / kLockFileName));
}

TEST_F(ToyDataset, CamerasReparseAndMasksMatchTruth) {
    ToyOptions options;
    options.seed = 1;
    const ToyScene scene = make_toy_scene(options);
    const Dataset dataset = load_dataset(data());
    ASSERT_EQ(dataset.frames.size(), scene.cameras.size());
    EXPECT_EQ(dataset.classes, scene.classes);
    const GaussianSet truth = import_ply(data() / "truth.ply");
    for (std::size_t f = 0; f < dataset.frames.size(); f += 5) {
        const Frame& frame = dataset.frames[f];
        const Camera& cam = frame.camera;
        EXPECT_NEAR(cam.fx, scene.cameras[f].fx, 1e-9);
        const RenderOutput out = rasterize_forward(truth, cam, scene.background);
        EXPECT_EQ(render_label_map(out).data(), frame.mask.data()) << frame.name;
        double worst = 0.0;
        for (std::size_t i = 0; i < out.rgb.size(); ++i)
            worst = std::max(worst, std::abs(std::clamp(out.rgb.data()[i], 0.0, 1.0) - frame.rgb.data()[i]));
        EXPECT_LE(worst, 0.5 / 255.0 + 1e-6) << frame.name;
    }
}

TEST_F(ToyDataset, TrainHonoursConfigPrecedence) {
    const fs::path out = root() / "run_cfg";
    spit(root() / "train.cfg", "iterations = 7\nseed = 3\nlambda_sem = 0.5\n");
    ASSERT_EQ(run_args({"-q", "train", "--config", (root() / "train.cfg").string(), "--data", data().string(), "--out",
                        out.string(), "--iters", "4", "--set", "lambda_sem=0.75"}),
              0);
    const KeyValues resolved = parse_kv(slurp(out / "config.txt"));
    EXPECT_EQ(resolved.at("iterations"), "4");
    EXPECT_EQ(resolved.at("seed"), "3");
    EXPECT_EQ(resolved.at("lambda_sem"), "0.75");
    EXPECT_EQ(resolved.at("lambda_ssim"), "0.2");
    const std::string loss = slurp(out / "loss.tsv");
    EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 5);
    for (const char* f : {"point_cloud.ply", "point_cloud.optim", "eval.txt", "eval.kv"})
        EXPECT_TRUE(fs::exists(out / f)) << f;
    EXPECT_FALSE(fs::exists(out / kLockFileName));
    EXPECT_EQ(run_args({"-q", "info", (out / "point_cloud.ply").string()}), 0);
}

TEST_F(ToyDataset, TrainRefusesLockedOutput) {
    const fs::path out = root() / "run_locked";
    fs::create_directories(out);
    spit(out / kLockFileName, "");
    EXPECT_EQ(run_args({"-q", "train", "--data", data().string(), "--out", out.string(), "--iters", "1"}), 2);
    EXPECT_FALSE(fs::exists(out / "point_cloud.ply"));
}

TEST_F(ToyDataset, InvalidParameterExitsWithOne) {
    EXPECT_EQ(run_args({"-q", "train", "--data", data().string(), "--out", (root() / "bad").string(),
                        "--lambda-ssim", "2"}),
              1);
    EXPECT_EQ(run_args({"-q", "train", "--data", data().string(), "--out", (root() / "bad").string(), "--set",
                        "no_such_key=1"}),
              1);
}

TEST_F(ToyDataset, RenderRemovalDropsContributions) {
    const fs::path truth = data() / "truth.ply";
    ASSERT_EQ(run_args({"render", "--checkpoint", truth.string(), "--cameras", data().string(), "--out",
                        (root() / "r_all").string(), "--labels"}),
              0);
    ASSERT_EQ(run_args({"render", "--checkpoint", truth.string(), "--cameras", data().string(), "--out",
                        (root() / "r_nosky").string(), "--labels", "--remove", "sky"}),
              0);
    const Dataset dataset = load_dataset(data());
    const std::string first = fs::path(dataset.frames[0].name).filename().replace_extension(".png").string();
    const LabelImage all = read_png_gray(root() / "r_all" / "labels" / first);
    const LabelImage nosky = read_png_gray(root() / "r_nosky" / "labels" / first);
    std::size_t sky_all = 0, sky_after = 0;
    for (std::size_t i = 0; i < all.size(); ++i) {
        sky_all += all.data()[i] == 0;
        sky_after += nosky.data()[i] == 0;
    }
    EXPECT_GT(sky_all, 0u);
    EXPECT_EQ(sky_after, 0u);
    EXPECT_EQ(run_args({"render", "--checkpoint", truth.string(), "--cameras", data().string(), "--out",
                        (root() / "r_bad").string(), "--remove", "car"}),
              1);
}

TEST_F(ToyDataset, RepeatedRemoveEqualsJointRemove) {
    const fs::path truth = data() / "truth.ply";
    const fs::path a = root() / "a.ply", ab = root() / "ab.ply", joint = root() / "joint.ply";
    ASSERT_EQ(run_args({"-q", "remove", "--in", truth.string(), "--out", a.string(), "--class", "sky"}), 0);
    ASSERT_EQ(run_args({"-q", "remove", "--in", a.string(), "--out", ab.string(), "--class", "rock"}), 0);
    ASSERT_EQ(run_args({"-q", "remove", "--in", truth.string(), "--out", joint.string(), "--class", "sky",
                        "--class", "2"}),
              0);
    EXPECT_EQ(slurp(ab), slurp(joint));
    const GaussianSet kept = import_ply(joint);
    for (std::size_t i = 0; i < kept.size(); ++i) EXPECT_EQ(assign_class(kept.semantics(i)), 1);

    EditRequest req;
    req.input = truth;
    req.output = root() / "trees.ply";
    req.classes = {"tree"};
    EXPECT_EQ(cmd_extract(req), kept.size());
    EXPECT_EQ(slurp(req.output), slurp(joint));
}

TEST_F(ToyDataset, EvalRejectsEmptySplit) {
    EvalRequest req;
    req.checkpoint = data() / "truth.ply";
    req.data = data();
    req.holdout_every = 1000;
    try {
        (void)cmd_eval(req);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InsufficientData);
    }
    req.split = EvalSplit::All;
    const EvalReport report = cmd_eval(req);
    EXPECT_EQ(report.frames.size(), 24u);
    EXPECT_GT(report.mean_psnr, 40.0);
    EXPECT_NEAR(report.segmentation.mean, 1.0, 1e-12);
}
