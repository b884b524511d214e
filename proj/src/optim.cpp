// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#include "semsplat/optim.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace semsplat {

namespace {

double& quat_at(Quat& q, std::size_t j) {
    switch (j) {
        case 0: return q.w;
        case 1: return q.x;
        case 2: return q.y;
        default: return q.z;
    }
}

double quat_at(const Quat& q, std::size_t j) {
    switch (j) {
        case 0: return q.w;
        case 1: return q.x;
        case 2: return q.y;
        default: return q.z;
    }
}

double& param_at(GaussianSet& set, ParamGroup group, std::size_t i, std::size_t j) {
    switch (group) {
        case ParamGroup::Position: return set.positions[i][static_cast<int>(j)];
        case ParamGroup::Rotation: return quat_at(set.rotations[i], j);
        case ParamGroup::Scaling: return set.log_scales[i][static_cast<int>(j)];
        case ParamGroup::Opacity: return set.opacity_logits[i];
        case ParamGroup::ShDc: return set.sh_coeffs[i * set.sh_stride() + j];
        case ParamGroup::ShRest: return set.sh_coeffs[i * set.sh_stride() + 3 + j];
        case ParamGroup::Semantic: return set.semantic_logits[i * set.class_stride() + j];
    }
    throw Error(ErrorKind::InvalidParameter, "unknown parameter group");
}

double grad_at(const GradientBuffers& g, const GaussianSet& set, ParamGroup group, std::size_t i, std::size_t j) {
    switch (group) {
        case ParamGroup::Position: return g.positions[i][static_cast<int>(j)];
        case ParamGroup::Rotation: return quat_at(g.rotations[i], j);
        case ParamGroup::Scaling: return g.log_scales[i][static_cast<int>(j)];
        case ParamGroup::Opacity: return g.opacity_logits[i];
        case ParamGroup::ShDc: return g.sh_coeffs[i * set.sh_stride() + j];
        case ParamGroup::ShRest: return g.sh_coeffs[i * set.sh_stride() + 3 + j];
        case ParamGroup::Semantic: return g.semantic_logits[i * set.class_stride() + j];
    }
    throw Error(ErrorKind::InvalidParameter, "unknown parameter group");
}

double group_learning_rate(const OptimState& state, ParamGroup group) {
    switch (group) {
        case ParamGroup::Position:
            return position_learning_rate(state.lr, state.scene_extent, state.step, state.lr_decay_steps);
        case ParamGroup::Rotation: return state.lr.rotation;
        case ParamGroup::Scaling: return state.lr.scaling;
        case ParamGroup::Opacity: return state.lr.opacity;
        case ParamGroup::ShDc: return state.lr.sh_dc;
        case ParamGroup::ShRest: return state.lr.sh_rest;
        case ParamGroup::Semantic: return state.lr.semantic;
    }
    return 0.0;
}

constexpr std::array<ParamGroup, kParamGroupCount> kAllGroups = {
    ParamGroup::Position, ParamGroup::Rotation, ParamGroup::Scaling, ParamGroup::Opacity,
    ParamGroup::ShDc,     ParamGroup::ShRest,   ParamGroup::Semantic};

void check_gradient_shapes(const GaussianSet& set, const GradientBuffers& g) {
    const std::size_t n = set.size();
    if (g.positions.size() != n || g.rotations.size() != n || g.log_scales.size() != n ||
        g.opacity_logits.size() != n || g.sh_coeffs.size() != n * set.sh_stride() ||
        g.semantic_logits.size() != n * set.class_stride() || g.mean2d_grad_norm.size() != n ||
        g.visible_count.size() != n)
        throw Error(ErrorKind::SizeMismatch, "gradient buffers do not match the Gaussian set");
}

double max_world_scale(const GaussianSet& set, std::size_t i) {
    const Vec3& s = set.log_scales[i];
    return std::exp(std::max({s.x, s.y, s.z}));
}

/// Parent-shaped offset R diag(s) z with z ~ N(0, I).
Vec3 sample_offset(const GaussianSet& set, std::size_t i, Rng& rng) {
    const Mat3 r = rotation_matrix(set.rotations[i].normalized());
    const Vec3& ls = set.log_scales[i];
    Vec3 z;
    for (int k = 0; k < 3; ++k) z[k] = std::exp(ls[k]) * rng.normal();
    return r * z;
}

void append_zero_stats(OptimState& state, const GaussianSet& set, std::size_t count) {
    for (const ParamGroup g : kAllGroups) {
        const std::size_t width = group_width(g, set);
        Moments& m = state.group(g);
        m.first.resize(m.first.size() + count * width, 0.0);
        m.second.resize(m.second.size() + count * width, 0.0);
    }
    state.grad_accum.resize(state.grad_accum.size() + count, 0.0);
    state.grad_views.resize(state.grad_views.size() + count, 0);
}

}  // namespace

const char* to_string(ParamGroup group) {
    switch (group) {
        case ParamGroup::Position: return "position";
        case ParamGroup::Rotation: return "rotation";
        case ParamGroup::Scaling: return "scaling";
        case ParamGroup::Opacity: return "opacity";
        case ParamGroup::ShDc: return "sh_dc";
        case ParamGroup::ShRest: return "sh_rest";
        case ParamGroup::Semantic: return "semantic";
    }
    return "unknown";
}

std::size_t group_width(ParamGroup group, const GaussianSet& set) {
    switch (group) {
        case ParamGroup::Position: return 3;
        case ParamGroup::Rotation: return 4;
        case ParamGroup::Scaling: return 3;
        case ParamGroup::Opacity: return 1;
        case ParamGroup::ShDc: return 3;
        case ParamGroup::ShRest: return set.sh_stride() - 3;
        case ParamGroup::Semantic: return set.class_stride();
    }
    return 0;
}

void TrainConfig::validate() const {
    auto positive = [](double v, const char* key) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw Error(ErrorKind::InvalidParameter, std::string(key) + " must be positive");
    };
    auto non_negative = [](double v, const char* key) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw Error(ErrorKind::InvalidParameter, std::string(key) + " must not be negative");
    };
    non_negative(iterations, "iterations");
    positive(lr.position_init, "lr_position_init");
    positive(lr.position_final, "lr_position_final");
    non_negative(lr.sh_dc, "lr_sh_dc");
    non_negative(lr.sh_rest, "lr_sh_rest");
    non_negative(lr.opacity, "lr_opacity");
    non_negative(lr.scaling, "lr_scaling");
    non_negative(lr.rotation, "lr_rotation");
    non_negative(lr.semantic, "lr_semantic");
    positive(densify_interval, "densify_interval");
    non_negative(densify_start, "densify_start");
    if (densify_stop < -1) throw Error(ErrorKind::InvalidParameter, "densify_stop must be -1 (automatic) or more");
    positive(densify_grad_threshold, "densify_grad_threshold");
    positive(densify_scale_fraction, "densify_scale_fraction");
    if (!(split_scale_divisor > 1.0)) throw Error(ErrorKind::InvalidParameter, "split_scale_divisor must exceed 1");
    positive(prune_opacity, "prune_opacity");
    positive(prune_scale_fraction, "prune_scale_fraction");
    positive(opacity_reset_interval, "opacity_reset_interval");
    if (!(opacity_reset_value > 0.0 && opacity_reset_value < 1.0))
        throw Error(ErrorKind::InvalidParameter, "opacity_reset_value must lie in (0, 1)");
    positive(sh_degree_interval, "sh_degree_interval");
    if (sh_degree < 0 || sh_degree > kMaxShDegree)
        throw Error(ErrorKind::InvalidParameter, "sh_degree must lie in 0.." + std::to_string(kMaxShDegree));
    non_negative(lambda_ssim, "lambda_ssim");
    if (lambda_ssim > 1.0) throw Error(ErrorKind::InvalidParameter, "lambda_ssim must not exceed 1");
    non_negative(lambda_sem, "lambda_sem");
    non_negative(checkpoint_interval, "checkpoint_interval");
    for (const double b : background)
        if (!std::isfinite(b)) throw Error(ErrorKind::InvalidParameter, "background must be finite");
}

OptimState::OptimState(const GaussianSet& set, const LearningRates& rates, double extent, int decay_steps)
    : scene_extent(extent), lr(rates), lr_decay_steps(std::max(decay_steps, 1)) {
    append_zero_stats(*this, set, set.size());
}

void OptimState::check_lockstep(const GaussianSet& set) const {
    const std::size_t n = set.size();
    bool ok = grad_accum.size() == n && grad_views.size() == n;
    for (const ParamGroup g : kAllGroups) {
        const std::size_t expect = n * group_width(g, set);
        ok = ok && group(g).first.size() == expect && group(g).second.size() == expect;
    }
    if (!ok) throw Error(ErrorKind::InvalidState, "optimizer state does not match the Gaussian set");
}

double position_learning_rate(const LearningRates& lr, double extent, std::uint64_t step, int decay_steps) {
    const double t = std::clamp(static_cast<double>(step) / std::max(decay_steps, 1), 0.0, 1.0);
    const double log_lr = (1.0 - t) * std::log(lr.position_init) + t * std::log(lr.position_final);
    return std::exp(log_lr) * extent;
}

double scene_extent(std::span<const Camera> cameras) {
    if (cameras.empty()) throw Error(ErrorKind::InsufficientData, "scene extent needs at least one camera");
    Vec3 mean;
    for (const Camera& c : cameras) mean += c.center();
    mean = (1.0 / static_cast<double>(cameras.size())) * mean;
    double radius = 0.0;
    for (const Camera& c : cameras) radius = std::max(radius, norm(c.center() - mean));
    return radius * 1.1;
}

void optimizer_step(GaussianSet& set, const GradientBuffers& grads, OptimState& state) {
    check_gradient_shapes(set, grads);
    state.check_lockstep(set);
    const std::size_t n = set.size();
    std::array<double, kParamGroupCount> rates{};
    for (const ParamGroup g : kAllGroups) rates[static_cast<std::size_t>(g)] = group_learning_rate(state, g);
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(kAdamBeta1, t);
    const double bc2 = 1.0 - std::pow(kAdamBeta2, t);
    std::uint64_t skipped = 0;
    for (const ParamGroup g : kAllGroups) {
        const std::size_t width = group_width(g, set);
        const double lr = rates[static_cast<std::size_t>(g)];
        Moments& m = state.group(g);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < width; ++j) {
                const double grad = grad_at(grads, set, g, i, j);
                if (!std::isfinite(grad)) {
                    ++skipped;
                    continue;
                }
                const std::size_t k = i * width + j;
                m.first[k] = kAdamBeta1 * m.first[k] + (1.0 - kAdamBeta1) * grad;
                m.second[k] = kAdamBeta2 * m.second[k] + (1.0 - kAdamBeta2) * grad * grad;
                const double m_hat = m.first[k] / bc1;
                const double v_hat = m.second[k] / bc2;
                param_at(set, g, i, j) -= lr * m_hat / (std::sqrt(v_hat) + kAdamEpsilon);
            }
    }
    for (Quat& q : set.rotations) {
        const double len = q.norm();
        if (len > 0.0 && std::isfinite(len))
            q = q.normalized();
        else
            q = Quat{};
    }
    if (skipped > 0) {
        state.skipped_nonfinite += skipped;
        log::warn("skipped " + std::to_string(skipped) + " non-finite gradient entries");
    }
}

void accumulate_densify_stats(OptimState& state, const GradientBuffers& grads) {
    if (grads.mean2d_grad_norm.size() != state.size() || grads.visible_count.size() != state.size())
        throw Error(ErrorKind::SizeMismatch, "gradient statistics do not match the optimizer state");
    for (std::size_t i = 0; i < state.size(); ++i) {
        if (grads.visible_count[i] == 0) continue;
        if (std::isfinite(grads.mean2d_grad_norm[i])) state.grad_accum[i] += grads.mean2d_grad_norm[i];
        state.grad_views[i] += grads.visible_count[i];
    }
}

void filter_gaussians(GaussianSet& set, OptimState& state, const std::vector<bool>& keep) {
    state.check_lockstep(set);
    if (keep.size() != set.size()) throw Error(ErrorKind::SizeMismatch, "filter mask does not match the set");
    std::vector<std::size_t> indices;
    for (std::size_t i = 0; i < keep.size(); ++i)
        if (keep[i]) indices.push_back(i);
    for (const ParamGroup g : kAllGroups) {
        const std::size_t width = group_width(g, set);
        Moments& m = state.group(g);
        Moments out;
        out.first.reserve(indices.size() * width);
        out.second.reserve(indices.size() * width);
        for (const std::size_t i : indices)
            for (std::size_t j = 0; j < width; ++j) {
                out.first.push_back(m.first[i * width + j]);
                out.second.push_back(m.second[i * width + j]);
            }
        m = std::move(out);
    }
    std::vector<double> accum;
    std::vector<std::uint32_t> views;
    for (const std::size_t i : indices) {
        accum.push_back(state.grad_accum[i]);
        views.push_back(state.grad_views[i]);
    }
    state.grad_accum = std::move(accum);
    state.grad_views = std::move(views);
    set = set.subset(indices);
}

DensifyReport densify_and_prune(GaussianSet& set, OptimState& state, const TrainConfig& config, double extent,
                                Rng& rng) {
    state.check_lockstep(set);
    const std::size_t n = set.size();
    DensifyReport report;
    std::vector<bool> selected(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        const double mean_grad = state.grad_views[i] > 0 ? state.grad_accum[i] / state.grad_views[i] : 0.0;
        selected[i] = mean_grad > config.densify_grad_threshold;
    }
    const double clone_limit = config.densify_scale_fraction * extent;

    for (std::size_t i = 0; i < n; ++i) {
        if (!selected[i] || max_world_scale(set, i) >= clone_limit) continue;
        const Vec3 offset = sample_offset(set, i, rng);
        set.push_back_from(set, i);
        set.positions.back() += offset;
        append_zero_stats(state, set, 1);
        ++report.cloned;
    }

    std::vector<bool> keep(set.size(), true);
    const double log_divisor = std::log(config.split_scale_divisor);
    for (std::size_t i = 0; i < n; ++i) {
        if (!selected[i] || max_world_scale(set, i) < clone_limit) continue;
        for (int child = 0; child < 2; ++child) {
            const Vec3 offset = sample_offset(set, i, rng);
            set.push_back_from(set, i);
            set.positions.back() += offset;
            Vec3& ls = set.log_scales.back();
            for (int k = 0; k < 3; ++k) ls[k] -= log_divisor;
            append_zero_stats(state, set, 1);
            keep.push_back(true);
        }
        keep[i] = false;
        ++report.split;
    }

    const double prune_scale = config.prune_scale_fraction * extent;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (!keep[i]) continue;
        if (opacity(set.opacity_logits[i]) < config.prune_opacity || max_world_scale(set, i) > prune_scale) {
            keep[i] = false;
            ++report.pruned;
        }
    }
    filter_gaussians(set, state, keep);
    std::fill(state.grad_accum.begin(), state.grad_accum.end(), 0.0);
    std::fill(state.grad_views.begin(), state.grad_views.end(), 0u);
    return report;
}

void reset_opacity(GaussianSet& set, double value) {
    const double logit = opacity_logit(value);
    for (double& l : set.opacity_logits)
        if (opacity(l) > value) l = logit;
}

TrainingDiverged::TrainingDiverged(int iter, GaussianSet good, OptimState good_state, int good_iteration)
    : Error(ErrorKind::Numerical, "training diverged at iteration " + std::to_string(iter) +
                                      " (loss is not finite); last good state is from iteration " +
                                      std::to_string(good_iteration)),
      iteration(iter),
      last_good(std::move(good)),
      last_good_state(std::move(good_state)),
      last_good_iteration(good_iteration) {}

TrainResult train(std::span<const Frame> frames, const GaussianSet& init, const TrainConfig& config,
                  const CheckpointFn& on_checkpoint) {
    config.validate();
    init.validate();
    if (frames.empty()) throw Error(ErrorKind::InsufficientData, "training needs at least one frame");
    std::vector<Camera> cameras;
    for (const Frame& f : frames) {
        validate_frame(f, init.num_classes);
        cameras.push_back(f.camera);
    }
    double extent = scene_extent(cameras);
    if (!(extent > 1e-9)) {
        log::warn("all training cameras coincide; using a scene extent of 1");
        extent = 1.0;
    }

    TrainResult result;
    result.set = init;
    result.state = OptimState(init, config.lr, extent, config.iterations);
    if (config.iterations == 0) return result;

    GaussianSet& set = result.set;
    OptimState& state = result.state;
    const int max_sh = std::min(config.sh_degree, set.sh_degree);
    set.active_sh_degree = std::min(set.active_sh_degree, max_sh);
    const LossWeights weights{config.lambda_ssim, config.lambda_sem};
    const int densify_stop = config.effective_densify_stop();

    GaussianSet last_good = set;
    OptimState last_good_state = state;
    int last_good_iteration = 0;

    Rng rng(config.seed);
    std::vector<std::size_t> order(frames.size());
    std::size_t cursor = order.size();

    for (int iter = 1; iter <= config.iterations; ++iter) {
        if (cursor == order.size()) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
            cursor = 0;
        }
        const Frame& frame = frames[order[cursor++]];

        const RenderOutput out = rasterize_forward(set, frame.camera, config.background);
        LossReport loss;
        try {
            loss = total_loss(out, frame, weights);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Numerical) throw;
            throw TrainingDiverged(iter, std::move(last_good), std::move(last_good_state), last_good_iteration);
        }
        result.log.push_back({iter, frame.name, loss.l1, loss.dssim, loss.ce, loss.total, set.size()});

        const GradientBuffers grads = rasterize_backward(set, frame.camera, out, loss.d_rgb, loss.d_semantic);
        if (iter <= densify_stop) accumulate_densify_stats(state, grads);
        optimizer_step(set, grads, state);

        if (iter <= densify_stop) {
            if (iter > config.densify_start && iter % config.densify_interval == 0)
                densify_and_prune(set, state, config, extent, rng);
            if (iter % config.opacity_reset_interval == 0) {
                reset_opacity(set, config.opacity_reset_value);
                Moments& m = state.group(ParamGroup::Opacity);
                std::fill(m.first.begin(), m.first.end(), 0.0);
                std::fill(m.second.begin(), m.second.end(), 0.0);
            }
        }
        if (iter % config.sh_degree_interval == 0 && set.active_sh_degree < max_sh) ++set.active_sh_degree;

        if (config.checkpoint_interval > 0 && iter % config.checkpoint_interval == 0 && iter < config.iterations) {
            last_good = set;
            last_good_state = state;
            last_good_iteration = iter;
            if (on_checkpoint) on_checkpoint(iter, set, state);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Sidecar

namespace {

constexpr char kOptimMagic[8] = {'S', 'S', 'O', 'P', 'T', 'S', 'T', '\0'};

template <typename T>
void put(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    os.write(bytes.data(), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
    std::array<char, sizeof(T)> bytes;
    const auto offset = static_cast<long long>(is.tellg());
    if (!is.read(bytes.data(), sizeof(T)))
        throw Error(ErrorKind::CorruptFile,
                    path.string() + ": truncated optimizer state at byte " + std::to_string(offset));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

}  // namespace

void write_optimizer_state(const std::filesystem::path& path, const OptimState& state) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorKind::Io, "cannot write " + path.string());
    const std::uint64_t n = state.size();
    os.write(kOptimMagic, sizeof(kOptimMagic));
    put<std::uint32_t>(os, kOptimStateVersion);
    put<std::uint64_t>(os, state.step);
    put<std::uint64_t>(os, n);
    put<std::uint32_t>(os, kParamGroupCount);
    for (const Moments& m : state.moments)
        put<std::uint32_t>(os, n == 0 ? 0u : static_cast<std::uint32_t>(m.first.size() / n));
    put<float>(os, static_cast<float>(state.scene_extent));
    put<std::uint64_t>(os, state.skipped_nonfinite);
    for (const Moments& m : state.moments) {
        for (const double v : m.first) put<float>(os, static_cast<float>(v));
        for (const double v : m.second) put<float>(os, static_cast<float>(v));
    }
    for (const double v : state.grad_accum) put<float>(os, static_cast<float>(v));
    for (const std::uint32_t v : state.grad_views) put<std::uint32_t>(os, v);
    if (!os) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

OptimState read_optimizer_state(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::Io, "cannot open " + path.string());
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kOptimMagic, sizeof(magic)) != 0)
        throw Error(ErrorKind::CorruptFile, path.string() + ": not an optimizer state file");
    const auto version = get<std::uint32_t>(is, path);
    if (version != kOptimStateVersion)
        throw Error(ErrorKind::CorruptFile,
                    path.string() + ": unsupported optimizer state version " + std::to_string(version));
    OptimState state;
    state.step = get<std::uint64_t>(is, path);
    const auto n = get<std::uint64_t>(is, path);
    const auto groups = get<std::uint32_t>(is, path);
    if (groups != kParamGroupCount)
        throw Error(ErrorKind::CorruptFile, path.string() + ": expected " + std::to_string(kParamGroupCount) +
                                                " parameter groups, found " + std::to_string(groups));
    std::array<std::uint32_t, kParamGroupCount> widths{};
    for (auto& w : widths) w = get<std::uint32_t>(is, path);
    state.scene_extent = get<float>(is, path);
    state.skipped_nonfinite = get<std::uint64_t>(is, path);
    for (std::size_t g = 0; g < kParamGroupCount; ++g) {
        const std::size_t count = n * widths[g];
        state.moments[g].first.resize(count);
        state.moments[g].second.resize(count);
        for (double& v : state.moments[g].first) v = get<float>(is, path);
        for (double& v : state.moments[g].second) v = get<float>(is, path);
    }
    state.grad_accum.resize(n);
    state.grad_views.resize(n);
    for (double& v : state.grad_accum) v = get<float>(is, path);
    for (std::uint32_t& v : state.grad_views) v = get<std::uint32_t>(is, path);
    if (is.peek() != std::char_traits<char>::eof())
        throw Error(ErrorKind::CorruptFile, path.string() + ": trailing bytes after optimizer state");
    return state;
}

}  // namespace semsplat
