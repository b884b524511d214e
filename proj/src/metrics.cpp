// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#include "semsplat/metrics.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "semsplat/common.hpp"

namespace semsplat {

double psnr(const ImageF& render, const ImageF& target) {
    if (!render.same_shape(target)) throw Error(ErrorKind::SizeMismatch, "psnr: image shapes differ");
    if (render.size() == 0) throw Error(ErrorKind::InvalidParameter, "psnr: empty image");
    double sum = 0.0;
    for (std::size_t i = 0; i < render.size(); ++i) {
        const double d = render.data()[i] - target.data()[i];
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(render.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

std::array<double, kSsimWindow> gaussian_window() {
    std::array<double, kSsimWindow> g{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        g[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * kSsimSigma * kSsimSigma));
        sum += g[static_cast<std::size_t>(i)];
    }
    for (auto& v : g) v /= sum;
    return g;
}

/// Dense single-channel plane.
struct Plane {
    int w = 0, h = 0;
    std::vector<double> v;
    Plane(int width, int height) : w(width), h(height), v(static_cast<std::size_t>(width) * height, 0.0) {}
    double& at(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
    double at(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

/// Valid-mode separable filtering: output (w - 10) x (h - 10).
Plane filter_valid(const Plane& in, const std::array<double, kSsimWindow>& g) {
    const int ow = in.w - kSsimWindow + 1, oh = in.h - kSsimWindow + 1;
    Plane rows(ow, in.h);
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) s += g[static_cast<std::size_t>(k)] * in.at(x + k, y);
            rows.at(x, y) = s;
        }
    Plane out(ow, oh);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) s += g[static_cast<std::size_t>(k)] * rows.at(x, y + k);
            out.at(x, y) = s;
        }
    return out;
}

/// Adjoint of filter_valid: scatters a (w - 10) x (h - 10) map back to w x h.
Plane filter_adjoint(const Plane& in, int w, int h, const std::array<double, kSsimWindow>& g) {
    Plane cols(in.w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < in.w; ++x) {
            double s = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) {
                const int oy = y - k;
                if (oy >= 0 && oy < in.h) s += g[static_cast<std::size_t>(k)] * in.at(x, oy);
            }
            cols.at(x, y) = s;
        }
    Plane out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) {
                const int ox = x - k;
                if (ox >= 0 && ox < in.w) s += g[static_cast<std::size_t>(k)] * cols.at(ox, y);
            }
            out.at(x, y) = s;
        }
    return out;
}

Plane channel(const ImageF& img, int c) {
    Plane p(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) p.at(x, y) = img.at(x, y, c);
    return p;
}

Plane product(const Plane& a, const Plane& b) {
    Plane p(a.w, a.h);
    for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = a.v[i] * b.v[i];
    return p;
}

SsimGradient ssim_impl(const ImageF& render, const ImageF& target, bool want_grad) {
    if (!render.same_shape(target)) throw Error(ErrorKind::SizeMismatch, "ssim: image shapes differ");
    if (render.width() < kSsimWindow || render.height() < kSsimWindow)
        throw Error(ErrorKind::InvalidParameter, "ssim: images must be at least 11x11");
    const auto g = gaussian_window();
    constexpr double c1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
    constexpr double c2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);
    const int w = render.width(), h = render.height(), channels = render.channels();
    const int vw = w - kSsimWindow + 1, vh = h - kSsimWindow + 1;
    const double norm_factor = 1.0 / (static_cast<double>(vw) * vh * channels);

    SsimGradient result;
    if (want_grad) result.d_render = ImageF(w, h, channels);
    double total = 0.0;
    for (int c = 0; c < channels; ++c) {
        const Plane x = channel(render, c), y = channel(target, c);
        const Plane mu_x = filter_valid(x, g), mu_y = filter_valid(y, g);
        const Plane e_xx = filter_valid(product(x, x), g), e_yy = filter_valid(product(y, y), g);
        const Plane e_xy = filter_valid(product(x, y), g);
        Plane d_mu(vw, vh), d_exx(vw, vh), d_exy(vw, vh);
        double channel_sum = 0.0;
        for (std::size_t i = 0; i < mu_x.v.size(); ++i) {
            const double mx = mu_x.v[i], my = mu_y.v[i];
            const double a1 = 2.0 * mx * my + c1;
            const double a2 = 2.0 * (e_xy.v[i] - mx * my) + c2;
            const double b1 = mx * mx + my * my + c1;
            const double b2 = (e_xx.v[i] - mx * mx) + (e_yy.v[i] - my * my) + c2;
            const double s = (a1 * a2) / (b1 * b2);
            channel_sum += s;
            if (want_grad) {
                const double denom = b1 * b2;
                d_mu.v[i] = norm_factor * ((2.0 * my * a2 - 2.0 * my * a1) / denom - s * (2.0 * mx / b1 - 2.0 * mx / b2));
                d_exx.v[i] = norm_factor * (-s / b2);
                d_exy.v[i] = norm_factor * (2.0 * a1 / denom);
            }
        }
        total += channel_sum;
        if (want_grad) {
            const Plane g_mu = filter_adjoint(d_mu, w, h, g);
            const Plane g_exx = filter_adjoint(d_exx, w, h, g);
            const Plane g_exy = filter_adjoint(d_exy, w, h, g);
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx)
                    result.d_render.at(xx, yy, c) =
                        g_mu.at(xx, yy) + 2.0 * x.at(xx, yy) * g_exx.at(xx, yy) + y.at(xx, yy) * g_exy.at(xx, yy);
        }
    }
    result.value = total * norm_factor;
    return result;
}

}  // namespace

double ssim(const ImageF& render, const ImageF& target) { return ssim_impl(render, target, false).value; }

SsimGradient ssim_with_gradient(const ImageF& render, const ImageF& target) {
    return ssim_impl(render, target, true);
}

// ---------------------------------------------------------------------------
// mIoU

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes),
      counts_(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes + 1), 0) {
    if (num_classes < 1) throw Error(ErrorKind::InvalidParameter, "confusion matrix needs at least one class");
}

void ConfusionMatrix::add(const LabelImage& pred, const LabelImage& gt, std::uint8_t ignore_label) {
    if (!pred.same_shape(gt)) throw Error(ErrorKind::SizeMismatch, "miou: label image shapes differ");
    const auto cols = static_cast<std::size_t>(num_classes_ + 1);
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const std::uint8_t t = gt.data()[i];
        if (t == ignore_label) continue;
        if (t >= num_classes_)
            throw Error(ErrorKind::LabelOutOfRange, "miou: ground-truth label " + std::to_string(t) + " out of range");
        const std::uint8_t p = pred.data()[i];
        const std::size_t col = p < num_classes_ ? p : static_cast<std::size_t>(num_classes_);
        ++counts_[t * cols + col];
    }
}

std::uint64_t ConfusionMatrix::count(int gt_class, int pred_class) const {
    return counts_[static_cast<std::size_t>(gt_class) * static_cast<std::size_t>(num_classes_ + 1) +
                   static_cast<std::size_t>(pred_class)];
}

MiouResult ConfusionMatrix::result(MiouMode mode) const {
    MiouResult r;
    const auto n = static_cast<std::size_t>(num_classes_);
    r.iou.assign(n, 0.0);
    r.included.assign(n, false);
    double sum = 0.0;
    int used = 0;
    for (int c = 0; c < num_classes_; ++c) {
        const std::uint64_t tp = count(c, c);
        std::uint64_t fn = 0, fp = 0;
        for (int k = 0; k <= num_classes_; ++k)
            if (k != c) fn += count(c, k);
        for (int k = 0; k < num_classes_; ++k)
            if (k != c) fp += count(k, c);
        const std::uint64_t denom = tp + fp + fn;
        const auto idx = static_cast<std::size_t>(c);
        if (denom == 0) {
            if (mode == MiouMode::AllClasses) {
                r.iou[idx] = 1.0;
                r.included[idx] = true;
                sum += 1.0;
                ++used;
            }
            continue;
        }
        r.iou[idx] = static_cast<double>(tp) / static_cast<double>(denom);
        r.included[idx] = true;
        sum += r.iou[idx];
        ++used;
    }
    // Nothing to disagree about when no pixel is supervised.
    r.mean = used > 0 ? sum / used : 1.0;
    return r;
}

MiouResult miou(const LabelImage& pred, const LabelImage& gt, int num_classes, std::uint8_t ignore_label,
                MiouMode mode) {
    ConfusionMatrix cm(num_classes);
    cm.add(pred, gt, ignore_label);
    return cm.result(mode);
}

// ---------------------------------------------------------------------------
// Reports

void EvalReport::finalize_means() {
    mean_psnr = 0.0;
    mean_ssim = 0.0;
    if (frames.empty()) return;
    for (const auto& f : frames) {
        mean_psnr += f.psnr;
        mean_ssim += f.ssim;
    }
    mean_psnr /= static_cast<double>(frames.size());
    mean_ssim /= static_cast<double>(frames.size());
}

void EvalReport::write_table(std::ostream& os) const {
    os << std::fixed;
    os << std::left << std::setw(32) << "frame" << std::right << std::setw(10) << "PSNR" << std::setw(10) << "SSIM"
       << '\n';
    for (const auto& f : frames)
        os << std::left << std::setw(32) << f.name << std::right << std::setw(10) << std::setprecision(3) << f.psnr
           << std::setw(10) << std::setprecision(4) << f.ssim << '\n';
    os << std::left << std::setw(32) << "mean" << std::right << std::setw(10) << std::setprecision(3) << mean_psnr
       << std::setw(10) << std::setprecision(4) << mean_ssim << "\n\n";
    os << std::left << std::setw(32) << "class" << std::right << std::setw(10) << "IoU" << '\n';
    for (std::size_t c = 0; c < segmentation.iou.size(); ++c) {
        const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
        os << std::left << std::setw(32) << name << std::right << std::setw(10);
        if (segmentation.included[c])
            os << std::setprecision(4) << segmentation.iou[c];
        else
            os << "-";
        os << '\n';
    }
    os << std::left << std::setw(32) << "mIoU" << std::right << std::setw(10) << std::setprecision(4)
       << segmentation.mean << '\n';
    os << std::defaultfloat;
}

void EvalReport::write_key_values(std::ostream& os) const {
    os << std::setprecision(17);
    os << "frames = " << frames.size() << '\n';
    os << "mean_psnr = " << mean_psnr << '\n';
    os << "mean_ssim = " << mean_ssim << '\n';
    os << "miou = " << segmentation.mean << '\n';
    for (const auto& f : frames) {
        os << "frame." << f.name << ".psnr = " << f.psnr << '\n';
        os << "frame." << f.name << ".ssim = " << f.ssim << '\n';
    }
    for (std::size_t c = 0; c < segmentation.iou.size(); ++c) {
        if (!segmentation.included[c]) continue;
        const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
        os << "iou." << name << " = " << segmentation.iou[c] << '\n';
    }
}

void EvalReport::save(const std::filesystem::path& table_path, const std::filesystem::path& kv_path) const {
    std::ofstream table(table_path);
    std::ofstream kv(kv_path);
    if (!table || !kv) throw Error(ErrorKind::Io, "cannot write evaluation report");
    write_table(table);
    write_key_values(kv);
}

}  // namespace semsplat
