// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "semsplat/common.hpp"
#include "semsplat/ingest.hpp"

namespace semsplat {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PNG

namespace {

struct PngReadResult {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
};

PngReadResult read_png(const fs::path& path, bool want_color) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw Error(ErrorKind::Io, "cannot read PNG " + path.string() + ": " + image.message);
    if (image.format & PNG_FORMAT_FLAG_LINEAR) {
        png_image_free(&image);
        throw Error(ErrorKind::CorruptFile, path.string() + ": expected an 8-bit PNG");
    }
    if (!want_color && (image.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_ALPHA))) {
        png_image_free(&image);
        throw Error(ErrorKind::CorruptFile, path.string() + ": mask must be a single-channel 8-bit PNG");
    }
    image.format = want_color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    PngReadResult out;
    out.width = static_cast<int>(image.width);
    out.height = static_cast<int>(image.height);
    out.pixels.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr))
        throw Error(ErrorKind::CorruptFile, "cannot decode PNG " + path.string() + ": " + image.message);
    return out;
}

void write_png(const fs::path& path, int width, int height, bool color, const std::vector<std::uint8_t>& pixels) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr))
        throw Error(ErrorKind::Io, "cannot write PNG " + path.string() + ": " + image.message);
}

}  // namespace

ImageF read_png_rgb(const fs::path& path) {
    const auto png = read_png(path, true);
    ImageF img(png.width, png.height, 3);
    for (std::size_t i = 0; i < png.pixels.size(); ++i) img.data()[i] = png.pixels[i] / 255.0;
    return img;
}

LabelImage read_png_gray(const fs::path& path) {
    auto png = read_png(path, false);
    LabelImage img(png.width, png.height, 1);
    img.data() = std::move(png.pixels);
    return img;
}

void write_png_rgb(const fs::path& path, const ImageF& image) {
    if (image.channels() != 3) throw Error(ErrorKind::InvalidParameter, "write_png_rgb: expected 3 channels");
    std::vector<std::uint8_t> px(image.size());
    for (std::size_t i = 0; i < px.size(); ++i)
        px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.data()[i], 0.0, 1.0) * 255.0));
    write_png(path, image.width(), image.height(), true, px);
}

void write_png_gray(const fs::path& path, const LabelImage& image) {
    if (image.channels() != 1) throw Error(ErrorKind::InvalidParameter, "write_png_gray: expected 1 channel");
    write_png(path, image.width(), image.height(), false, image.data());
}

// ---------------------------------------------------------------------------
// Frames

void validate_frame(const Frame& frame, int num_classes) {
    const Camera& cam = frame.camera;
    if (frame.rgb.width() != cam.width || frame.rgb.height() != cam.height || frame.rgb.channels() != 3)
        throw Error(ErrorKind::SizeMismatch, "frame " + frame.name + ": image is " + std::to_string(frame.rgb.width()) +
                                                 "x" + std::to_string(frame.rgb.height()) + ", camera expects " +
                                                 std::to_string(cam.width) + "x" + std::to_string(cam.height));
    if (frame.mask.width() != cam.width || frame.mask.height() != cam.height || frame.mask.channels() != 1)
        throw Error(ErrorKind::SizeMismatch, "frame " + frame.name + ": mask is " +
                                                 std::to_string(frame.mask.width()) + "x" +
                                                 std::to_string(frame.mask.height()) + ", camera expects " +
                                                 std::to_string(cam.width) + "x" + std::to_string(cam.height));
    for (int y = 0; y < frame.mask.height(); ++y)
        for (int x = 0; x < frame.mask.width(); ++x) {
            const std::uint8_t v = frame.mask.at(x, y);
            if (v != kIgnoreLabel && v >= num_classes)
                throw Error(ErrorKind::LabelOutOfRange, "frame " + frame.name + ": mask value " + std::to_string(v) +
                                                            " at pixel (" + std::to_string(x) + ", " +
                                                            std::to_string(y) + ") is not a class id below " +
                                                            std::to_string(num_classes) + " nor 255");
        }
}

Frame load_frame(const fs::path& image_path, const fs::path& mask_path, const Camera& camera, int num_classes,
                 std::string name) {
    Frame frame;
    frame.name = name.empty() ? image_path.filename().string() : std::move(name);
    frame.camera = camera;
    frame.rgb = read_png_rgb(image_path);
    frame.mask = read_png_gray(mask_path);
    validate_frame(frame, num_classes);
    return frame;
}

DatasetSplit split_train_test(std::vector<Frame> frames, int holdout_every) {
    if (holdout_every < 2) throw Error(ErrorKind::InvalidParameter, "holdout_every must be at least 2");
    std::stable_sort(frames.begin(), frames.end(), [](const Frame& a, const Frame& b) { return a.name < b.name; });
    DatasetSplit split;
    if (frames.size() < static_cast<std::size_t>(holdout_every)) {
        log::warn("only " + std::to_string(frames.size()) + " frames with holdout every " +
                  std::to_string(holdout_every) + "; all frames are used for training and the test split is empty");
        split.train = std::move(frames);
        return split;
    }
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (i % static_cast<std::size_t>(holdout_every) == 0)
            split.test.push_back(std::move(frames[i]));
        else
            split.train.push_back(std::move(frames[i]));
    }
    return split;
}

// ---------------------------------------------------------------------------
// Dataset directory

fs::path DatasetLayout::mask_for(const std::string& image_name) const {
    return masks() / fs::path(image_name).replace_extension(".png");
}

void DatasetLayout::validate() const {
    auto require = [](const fs::path& p, bool directory, const char* what) {
        if (directory ? !fs::is_directory(p) : !fs::is_regular_file(p))
            throw Error(ErrorKind::Io, std::string("missing ") + what + ": expected " + p.string());
    };
    require(root, true, "dataset directory");
    require(images(), true, "images directory");
    require(masks(), true, "masks directory");
    require(sparse(), true, "sparse model directory");
    require(classes(), false, "class table");
    const bool has_bin = fs::exists(sparse() / "cameras.bin");
    const bool has_txt = fs::exists(sparse() / "cameras.txt");
    if (!has_bin && !has_txt)
        throw Error(ErrorKind::Io, "missing COLMAP model: expected " + (sparse() / "cameras.txt").string() + " or " +
                                       (sparse() / "cameras.bin").string());
}

Dataset load_dataset(const fs::path& root) { return load_dataset(DatasetLayout{root, {}}); }

Dataset load_dataset(const DatasetLayout& layout) {
    layout.validate();
    Dataset ds;
    ds.classes = ClassTable::read(layout.classes());
    ds.model = parse_colmap(layout.sparse());
    std::vector<const ColmapImage*> images;
    for (const auto& [id, img] : ds.model.images) images.push_back(&img);
    std::sort(images.begin(), images.end(),
              [](const ColmapImage* a, const ColmapImage* b) { return a->name < b->name; });
    for (const ColmapImage* img : images) {
        const fs::path image_path = layout.images() / img->name;
        const fs::path mask_path = layout.mask_for(img->name);
        if (!fs::is_regular_file(image_path))
            throw Error(ErrorKind::Io, "missing image: expected " + image_path.string());
        if (!fs::is_regular_file(mask_path)) throw Error(ErrorKind::Io, "missing mask: expected " + mask_path.string());
    }
    ds.frames.resize(images.size());
    parallel_for(images.size(), [&](std::size_t i) {
        const ColmapImage& img = *images[i];
        ds.frames[i] = load_frame(layout.images() / img.name, layout.mask_for(img.name), ds.model.camera_for(img),
                                  ds.classes.size(), img.name);
    });
    return ds;
}

}  // namespace semsplat
