// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "semsplat/common.hpp"
#include "semsplat/ingest.hpp"

namespace semsplat {

namespace {

namespace fs = std::filesystem;

// Model ids and names from COLMAP's camera model registry.
std::string model_name(int id) {
    static const char* names[] = {"SIMPLE_PINHOLE", "PINHOLE",       "SIMPLE_RADIAL",         "RADIAL",
                                  "OPENCV",         "OPENCV_FISHEYE", "FULL_OPENCV",           "FOV",
                                  "SIMPLE_RADIAL_FISHEYE", "RADIAL_FISHEYE", "THIN_PRISM_FISHEYE"};
    if (id >= 0 && id < static_cast<int>(std::size(names))) return names[id];
    return "model id " + std::to_string(id);
}

ColmapCameraModel supported_model(int id) {
    if (id == 0) return ColmapCameraModel::SimplePinhole;
    if (id == 1) return ColmapCameraModel::Pinhole;
    throw Error(ErrorKind::UnsupportedModel,
                "unsupported COLMAP camera model " + model_name(id) + " (only SIMPLE_PINHOLE and PINHOLE)");
}

ColmapCameraModel supported_model(const std::string& name) {
    if (name == "SIMPLE_PINHOLE") return ColmapCameraModel::SimplePinhole;
    if (name == "PINHOLE") return ColmapCameraModel::Pinhole;
    throw Error(ErrorKind::UnsupportedModel,
                "unsupported COLMAP camera model " + name + " (only SIMPLE_PINHOLE and PINHOLE)");
}

std::size_t param_count(ColmapCameraModel m) { return m == ColmapCameraModel::Pinhole ? 4 : 3; }

Quat checked_rotation(Quat q, const std::string& where) {
    const double n = q.norm();
    if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-4)
        throw Error(ErrorKind::CorruptFile, where + ": image quaternion is not unit norm");
    // Only touch quaternions that are measurably off so stored unit
    // quaternions keep their exact bits.
    const double n2 = q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z;
    if (std::abs(n2 - 1.0) > 1e-12) q = q.normalized();
    return q;
}

void check_references(const SparseModel& model) {
    for (const auto& [id, image] : model.images)
        if (!model.cameras.contains(image.camera_id))
            throw Error(ErrorKind::CorruptFile, "image " + std::to_string(id) + " references missing camera " +
                                                    std::to_string(image.camera_id));
}

// ---------------------------------------------------------------------------
// Binary

class BinaryReader {
public:
    explicit BinaryReader(const fs::path& path) : path_(path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
        data_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    template <typename T>
    T read() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string read_cstring() {
        const std::size_t start = pos_;
        while (true) {
            need(1);
            if (data_[pos_++] == '\0') break;
        }
        return std::string(data_.data() + start, pos_ - start - 1);
    }

    [[nodiscard]] std::size_t offset() const { return pos_; }
    [[nodiscard]] const fs::path& path() const { return path_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size())
            throw Error(ErrorKind::CorruptFile, path_.string() + ": truncated at byte offset " + std::to_string(pos_) +
                                                    " (needed " + std::to_string(n) + " more bytes)");
    }

    fs::path path_;
    std::vector<char> data_;
    std::size_t pos_ = 0;
};

class BinaryWriter {
public:
    explicit BinaryWriter(const fs::path& path) : out_(path, std::ios::binary) {
        if (!out_) throw Error(ErrorKind::Io, "cannot write " + path.string());
    }
    template <typename T>
    void write(T v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void write_cstring(const std::string& s) { out_.write(s.c_str(), static_cast<std::streamsize>(s.size() + 1)); }

private:
    std::ofstream out_;
};

SparseModel read_binary(const fs::path& dir) {
    SparseModel model;
    {
        BinaryReader r(dir / "cameras.bin");
        const auto count = r.read<std::uint64_t>();
        for (std::uint64_t i = 0; i < count; ++i) {
            ColmapCamera cam;
            cam.id = static_cast<std::uint32_t>(r.read<std::int32_t>());
            cam.model = supported_model(r.read<std::int32_t>());
            cam.width = r.read<std::uint64_t>();
            cam.height = r.read<std::uint64_t>();
            cam.params.resize(param_count(cam.model));
            for (auto& p : cam.params) p = r.read<double>();
            model.cameras[cam.id] = std::move(cam);
        }
    }
    {
        BinaryReader r(dir / "images.bin");
        const auto count = r.read<std::uint64_t>();
        for (std::uint64_t i = 0; i < count; ++i) {
            ColmapImage img;
            const std::size_t record_offset = r.offset();
            img.id = r.read<std::uint32_t>();
            Quat q;
            q.w = r.read<double>();
            q.x = r.read<double>();
            q.y = r.read<double>();
            q.z = r.read<double>();
            img.rotation = checked_rotation(q, r.path().string() + " @" + std::to_string(record_offset));
            img.translation.x = r.read<double>();
            img.translation.y = r.read<double>();
            img.translation.z = r.read<double>();
            img.camera_id = r.read<std::uint32_t>();
            img.name = r.read_cstring();
            const auto num_points = r.read<std::uint64_t>();
            img.observations.resize(num_points);
            for (auto& o : img.observations) {
                o.x = r.read<double>();
                o.y = r.read<double>();
                o.point3d_id = r.read<std::int64_t>();
            }
            model.images[img.id] = std::move(img);
        }
    }
    {
        BinaryReader r(dir / "points3D.bin");
        const auto count = r.read<std::uint64_t>();
        for (std::uint64_t i = 0; i < count; ++i) {
            ColmapPoint p;
            p.id = r.read<std::uint64_t>();
            p.position.x = r.read<double>();
            p.position.y = r.read<double>();
            p.position.z = r.read<double>();
            for (auto& c : p.rgb) c = r.read<std::uint8_t>();
            p.error = r.read<double>();
            const auto track_len = r.read<std::uint64_t>();
            p.track.resize(track_len);
            for (auto& t : p.track) {
                t.image_id = static_cast<std::uint32_t>(r.read<std::int32_t>());
                t.point2d_index = static_cast<std::uint32_t>(r.read<std::int32_t>());
            }
            model.points[p.id] = std::move(p);
        }
    }
    return model;
}

void write_binary(const SparseModel& model, const fs::path& dir) {
    {
        BinaryWriter w(dir / "cameras.bin");
        w.write<std::uint64_t>(model.cameras.size());
        for (const auto& [id, cam] : model.cameras) {
            w.write<std::int32_t>(static_cast<std::int32_t>(cam.id));
            w.write<std::int32_t>(static_cast<std::int32_t>(cam.model));
            w.write<std::uint64_t>(cam.width);
            w.write<std::uint64_t>(cam.height);
            for (const double p : cam.params) w.write<double>(p);
        }
    }
    {
        BinaryWriter w(dir / "images.bin");
        w.write<std::uint64_t>(model.images.size());
        for (const auto& [id, img] : model.images) {
            w.write<std::uint32_t>(img.id);
            w.write<double>(img.rotation.w);
            w.write<double>(img.rotation.x);
            w.write<double>(img.rotation.y);
            w.write<double>(img.rotation.z);
            w.write<double>(img.translation.x);
            w.write<double>(img.translation.y);
            w.write<double>(img.translation.z);
            w.write<std::uint32_t>(img.camera_id);
            w.write_cstring(img.name);
            w.write<std::uint64_t>(img.observations.size());
            for (const auto& o : img.observations) {
                w.write<double>(o.x);
                w.write<double>(o.y);
                w.write<std::int64_t>(o.point3d_id);
            }
        }
    }
    {
        BinaryWriter w(dir / "points3D.bin");
        w.write<std::uint64_t>(model.points.size());
        for (const auto& [id, p] : model.points) {
            w.write<std::uint64_t>(p.id);
            w.write<double>(p.position.x);
            w.write<double>(p.position.y);
            w.write<double>(p.position.z);
            for (const auto c : p.rgb) w.write<std::uint8_t>(c);
            w.write<double>(p.error);
            w.write<std::uint64_t>(p.track.size());
            for (const auto& t : p.track) {
                w.write<std::int32_t>(static_cast<std::int32_t>(t.image_id));
                w.write<std::int32_t>(static_cast<std::int32_t>(t.point2d_index));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Text

std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

class LineParser {
public:
    LineParser(const fs::path& path, int line_no, const std::string& line)
        : where_(path.string() + ":" + std::to_string(line_no)), in_(line) {}

    std::string token() {
        std::string t;
        if (!(in_ >> t)) throw Error(ErrorKind::CorruptFile, where_ + ": unexpected end of line");
        return t;
    }
    template <typename T>
    T number() {
        const std::string t = token();
        T v{};
        const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
        if (ec != std::errc{} || ptr != t.data() + t.size())
            throw Error(ErrorKind::CorruptFile, where_ + ": bad number '" + t + "'");
        return v;
    }
    bool at_end() {
        in_ >> std::ws;
        return in_.eof();
    }
    [[nodiscard]] const std::string& where() const { return where_; }

private:
    std::string where_;
    std::istringstream in_;
};

/// Non-comment lines with their 1-based line numbers. Blank lines are kept
/// because an image with no observations has an empty second line.
std::vector<std::pair<int, std::string>> data_lines(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
    std::vector<std::pair<int, std::string>> lines;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty() && line.front() == '#') continue;
        lines.emplace_back(n, line);
    }
    return lines;
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t") == std::string::npos; }

SparseModel read_text(const fs::path& dir) {
    SparseModel model;
    {
        const fs::path path = dir / "cameras.txt";
        for (const auto& [n, line] : data_lines(path)) {
            if (blank(line)) continue;
            LineParser p(path, n, line);
            ColmapCamera cam;
            cam.id = p.number<std::uint32_t>();
            cam.model = supported_model(p.token());
            cam.width = p.number<std::uint64_t>();
            cam.height = p.number<std::uint64_t>();
            cam.params.resize(param_count(cam.model));
            for (auto& v : cam.params) v = p.number<double>();
            if (!p.at_end()) throw Error(ErrorKind::CorruptFile, p.where() + ": too many camera parameters");
            model.cameras[cam.id] = std::move(cam);
        }
    }
    {
        const fs::path path = dir / "images.txt";
        const auto lines = data_lines(path);
        std::size_t i = 0;
        while (i < lines.size()) {
            if (blank(lines[i].second)) {
                ++i;
                continue;
            }
            LineParser p(path, lines[i].first, lines[i].second);
            ColmapImage img;
            img.id = p.number<std::uint32_t>();
            Quat q;
            q.w = p.number<double>();
            q.x = p.number<double>();
            q.y = p.number<double>();
            q.z = p.number<double>();
            img.rotation = checked_rotation(q, p.where());
            img.translation.x = p.number<double>();
            img.translation.y = p.number<double>();
            img.translation.z = p.number<double>();
            img.camera_id = p.number<std::uint32_t>();
            img.name = p.token();
            ++i;
            if (i < lines.size()) {
                LineParser obs(path, lines[i].first, lines[i].second);
                while (!obs.at_end()) {
                    ColmapObservation o;
                    o.x = obs.number<double>();
                    o.y = obs.number<double>();
                    o.point3d_id = obs.number<std::int64_t>();
                    img.observations.push_back(o);
                }
                ++i;
            }
            model.images[img.id] = std::move(img);
        }
    }
    {
        const fs::path path = dir / "points3D.txt";
        for (const auto& [n, line] : data_lines(path)) {
            if (blank(line)) continue;
            LineParser p(path, n, line);
            ColmapPoint pt;
            pt.id = p.number<std::uint64_t>();
            pt.position.x = p.number<double>();
            pt.position.y = p.number<double>();
            pt.position.z = p.number<double>();
            for (auto& c : pt.rgb) {
                const int v = p.number<int>();
                if (v < 0 || v > 255) throw Error(ErrorKind::CorruptFile, p.where() + ": colour out of range");
                c = static_cast<std::uint8_t>(v);
            }
            pt.error = p.number<double>();
            while (!p.at_end()) {
                ColmapTrackElement t;
                t.image_id = p.number<std::uint32_t>();
                t.point2d_index = p.number<std::uint32_t>();
                pt.track.push_back(t);
            }
            model.points[pt.id] = std::move(pt);
        }
    }
    return model;
}

void write_text(const SparseModel& model, const fs::path& dir) {
    {
        std::ofstream out(dir / "cameras.txt", std::ios::binary);
        if (!out) throw Error(ErrorKind::Io, "cannot write " + (dir / "cameras.txt").string());
        out << "# Camera list with one line of data per camera:\n";
        out << "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n";
        out << "# Number of cameras: " << model.cameras.size() << '\n';
        for (const auto& [id, cam] : model.cameras) {
            out << cam.id << ' ' << model_name(static_cast<int>(cam.model)) << ' ' << cam.width << ' ' << cam.height;
            for (const double p : cam.params) out << ' ' << fmt(p);
            out << '\n';
        }
    }
    {
        std::ofstream out(dir / "images.txt", std::ios::binary);
        if (!out) throw Error(ErrorKind::Io, "cannot write " + (dir / "images.txt").string());
        out << "# Image list with two lines of data per image:\n";
        out << "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n";
        out << "#   POINTS2D[] as (X, Y, POINT3D_ID)\n";
        out << "# Number of images: " << model.images.size() << '\n';
        for (const auto& [id, img] : model.images) {
            out << img.id << ' ' << fmt(img.rotation.w) << ' ' << fmt(img.rotation.x) << ' ' << fmt(img.rotation.y)
                << ' ' << fmt(img.rotation.z) << ' ' << fmt(img.translation.x) << ' ' << fmt(img.translation.y) << ' '
                << fmt(img.translation.z) << ' ' << img.camera_id << ' ' << img.name << '\n';
            for (std::size_t k = 0; k < img.observations.size(); ++k) {
                const auto& o = img.observations[k];
                if (k) out << ' ';
                out << fmt(o.x) << ' ' << fmt(o.y) << ' ' << o.point3d_id;
            }
            out << '\n';
        }
    }
    {
        std::ofstream out(dir / "points3D.txt", std::ios::binary);
        if (!out) throw Error(ErrorKind::Io, "cannot write " + (dir / "points3D.txt").string());
        out << "# 3D point list with one line of data per point:\n";
        out << "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n";
        out << "# Number of points: " << model.points.size() << '\n';
        for (const auto& [id, p] : model.points) {
            out << p.id << ' ' << fmt(p.position.x) << ' ' << fmt(p.position.y) << ' ' << fmt(p.position.z) << ' '
                << int{p.rgb[0]} << ' ' << int{p.rgb[1]} << ' ' << int{p.rgb[2]} << ' ' << fmt(p.error);
            for (const auto& t : p.track) out << ' ' << t.image_id << ' ' << t.point2d_index;
            out << '\n';
        }
    }
}

}  // namespace

Camera SparseModel::camera_for(const ColmapImage& image) const {
    const auto it = cameras.find(image.camera_id);
    if (it == cameras.end())
        throw Error(ErrorKind::CorruptFile, "image " + image.name + " references missing camera");
    const ColmapCamera& c = it->second;
    Camera cam;
    cam.fx = c.fx();
    cam.fy = c.fy();
    cam.cx = c.cx();
    cam.cy = c.cy();
    cam.width = static_cast<int>(c.width);
    cam.height = static_cast<int>(c.height);
    cam.rotation = rotation_matrix(image.rotation.normalized());
    cam.translation = image.translation;
    return cam;
}

std::vector<ColoredPoint> SparseModel::colored_points() const {
    std::vector<ColoredPoint> out;
    out.reserve(points.size());
    for (const auto& [id, p] : points)
        out.push_back({p.position, {p.rgb[0] / 255.0, p.rgb[1] / 255.0, p.rgb[2] / 255.0}});
    return out;
}

SparseModel parse_colmap(const fs::path& dir, ColmapFormat format) {
    SparseModel model = format == ColmapFormat::Binary ? read_binary(dir) : read_text(dir);
    check_references(model);
    return model;
}

SparseModel parse_colmap(const fs::path& dir) {
    return parse_colmap(dir, fs::exists(dir / "cameras.bin") ? ColmapFormat::Binary : ColmapFormat::Text);
}

void write_colmap(const SparseModel& model, const fs::path& dir, ColmapFormat format) {
    fs::create_directories(dir);
    if (format == ColmapFormat::Binary)
        write_binary(model, dir);
    else
        write_text(model, dir);
}

}  // namespace semsplat
