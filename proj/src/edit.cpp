// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#include "semsplat/edit.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "semsplat/common.hpp"

namespace semsplat {

namespace fs = std::filesystem;

ClassAssignment assign_classes(const GaussianSet& set) {
    ClassAssignment out;
    out.class_ids.resize(set.size());
    out.confidence.resize(set.size());
    std::vector<double> probs(set.class_stride());
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto logits = set.semantics(i);
        const int id = assign_class(logits);
        class_probs(logits, probs);
        out.class_ids[i] = id;
        out.confidence[i] = probs[static_cast<std::size_t>(id)];
    }
    return out;
}

int assign_class(std::span<const double> logits) {
    if (logits.empty()) throw Error(ErrorKind::InvalidParameter, "assign_class: no class logits");
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

namespace {

std::vector<bool> class_mask(const GaussianSet& set, std::span<const int> classes) {
    std::vector<bool> mask(set.class_stride(), false);
    for (const int c : classes) {
        if (c < 0 || c >= set.num_classes)
            throw Error(ErrorKind::LabelOutOfRange, "class id " + std::to_string(c) + " is outside 0.." +
                                                        std::to_string(set.num_classes - 1));
        mask[static_cast<std::size_t>(c)] = true;
    }
    return mask;
}

GaussianSet filter_by(const GaussianSet& set, const std::vector<bool>& keep) {
    std::vector<std::size_t> indices;
    for (std::size_t i = 0; i < keep.size(); ++i)
        if (keep[i]) indices.push_back(i);
    if (indices.empty() && !set.empty()) log::warn("edit removed every Gaussian; the result is empty");
    return set.subset(indices);
}

}  // namespace

GaussianSet remove_classes(const GaussianSet& set, std::span<const int> classes) {
    const auto mask = class_mask(set, classes);
    std::vector<bool> keep(set.size());
    for (std::size_t i = 0; i < set.size(); ++i)
        keep[i] = !mask[static_cast<std::size_t>(assign_class(set.semantics(i)))];
    return filter_by(set, keep);
}

GaussianSet extract_classes(const GaussianSet& set, std::span<const int> classes, double min_confidence) {
    if (!(min_confidence >= 0.0 && min_confidence <= 1.0))
        throw Error(ErrorKind::InvalidParameter, "min_confidence must lie in [0, 1]");
    const auto mask = class_mask(set, classes);
    const ClassAssignment assigned = assign_classes(set);
    std::vector<bool> keep(set.size());
    for (std::size_t i = 0; i < set.size(); ++i)
        keep[i] = mask[static_cast<std::size_t>(assigned.class_ids[i])] &&
                  (min_confidence <= 0.0 || assigned.confidence[i] >= min_confidence);
    return filter_by(set, keep);
}

// ---------------------------------------------------------------------------
// PLY

namespace {

void put_f32(std::string& buf, double v) {
    const auto f = static_cast<float>(v);
    char bytes[4];
    std::memcpy(bytes, &f, 4);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + 4);
    buf.append(bytes, 4);
}

enum class PlyType { I8, U8, I16, U16, I32, U32, F32, F64 };

std::optional<PlyType> parse_ply_type(std::string_view t) {
    if (t == "char" || t == "int8") return PlyType::I8;
    if (t == "uchar" || t == "uint8") return PlyType::U8;
    if (t == "short" || t == "int16") return PlyType::I16;
    if (t == "ushort" || t == "uint16") return PlyType::U16;
    if (t == "int" || t == "int32") return PlyType::I32;
    if (t == "uint" || t == "uint32") return PlyType::U32;
    if (t == "float" || t == "float32") return PlyType::F32;
    if (t == "double" || t == "float64") return PlyType::F64;
    return std::nullopt;
}

std::size_t type_size(PlyType t) {
    switch (t) {
        case PlyType::I8:
        case PlyType::U8: return 1;
        case PlyType::I16:
        case PlyType::U16: return 2;
        case PlyType::I32:
        case PlyType::U32:
        case PlyType::F32: return 4;
        case PlyType::F64: return 8;
    }
    return 0;
}

template <typename T>
T load_le(const char* p) {
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T v;
    std::memcpy(&v, bytes.data(), sizeof(T));
    return v;
}

double load_value(PlyType t, const char* p) {
    switch (t) {
        case PlyType::I8: return load_le<std::int8_t>(p);
        case PlyType::U8: return load_le<std::uint8_t>(p);
        case PlyType::I16: return load_le<std::int16_t>(p);
        case PlyType::U16: return load_le<std::uint16_t>(p);
        case PlyType::I32: return load_le<std::int32_t>(p);
        case PlyType::U32: return load_le<std::uint32_t>(p);
        case PlyType::F32: return load_le<float>(p);
        case PlyType::F64: return load_le<double>(p);
    }
    return 0.0;
}

struct PlyProperty {
    std::string name;
    PlyType type = PlyType::F32;
    std::size_t offset = 0;
};

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> properties;
    std::size_t stride = 0;
};

struct PlyHeader {
    std::vector<PlyElement> elements;
    std::vector<std::string> comments;
};

[[noreturn]] void corrupt(const fs::path& path, const std::string& what) {
    throw Error(ErrorKind::CorruptFile, path.string() + ": " + what);
}

std::vector<std::string> split_words(const std::string& line) {
    std::istringstream ss(line);
    std::vector<std::string> words;
    for (std::string w; ss >> w;) words.push_back(w);
    return words;
}

std::size_t parse_count(const fs::path& path, const std::string& text) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) corrupt(path, "bad element count '" + text + "'");
    return v;
}

PlyHeader read_header(std::istream& is, const fs::path& path) {
    std::string line;
    auto next_line = [&]() -> bool {
        if (!std::getline(is, line)) return false;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
    };
    if (!next_line() || line != "ply") corrupt(path, "missing 'ply' magic");
    PlyHeader header;
    bool have_format = false;
    while (true) {
        if (!next_line()) corrupt(path, "header ended before end_header");
        if (line == "end_header") break;
        const auto words = split_words(line);
        if (words.empty()) continue;
        if (words[0] == "format") {
            if (words.size() != 3 || words[1] != "binary_little_endian")
                corrupt(path, "only binary_little_endian PLY is supported, found '" + line + "'");
            have_format = true;
        } else if (words[0] == "comment") {
            header.comments.push_back(line.size() > 8 ? line.substr(8) : std::string{});
        } else if (words[0] == "obj_info") {
            continue;
        } else if (words[0] == "element") {
            if (words.size() != 3) corrupt(path, "malformed element line '" + line + "'");
            header.elements.push_back({words[1], parse_count(path, words[2]), {}, 0});
        } else if (words[0] == "property") {
            if (header.elements.empty()) corrupt(path, "property before any element");
            PlyElement& el = header.elements.back();
            if (words.size() >= 2 && words[1] == "list")
                corrupt(path, "list property in element '" + el.name + "' is not supported");
            if (words.size() != 3) corrupt(path, "malformed property line '" + line + "'");
            const auto type = parse_ply_type(words[1]);
            if (!type) corrupt(path, "unknown property type '" + words[1] + "'");
            for (const auto& p : el.properties)
                if (p.name == words[2]) corrupt(path, "duplicate property '" + words[2] + "'");
            el.properties.push_back({words[2], *type, el.stride});
            el.stride += type_size(*type);
        } else {
            corrupt(path, "unexpected header line '" + line + "'");
        }
    }
    if (!have_format) corrupt(path, "missing format line");
    return header;
}

std::optional<int> comment_int(const PlyHeader& header, std::string_view key, const fs::path& path) {
    for (const auto& c : header.comments) {
        const auto words = split_words(c);
        if (words.size() == 2 && words[0] == key) {
            int v = 0;
            const auto [ptr, ec] = std::from_chars(words[1].data(), words[1].data() + words[1].size(), v);
            if (ec != std::errc() || ptr != words[1].data() + words[1].size())
                corrupt(path, "bad '" + std::string(key) + "' comment");
            return v;
        }
    }
    return std::nullopt;
}

std::vector<std::string> comment_classes(const PlyHeader& header, const fs::path& path) {
    std::map<int, std::string> named;
    for (const auto& c : header.comments) {
        if (c.rfind("class ", 0) != 0) continue;
        const std::string rest = c.substr(6);
        const auto space = rest.find(' ');
        const std::string id_text = rest.substr(0, space);
        int id = -1;
        const auto [ptr, ec] = std::from_chars(id_text.data(), id_text.data() + id_text.size(), id);
        if (ec != std::errc() || ptr != id_text.data() + id_text.size() || id < 0)
            corrupt(path, "bad class comment '" + c + "'");
        if (!named.emplace(id, space == std::string::npos ? std::string{} : rest.substr(space + 1)).second)
            corrupt(path, "duplicate class id " + std::to_string(id) + " in header comments");
    }
    std::vector<std::string> names;
    for (const auto& [id, name] : named) {
        if (id != static_cast<int>(names.size())) corrupt(path, "class ids in header comments are not dense");
        names.push_back(name);
    }
    return names;
}

}  // namespace

void export_ply(const fs::path& path, const GaussianSet& set, const ClassTable& classes,
                const PlyExportOptions& options) {
    set.validate();
    if (options.semantics && classes.size() != set.num_classes)
        throw Error(ErrorKind::SizeMismatch, "class table has " + std::to_string(classes.size()) +
                                                 " entries but the set has " + std::to_string(set.num_classes) +
                                                 " classes");
    const int k = sh_coeff_count(set.sh_degree);
    std::ostringstream header;
    header << "ply\nformat binary_little_endian 1.0\n";
    header << "comment sh_degree " << set.sh_degree << "\n";
    header << "comment active_sh_degree " << set.active_sh_degree << "\n";
    if (options.semantics) {
        header << "comment num_classes " << set.num_classes << "\n";
        for (int c = 0; c < classes.size(); ++c) header << "comment class " << c << " " << classes.name(c) << "\n";
    }
    header << "element vertex " << set.size() << "\n";
    for (const char* p : {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"})
        header << "property float " << p << "\n";
    for (int i = 0; i < 3 * (k - 1); ++i) header << "property float f_rest_" << i << "\n";
    header << "property float opacity\n";
    for (int i = 0; i < 3; ++i) header << "property float scale_" << i << "\n";
    for (int i = 0; i < 4; ++i) header << "property float rot_" << i << "\n";
    if (options.semantics) {
        header << "property float sem_class\n";
        for (int c = 0; c < set.num_classes; ++c) header << "property float sem_logit_" << c << "\n";
    }
    header << "end_header\n";

    std::string body;
    const std::size_t floats_per_vertex =
        9 + 3 * static_cast<std::size_t>(k - 1) + 8 + (options.semantics ? 1 + set.class_stride() : 0);
    body.reserve(set.size() * floats_per_vertex * 4);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const Vec3& p = set.positions[i];
        put_f32(body, p.x);
        put_f32(body, p.y);
        put_f32(body, p.z);
        for (int j = 0; j < 3; ++j) put_f32(body, 0.0);
        const auto sh = set.sh(i);
        for (int c = 0; c < 3; ++c) put_f32(body, sh[static_cast<std::size_t>(c)]);
        for (int c = 0; c < 3; ++c)
            for (int j = 1; j < k; ++j) put_f32(body, sh[static_cast<std::size_t>(j * 3 + c)]);
        put_f32(body, set.opacity_logits[i]);
        const Vec3& s = set.log_scales[i];
        put_f32(body, s.x);
        put_f32(body, s.y);
        put_f32(body, s.z);
        const Quat& q = set.rotations[i];
        put_f32(body, q.w);
        put_f32(body, q.x);
        put_f32(body, q.y);
        put_f32(body, q.z);
        if (options.semantics) {
            const auto logits = set.semantics(i);
            put_f32(body, assign_class(logits));
            for (const double l : logits) put_f32(body, l);
        }
    }

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorKind::Io, "cannot write " + path.string());
    const std::string h = header.str();
    os.write(h.data(), static_cast<std::streamsize>(h.size()));
    os.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!os) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

void export_ply(const fs::path& path, const GaussianSet& set) {
    export_ply(path, set, ClassTable::numbered(set.num_classes));
}

PlyAsset import_ply_asset(const fs::path& path, const PlyImportOptions& options) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::Io, "cannot open " + path.string());
    const PlyHeader header = read_header(is, path);

    std::size_t skip = 0;
    const PlyElement* vertex = nullptr;
    for (const auto& el : header.elements) {
        if (el.name == "vertex") {
            vertex = &el;
            break;
        }
        skip += el.count * el.stride;
    }
    if (vertex == nullptr) corrupt(path, "no vertex element");

    std::map<std::string, const PlyProperty*> props;
    for (const auto& p : vertex->properties) props[p.name] = &p;
    auto require = [&](const std::string& name) -> const PlyProperty* {
        const auto it = props.find(name);
        if (it == props.end()) corrupt(path, "missing vertex property '" + name + "'");
        return it->second;
    };
    auto count_prefixed = [&](const std::string& prefix) {
        int n = 0;
        while (props.count(prefix + std::to_string(n))) ++n;
        for (const auto& [name, p] : props)
            if (name.rfind(prefix, 0) == 0) {
                const std::string tail = name.substr(prefix.size());
                int idx = -1;
                const auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), idx);
                if (ec != std::errc() || ptr != tail.data() + tail.size() || idx >= n)
                    corrupt(path, "property '" + name + "' breaks the " + prefix + "<n> sequence");
            }
        return n;
    };

    const int rest = count_prefixed("f_rest_");
    int degree = -1;
    for (int d = 0; d <= kMaxShDegree; ++d)
        if (3 * (sh_coeff_count(d) - 1) == rest) degree = d;
    if (degree < 0) corrupt(path, std::to_string(rest) + " f_rest properties do not match any SH degree");
    if (const auto declared = comment_int(header, "sh_degree", path); declared && *declared != degree)
        corrupt(path, "header declares sh_degree " + std::to_string(*declared) + " but has " + std::to_string(rest) +
                          " f_rest properties");

    const int logits = count_prefixed("sem_logit_");
    const auto declared_classes = comment_int(header, "num_classes", path);
    std::vector<std::string> names = comment_classes(header, path);
    int num_classes = logits;
    if (logits == 0) {
        num_classes = declared_classes ? *declared_classes
                                       : (!names.empty() ? static_cast<int>(names.size()) : options.fallback_num_classes);
        if (num_classes < 1) corrupt(path, "class count must be positive");
        log::warn(path.string() + " has no semantic properties; assuming " + std::to_string(num_classes) +
                  " classes with uniform belief");
    } else if (declared_classes && *declared_classes != logits) {
        corrupt(path, "header declares " + std::to_string(*declared_classes) + " classes but has " +
                          std::to_string(logits) + " sem_logit properties");
    }
    if (!names.empty() && static_cast<int>(names.size()) != num_classes)
        corrupt(path, "header names " + std::to_string(names.size()) + " classes but the set has " +
                          std::to_string(num_classes));

    const PlyProperty* px = require("x");
    const PlyProperty* py = require("y");
    const PlyProperty* pz = require("z");
    std::array<const PlyProperty*, 3> dc{require("f_dc_0"), require("f_dc_1"), require("f_dc_2")};
    const PlyProperty* op = require("opacity");
    std::array<const PlyProperty*, 3> sc{require("scale_0"), require("scale_1"), require("scale_2")};
    std::array<const PlyProperty*, 4> rot{require("rot_0"), require("rot_1"), require("rot_2"), require("rot_3")};
    std::vector<const PlyProperty*> rest_props, logit_props;
    for (int i = 0; i < rest; ++i) rest_props.push_back(require("f_rest_" + std::to_string(i)));
    for (int i = 0; i < logits; ++i) logit_props.push_back(require("sem_logit_" + std::to_string(i)));

    is.seekg(static_cast<std::streamoff>(skip), std::ios::cur);
    std::string data(vertex->count * vertex->stride, '\0');
    if (!is.read(data.data(), static_cast<std::streamsize>(data.size())))
        corrupt(path, "vertex data truncated: expected " + std::to_string(vertex->count) + " vertices of " +
                          std::to_string(vertex->stride) + " bytes");

    PlyAsset asset;
    GaussianSet& set = asset.set;
    set = GaussianSet(degree, num_classes);
    const int k = sh_coeff_count(degree);
    set.positions.resize(vertex->count);
    set.rotations.resize(vertex->count);
    set.log_scales.resize(vertex->count);
    set.opacity_logits.resize(vertex->count);
    set.sh_coeffs.resize(vertex->count * set.sh_stride());
    set.semantic_logits.assign(vertex->count * set.class_stride(), 0.0);
    for (std::size_t i = 0; i < vertex->count; ++i) {
        const char* row = data.data() + i * vertex->stride;
        auto get = [&](const PlyProperty* p) { return load_value(p->type, row + p->offset); };
        set.positions[i] = {get(px), get(py), get(pz)};
        auto sh = set.sh(i);
        for (int c = 0; c < 3; ++c) sh[static_cast<std::size_t>(c)] = get(dc[static_cast<std::size_t>(c)]);
        for (int c = 0; c < 3; ++c)
            for (int j = 1; j < k; ++j)
                sh[static_cast<std::size_t>(j * 3 + c)] = get(rest_props[static_cast<std::size_t>(c * (k - 1) + j - 1)]);
        set.opacity_logits[i] = get(op);
        set.log_scales[i] = {get(sc[0]), get(sc[1]), get(sc[2])};
        set.rotations[i] = {get(rot[0]), get(rot[1]), get(rot[2]), get(rot[3])};
        auto sem = set.semantics(i);
        for (int c = 0; c < logits; ++c) sem[static_cast<std::size_t>(c)] = get(logit_props[static_cast<std::size_t>(c)]);
    }
    const auto active = comment_int(header, "active_sh_degree", path);
    set.active_sh_degree = active ? std::clamp(*active, 0, degree) : degree;
    try {
        set.validate();
    } catch (const Error& e) {
        corrupt(path, e.what());
    }
    asset.classes = names.empty() ? ClassTable::numbered(num_classes) : ClassTable(std::move(names));
    return asset;
}

GaussianSet import_ply(const fs::path& path, const PlyImportOptions& options) {
    return import_ply_asset(path, options).set;
}

}  // namespace semsplat
