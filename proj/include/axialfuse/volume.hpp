#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "axialfuse/common.hpp"

namespace axialfuse {

// Single-channel 3D scalar grid, voxels normalized to [0,1] at load time.
struct Volume {
    int d = 0, h = 0, w = 0;
    std::vector<float> voxels;  // row-major, d outermost, w innermost
    std::string id;

    size_t numel() const { return static_cast<size_t>(d) * h * w; }
    float& at(int z, int y, int x) { return voxels[(static_cast<size_t>(z) * h + y) * w + x]; }
    float at(int z, int y, int x) const { return voxels[(static_cast<size_t>(z) * h + y) * w + x]; }

    void validate(const char* ctx) const {
        if (d < 2 || h < 2 || w < 2)
            throw DimensionError(std::string(ctx) + ": volume extents must be >= 2, got " +
                                 shape_str({d, h, w}));
        if (voxels.size() != numel())
            throw DimensionError(std::string(ctx) + ": voxel count does not match extents");
        for (float v : voxels)
            if (!(v >= 0.0f && v <= 1.0f))
                throw NumericError(std::string(ctx) + ": voxel outside [0,1] or non-finite");
    }
};

// ---------------------------------------------------------------------------
// AXV1 container (little-endian):
//   magic "AXV1", version u8=1, dtype u8 (0 = f32), ndim u8,
//   extents ndim x u32, vmin f32, vmax f32, payload f32 row-major.
// Volumes use ndim=3; the `slice` dump uses ndim=4 (C, D_plane, S, S).
// ---------------------------------------------------------------------------

struct Axv1Blob {
    std::vector<uint32_t> dims;
    float vmin = 0.0f, vmax = 1.0f;
    std::vector<float> payload;
};

inline void write_axv1(const Axv1Blob& blob, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write("AXV1", 4);
    le::write_u8(os, 1);
    le::write_u8(os, 0);  // dtype f32
    le::write_u8(os, static_cast<uint8_t>(blob.dims.size()));
    for (uint32_t d : blob.dims) le::write_u32(os, d);
    le::write_f32(os, blob.vmin);
    le::write_f32(os, blob.vmax);
    le::write_f32_array(os, blob.payload.data(), blob.payload.size());
    if (!os) throw IoError("short write to '" + path + "'");
}

inline Axv1Blob read_axv1(const std::string& path, int expect_ndim) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    char magic[4];
    le::read_bytes(is, magic, 4, "magic");
    if (std::string(magic, 4) != "AXV1") throw FormatError("bad magic in '" + path + "', expected AXV1");
    uint8_t version = le::read_u8(is, "version");
    if (version != 1) throw FormatError("unsupported version " + std::to_string(version) + " in '" + path + "'");
    uint8_t dtype = le::read_u8(is, "dtype");
    if (dtype != 0) throw FormatError("unsupported dtype code " + std::to_string(dtype) + " in '" + path + "'");
    uint8_t ndim = le::read_u8(is, "ndim");
    if (ndim != expect_ndim)
        throw FormatError("ndim " + std::to_string(ndim) + " in '" + path + "', expected " +
                          std::to_string(expect_ndim));
    Axv1Blob blob;
    size_t n = 1;
    for (int i = 0; i < ndim; ++i) {
        uint32_t e = le::read_u32(is, "extents");
        if (e == 0 || e > (1u << 20)) throw FormatError("extent " + std::to_string(e) + " out of range in '" + path + "'");
        blob.dims.push_back(e);
        n *= e;
        if (n > (1ull << 31)) throw FormatError("payload too large in '" + path + "'");
    }
    blob.vmin = le::read_f32(is, "vmin");
    blob.vmax = le::read_f32(is, "vmax");
    if (!std::isfinite(blob.vmin) || !std::isfinite(blob.vmax))
        throw FormatError("non-finite vmin/vmax in '" + path + "'");
    if (!(blob.vmax > blob.vmin)) throw FormatError("vmax must exceed vmin in '" + path + "'");
    blob.payload.resize(n);
    le::read_f32_array(is, blob.payload.data(), n, "voxels");
    if (is.peek() != std::char_traits<char>::eof())
        throw FormatError("trailing bytes after payload in '" + path + "'");
    return blob;
}

// In-memory volumes are already normalized, so the writer records the
// identity range [0,1]; external producers may store any (vmin, vmax) and
// the reader maps into [0,1]. That keeps round-trips bit-exact.
inline void write_volume(const Volume& v, const std::string& path) {
    v.validate("write_volume");
    Axv1Blob blob;
    blob.dims = {static_cast<uint32_t>(v.d), static_cast<uint32_t>(v.h), static_cast<uint32_t>(v.w)};
    blob.vmin = 0.0f;
    blob.vmax = 1.0f;
    blob.payload = v.voxels;
    write_axv1(blob, path);
}

inline Volume read_volume(const std::string& path) {
    Axv1Blob blob = read_axv1(path, 3);
    for (uint32_t e : blob.dims)
        if (e < 2) throw FormatError("volume extent " + std::to_string(e) + " below 2 in '" + path + "'");
    Volume v;
    v.d = static_cast<int>(blob.dims[0]);
    v.h = static_cast<int>(blob.dims[1]);
    v.w = static_cast<int>(blob.dims[2]);
    v.id = std::filesystem::path(path).stem().string();
    v.voxels.resize(blob.payload.size());
    float range = blob.vmax - blob.vmin;
    for (size_t i = 0; i < blob.payload.size(); ++i) {
        float raw = blob.payload[i];
        if (!std::isfinite(raw)) throw FormatError("non-finite voxel at index " + std::to_string(i) + " in '" + path + "'");
        float norm = (raw - blob.vmin) / range;
        if (norm < -1e-6f || norm > 1.0f + 1e-6f)
            throw FormatError("voxel at index " + std::to_string(i) + " outside declared [vmin,vmax] in '" + path + "'");
        v.voxels[i] = std::min(1.0f, std::max(0.0f, norm));
    }
    return v;
}

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

enum class Split { train, validation, test };

inline const char* split_token(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        default: return "test";
    }
}

inline Split parse_split(const std::string& tok, int line_no) {
    if (tok == "train") return Split::train;
    if (tok == "validation") return Split::validation;
    if (tok == "test") return Split::test;
    throw ParseError("unknown split token '" + tok + "' at line " + std::to_string(line_no));
}

enum class Task { binary, multiclass };

struct ManifestEntry {
    std::string path;  // relative to the manifest's directory
    int label = 0;
    Split split = Split::train;
};

struct RunManifest {
    std::vector<ManifestEntry> entries;
    int num_classes = 0;
    Task task = Task::multiclass;
    std::string base_dir;

    std::vector<const ManifestEntry*> split_entries(Split s) const {
        std::vector<const ManifestEntry*> out;
        for (const auto& e : entries)
            if (e.split == s) out.push_back(&e);
        return out;
    }

    std::string resolve(const ManifestEntry& e) const {
        return (std::filesystem::path(base_dir) / e.path).string();
    }
};

// Text format, one record per line:
//   axialfuse-manifest v1 classes=<k> task=<binary|multiclass>
//   <relative-path>\t<label>\t<train|validation|test>
inline RunManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest '" + path + "'");
    RunManifest m;
    m.base_dir = std::filesystem::path(path).parent_path().string();
    std::string line;
    int line_no = 0;
    if (!std::getline(is, line)) throw ParseError("empty manifest '" + path + "'");
    ++line_no;
    {
        std::istringstream hs(line);
        std::string tag, ver, classes_kv, task_kv;
        hs >> tag >> ver >> classes_kv >> task_kv;
        if (tag != "axialfuse-manifest" || ver != "v1" || classes_kv.rfind("classes=", 0) != 0 ||
            task_kv.rfind("task=", 0) != 0)
            throw ParseError("bad manifest header at line 1: '" + line + "'");
        try {
            m.num_classes = std::stoi(classes_kv.substr(8));
        } catch (const std::exception&) {
            throw ParseError("bad classes value in manifest header");
        }
        if (m.num_classes < 2) throw ParseError("manifest needs at least 2 classes");
        std::string task_tok = task_kv.substr(5);
        if (task_tok == "binary") m.task = Task::binary;
        else if (task_tok == "multiclass") m.task = Task::multiclass;
        else throw ParseError("unknown task token '" + task_tok + "' in manifest header");
        if ((m.task == Task::binary) != (m.num_classes == 2))
            throw ParseError("task binary requires exactly 2 classes, got " + std::to_string(m.num_classes));
    }
    std::vector<std::string> seen_paths;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        size_t t1 = line.find('\t');
        size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
            throw ParseError("expected 3 tab-separated fields at line " + std::to_string(line_no));
        ManifestEntry e;
        e.path = line.substr(0, t1);
        std::string label_tok = line.substr(t1 + 1, t2 - t1 - 1);
        std::string split_tok = line.substr(t2 + 1);
        try {
            size_t pos = 0;
            e.label = std::stoi(label_tok, &pos);
            if (pos != label_tok.size()) throw std::invalid_argument("junk");
        } catch (const std::exception&) {
            throw ParseError("bad label '" + label_tok + "' at line " + std::to_string(line_no));
        }
        if (e.label < 0 || e.label >= m.num_classes)
            throw ParseError("label " + std::to_string(e.label) + " out of range [0," +
                             std::to_string(m.num_classes) + ") at line " + std::to_string(line_no));
        e.split = parse_split(split_tok, line_no);
        for (const auto& p : seen_paths)
            if (p == e.path) throw ParseError("duplicate path '" + e.path + "' at line " + std::to_string(line_no));
        seen_paths.push_back(e.path);
        m.entries.push_back(std::move(e));
    }
    return m;
}

inline void write_manifest(const RunManifest& m, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open manifest '" + path + "' for writing");
    os << "axialfuse-manifest v1 classes=" << m.num_classes
       << " task=" << (m.task == Task::binary ? "binary" : "multiclass") << "\n";
    for (const auto& e : m.entries)
        os << e.path << "\t" << e.label << "\t" << split_token(e.split) << "\n";
    if (!os) throw IoError("short write to manifest '" + path + "'");
}

// ---------------------------------------------------------------------------
// Synthetic dataset: one bright ellipsoid per volume whose octant, size and
// orientation are class-specific, so every plane carries class signal and a
// linear probe on octant means already separates the classes.
// ---------------------------------------------------------------------------

struct SynthSpec {
    // volume counts are per class, per split
    int n_train = 20, n_validation = 5, n_test = 5;
    int num_classes = 2;
    int side = 16;
    uint64_t seed = 0;
};

namespace detail {

struct Ellipsoid {
    std::array<double, 3> center;        // voxel coordinates
    std::array<double, 3> radii;         // along principal axes
    std::array<std::array<double, 3>, 3> axes;  // orthonormal rows
};

inline std::array<std::array<double, 3>, 3> rotation_zyx(double a, double b, double c) {
    double ca = std::cos(a), sa = std::sin(a);
    double cb = std::cos(b), sb = std::sin(b);
    double cc = std::cos(c), sc = std::sin(c);
    // R = Rz(a) * Ry(b) * Rx(c), rows are the rotated frame axes
    return {{{ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc},
             {sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc},
             {-sb, cb * sc, cb * cc}}};
}

inline Ellipsoid class_ellipsoid(int cls, int side, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    // successive classes land in maximally separated octants (0 and 7 are
    // opposite corners), so low class counts differ along every axis
    static constexpr int octant_order[8] = {0, 7, 1, 6, 2, 5, 3, 4};
    int octant = octant_order[cls % 8];
    double s = static_cast<double>(side);
    Ellipsoid e;
    for (int ax = 0; ax < 3; ++ax) {
        double lo_hi = (octant >> ax) & 1 ? 0.72 : 0.28;
        e.center[static_cast<size_t>(ax)] = s * (lo_hi + 0.03 * unit(rng));
    }
    int tier = cls / 8;
    double r_major = s * (0.26 + 0.05 * tier) * (1.0 + 0.05 * unit(rng));
    e.radii = {r_major, r_major * 0.5, r_major * 0.28};
    // class-specific orientation, golden-angle spaced, with small jitter
    double base = 2.39996322972865332 * (cls + 1);
    double jig = 0.17;  // ~10 degrees
    e.axes = rotation_zyx(base + jig * unit(rng), 0.7 * base + jig * unit(rng), 0.4 * base + jig * unit(rng));
    return e;
}

}  // namespace detail

inline Volume synth_volume(int cls, int side, uint64_t stream_seed, const std::string& id) {
    std::mt19937_64 rng(stream_seed);
    detail::Ellipsoid e = detail::class_ellipsoid(cls, side, rng);
    std::normal_distribution<double> noise(0.0, 0.01);
    Volume v;
    v.d = v.h = v.w = side;
    v.id = id;
    v.voxels.resize(v.numel());
    size_t i = 0;
    for (int z = 0; z < side; ++z)
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x, ++i) {
                double p[3] = {z - e.center[0], y - e.center[1], x - e.center[2]};
                double q = 0.0;
                for (int ax = 0; ax < 3; ++ax) {
                    double proj = (e.axes[static_cast<size_t>(ax)][0] * p[0] +
                                   e.axes[static_cast<size_t>(ax)][1] * p[1] +
                                   e.axes[static_cast<size_t>(ax)][2] * p[2]) /
                                  e.radii[static_cast<size_t>(ax)];
                    q += proj * proj;
                }
                double val = q <= 1.0 ? 0.97 - 0.2 * q : 0.03;
                val += noise(rng);
                v.voxels[i] = static_cast<float>(std::min(1.0, std::max(0.0, val)));
            }
    return v;
}

inline RunManifest synth_dataset(const SynthSpec& spec, const std::string& out_dir) {
    if (spec.side < 8) throw ContractError("synth_dataset: side must be >= 8, got " + std::to_string(spec.side));
    if (spec.num_classes < 2)
        throw ContractError("synth_dataset: num_classes must be >= 2, got " + std::to_string(spec.num_classes));
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + out_dir + "': " + ec.message());

    RunManifest m;
    m.num_classes = spec.num_classes;
    m.task = spec.num_classes == 2 ? Task::binary : Task::multiclass;
    m.base_dir = out_dir;

    const Split splits[3] = {Split::train, Split::validation, Split::test};
    const int counts[3] = {spec.n_train * spec.num_classes, spec.n_validation * spec.num_classes,
                           spec.n_test * spec.num_classes};
    for (int si = 0; si < 3; ++si) {
        for (int i = 0; i < counts[si]; ++i) {
            int cls = i % spec.num_classes;  // round-robin keeps every split class-balanced
            char name[64];
            std::snprintf(name, sizeof(name), "%s_%03d", split_token(splits[si]), i);
            uint64_t stream = mix_seed(spec.seed, static_cast<uint64_t>(si), static_cast<uint64_t>(i));
            Volume v = synth_volume(cls, spec.side, stream, name);
            std::string fname = std::string(name) + ".axv";
            write_volume(v, (std::filesystem::path(out_dir) / fname).string());
            m.entries.push_back({fname, cls, splits[si]});
        }
    }
    write_manifest(m, (std::filesystem::path(out_dir) / "manifest.tsv").string());
    return m;
}

}  // namespace axialfuse
