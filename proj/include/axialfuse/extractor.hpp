#pragma once

#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "axialfuse/common.hpp"
#include "axialfuse/planar.hpp"

namespace axialfuse {

enum class ExtractorKind { stub, cache };

// The frozen per-slice 2D feature extractor abstraction. The stub stands in
// for the real foundation-model backbone: patch embedding with a fixed
// seeded random projection, mean-pooled to one E-vector per slice. The
// cache kind injects externally computed embeddings verbatim.
struct ExtractorSpec {
    ExtractorKind kind = ExtractorKind::stub;
    int embed_dim = 32;
    int patch = 8;
    uint64_t seed = 0;

    bool operator==(const ExtractorSpec&) const = default;

    void validate() const {
        if (embed_dim < 8) throw ContractError("extractor: embed dim must be >= 8, got " + std::to_string(embed_dim));
        if (kind == ExtractorKind::stub && patch < 1)
            throw ContractError("extractor: patch must be >= 1, got " + std::to_string(patch));
    }
};

template <typename T>
struct PlaneSequenceT {
    Plane plane = Plane::axial;
    int rows = 0;       // slice count of the originating stack
    int embed_dim = 0;
    std::vector<T> features;  // rows x embed_dim
    std::string source_id;
};

using PlaneSequence = PlaneSequenceT<float>;

// ---------------------------------------------------------------------------
// AXE1 embedding cache (little-endian):
//   magic "AXE1", version u8=1, E u32, entry count u32;
//   per entry: id length u16 + UTF-8 id, plane code u8 (0 axial, 1 coronal,
//   2 sagittal), row count u32, rows f32.
// ---------------------------------------------------------------------------

struct EmbeddingCache {
    int embed_dim = 0;
    // ordered map keeps lookups and re-serialization deterministic
    std::map<std::pair<std::string, int>, std::vector<float>> entries;

    const std::vector<float>& lookup(const std::string& id, Plane plane) const {
        auto it = entries.find({id, static_cast<int>(plane)});
        if (it == entries.end())
            throw LookupError("no cache entry for (" + id + ", " + plane_token(plane) + ")");
        return it->second;
    }
};

inline void write_cache(const std::vector<PlaneSequence>& sequences, const std::string& path) {
    int e = sequences.empty() ? 0 : sequences[0].embed_dim;
    std::map<std::pair<std::string, int>, bool> seen;
    for (const auto& s : sequences) {
        if (s.embed_dim != e)
            throw FormatError("write_cache: inconsistent embed dim " + std::to_string(s.embed_dim) +
                              " vs " + std::to_string(e));
        auto key = std::make_pair(s.source_id, static_cast<int>(s.plane));
        if (seen.count(key))
            throw FormatError("write_cache: duplicate key (" + s.source_id + ", " +
                              plane_token(s.plane) + ")");
        seen[key] = true;
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write("AXE1", 4);
    le::write_u8(os, 1);
    le::write_u32(os, static_cast<uint32_t>(e));
    le::write_u32(os, static_cast<uint32_t>(sequences.size()));
    for (const auto& s : sequences) {
        le::write_u16(os, static_cast<uint16_t>(s.source_id.size()));
        le::write_bytes(os, s.source_id.data(), s.source_id.size());
        le::write_u8(os, static_cast<uint8_t>(s.plane));
        le::write_u32(os, static_cast<uint32_t>(s.rows));
        le::write_f32_array(os, s.features.data(), s.features.size());
    }
    if (!os) throw IoError("short write to '" + path + "'");
}

inline EmbeddingCache read_cache(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    char magic[4];
    le::read_bytes(is, magic, 4, "magic");
    if (std::string(magic, 4) != "AXE1") throw FormatError("bad magic in '" + path + "', expected AXE1");
    uint8_t version = le::read_u8(is, "version");
    if (version != 1) throw FormatError("unsupported cache version " + std::to_string(version));
    EmbeddingCache cache;
    cache.embed_dim = static_cast<int>(le::read_u32(is, "embed dim"));
    if (cache.embed_dim < 1) throw FormatError("bad embed dim in '" + path + "'");
    uint32_t count = le::read_u32(is, "entry count");
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t id_len = le::read_u16(is, "id length");
        std::string id(id_len, '\0');
        le::read_bytes(is, id.data(), id_len, "id");
        uint8_t plane_code = le::read_u8(is, "plane code");
        if (plane_code > 2) throw FormatError("bad plane code " + std::to_string(plane_code) + " in '" + path + "'");
        uint32_t rows = le::read_u32(is, "row count");
        if (rows == 0 || rows > (1u << 20)) throw FormatError("bad row count in '" + path + "'");
        std::vector<float> feats(static_cast<size_t>(rows) * cache.embed_dim);
        le::read_f32_array(is, feats.data(), feats.size(), "rows");
        for (float f : feats)
            if (!std::isfinite(f)) throw FormatError("non-finite feature value in '" + path + "'");
        auto key = std::make_pair(id, static_cast<int>(plane_code));
        if (cache.entries.count(key)) throw FormatError("duplicate cache key '" + id + "' in '" + path + "'");
        cache.entries[key] = std::move(feats);
    }
    if (is.peek() != std::char_traits<char>::eof())
        throw FormatError("trailing bytes after payload in '" + path + "'");
    return cache;
}

// ---------------------------------------------------------------------------
// Extractor
// ---------------------------------------------------------------------------

template <typename T>
class ExtractorT {
public:
    explicit ExtractorT(ExtractorSpec spec, std::shared_ptr<EmbeddingCache> cache = nullptr)
        : spec_(spec), cache_(std::move(cache)) {
        spec_.validate();
        if (spec_.kind == ExtractorKind::cache) {
            if (!cache_) throw ContractError("extractor: kind=cache requires a loaded cache");
            if (cache_->embed_dim != spec_.embed_dim)
                throw FormatError("extractor: cache embed dim " + std::to_string(cache_->embed_dim) +
                                  " does not match spec " + std::to_string(spec_.embed_dim));
        } else {
            init_stub_weights();
        }
    }

    const ExtractorSpec& spec() const { return spec_; }

    PlaneSequenceT<T> extract(const PlaneStack& stack) const {
        PlaneSequenceT<T> out;
        out.plane = stack.plane;
        out.rows = stack.d_plane;
        out.embed_dim = spec_.embed_dim;
        out.source_id = stack.source_id;
        out.features.resize(static_cast<size_t>(stack.d_plane) * spec_.embed_dim);
        if (spec_.kind == ExtractorKind::cache) {
            const auto& rows = cache_->lookup(stack.source_id, stack.plane);
            if (rows.size() != out.features.size())
                throw FormatError("cache entry for (" + stack.source_id + ", " +
                                  plane_token(stack.plane) + ") has " +
                                  std::to_string(rows.size() / spec_.embed_dim) + " rows, expected " +
                                  std::to_string(stack.d_plane));
            for (size_t i = 0; i < rows.size(); ++i) out.features[i] = static_cast<T>(rows[i]);
        } else {
            extract_stub(stack, out);
        }
        for (T v : out.features)
            if (!std::isfinite(static_cast<double>(v)))
                throw NumericError("extractor produced non-finite feature for '" + stack.source_id + "'");
        return out;
    }

private:
    void init_stub_weights() {
        int fan_in = spec_.patch * spec_.patch * PlaneStack::channels;
        proj_.resize(static_cast<size_t>(fan_in) * spec_.embed_dim);
        std::mt19937_64 rng(mix_seed(spec_.seed, static_cast<uint64_t>(spec_.patch),
                                     static_cast<uint64_t>(spec_.embed_dim)));
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
        for (T& w : proj_) w = static_cast<T>(dist(rng));
    }

    void extract_stub(const PlaneStack& stack, PlaneSequenceT<T>& out) const {
        int s = stack.s, patch = spec_.patch, e = spec_.embed_dim;
        if (s % patch != 0)
            throw ContractError("extractor: slice extent " + std::to_string(s) +
                                " is not a multiple of patch " + std::to_string(patch));
        int per_side = s / patch;
        int n_patches = per_side * per_side;
        int fan_in = patch * patch * PlaneStack::channels;
        std::vector<T> flat(static_cast<size_t>(fan_in));
        for (int d = 0; d < stack.d_plane; ++d) {
            T* row = out.features.data() + static_cast<size_t>(d) * e;
            std::fill(row, row + e, T(0));
            for (int py = 0; py < per_side; ++py)
                for (int px = 0; px < per_side; ++px) {
                    size_t k = 0;
                    for (int c = 0; c < PlaneStack::channels; ++c) {
                        const float* img = stack.slice_channel(c, d);
                        for (int y = 0; y < patch; ++y)
                            for (int x = 0; x < patch; ++x, ++k)
                                flat[k] = static_cast<T>(img[(py * patch + y) * s + (px * patch + x)]);
                    }
                    for (int j = 0; j < e; ++j) {
                        T acc = T(0);
                        for (int i = 0; i < fan_in; ++i) acc += flat[static_cast<size_t>(i)] * proj_[static_cast<size_t>(i) * e + j];
                        row[j] += acc;
                    }
                }
            for (int j = 0; j < e; ++j) row[j] /= static_cast<T>(n_patches);
        }
    }

    ExtractorSpec spec_;
    std::shared_ptr<EmbeddingCache> cache_;
    std::vector<T> proj_;  // (patch^2 * C) x E, frozen
};

using Extractor = ExtractorT<float>;

}  // namespace axialfuse
