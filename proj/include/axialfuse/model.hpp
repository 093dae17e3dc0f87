#pragma once

#include <array>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "axialfuse/blocks.hpp"
#include "axialfuse/extractor.hpp"
#include "axialfuse/planar.hpp"
#include "axialfuse/volume.hpp"

namespace axialfuse {

enum class Fusion { dual_axial, sequential, reversed_qkv };

inline const char* fusion_token(Fusion f) {
    switch (f) {
        case Fusion::dual_axial: return "dual_axial";
        case Fusion::sequential: return "sequential";
        default: return "reversed_qkv";
    }
}

inline Fusion parse_fusion(const std::string& tok) {
    if (tok == "dual_axial") return Fusion::dual_axial;
    if (tok == "sequential") return Fusion::sequential;
    if (tok == "reversed_qkv") return Fusion::reversed_qkv;
    throw ParseError("unknown fusion token '" + tok + "'");
}

struct ModelConfig {
    int embed_dim = 32;  // E
    int layers = 2;      // N, shared by intra-plane and cross-plane encoders
    int heads = 2;       // H
    int num_classes = 2;
    Fusion fusion = Fusion::dual_axial;
    int slice_size = 32;  // S
    int vol_d = 16, vol_h = 16, vol_w = 16;
    double dropout = 0.0;
    ExtractorSpec extractor;

    // allow_empty_encoders admits N=0 for test harnesses; user-facing
    // entry points validate strictly.
    void validate(bool allow_empty_encoders = false) const {
        EncoderConfig ec = encoder_config(EncoderMode::self);
        ec.validate(allow_empty_encoders);
        if (num_classes < 2) throw ContractError("model: num_classes must be >= 2, got " + std::to_string(num_classes));
        if (slice_size < 2) throw ContractError("model: slice size must be >= 2");
        if (vol_d < 2 || vol_h < 2 || vol_w < 2)
            throw ContractError("model: volume extents must be >= 2, got " + shape_str({vol_d, vol_h, vol_w}));
        if (extractor.embed_dim != embed_dim)
            throw ContractError("model: extractor embed dim " + std::to_string(extractor.embed_dim) +
                                " must equal model embed dim " + std::to_string(embed_dim));
        extractor.validate();
    }

    EncoderConfig encoder_config(EncoderMode mode) const {
        EncoderConfig ec;
        ec.embed_dim = embed_dim;
        ec.layers = layers;
        ec.heads = heads;
        ec.dropout = dropout;
        ec.mode = mode;
        return ec;
    }

    bool operator==(const ModelConfig& o) const = default;
};

template <typename T>
struct LogitsT {
    TensorT<T> head_primary;    // (num_classes)
    TensorT<T> head_secondary;  // (num_classes)
    TensorT<T> fused;           // arithmetic mean of the two, fixed order
};

using Logits = LogitsT<float>;

// Classification head: LN -> linear(E,E) -> tanh -> linear(E,C).
template <typename T>
struct HeadT {
    LayerNormParamT<T> ln;
    LinearT<T> fc1, fc2;

    HeadT() = default;
    HeadT(const std::string& name, int embed_dim, int num_classes, std::mt19937_64& rng)
        : ln(name + ".ln", embed_dim),
          fc1(name + ".fc1", embed_dim, embed_dim, rng),
          fc2(name + ".fc2", embed_dim, num_classes, rng) {}

    TensorT<T> forward(const TensorT<T>& cls_row) const {
        if (cls_row.rank() != 2 || cls_row.shape()[1] != fc1.w.value.shape()[0])
            throw DimensionError("head: expected CLS of shape [1," +
                                 std::to_string(fc1.w.value.shape()[0]) + "], got " +
                                 shape_str(cls_row.shape()));
        TensorT<T> h = tanh_op(fc1.forward(ln.forward(cls_row)));
        return reshape(fc2.forward(h), {fc2.w.value.shape()[1]});
    }

    void collect(ParamRegistryT<T>& reg) {
        ln.collect(reg);
        fc1.collect(reg);
        fc2.collect(reg);
    }
};

// ---------------------------------------------------------------------------
// Full pipeline: three plane branches (frozen extract -> RICA -> intra-plane
// encoder), two cross-plane encoders, two heads, logit averaging.
// ---------------------------------------------------------------------------

template <typename T>
class ModelT {
public:
    struct Branch {
        RicaBlockT<T> rica;
        TokenPrepT<T> prep;
        EncoderT<T> encoder;

        TensorT<T> forward(const TensorT<T>& seq, const DropoutCtx* drop) const {
            return encoder.encode(prep.prepare(rica.forward(seq)), nullptr, nullptr, drop);
        }
        void collect(ParamRegistryT<T>& reg) {
            rica.collect(reg);
            prep.collect(reg);
            encoder.collect(reg);
        }
    };

    ModelT(ModelConfig cfg, uint64_t init_seed, std::shared_ptr<EmbeddingCache> cache = nullptr)
        : config_(cfg), extractor_(cfg.extractor, std::move(cache)) {
        config_.validate(/*allow_empty_encoders=*/true);
        std::mt19937_64 rng(mix_seed(init_seed, "model-init"));
        int plane_lens[3] = {cfg.vol_d, cfg.vol_h, cfg.vol_w};
        const char* plane_names[3] = {"axial", "coronal", "sagittal"};
        for (int p = 0; p < 3; ++p) {
            Branch& br = branches_[static_cast<size_t>(p)];
            std::string base = plane_names[p];
            br.rica = RicaBlockT<T>(base + ".rica", cfg.embed_dim, rng);
            br.prep = TokenPrepT<T>(base + ".prep", plane_lens[p], cfg.embed_dim, rng);
            br.encoder = EncoderT<T>(base + ".enc", cfg.encoder_config(EncoderMode::self), rng);
        }
        cross_primary_ = EncoderT<T>("cross_primary", cfg.encoder_config(EncoderMode::cross), rng);
        cross_secondary_ = EncoderT<T>("cross_secondary", cfg.encoder_config(EncoderMode::cross), rng);
        head_primary_ = HeadT<T>("head_primary", cfg.embed_dim, cfg.num_classes, rng);
        head_secondary_ = HeadT<T>("head_secondary", cfg.embed_dim, cfg.num_classes, rng);
        for (int p = 0; p < 3; ++p) branches_[static_cast<size_t>(p)].collect(registry_);
        cross_primary_.collect(registry_);
        cross_secondary_.collect(registry_);
        head_primary_.collect(registry_);
        head_secondary_.collect(registry_);
        build_name_index();
    }

    ModelT(const ModelT&) = delete;
    ModelT& operator=(const ModelT&) = delete;

    const ModelConfig& config() const { return config_; }
    ParamRegistryT<T>& params() { return registry_; }
    const ParamRegistryT<T>& params() const { return registry_; }
    const ExtractorT<T>& extractor() const { return extractor_; }

    // Frozen preprocessing: slice the three planes, resize + triplicate,
    // extract features. No gradients flow through anything in here.
    std::array<PlaneSequenceT<T>, 3> extract_features(const Volume& v) const {
        if (v.d != config_.vol_d || v.h != config_.vol_h || v.w != config_.vol_w)
            throw DimensionError("forward: volume shape " + shape_str({v.d, v.h, v.w}) +
                                 " does not match model config " +
                                 shape_str({config_.vol_d, config_.vol_h, config_.vol_w}));
        std::array<PlaneSequenceT<T>, 3> seqs;
        const Plane planes[3] = {Plane::axial, Plane::coronal, Plane::sagittal};
        for (int p = 0; p < 3; ++p)
            seqs[static_cast<size_t>(p)] =
                extractor_.extract(resize_bilinear(slice_plane(v, planes[p]), config_.slice_size));
        return seqs;
    }

    LogitsT<T> forward(const Volume& v, const DropoutCtx* drop = nullptr) const {
        return forward_from_sequences(extract_features(v), drop);
    }

    LogitsT<T> forward_from_sequences(const std::array<PlaneSequenceT<T>, 3>& seqs,
                                      const DropoutCtx* drop = nullptr) const {
        std::array<TensorT<T>, 3> encoded;
        for (int p = 0; p < 3; ++p) {
            const auto& s = seqs[static_cast<size_t>(p)];
            if (s.embed_dim != config_.embed_dim)
                throw DimensionError("forward: sequence embed dim " + std::to_string(s.embed_dim) +
                                     " does not match model " + std::to_string(config_.embed_dim));
            TensorT<T> leaf = TensorT<T>::leaf({s.rows, s.embed_dim}, s.features);
            encoded[static_cast<size_t>(p)] = branches_[static_cast<size_t>(p)].forward(leaf, drop);
        }
        const TensorT<T>& ax = encoded[0];
        const TensorT<T>& cor = encoded[1];
        const TensorT<T>& sag = encoded[2];

        LogitsT<T> out;
        switch (config_.fusion) {
            case Fusion::dual_axial: {
                TensorT<T> fac = cross_primary_.encode(ax, &cor, nullptr, drop);
                TensorT<T> fas = cross_secondary_.encode(ax, &sag, nullptr, drop);
                out.head_primary = head_primary_.forward(cls_of(fac));
                out.head_secondary = head_secondary_.forward(cls_of(fas));
                break;
            }
            case Fusion::sequential: {
                TensorT<T> f1 = cross_primary_.encode(ax, &cor, nullptr, drop);
                TensorT<T> f2 = cross_secondary_.encode(f1, &sag, nullptr, drop);
                TensorT<T> cls = cls_of(f2);
                out.head_primary = head_primary_.forward(cls);
                out.head_secondary = head_secondary_.forward(cls);
                break;
            }
            case Fusion::reversed_qkv: {
                TensorT<T> f1 = cross_primary_.encode(cor, &ax, nullptr, drop);
                TensorT<T> f2 = cross_secondary_.encode(sag, &ax, nullptr, drop);
                out.head_primary = head_primary_.forward(cls_of(f1));
                out.head_secondary = head_secondary_.forward(cls_of(f2));
                break;
            }
        }
        out.fused = scale(add(out.head_primary, out.head_secondary), static_cast<T>(0.5));
        return out;
    }

    // -----------------------------------------------------------------
    // AXC1 checkpoints: magic, version u8=1, config block (fixed order,
    // little-endian), parameter count u32, then per parameter the name,
    // ndim, extents and f32 data. The frozen extractor is stored as its
    // seed, never its weights.
    // -----------------------------------------------------------------

    void save_params(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw IoError("cannot open checkpoint '" + path + "' for writing");
        os.write("AXC1", 4);
        le::write_u8(os, 1);
        write_config(os, config_);
        le::write_u32(os, static_cast<uint32_t>(registry_.items.size()));
        for (const auto* p : registry_.items) {
            le::write_u16(os, static_cast<uint16_t>(p->name.size()));
            le::write_bytes(os, p->name.data(), p->name.size());
            le::write_u8(os, static_cast<uint8_t>(p->value.rank()));
            for (int ext : p->value.shape()) le::write_u32(os, static_cast<uint32_t>(ext));
            for (T v : p->value.data()) le::write_f32(os, static_cast<float>(v));
        }
        if (!os) throw IoError("short write to checkpoint '" + path + "'");
    }

    void load_params(const std::string& path, bool strict = true) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw IoError("cannot open checkpoint '" + path + "' for reading");
        ModelConfig file_cfg = read_header(is, path);
        if (strict) {
            std::string diff = config_diff(config_, file_cfg);
            if (!diff.empty())
                throw CheckpointError("config mismatch loading '" + path + "': " + diff);
        }
        uint32_t count = le::read_u32(is, "parameter count");
        if (strict && count != registry_.items.size())
            throw CheckpointError("checkpoint has " + std::to_string(count) + " parameters, model has " +
                                  std::to_string(registry_.items.size()));
        for (uint32_t i = 0; i < count; ++i) {
            uint16_t name_len = le::read_u16(is, "name length");
            std::string name(name_len, '\0');
            le::read_bytes(is, name.data(), name_len, "name");
            uint8_t ndim = le::read_u8(is, "ndim");
            Shape shape;
            size_t n = 1;
            for (int d = 0; d < ndim; ++d) {
                uint32_t e = le::read_u32(is, "extents");
                shape.push_back(static_cast<int>(e));
                n *= e;
            }
            std::vector<float> vals(n);
            le::read_f32_array(is, vals.data(), n, "parameter data");
            auto it = by_name_.find(name);
            if (it == by_name_.end()) {
                if (strict) throw CheckpointError("unknown parameter '" + name + "' in '" + path + "'");
                continue;
            }
            ParameterT<T>& p = *registry_.items[it->second];
            if (p.value.shape() != shape)
                throw CheckpointError("parameter '" + name + "' has shape " + shape_str(shape) +
                                      " in file, model expects " + shape_str(p.value.shape()));
            auto& dst = p.value.mutable_data();
            for (size_t j = 0; j < n; ++j) dst[j] = static_cast<T>(vals[j]);
        }
    }

    static ModelConfig peek_config(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw IoError("cannot open checkpoint '" + path + "' for reading");
        return read_header(is, path);
    }

    // Raw value snapshot/restore, used by the training loop to retain the
    // best-validation parameters without touching the tape.
    std::vector<std::vector<T>> snapshot() const {
        std::vector<std::vector<T>> snap;
        snap.reserve(registry_.items.size());
        for (const auto* p : registry_.items) snap.push_back(p->value.data());
        return snap;
    }
    void restore(const std::vector<std::vector<T>>& snap) {
        if (snap.size() != registry_.items.size())
            throw ContractError("restore: snapshot size mismatch");
        for (size_t i = 0; i < snap.size(); ++i) registry_.items[i]->value.mutable_data() = snap[i];
    }

private:
    static TensorT<T> cls_of(const TensorT<T>& tokens) { return slice(tokens, 0, 0, 1); }

    static void write_config(std::ostream& os, const ModelConfig& c) {
        le::write_u32(os, static_cast<uint32_t>(c.embed_dim));
        le::write_u32(os, static_cast<uint32_t>(c.layers));
        le::write_u32(os, static_cast<uint32_t>(c.heads));
        le::write_u32(os, static_cast<uint32_t>(c.num_classes));
        le::write_u8(os, static_cast<uint8_t>(c.fusion));
        le::write_u32(os, static_cast<uint32_t>(c.slice_size));
        le::write_u32(os, static_cast<uint32_t>(c.vol_d));
        le::write_u32(os, static_cast<uint32_t>(c.vol_h));
        le::write_u32(os, static_cast<uint32_t>(c.vol_w));
        le::write_f32(os, static_cast<float>(c.dropout));
        le::write_u8(os, static_cast<uint8_t>(c.extractor.kind));
        le::write_u32(os, static_cast<uint32_t>(c.extractor.patch));
        le::write_u64(os, c.extractor.seed);
    }

    static ModelConfig read_header(std::istream& is, const std::string& path) {
        char magic[4];
        le::read_bytes(is, magic, 4, "magic");
        if (std::string(magic, 4) != "AXC1")
            throw FormatError("bad magic in checkpoint '" + path + "', expected AXC1");
        uint8_t version = le::read_u8(is, "version");
        if (version != 1) throw FormatError("unsupported checkpoint version " + std::to_string(version));
        ModelConfig c;
        c.embed_dim = static_cast<int>(le::read_u32(is, "embed dim"));
        c.layers = static_cast<int>(le::read_u32(is, "layers"));
        c.heads = static_cast<int>(le::read_u32(is, "heads"));
        c.num_classes = static_cast<int>(le::read_u32(is, "num classes"));
        uint8_t fusion = le::read_u8(is, "fusion");
        if (fusion > 2) throw FormatError("bad fusion code " + std::to_string(fusion) + " in '" + path + "'");
        c.fusion = static_cast<Fusion>(fusion);
        c.slice_size = static_cast<int>(le::read_u32(is, "slice size"));
        c.vol_d = static_cast<int>(le::read_u32(is, "vol d"));
        c.vol_h = static_cast<int>(le::read_u32(is, "vol h"));
        c.vol_w = static_cast<int>(le::read_u32(is, "vol w"));
        c.dropout = le::read_f32(is, "dropout");
        uint8_t kind = le::read_u8(is, "extractor kind");
        if (kind > 1) throw FormatError("bad extractor kind " + std::to_string(kind) + " in '" + path + "'");
        c.extractor.kind = static_cast<ExtractorKind>(kind);
        c.extractor.embed_dim = c.embed_dim;
        c.extractor.patch = static_cast<int>(le::read_u32(is, "extractor patch"));
        c.extractor.seed = le::read_u64(is, "extractor seed");
        return c;
    }

    static std::string config_diff(const ModelConfig& a, const ModelConfig& b) {
        std::string diff;
        auto note = [&](const char* field) {
            if (!diff.empty()) diff += ", ";
            diff += field;
        };
        if (a.embed_dim != b.embed_dim) note("embed_dim");
        if (a.layers != b.layers) note("layers");
        if (a.heads != b.heads) note("heads");
        if (a.num_classes != b.num_classes) note("num_classes");
        if (a.fusion != b.fusion) note("fusion");
        if (a.slice_size != b.slice_size) note("slice_size");
        if (a.vol_d != b.vol_d || a.vol_h != b.vol_h || a.vol_w != b.vol_w) note("volume extents");
        if (static_cast<float>(a.dropout) != static_cast<float>(b.dropout)) note("dropout");
        if (a.extractor.kind != b.extractor.kind) note("extractor.kind");
        if (a.extractor.patch != b.extractor.patch) note("extractor.patch");
        if (a.extractor.seed != b.extractor.seed) note("extractor.seed");
        return diff;
    }

    void build_name_index() {
        for (size_t i = 0; i < registry_.items.size(); ++i)
            by_name_[registry_.items[i]->name] = i;
    }

    ModelConfig config_;
    ExtractorT<T> extractor_;
    std::array<Branch, 3> branches_;
    EncoderT<T> cross_primary_, cross_secondary_;
    HeadT<T> head_primary_, head_secondary_;
    ParamRegistryT<T> registry_;
    std::map<std::string, size_t> by_name_;
};

using Model = ModelT<float>;

}  // namespace axialfuse
